"""
src/config.py

Centralized configuration for the periodic micromagnetic solver.

This module provides the canonical configuration objects used throughout the
pipeline: periodicity, materials, applied fields, time stepping, BAIM knobs,
hysteresis schedules, the analytic dispersion scan and output locations.
All quantities are CGS (cm, Oe, emu/cm^3, erg/cm, erg/cm^3, s).

Configuration files are flat ``key = value`` text with ``[section]`` headers;
see ``load_config`` for the accepted sections and keys.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from src.errors import ConfigError, MaterialError

Vector = Tuple[float, float, float]

RUN_MODES = ("relax", "dynamics", "hysteresis", "fieldcheck", "pgf-selftest", "oracle-check",
             "dispersion")
ANISOTROPY_KINDS = ("none", "uniaxial", "cubic")
APPLIED_KINDS = ("uniform_static", "uniform_ac", "line_source")


# =====================================================================
# Periodicity
# =====================================================================
@dataclass(frozen=True)
class PeriodicSpec:
    """
    Periodicity of the unit cell.

    Attributes
    ----------
    periodic_x, periodic_y, periodic_z : bool
        Periodic flags per axis. All three may be False (free space).
    L_x, L_y, L_z : float
        Periods (cm); required positive on every flagged axis, ignored otherwise.
    match_tolerance : float, optional
        Coordinate tolerance (cm) for periodic node matching. ``None`` means
        1e-6 times the shortest mesh edge, resolved by the mesh module.
    """
    periodic_x: bool = False
    periodic_y: bool = False
    periodic_z: bool = False
    L_x: float = 0.0
    L_y: float = 0.0
    L_z: float = 0.0
    match_tolerance: Optional[float] = None

    def __post_init__(self) -> None:
        for flag, length, name in zip(self.flags, (self.L_x, self.L_y, self.L_z), "xyz"):
            if flag and not length > 0:
                raise ConfigError(f"period L_{name} must be positive on a periodic axis")
        if self.match_tolerance is not None and not self.match_tolerance > 0:
            raise ConfigError("match_tolerance must be positive")

    @property
    def flags(self) -> Tuple[bool, bool, bool]:
        return (self.periodic_x, self.periodic_y, self.periodic_z)

    @property
    def periods(self) -> np.ndarray:
        """Periods per axis, 0.0 on non-periodic axes."""
        return np.array(
            [L if f else 0.0 for f, L in zip(self.flags, (self.L_x, self.L_y, self.L_z))]
        )

    @property
    def periodic_axes(self) -> Tuple[int, ...]:
        return tuple(i for i, f in enumerate(self.flags) if f)

    @property
    def dims(self) -> int:
        return len(self.periodic_axes)

    @classmethod
    def free_space(cls) -> "PeriodicSpec":
        return cls()


# =====================================================================
# Materials
# =====================================================================
@dataclass(frozen=True)
class Material:
    """
    Magnetic material of one region tag.

    Attributes
    ----------
    Ms : float
        Saturation magnetization (emu/cm^3), positive.
    A_ex : float
        Exchange stiffness (erg/cm).
    alpha : float
        Gilbert damping.
    anisotropy : str
        One of ``none``, ``uniaxial`` or ``cubic``.
    K : float
        K_u (uniaxial) or K_1 (cubic), erg/cm^3.
    axis : tuple of float
        Uniaxial easy axis (unit vector).
    axes : tuple of tuple of float
        Cubic crystal axes as rows of an orthonormal triad.
    """
    Ms: float
    A_ex: float = 0.0
    alpha: float = 0.02
    anisotropy: str = "none"
    K: float = 0.0
    axis: Vector = (0.0, 0.0, 1.0)
    axes: Tuple[Vector, Vector, Vector] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def __post_init__(self) -> None:
        if not self.Ms > 0:
            raise MaterialError(f"Ms must be positive, got {self.Ms}")
        if self.A_ex < 0 or self.alpha < 0:
            raise MaterialError("A_ex and alpha must be non-negative")
        if self.anisotropy not in ANISOTROPY_KINDS:
            raise MaterialError(f"unknown anisotropy kind {self.anisotropy!r}")
        if self.anisotropy == "uniaxial":
            if abs(np.linalg.norm(self.axis) - 1.0) > 1e-8:
                raise MaterialError(f"uniaxial axis {self.axis} is not unit-norm")
        if self.anisotropy == "cubic":
            triad = np.asarray(self.axes, dtype=float)
            if np.max(np.abs(triad @ triad.T - np.eye(3))) > 1e-8:
                raise MaterialError("cubic axes must be an orthonormal triad")


# =====================================================================
# Applied field
# =====================================================================
@dataclass(frozen=True)
class AppliedFieldSpec:
    """
    Applied field description.

    Attributes
    ----------
    kind : str
        ``uniform_static``, ``uniform_ac`` or ``line_source``.
    H0 : tuple of float
        Amplitude vector (Oe).
    omega : float
        Angular frequency (rad/s) for ``uniform_ac`` and ``line_source``.
    wavenumber : float
        |k| (1/cm) of the line source phase ``cos(omega t - |k| s)``.
    line_axis : int
        Axis (0, 1, 2) the line source runs along; ``s`` is that coordinate.
    line_position : tuple of float
        A point on the line (cm).
    width : float
        Width d (cm); nodes closer than d/2 to the line are driven.
    """
    kind: str = "uniform_static"
    H0: Vector = (0.0, 0.0, 0.0)
    omega: float = 0.0
    wavenumber: float = 0.0
    line_axis: int = 1
    line_position: Vector = (0.0, 0.0, 0.0)
    width: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in APPLIED_KINDS:
            raise ConfigError(f"unknown applied field kind {self.kind!r}")
        if not np.all(np.isfinite(self.H0)):
            raise ConfigError("applied field amplitude must be finite")
        if self.kind == "line_source":
            if not self.width > 0:
                raise ConfigError("line_source width must be positive")
            if self.line_axis not in (0, 1, 2):
                raise ConfigError("line_axis must be 0, 1 or 2")


# =====================================================================
# Time stepping
# =====================================================================
@dataclass(frozen=True)
class LlgParams:
    """
    LLG integration parameters.

    Attributes
    ----------
    gamma_gr : float
        Gyromagnetic ratio (rad s^-1 Oe^-1).
    tol : float
        Local error tolerance of the adaptive predictor-corrector.
    dt_initial, dt_min, dt_max : float
        Step size bounds (s).
    renormalize_every : int
        Renormalize |M_n| to Ms every this many accepted steps.
    corrector_tol : float
        Relative fixed-point tolerance of the midpoint corrector.
    corrector_max_iter : int
        Fixed-point iteration cap.
    adaptive : bool
        Disable to integrate with a fixed step (convergence studies).
    relax_alpha : float
        Damping used by ``relax``.
    relax_tau : float
        Torque criterion of ``relax``.
    relax_max_steps : int
        Step budget of ``relax``.
    """
    gamma_gr: float = 1.7595e7
    tol: float = 1e-5
    dt_initial: float = 1e-13
    dt_min: float = 1e-18
    dt_max: float = 1e-11
    renormalize_every: int = 1
    corrector_tol: float = 1e-8
    corrector_max_iter: int = 50
    adaptive: bool = True
    relax_alpha: float = 1.0
    relax_tau: float = 1e-4
    relax_max_steps: int = 20000

    def __post_init__(self) -> None:
        if not self.gamma_gr > 0:
            raise ConfigError("gamma_gr must be positive")
        if not (0 < self.dt_min <= self.dt_initial <= self.dt_max):
            raise ConfigError("require 0 < dt_min <= dt_initial <= dt_max")
        if self.renormalize_every < 1:
            raise ConfigError("renormalize_every must be >= 1")


# =====================================================================
# BAIM knobs
# =====================================================================
@dataclass(frozen=True)
class BaimSettings:
    """
    Magnetostatic solver settings.

    Attributes
    ----------
    points_per_box : float
        Target mean number of nodes per grid cell.
    rer_scale : float
        Correction radius in units of the largest grid spacing.
    stencil_order : int
        1 (trilinear) or 3 (cubic Lagrange) projection/interpolation.
    grid_counts : tuple of int, optional
        Explicit grid counts; overrides ``points_per_box``.
    pgf_target_rel_error : float
        Accuracy of the tabulated periodic Green's function.
    """
    points_per_box: float = 0.25
    rer_scale: float = 7.0
    stencil_order: int = 3
    grid_counts: Optional[Tuple[int, int, int]] = None
    pgf_target_rel_error: float = 1e-8

    def __post_init__(self) -> None:
        if not self.points_per_box > 0:
            raise ConfigError("points_per_box must be positive")
        if not self.rer_scale >= 1.0:
            raise ConfigError("rer_scale must be >= 1 (r_ER >= max grid spacing)")
        if self.stencil_order not in (1, 3):
            raise ConfigError("stencil_order must be 1 or 3")


# =====================================================================
# Hysteresis
# =====================================================================
@dataclass(frozen=True)
class HysteresisSchedule:
    """
    Field sweep for an M-H loop.

    Attributes
    ----------
    axis : tuple of float
        Sweep direction (unit vector).
    H_max, H_min : float
        Sweep bounds (Oe), H_max > H_min.
    step : float
        Field increment (Oe), positive.
    tau : float
        Torque convergence criterion per field point.
    tilt : float
        Small angle (rad) between the applied field and ``axis``; breaks the
        symmetry of exactly antiparallel starts.
    """
    axis: Vector = (0.0, 0.0, 1.0)
    H_max: float = 1000.0
    H_min: float = -1000.0
    step: float = 10.0
    tau: float = 1e-5
    tilt: float = 1e-4

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ConfigError("hysteresis step must be positive")
        if not self.H_max > self.H_min:
            raise ConfigError("hysteresis requires H_max > H_min")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-8:
            raise ConfigError("hysteresis axis must be a unit vector")


# =====================================================================
# Dispersion scan
# =====================================================================
@dataclass(frozen=True)
class DispersionScan:
    """
    Analytic thin-film spin-wave dispersion at a fixed driving frequency.

    Attributes
    ----------
    frequency : float
        Driving frequency (Hz); omega0 = 2 pi frequency.
    thickness : float
        Film thickness D_z (cm).
    n_angles : int
        Propagation angles sampled uniformly on [-pi/2, pi/2].
    """
    frequency: float = 10e9
    thickness: float = 2e-7
    n_angles: int = 37

    def __post_init__(self) -> None:
        if not (self.frequency > 0 and self.thickness > 0):
            raise ConfigError("dispersion frequency and thickness must be positive")
        if self.n_angles < 2:
            raise ConfigError("dispersion needs n_angles >= 2")


# =====================================================================
# Mesh source and outputs
# =====================================================================
@dataclass(frozen=True)
class MeshSource:
    """
    Where the mesh comes from: a text file or a named structured builder.

    Attributes
    ----------
    path : Path, optional
        Mesh text file.
    builder : str, optional
        Name of a ``src.mesh_builders`` generator (``box``, ``sphere``, ``rod``,
        ``film``, ``parallelogram``).
    params : dict
        Builder keyword arguments.
    """
    path: Optional[Path] = None
    builder: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class OutputPaths:
    """
    Output locations.

    Attributes
    ----------
    output_dir : Path
        Root directory for CSV, VTK, figures and the manifest.
    dump_operator : tuple, optional
        ``(kind, path)`` of a sparse operator to export as triplets.
    dump_fields : Path, optional
        Legacy-VTK field dump path.
    """
    output_dir: Path = Path("output")
    dump_operator: Optional[Tuple[str, Path]] = None
    dump_fields: Optional[Path] = None

    @property
    def figures_dir(self) -> Path:
        return self.output_dir / "figures"

    @property
    def tables_dir(self) -> Path:
        return self.output_dir / "tables"


# =====================================================================
# Main config object
# =====================================================================
@dataclass(frozen=True)
class SimulationConfig:
    """
    Root configuration object for a run.

    Attributes
    ----------
    mesh : MeshSource
    periodic : PeriodicSpec
    materials : dict[int, Material]
        Material per region tag.
    applied : AppliedFieldSpec
    mode : str
        One of RUN_MODES.
    llg : LlgParams
    baim : BaimSettings
    hysteresis : HysteresisSchedule
    dispersion : DispersionScan
    output : OutputPaths
    initial : str
        ``uniform x y z`` or ``random``.
    run_time : float
        End time (s) of ``dynamics`` runs.
    sample_every : int
        Time series sampling stride (accepted steps).
    seed : int
        RNG seed.
    threads : int
        FFT worker threads; 1 guarantees reproducibility.
    oracle_check : bool
        Also run the BAIM vs direct comparison.
    pgf_selftest : bool
        Also run the PGF method-agreement suite.
    """
    mesh: MeshSource = field(default_factory=MeshSource)
    periodic: PeriodicSpec = field(default_factory=PeriodicSpec)
    materials: Dict[int, Material] = field(default_factory=dict)
    applied: AppliedFieldSpec = field(default_factory=AppliedFieldSpec)
    mode: str = "relax"
    llg: LlgParams = field(default_factory=LlgParams)
    baim: BaimSettings = field(default_factory=BaimSettings)
    hysteresis: HysteresisSchedule = field(default_factory=HysteresisSchedule)
    dispersion: DispersionScan = field(default_factory=DispersionScan)
    output: OutputPaths = field(default_factory=OutputPaths)
    initial: str = "uniform 1 0 0"
    run_time: float = 1e-9
    sample_every: int = 10
    seed: int = 0
    threads: int = 1
    oracle_check: bool = False
    pgf_selftest: bool = False

    def __post_init__(self) -> None:
        if self.mode not in RUN_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {RUN_MODES}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        needs_mesh = self.mode not in ("pgf-selftest", "dispersion")
        if needs_mesh and self.mesh.path is None and self.mesh.builder is None:
            raise ConfigError(f"mode {self.mode!r} requires [mesh] path or builder")
        if self.mode != "pgf-selftest" and not self.materials:
            raise ConfigError(f"mode {self.mode!r} requires at least one [material.<tag>]")


# =====================================================================
# Parsing helpers
# =====================================================================
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*[=:]")


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """Map (section, key) to its 1-based line number in the source text."""
    index: Dict[Tuple[str, str], int] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            index[(section, "")] = lineno
            continue
        m = _KEY_RE.match(line)
        if m:
            index[(section, m.group(1).lower())] = lineno
    return index


class _Reader:
    """Typed access to one configparser section with line-numbered errors."""

    def __init__(self, parser: configparser.ConfigParser, section: str,
                 lines: Dict[Tuple[str, str], int]) -> None:
        self.section = section
        self.items = dict(parser.items(section)) if parser.has_section(section) else {}
        self.lines = lines
        self.used: set[str] = set()

    def _fail(self, key: str, message: str) -> ConfigError:
        line = self.lines.get((self.section, key), self.lines.get((self.section, "")))
        return ConfigError(f"[{self.section}] {key}: {message}", line=line)

    def raw(self, key: str) -> Optional[str]:
        self.used.add(key)
        return self.items.get(key)

    def str(self, key: str, default: Optional[str] = None) -> Optional[str]:
        value = self.raw(key)
        return default if value is None else value.strip()

    def float(self, key: str, default: float) -> float:
        value = self.raw(key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise self._fail(key, f"expected a number, got {value!r}") from None

    def int(self, key: str, default: int) -> int:
        value = self.raw(key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise self._fail(key, f"expected an integer, got {value!r}") from None

    def bool(self, key: str, default: bool) -> bool:
        value = self.raw(key)
        if value is None:
            return default
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise self._fail(key, f"expected a boolean, got {value!r}")

    def vector(self, key: str, default: Optional[Tuple], size: int = 3,
               cast: Optional[type] = None) -> Optional[Tuple]:
        # method names shadow the builtins inside the class body only
        cast = cast or float
        value = self.raw(key)
        if value is None:
            return default
        parts = value.replace(",", " ").split()
        if len(parts) != size:
            raise self._fail(key, f"expected {size} values, got {value!r}")
        try:
            return tuple(cast(p) for p in parts)
        except ValueError:
            raise self._fail(key, f"non-numeric entry in {value!r}") from None

    def check_unused(self) -> None:
        unknown = sorted(set(self.items) - self.used)
        if unknown:
            raise self._fail(unknown[0], "unknown key")

    def wrap(self, key: str, exc: Exception) -> ConfigError:
        return self._fail(key, str(exc))


_BUILDER_VECTOR_KEYS = {"size", "cells", "origin", "center"}


def _parse_builder_params(reader: _Reader) -> Dict[str, Any]:
    params: Dict[str, Any] = {}
    for key in list(reader.items):
        if key in ("path", "builder"):
            continue
        if key in _BUILDER_VECTOR_KEYS:
            cast = int if key == "cells" else float
            params[key] = reader.vector(key, None, cast=cast)
        elif key in ("mirrored",):
            params[key] = reader.bool(key, False)
        elif key in ("n", "layers", "region"):
            params[key] = reader.int(key, 0)
        else:
            params[key] = reader.float(key, 0.0)
    return params


def _parse_material(reader: _Reader) -> Material:
    kwargs: Dict[str, Any] = dict(
        Ms=reader.float("ms", 0.0),
        A_ex=reader.float("a_ex", 0.0),
        alpha=reader.float("alpha", 0.02),
        anisotropy=reader.str("anisotropy", "none"),
        K=reader.float("k", 0.0),
        axis=reader.vector("axis", (0.0, 0.0, 1.0)),
    )
    axes = reader.vector("axes", None, size=9)
    if axes is not None:
        kwargs["axes"] = (tuple(axes[0:3]), tuple(axes[3:6]), tuple(axes[6:9]))
    try:
        return Material(**kwargs)
    except MaterialError as exc:
        raise reader.wrap("ms", exc) from None


# =====================================================================
# Config factory
# =====================================================================
def default_config(**overrides: Any) -> SimulationConfig:
    """
    Build a default configuration (uniform 3D-periodic cube, fieldcheck).

    Parameters
    ----------
    **overrides
        Field values replacing the defaults.

    Returns
    -------
    SimulationConfig
    """
    base = dict(
        mesh=MeshSource(builder="box", params={"size": (1e-5, 1e-5, 1e-5), "cells": (6, 6, 6)}),
        periodic=PeriodicSpec(True, True, True, 1e-5, 1e-5, 1e-5),
        materials={0: Material(Ms=800.0, A_ex=1.3e-6, alpha=0.02)},
        mode="fieldcheck",
    )
    base.update(overrides)
    return SimulationConfig(**base)


def parse_config_text(text: str, base_dir: Path = Path(".")) -> SimulationConfig:
    """
    Parse configuration text.

    Parameters
    ----------
    text : str
        Configuration content.
    base_dir : Path
        Directory relative paths are resolved against.

    Returns
    -------
    SimulationConfig

    Raises
    ------
    ConfigError
        On syntax errors, unknown sections/keys or invalid values, with the
        offending line number when available.
    """
    lines = _line_index(text)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error: {exc.message if hasattr(exc, 'message') else exc}",
                          line=line) from None

    known = {"mesh", "periodic", "applied", "run", "llg", "baim", "hysteresis", "dispersion",
             "output"}
    for section in parser.sections():
        if section not in known and not section.startswith("material."):
            raise ConfigError(f"unknown section [{section}]", line=lines.get((section, "")))

    def resolve(p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else base_dir / path

    # mesh
    r = _Reader(parser, "mesh", lines)
    mesh = MeshSource(path=resolve(r.str("path")), builder=r.str("builder"),
                      params=_parse_builder_params(r))

    # periodic
    r = _Reader(parser, "periodic", lines)
    try:
        tol = r.raw("match_tolerance")
        periodic = PeriodicSpec(
            periodic_x=r.bool("x", False), periodic_y=r.bool("y", False),
            periodic_z=r.bool("z", False),
            L_x=r.float("l_x", 0.0), L_y=r.float("l_y", 0.0), L_z=r.float("l_z", 0.0),
            match_tolerance=None if tol is None else r.float("match_tolerance", 0.0),
        )
    except ConfigError as exc:
        if exc.line is None:
            raise r.wrap("x", exc) from None
        raise
    r.check_unused()

    # materials
    materials: Dict[int, Material] = {}
    for section in parser.sections():
        if section.startswith("material."):
            tag_text = section.split(".", 1)[1]
            try:
                tag = int(tag_text)
            except ValueError:
                raise ConfigError(f"material tag must be an integer: [{section}]",
                                  line=lines.get((section, ""))) from None
            r = _Reader(parser, section, lines)
            materials[tag] = _parse_material(r)
            r.check_unused()

    # applied
    r = _Reader(parser, "applied", lines)
    try:
        applied = AppliedFieldSpec(
            kind=r.str("kind", "uniform_static"),
            H0=r.vector("h0", (0.0, 0.0, 0.0)),
            omega=r.float("omega", 0.0),
            wavenumber=r.float("wavenumber", 0.0),
            line_axis=r.int("line_axis", 1),
            line_position=r.vector("line_position", (0.0, 0.0, 0.0)),
            width=r.float("width", 0.0),
        )
    except ConfigError as exc:
        if exc.line is None:
            raise r.wrap("kind", exc) from None
        raise
    r.check_unused()

    # llg
    r = _Reader(parser, "llg", lines)
    d = LlgParams()
    try:
        llg = LlgParams(
            gamma_gr=r.float("gamma_gr", d.gamma_gr), tol=r.float("tol", d.tol),
            dt_initial=r.float("dt_initial", d.dt_initial), dt_min=r.float("dt_min", d.dt_min),
            dt_max=r.float("dt_max", d.dt_max),
            renormalize_every=r.int("renormalize_every", d.renormalize_every),
            corrector_tol=r.float("corrector_tol", d.corrector_tol),
            corrector_max_iter=r.int("corrector_max_iter", d.corrector_max_iter),
            adaptive=r.bool("adaptive", d.adaptive),
            relax_alpha=r.float("relax_alpha", d.relax_alpha),
            relax_tau=r.float("relax_tau", d.relax_tau),
            relax_max_steps=r.int("relax_max_steps", d.relax_max_steps),
        )
    except ConfigError as exc:
        if exc.line is None:
            raise r.wrap("dt_initial", exc) from None
        raise
    r.check_unused()

    # baim
    r = _Reader(parser, "baim", lines)
    d = BaimSettings()
    try:
        baim = BaimSettings(
            points_per_box=r.float("points_per_box", d.points_per_box),
            rer_scale=r.float("rer_scale", d.rer_scale),
            stencil_order=r.int("stencil_order", d.stencil_order),
            grid_counts=r.vector("grid_counts", None, cast=int),
            pgf_target_rel_error=r.float("pgf_target_rel_error", d.pgf_target_rel_error),
        )
    except ConfigError as exc:
        if exc.line is None:
            raise r.wrap("rer_scale", exc) from None
        raise
    r.check_unused()

    # hysteresis
    r = _Reader(parser, "hysteresis", lines)
    d = HysteresisSchedule()
    try:
        hysteresis = HysteresisSchedule(
            axis=r.vector("axis", d.axis), H_max=r.float("h_max", d.H_max),
            H_min=r.float("h_min", d.H_min), step=r.float("step", d.step),
            tau=r.float("tau", d.tau), tilt=r.float("tilt", d.tilt),
        )
    except ConfigError as exc:
        if exc.line is None:
            raise r.wrap("step", exc) from None
        raise
    r.check_unused()

    # dispersion
    r = _Reader(parser, "dispersion", lines)
    d = DispersionScan()
    try:
        dispersion = DispersionScan(
            frequency=r.float("frequency", d.frequency), thickness=r.float("thickness", d.thickness),
            n_angles=r.int("n_angles", d.n_angles),
        )
    except ConfigError as exc:
        if exc.line is None:
            raise r.wrap("frequency", exc) from None
        raise
    r.check_unused()

    # output
    r = _Reader(parser, "output", lines)
    dump_op = r.str("dump_operator")
    dump_operator = None
    if dump_op:
        parts = dump_op.split()
        if len(parts) != 2:
            raise r.wrap("dump_operator", ValueError("expected '<kind> <path>'"))
        dump_operator = (parts[0], resolve(parts[1]))
    output = OutputPaths(
        output_dir=resolve(r.str("dir", "output")),
        dump_operator=dump_operator,
        dump_fields=resolve(r.str("dump_fields")),
    )
    r.check_unused()

    # run
    r = _Reader(parser, "run", lines)
    try:
        config = SimulationConfig(
            mesh=mesh, periodic=periodic, materials=materials, applied=applied,
            mode=r.str("mode", "relax"), llg=llg, baim=baim, hysteresis=hysteresis,
            dispersion=dispersion,
            output=output, initial=r.str("initial", "uniform 1 0 0"),
            run_time=r.float("time", 1e-9), sample_every=r.int("sample_every", 10),
            seed=r.int("seed", 0), threads=r.int("threads", 1),
            oracle_check=r.bool("oracle_check", False),
            pgf_selftest=r.bool("pgf_selftest", False),
        )
    except ConfigError as exc:
        if exc.line is None:
            raise r.wrap("mode", exc) from None
        raise
    r.check_unused()
    return config


def load_config(path: Path) -> SimulationConfig:
    """
    Load a configuration file.

    Parameters
    ----------
    path : Path
        Configuration file.

    Returns
    -------
    SimulationConfig
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Required file not found: configuration ({path})")
    return parse_config_text(path.read_text(), base_dir=path.parent)


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        flat = []
        for v in value:
            flat.extend(v if isinstance(v, (tuple, list)) else [v])
        return " ".join(_fmt(v) for v in flat)
    return str(value)


def config_to_text(config: SimulationConfig) -> str:
    """
    Serialize the effective (defaults-resolved) configuration.

    Re-parsing the returned text with ``parse_config_text`` reproduces an
    equal ``SimulationConfig`` (absolute paths are written verbatim).
    """
    out: list[str] = []

    def section(name: str, items: Dict[str, Any]) -> None:
        out.append(f"[{name}]")
        for key, value in items.items():
            if value is None:
                continue
            out.append(f"{key} = {_fmt(value)}")
        out.append("")

    mesh_items: Dict[str, Any] = {"path": config.mesh.path, "builder": config.mesh.builder}
    mesh_items.update(config.mesh.params)
    section("mesh", mesh_items)

    p = config.periodic
    section("periodic", {"x": p.periodic_x, "y": p.periodic_y, "z": p.periodic_z,
                         "L_x": p.L_x, "L_y": p.L_y, "L_z": p.L_z,
                         "match_tolerance": p.match_tolerance})
    for tag, mat in sorted(config.materials.items()):
        section(f"material.{tag}", {"Ms": mat.Ms, "A_ex": mat.A_ex, "alpha": mat.alpha,
                                    "anisotropy": mat.anisotropy, "K": mat.K,
                                    "axis": mat.axis, "axes": mat.axes})
    a = config.applied
    section("applied", {"kind": a.kind, "H0": a.H0, "omega": a.omega,
                        "wavenumber": a.wavenumber, "line_axis": a.line_axis,
                        "line_position": a.line_position, "width": a.width})
    section("llg", {k: getattr(config.llg, k) for k in LlgParams.__dataclass_fields__})
    b = config.baim
    section("baim", {"points_per_box": b.points_per_box, "rer_scale": b.rer_scale,
                     "stencil_order": b.stencil_order, "grid_counts": b.grid_counts,
                     "pgf_target_rel_error": b.pgf_target_rel_error})
    h = config.hysteresis
    section("hysteresis", {"axis": h.axis, "H_max": h.H_max, "H_min": h.H_min,
                           "step": h.step, "tau": h.tau, "tilt": h.tilt})
    s = config.dispersion
    section("dispersion", {"frequency": s.frequency, "thickness": s.thickness,
                           "n_angles": s.n_angles})
    o = config.output
    section("output", {"dir": o.output_dir,
                       "dump_operator": None if o.dump_operator is None
                       else f"{o.dump_operator[0]} {o.dump_operator[1]}",
                       "dump_fields": o.dump_fields})
    section("run", {"mode": config.mode, "initial": config.initial, "time": config.run_time,
                    "sample_every": config.sample_every, "seed": config.seed,
                    "threads": config.threads, "oracle_check": config.oracle_check,
                    "pgf_selftest": config.pgf_selftest})
    return "\n".join(out)


def apply_overrides(config: SimulationConfig, **overrides: Any) -> SimulationConfig:
    """
    Return a copy of ``config`` with CLI overrides applied.

    Recognized keys: ``mesh_path``, ``mode``, ``output_dir``, ``threads``,
    ``points_per_box``, ``rer_scale``, ``dump_operator``, ``dump_fields``,
    ``oracle_check``, ``pgf_selftest``. ``None`` values are ignored.
    """
    o = {k: v for k, v in overrides.items() if v is not None}
    if "mesh_path" in o:
        config = replace(config, mesh=MeshSource(path=Path(o["mesh_path"])))
    baim_changes = {k: o[k] for k in ("points_per_box", "rer_scale") if k in o}
    if baim_changes:
        config = replace(config, baim=replace(config.baim, **baim_changes))
    out_changes: Dict[str, Any] = {}
    if "output_dir" in o:
        out_changes["output_dir"] = Path(o["output_dir"])
    if "dump_operator" in o:
        kind, path = o["dump_operator"]
        out_changes["dump_operator"] = (kind, Path(path))
    if "dump_fields" in o:
        out_changes["dump_fields"] = Path(o["dump_fields"])
    if out_changes:
        config = replace(config, output=replace(config.output, **out_changes))
    top = {k: o[k] for k in ("mode", "threads", "oracle_check", "pgf_selftest") if k in o}
    if top:
        config = replace(config, **top)
    return config
