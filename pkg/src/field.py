"""
src/field.py

Effective field H_eff = H_ex + H_ms + H_an + H_ap and micromagnetic energies.

FieldAssembly wires the sparse FEM operators, the BAIM potential solver, the
per-node material parameters and the applied-field description together.
MacrospinField offers the same interface for a single uniformly magnetized
particle (anisotropy, diagonal demagnetizing tensor, applied field), which is
what the Stoner-Wohlfarth and closed-form LLG checks run on.

Both expose ``Ms``, ``alpha``, ``volumes``, ``applied``, ``effective_field``,
``energies`` and ``with_applied``; the time integrators only rely on these.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field as dc_field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.baim import BaimSetup, build_baim
from src.config import AppliedFieldSpec, BaimSettings, Material, PeriodicSpec
from src.errors import ConfigError, MaterialError, StaleSetupError
from src.femops import (
    apply_vector,
    assemble_charge,
    assemble_exchange,
    assemble_gradient,
    lumped_volumes,
    node_regions,
)
from src.mesh import Mesh, mesh_hash
from src.utils import log


# =====================================================================
# Local terms
# =====================================================================
@dataclass(frozen=True)
class AnisotropyTable:
    """
    Per-node anisotropy parameters.

    Attributes
    ----------
    K_u : ndarray, shape (N,)
        Uniaxial constant (0 where not uniaxial).
    axis : ndarray, shape (N, 3)
        Uniaxial easy axes.
    K_1 : ndarray, shape (N,)
        Cubic constant (0 where not cubic).
    frames : ndarray, shape (N, 3, 3)
        Cubic crystal axes as matrix rows.
    """
    K_u: np.ndarray
    axis: np.ndarray
    K_1: np.ndarray
    frames: np.ndarray

    @classmethod
    def from_materials(cls, regions: np.ndarray, materials: Mapping[int, Material]) -> "AnisotropyTable":
        mats = [materials[int(t)] for t in regions]
        return cls(
            K_u=np.array([m.K if m.anisotropy == "uniaxial" else 0.0 for m in mats]),
            axis=np.array([m.axis for m in mats], dtype=float).reshape(-1, 3),
            K_1=np.array([m.K if m.anisotropy == "cubic" else 0.0 for m in mats]),
            frames=np.array([m.axes for m in mats], dtype=float).reshape(-1, 3, 3),
        )


def anisotropy_field(M: np.ndarray, Ms: np.ndarray, table: AnisotropyTable) -> np.ndarray:
    """
    Uniaxial plus first-order cubic anisotropy field (Oe).

    uniaxial: H = (2 K_u / Ms^2) (M . u) u
    cubic:    H'_i = -(2 K_1 / Ms) m'_i (m'_j^2 + m'_k^2) in the crystal frame
    """
    H = (2.0 * table.K_u / Ms ** 2 * np.einsum("ij,ij->i", M, table.axis))[:, None] * table.axis
    if np.any(table.K_1):
        m = M / Ms[:, None]
        mc = np.einsum("nij,nj->ni", table.frames, m)
        sq = mc ** 2
        hc = -(2.0 * table.K_1 / Ms)[:, None] * mc * (sq.sum(axis=1, keepdims=True) - sq)
        H = H + np.einsum("nji,nj->ni", table.frames, hc)
    return H


def anisotropy_energy_density(M: np.ndarray, Ms: np.ndarray, table: AnisotropyTable) -> np.ndarray:
    """Energy density (erg/cm^3): -K_u (m . u)^2 + K_1 (m1^2 m2^2 + m2^2 m3^2 + m3^2 m1^2)."""
    m = M / Ms[:, None]
    e = -table.K_u * np.einsum("ij,ij->i", m, table.axis) ** 2
    if np.any(table.K_1):
        sq = np.einsum("nij,nj->ni", table.frames, m) ** 2
        e = e + table.K_1 * (sq[:, 0] * sq[:, 1] + sq[:, 1] * sq[:, 2] + sq[:, 2] * sq[:, 0])
    return e


def applied_field(spec: AppliedFieldSpec, t: float, nodes: np.ndarray) -> np.ndarray:
    """
    Applied field at every node (Oe).

    ``uniform_ac`` oscillates as H0 cos(omega t). ``line_source`` drives only
    nodes within d/2 of the line with H0 cos(omega t - |k| s), s being the
    coordinate along the line.
    """
    n = nodes.shape[0]
    H0 = np.asarray(spec.H0, dtype=float)
    if spec.kind == "uniform_static":
        return np.tile(H0, (n, 1))
    if spec.kind == "uniform_ac":
        return np.tile(H0 * np.cos(spec.omega * t), (n, 1))
    rel = nodes - np.asarray(spec.line_position, dtype=float)
    s = nodes[:, spec.line_axis]
    rel[:, spec.line_axis] = 0.0
    inside = np.linalg.norm(rel, axis=1) <= 0.5 * spec.width
    phase = np.cos(spec.omega * t - abs(spec.wavenumber) * s)
    return np.where(inside[:, None], phase[:, None] * H0[None, :], 0.0)


# =====================================================================
# Full FEM assembly
# =====================================================================
class FieldAssembly:
    """
    Effective field of a meshed, possibly periodic, magnet.

    Parameters
    ----------
    mesh : Mesh
        Paired (and folded, if protruding) mesh.
    materials : mapping of region tag to Material
    periodic : PeriodicSpec
    applied : AppliedFieldSpec
    baim_settings : BaimSettings
    workers : int
        FFT worker threads.
    magnetostatics : bool
        Disable to drop H_ms (exchange/anisotropy-only studies).
    baim : BaimSetup, optional
        Reuse an existing potential solver setup.
    """

    def __init__(
        self,
        mesh: Mesh,
        materials: Mapping[int, Material],
        periodic: PeriodicSpec,
        applied: AppliedFieldSpec = AppliedFieldSpec(),
        baim_settings: BaimSettings = BaimSettings(),
        workers: int = 1,
        magnetostatics: bool = True,
        baim: Optional[BaimSetup] = None,
    ) -> None:
        self.mesh = mesh
        self.mesh_hash = mesh_hash(mesh)
        self.materials = dict(materials)
        self.periodic = periodic
        self.applied = applied

        regions = node_regions(mesh, materials)
        self.Ms = np.array([materials[int(t)].Ms for t in regions])
        self.alpha = np.array([materials[int(t)].alpha for t in regions])
        self.anisotropy = AnisotropyTable.from_materials(regions, materials)
        self.volumes = lumped_volumes(mesh)
        self.positions = mesh.nodes[: mesh.n_parents]

        self.exchange = assemble_exchange(mesh, materials)
        self.magnetostatics = magnetostatics
        if magnetostatics:
            self.charge = assemble_charge(mesh, materials)
            self.gradient = assemble_gradient(mesh)
            self.baim = baim if baim is not None else build_baim(mesh, periodic, baim_settings, workers)
            if self.baim.mesh_hash != self.mesh_hash:
                raise StaleSetupError("BAIM setup was built for a different mesh")
        log(f"Field assembly ready: N' = {mesh.n_parents}, magnetostatics={magnetostatics}")

    @property
    def n_nodes(self) -> int:
        return int(self.Ms.size)

    def check_mesh(self, mesh: Mesh) -> None:
        if mesh_hash(mesh) != self.mesh_hash:
            raise StaleSetupError("field assembly was built for a different mesh")

    def with_applied(self, applied: AppliedFieldSpec) -> "FieldAssembly":
        """Shallow copy sharing all operators, with a new applied field."""
        other = copy.copy(self)
        other.applied = applied
        return other

    # -----------------------------------------------------------------
    def exchange_field(self, M: np.ndarray) -> np.ndarray:
        return self.exchange.matrix @ M

    def charges(self, M: np.ndarray) -> np.ndarray:
        return apply_vector(self.charge, M)

    def potential(self, M: np.ndarray) -> np.ndarray:
        return self.baim.compute_psp(self.charges(M))

    def magnetostatic_field(self, M: np.ndarray) -> np.ndarray:
        if not self.magnetostatics:
            return np.zeros_like(M)
        return -apply_vector(self.gradient, self.potential(M))

    def anisotropy_field(self, M: np.ndarray) -> np.ndarray:
        return anisotropy_field(M, self.Ms, self.anisotropy)

    def applied_field(self, t: float) -> np.ndarray:
        return applied_field(self.applied, t, self.positions)

    def field_terms(self, M: np.ndarray, t: float = 0.0) -> Dict[str, np.ndarray]:
        return {
            "exchange": self.exchange_field(M),
            "magnetostatic": self.magnetostatic_field(M),
            "anisotropy": self.anisotropy_field(M),
            "applied": self.applied_field(t),
        }

    def effective_field(self, M: np.ndarray, t: float = 0.0) -> np.ndarray:
        return sum(self.field_terms(M, t).values())

    def energies(self, M: np.ndarray, t: float = 0.0) -> Dict[str, float]:
        """
        Energy of each term (erg) and their total.

        E_ex = -1/2 sum V M.H_ex, E_ms = -1/2 sum V M.H_ms,
        E_an = sum V e_an, E_ap = -sum V M.H_ap.
        """
        terms = self.field_terms(M, t)
        V = self.volumes
        out = {
            "exchange": -0.5 * float(np.sum(V * np.einsum("ij,ij->i", M, terms["exchange"]))),
            "magnetostatic": -0.5 * float(np.sum(V * np.einsum("ij,ij->i", M, terms["magnetostatic"]))),
            "anisotropy": float(np.sum(V * anisotropy_energy_density(M, self.Ms, self.anisotropy))),
            "applied": -float(np.sum(V * np.einsum("ij,ij->i", M, terms["applied"]))),
        }
        out["total"] = sum(out.values())
        return out


# =====================================================================
# Macrospin
# =====================================================================
@dataclass
class MacrospinField:
    """
    Single uniformly magnetized particle.

    Attributes
    ----------
    material : Material
        Ms, alpha and anisotropy of the particle.
    demag : tuple of float
        Diagonal demagnetizing factors (CGS, summing to 4 pi for an
        ellipsoid); H_d = -N M.
    applied : AppliedFieldSpec
    volume : float
        Particle volume (cm^3), only scales the energies.
    """
    material: Material
    demag: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    applied: AppliedFieldSpec = dc_field(default_factory=AppliedFieldSpec)
    volume: float = 1.0

    def __post_init__(self) -> None:
        if min(self.demag) < 0:
            raise MaterialError("demagnetizing factors must be non-negative")
        self.Ms = np.array([self.material.Ms])
        self.alpha = np.array([self.material.alpha])
        self.volumes = np.array([self.volume])
        self.anisotropy = AnisotropyTable.from_materials(np.array([0]), {0: self.material})

    @property
    def n_nodes(self) -> int:
        return 1

    def with_applied(self, applied: AppliedFieldSpec) -> "MacrospinField":
        return MacrospinField(self.material, self.demag, applied, self.volume)

    def field_terms(self, M: np.ndarray, t: float = 0.0) -> Dict[str, np.ndarray]:
        return {
            "magnetostatic": -np.asarray(self.demag)[None, :] * M,
            "anisotropy": anisotropy_field(M, self.Ms, self.anisotropy),
            "applied": applied_field(self.applied, t, np.zeros((1, 3))),
        }

    def effective_field(self, M: np.ndarray, t: float = 0.0) -> np.ndarray:
        return sum(self.field_terms(M, t).values())

    def energies(self, M: np.ndarray, t: float = 0.0) -> Dict[str, float]:
        terms = self.field_terms(M, t)
        V = self.volume
        out = {
            "exchange": 0.0,
            "magnetostatic": -0.5 * V * float(np.sum(M * terms["magnetostatic"])),
            "anisotropy": V * float(anisotropy_energy_density(M, self.Ms, self.anisotropy)[0]),
            "applied": -V * float(np.sum(M * terms["applied"])),
        }
        out["total"] = sum(out.values())
        return out


def uniform_magnetization(Ms: np.ndarray, direction: Sequence[float]) -> np.ndarray:
    """M_n = Ms_n * d / |d| at every node."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return Ms[:, None] * d[None, :]


def random_magnetization(Ms: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((Ms.size, 3))
    return Ms[:, None] * v / np.linalg.norm(v, axis=1, keepdims=True)


def initial_magnetization(spec: str, Ms: np.ndarray, seed: int = 0) -> np.ndarray:
    """
    Parse an initial-state description: ``uniform x y z`` or ``random``.

    Raises
    ------
    ConfigError
        On an unrecognized description.
    """
    parts = spec.split()
    if parts and parts[0] == "random":
        return random_magnetization(Ms, np.random.default_rng(seed))
    if len(parts) == 4 and parts[0] == "uniform":
        return uniform_magnetization(Ms, [float(p) for p in parts[1:]])
    raise ConfigError(f"unrecognized initial magnetization {spec!r}")
