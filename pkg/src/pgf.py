"""
src/pgf.py

Free-space and periodic Green's functions of the 1/r kernel.

The static lattice sums of 1/r diverge (logarithmically for 1D and 2D
periodicity, conditionally for 3D), so the periodic Green's function (PGF) is
defined up to an additive constant:
- 1D: renormalized sum  sum_i [1/|r - i L| - (1 - delta_i0)/(|i| L)],
- 2D: lattice sum minus a divergent constant, keeping the -2 pi |z| / A
  field of the charged sheet,
- 3D: lattice sum with a uniform neutralizing background (tinfoil Ewald).

Two evaluation methods are provided. ``ewald`` splits each sum into an
erfc-screened real-space part and a reciprocal-space part and converges
exponentially. ``truncated_direct`` sums a finite block of images and
subtracts the matching continuum; its additive constant differs from the
Ewald one, so the two methods are compared through differences only
(``pgf_difference_field``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import erf, erfc, erfcx, exp1

from src.config import PeriodicSpec
from src.errors import PgfConvergenceError, PgfDomainError
from src.utils import log

METHODS = ("ewald", "truncated_direct")
EULER_GAMMA = float(np.euler_gamma)
SQRT_PI = float(np.sqrt(np.pi))

# Gauss-Legendre order for the 1D reciprocal-space integrals
_GL_ORDER = 96
# Pairwise work items per vectorized chunk
_CHUNK = 2_000_000
# Default image counts (per side) of the truncated direct sums
_DIRECT_CELLS = {1: 2000, 2: 100, 3: 20}


@dataclass(frozen=True)
class PgfSpec:
    """
    Parameters of a (periodic) Green's function evaluation.

    Attributes
    ----------
    periods : tuple of float
        Period per axis (cm); 0 marks a non-periodic axis. All zero gives the
        free-space kernel.
    method : str
        ``ewald`` or ``truncated_direct``.
    ewald_alpha : float, optional
        Splitting parameter (1/cm). Default sqrt(pi) / min(L).
    real_cutoff, recip_cutoff : int, optional
        Image / reciprocal shell counts per side. Chosen from
        ``target_rel_error`` when omitted.
    target_rel_error : float
        Accuracy target of the Ewald sums, in (0, 1).
    direct_cells : int, optional
        Images per side of ``truncated_direct`` (defaults 2000 / 100 / 20 for
        1D / 2D / 3D).
    """
    periods: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    method: str = "ewald"
    ewald_alpha: Optional[float] = None
    real_cutoff: Optional[int] = None
    recip_cutoff: Optional[int] = None
    target_rel_error: float = 1e-8
    direct_cells: Optional[int] = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise PgfDomainError(f"unknown PGF method {self.method!r}")
        if len(self.periods) != 3 or min(self.periods) < 0:
            raise PgfDomainError(f"periods must be 3 non-negative lengths, got {self.periods}")
        if not 0 < self.target_rel_error < 1:
            raise PgfDomainError("target_rel_error must lie in (0, 1)")
        if self.ewald_alpha is not None and not self.ewald_alpha > 0:
            raise PgfDomainError("ewald_alpha must be positive")

    @classmethod
    def from_periodic(cls, periodic: PeriodicSpec, **kwargs) -> "PgfSpec":
        return cls(periods=tuple(float(p) for p in periodic.periods), **kwargs)

    @property
    def periodic_axes(self) -> Tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.periods) if p > 0)

    @property
    def dims(self) -> int:
        return len(self.periodic_axes)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.periods[a] for a in self.periodic_axes])

    @property
    def alpha(self) -> float:
        if self.ewald_alpha is not None:
            return float(self.ewald_alpha)
        return SQRT_PI / float(self.lengths.min())


# =====================================================================
# Free space
# =====================================================================
def g0(r: np.ndarray) -> np.ndarray:
    """
    Free-space Green's function 1/|r|.

    Raises
    ------
    PgfDomainError
        If any displacement is zero.
    """
    dist = np.linalg.norm(np.asarray(r, dtype=float), axis=-1)
    if np.any(dist == 0):
        raise PgfDomainError("free-space Green's function evaluated at r = 0")
    return 1.0 / dist


# =====================================================================
# Lattice helpers
# =====================================================================
def wrap(spec: PgfSpec, r: np.ndarray) -> np.ndarray:
    """Map displacements into the primary cell [-L/2, L/2) on periodic axes."""
    out = np.array(r, dtype=float, copy=True)
    for a in spec.periodic_axes:
        L = spec.periods[a]
        out[..., a] -= L * np.round(out[..., a] / L)
    return out


def _translations(spec: PgfSpec, counts: Sequence[int]) -> np.ndarray:
    """Lattice translation vectors with |index| <= count per periodic axis."""
    ranges = [range(-c, c + 1) for c in counts]
    idx = np.array(list(product(*ranges)), dtype=float).reshape(-1, len(counts))
    vec = np.zeros((idx.shape[0], 3))
    for j, a in enumerate(spec.periodic_axes):
        vec[:, a] = idx[:, j] * spec.periods[a]
    return vec


def _real_counts(spec: PgfSpec, alpha: float) -> list[int]:
    if spec.real_cutoff is not None:
        return [int(spec.real_cutoff)] * spec.dims
    reach = np.sqrt(-np.log(spec.target_rel_error)) + 0.5
    return [int(np.ceil(reach / (alpha * L))) + 1 for L in spec.lengths]


def _recip_counts(spec: PgfSpec, alpha: float) -> list[int]:
    if spec.recip_cutoff is not None:
        return [int(spec.recip_cutoff)] * spec.dims
    k_max = 2.0 * alpha * np.sqrt(-np.log(spec.target_rel_error))
    return [int(np.ceil(k_max * L / (2 * np.pi))) + 1 for L in spec.lengths]


def _reciprocal_vectors(spec: PgfSpec, counts: Sequence[int]) -> np.ndarray:
    """Nonzero reciprocal vectors 2 pi m / L restricted to the periodic axes."""
    ranges = [range(-c, c + 1) for c in counts]
    m = np.array([v for v in product(*ranges) if any(v)], dtype=float).reshape(-1, len(counts))
    return 2 * np.pi * m / spec.lengths


def _chunks(n_points: int, width: int):
    step = max(1, _CHUNK // max(width, 1))
    for start in range(0, n_points, step):
        yield slice(start, min(start + step, n_points))


def _real_space(r: np.ndarray, images: np.ndarray, alpha: float) -> np.ndarray:
    out = np.empty(r.shape[0])
    for sl in _chunks(r.shape[0], images.shape[0]):
        d = np.linalg.norm(r[sl, None, :] + images[None, :, :], axis=-1)
        out[sl] = np.sum(erfc(alpha * d) / d, axis=1)
    return out


def _ein(x: np.ndarray) -> np.ndarray:
    """Entire exponential integral Ein(x) = E1(x) + gamma + ln(x)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x <= 2.0
    xs = x[small]
    term = xs.copy()
    total = xs.copy()
    for k in range(2, 60):
        term = -term * xs / k
        total += term / k
    out[small] = total
    xl = x[~small]
    out[~small] = exp1(xl) + EULER_GAMMA + np.log(xl)
    return out


def _one_d_profiles(k: np.ndarray, rho: np.ndarray, alpha: float) -> np.ndarray:
    """F_m(rho) = 2 * integral_0^alpha exp(-k^2/(4t^2) - t^2 rho^2) dt / t."""
    s, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    t = 0.5 * alpha * (s + 1.0)
    w = 0.5 * alpha * w
    out = np.empty((rho.size, k.size))
    for sl in _chunks(rho.size, k.size * _GL_ORDER):
        expo = (-(k[None, :, None] ** 2) / (4 * t[None, None, :] ** 2)
                - (t[None, None, :] ** 2) * rho[sl, None, None] ** 2)
        out[sl] = 2.0 * np.sum(w / t * np.exp(expo), axis=2)
    return out


def _sheet_pair(k: np.ndarray, z: np.ndarray, alpha: float) -> np.ndarray:
    """e^{kz} erfc(k/2a + a z) + e^{-kz} erfc(k/2a - a z), overflow-safe."""
    u = k / (2 * alpha) + alpha * z
    v = k / (2 * alpha) - alpha * z
    base = np.exp(-(k ** 2) / (4 * alpha ** 2) - (alpha * z) ** 2)
    with np.errstate(over="ignore", invalid="ignore"):
        t1 = np.where(u >= 0, erfcx(np.abs(u)) * base, np.exp(k * z) * erfc(u))
        t2 = np.where(v >= 0, erfcx(np.abs(v)) * base, np.exp(-k * z) * erfc(v))
    return t1 + t2


# =====================================================================
# Ewald sums
# =====================================================================
def _ewald(spec: PgfSpec, r: np.ndarray, alpha: float, self_term: bool = False) -> np.ndarray:
    """
    Ewald evaluation at wrapped displacements ``r`` (P, 3).

    With ``self_term`` the r -> 0 limit of G - 1/r is returned (``r`` ignored
    apart from its length).
    """
    dims = spec.dims
    images = _translations(spec, _real_counts(spec, alpha))
    kvec = _reciprocal_vectors(spec, _recip_counts(spec, alpha))
    axes = spec.periodic_axes

    if self_term:
        nonzero = images[np.any(images != 0, axis=1)]
        d = np.linalg.norm(nonzero, axis=1)
        real = np.sum(erfc(alpha * d) / d) - 2 * alpha / SQRT_PI
        r = np.zeros((1, 3))
    else:
        real = _real_space(r, images, alpha)

    if dims == 3:
        volume = float(np.prod(spec.lengths))
        kk = np.sum(kvec ** 2, axis=1)
        coef = (4 * np.pi / volume) * np.exp(-kk / (4 * alpha ** 2)) / kk
        recip = np.empty(r.shape[0])
        for sl in _chunks(r.shape[0], kvec.shape[0]):
            recip[sl] = np.cos(r[sl] @ kvec.T) @ coef
        recip = recip - np.pi / (alpha ** 2 * volume)

    elif dims == 2:
        area = float(np.prod(spec.lengths))
        normal = [a for a in range(3) if a not in axes][0]
        rho = r[:, list(axes)]
        z = r[:, normal]
        kk = np.linalg.norm(kvec, axis=1)
        recip = np.empty(r.shape[0])
        for sl in _chunks(r.shape[0], kvec.shape[0]):
            phase = np.cos(rho[sl] @ kvec.T)
            recip[sl] = np.sum(phase / kk * _sheet_pair(kk[None, :], z[sl, None], alpha), axis=1)
        recip *= np.pi / area
        recip -= (2 * np.pi / area) * (z * erf(alpha * z)
                                       + np.exp(-(alpha * z) ** 2) / (alpha * SQRT_PI))

    else:
        L = float(spec.lengths[0])
        a = axes[0]
        x = r[:, a]
        rho = np.linalg.norm(np.delete(r, a, axis=1), axis=1)
        m = np.arange(1, kvec.shape[0] // 2 + 1)
        k = 2 * np.pi * m / L
        profiles = _one_d_profiles(k, rho, alpha)
        recip = (2.0 / L) * np.sum(profiles * np.cos(np.outer(x, k)), axis=1)
        recip -= (1.0 / L) * (EULER_GAMMA - 2 * np.log(2 * alpha * L) + _ein((alpha * rho) ** 2))

    return real + recip


# =====================================================================
# Truncated direct sums
# =====================================================================
def _log_plus(a: np.ndarray, R: np.ndarray, rest2: np.ndarray) -> np.ndarray:
    """ln(a + R) with R = sqrt(a^2 + rest2), stable for negative a."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.where(a > 0, a + R, rest2 / (R - a)))


def _rect_primitive(u: np.ndarray, v: np.ndarray, z: np.ndarray) -> np.ndarray:
    R = np.sqrt(u * u + v * v + z * z)
    az = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        angle = np.where(az > 0, np.arctan(u * v / (az * R)), 0.0)
    return u * _log_plus(v, R, u * u + z * z) + v * _log_plus(u, R, v * v + z * z) - az * angle


def _box_primitive(x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    R = np.sqrt(x * x + y * y + z * z)
    return (y * z * _log_plus(x, R, y * y + z * z)
            + x * z * _log_plus(y, R, x * x + z * z)
            + x * y * _log_plus(z, R, x * x + y * y)
            - 0.5 * x * x * np.arctan(y * z / (x * R))
            - 0.5 * y * y * np.arctan(x * z / (y * R))
            - 0.5 * z * z * np.arctan(x * y / (z * R)))


def _continuum(spec: PgfSpec, r: np.ndarray, cells: int) -> np.ndarray:
    """Potential of the uniform density 1/cell-measure over the summed block."""
    axes = spec.periodic_axes
    half = (cells + 0.5) * spec.lengths
    measure = float(np.prod(spec.lengths))
    if spec.dims == 2:
        normal = [a for a in range(3) if a not in axes][0]
        x, y, z = r[:, axes[0]], r[:, axes[1]], r[:, normal]
        total = np.zeros(r.shape[0])
        for sx, sy in product((1, -1), repeat=2):
            sign = sx * sy
            total += sign * _rect_primitive(sx * half[0] - x, sy * half[1] - y, z)
        return total / measure
    total = np.zeros(r.shape[0])
    for sx, sy, sz in product((1, -1), repeat=3):
        sign = sx * sy * sz
        total += sign * _box_primitive(sx * half[0] - r[:, 0], sy * half[1] - r[:, 1],
                                       sz * half[2] - r[:, 2])
    return total / measure


def _truncated_direct(spec: PgfSpec, r: np.ndarray, self_term: bool = False) -> np.ndarray:
    dims = spec.dims
    cells = int(spec.direct_cells or _DIRECT_CELLS[dims])
    if dims == 1:
        if self_term:
            return np.zeros(1)
        a = spec.periodic_axes[0]
        L = float(spec.lengths[0])
        x = r[:, a]
        rho2 = np.sum(np.delete(r, a, axis=1) ** 2, axis=1)
        i = np.arange(-cells, cells + 1, dtype=float)
        counter = np.where(i != 0, 1.0 / (np.abs(i) * L + (i == 0)), 0.0)
        out = np.empty(r.shape[0])
        for sl in _chunks(r.shape[0], i.size):
            d = np.sqrt((x[sl, None] - i[None, :] * L) ** 2 + rho2[sl, None])
            out[sl] = np.sum(1.0 / d - counter[None, :], axis=1)
        tail = (2 * x ** 2 - rho2) / (2 * (cells + 0.5) ** 2 * L ** 3)
        return out + tail

    images = _translations(spec, [cells] * dims)
    if self_term:
        nonzero = images[np.any(images != 0, axis=1)]
        lattice = np.array([np.sum(1.0 / np.linalg.norm(nonzero, axis=1))])
        return lattice - _continuum(spec, np.zeros((1, 3)), cells)
    lattice = np.empty(r.shape[0])
    for sl in _chunks(r.shape[0], images.shape[0]):
        d = np.linalg.norm(r[sl, None, :] + images[None, :, :], axis=-1)
        lattice[sl] = np.sum(1.0 / d, axis=1)
    out = lattice - _continuum(spec, r, cells)
    if dims == 2:
        # the block continuum also removes the sheet field; put it back
        normal = [a for a in range(3) if a not in spec.periodic_axes][0]
        out -= 2 * np.pi * np.abs(r[:, normal]) / float(np.prod(spec.lengths))
    return out


# =====================================================================
# Public API
# =====================================================================
def _evaluate(spec: PgfSpec, r: np.ndarray) -> np.ndarray:
    if spec.method == "ewald":
        return _ewald(spec, r, spec.alpha)
    return _truncated_direct(spec, r)


def pgf_eval(spec: PgfSpec, r: np.ndarray, verify: bool = False) -> np.ndarray:
    """
    Regularized periodic Green's function at displacement(s) ``r``.

    Parameters
    ----------
    spec : PgfSpec
    r : array_like, shape (..., 3)
        Displacements (cm).
    verify : bool
        Also evaluate with doubled cutoffs and raise if the results differ by
        more than ``target_rel_error`` (Ewald only).

    Returns
    -------
    ndarray of shape r.shape[:-1] (cm^-1)

    Raises
    ------
    PgfDomainError
        If a displacement coincides with a lattice image of the origin.
    PgfConvergenceError
        If ``verify`` is set and the cutoffs are insufficient.
    """
    r = np.asarray(r, dtype=float)
    shape = r.shape[:-1]
    flat = r.reshape(-1, 3)
    if spec.dims == 0:
        return g0(flat).reshape(shape)

    wrapped = wrap(spec, flat)
    scale = float(spec.lengths.min())
    if np.any(np.linalg.norm(wrapped, axis=1) <= 1e-12 * scale):
        raise PgfDomainError("PGF evaluated at a lattice image of the source")
    values = _evaluate(spec, wrapped)
    if verify and spec.method == "ewald":
        _check_against_doubled(spec, wrapped, values)
    return values.reshape(shape)


def pgf_self_term(spec: PgfSpec) -> float:
    """
    Regularized image-only self term: the limit of G(r) - 1/r as r -> 0.

    Zero in free space. For 1D periodicity it vanishes exactly because the
    renormalized sum subtracts every nonzero image.
    """
    if spec.dims == 0:
        return 0.0
    if spec.method == "ewald":
        return float(_ewald(spec, np.zeros((1, 3)), spec.alpha, self_term=True)[0])
    return float(_truncated_direct(spec, np.zeros((1, 3)), self_term=True)[0])


def pgf_difference_field(spec: PgfSpec, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """G(r1) - G(r2); independent of the regularization constant."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if np.array_equal(r1, r2):
        return np.zeros(r1.shape[:-1])
    return pgf_eval(spec, r1) - pgf_eval(spec, r2)


def _doubled(spec: PgfSpec) -> PgfSpec:
    alpha = spec.alpha
    return replace(
        spec,
        ewald_alpha=alpha,
        real_cutoff=2 * max(_real_counts(spec, alpha)),
        recip_cutoff=2 * max(_recip_counts(spec, alpha)),
    )


def _check_against_doubled(spec: PgfSpec, wrapped: np.ndarray, values: np.ndarray) -> float:
    reference = _ewald(_doubled(spec), wrapped, spec.alpha)
    scale = max(float(np.max(np.abs(reference))), 1.0 / float(spec.lengths.min()))
    achieved = float(np.max(np.abs(values - reference))) / scale
    if achieved > spec.target_rel_error:
        raise PgfConvergenceError(achieved, spec.target_rel_error)
    return achieved


def check_convergence(spec: PgfSpec, points: np.ndarray) -> float:
    """
    Achieved relative accuracy of the Ewald cutoffs on sample ``points``.

    Raises
    ------
    PgfConvergenceError
        If it exceeds ``target_rel_error``.
    """
    if spec.dims == 0 or spec.method != "ewald":
        return 0.0
    wrapped = wrap(spec, np.asarray(points, dtype=float).reshape(-1, 3))
    keep = np.linalg.norm(wrapped, axis=1) > 1e-12 * float(spec.lengths.min())
    wrapped = wrapped[keep]
    return _check_against_doubled(spec, wrapped, _ewald(spec, wrapped, spec.alpha))


# =====================================================================
# Self-test suite
# =====================================================================
def _sample_points(spec: PgfSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    box = np.array([p if p > 0 else 1.0 for p in spec.periods])
    return (rng.random((n, 3)) - 0.5) * box * 0.9 + 0.05 * box


def run_selftest(periods_list: Optional[Sequence[Tuple[float, float, float]]] = None,
                 target_rel_error: float = 1e-8, n_points: int = 6,
                 seed: int = 0) -> pd.DataFrame:
    """
    Method-agreement and symmetry suite for 1D, 2D and 3D periodicity.

    Parameters
    ----------
    periods_list : sequence of period triples, optional
        Cells to test; defaults to unit cells along x, xy and xyz.
    target_rel_error : float
        Ewald accuracy target.
    n_points : int
        Random displacements per check.
    seed : int
        RNG seed.

    Returns
    -------
    pd.DataFrame
        Columns: dims, check, value, tolerance, passed.
    """
    rng = np.random.default_rng(seed)
    periods_list = periods_list or [(1.0, 0.0, 0.0), (1.0, 1.0, 0.0), (1.0, 1.0, 1.0)]
    rows = []
    for periods in periods_list:
        spec = PgfSpec(periods=tuple(periods), target_rel_error=target_rel_error)
        direct = replace(spec, method="truncated_direct")
        pts = _sample_points(spec, rng, n_points)
        ref = pts[::-1]
        base = pgf_eval(spec, pts)
        scale = float(np.max(np.abs(base)))

        shift = np.zeros(3)
        shift[spec.periodic_axes[0]] = spec.periods[spec.periodic_axes[0]]
        rows.append((spec.dims, "periodicity",
                     np.max(np.abs(pgf_eval(spec, pts + shift) - base)) / scale,
                     target_rel_error))
        rows.append((spec.dims, "parity",
                     np.max(np.abs(pgf_eval(spec, -pts) - base)) / scale, target_rel_error))
        rows.append((spec.dims, "alpha_independence",
                     np.max(np.abs(pgf_eval(replace(spec, ewald_alpha=2 * spec.alpha), pts)
                                   - base)) / scale, target_rel_error))
        rows.append((spec.dims, "cutoff_convergence", check_convergence(spec, pts),
                     target_rel_error))
        ewald_diff = pgf_difference_field(spec, pts, ref)
        direct_diff = pgf_difference_field(direct, pts, ref)
        rows.append((spec.dims, "method_agreement",
                     np.max(np.abs(ewald_diff - direct_diff)) / max(np.max(np.abs(ewald_diff)), 1e-300),
                     max(1e-5, 3 * target_rel_error)))
        log(f"PGF self-test {spec.dims}D done")

    df = pd.DataFrame(rows, columns=["dims", "check", "value", "tolerance"])
    df["passed"] = df["value"] <= df["tolerance"]
    return df
