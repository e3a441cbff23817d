"""
src/baim.py

Periodic scalar potential from nodal charges in O(N log N).

The box adaptive integral method (BAIM) evaluates

    u_n = sum_k G_p(r_n - r_k) q_k        (k = n uses the image-only self term)

in four steps:
1. project the nodal charges onto a Cartesian grid (Lagrange stencils),
2. convolve the grid charges with the tabulated PGF by FFT (circular on
   periodic axes, zero-padded on the others),
3. interpolate the grid potentials back to the nodes (transpose stencil),
4. add a sparse near-field correction that replaces the grid-mediated
   free-space interaction of every close pair by the exact 1/r value.

Node positions are the folded parent coordinates of the mesh. The O(N^2)
``direct_psp_oracle`` computes the same sum literally.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import fft, sparse
from scipy.special import erfc
from scipy.spatial import cKDTree

from src.config import BaimSettings, PeriodicSpec
from src.errors import GridError, OracleGuardError, StaleSetupError
from src.femops import SparseOperator
from src.mesh import Mesh, detect_pbc_pairs, mesh_hash
from src.mesh_builders import box_mesh
from src.pgf import PgfSpec, check_convergence, g0, pgf_eval, pgf_self_term
from src.utils import log, warn

ORACLE_MAX_NODES = 20000
MIN_PERIODIC_PLANES = 4
_PAIR_CHUNK = 20000


# =====================================================================
# Types
# =====================================================================
@dataclass(frozen=True)
class Grid:
    """
    Cartesian grid of the convolution.

    Attributes
    ----------
    shape : tuple of int
        Planes per axis, padding included.
    spacing : ndarray, shape (3,)
        Grid spacings (cm).
    origin : ndarray, shape (3,)
        Position of plane 0 on each axis (cm).
    periodic : tuple of bool
        Periodic flags; periodic axes satisfy ``shape * spacing == L``.
    periods : ndarray, shape (3,)
        Periods (0 on non-periodic axes).
    order : int
        Stencil order (1 trilinear, 3 cubic).
    """
    shape: Tuple[int, int, int]
    spacing: np.ndarray
    origin: np.ndarray
    periodic: Tuple[bool, bool, bool]
    periods: np.ndarray
    order: int

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    @property
    def fft_shape(self) -> Tuple[int, int, int]:
        return tuple(n if p else 2 * n for n, p in zip(self.shape, self.periodic))

    @property
    def n_boxes(self) -> int:
        """Number of interior grid cells (padding excluded)."""
        pad = (self.order + 1) // 2
        cells = [n if p else n - 1 - 2 * pad for n, p in zip(self.shape, self.periodic)]
        return int(np.prod(cells))


@dataclass(frozen=True)
class Projection:
    """Projection stencils and their sparse (grid x N') matrix."""
    operator: SparseOperator
    base: np.ndarray
    weights: np.ndarray

    def project(self, q: np.ndarray) -> np.ndarray:
        return self.operator.matrix @ q

    def interpolate(self, grid_values: np.ndarray) -> np.ndarray:
        return self.operator.matrix.T @ grid_values


@dataclass(frozen=True)
class KernelTable:
    """PGF samples on grid displacements and their real FFT."""
    values: np.ndarray
    spectrum: np.ndarray
    fft_shape: Tuple[int, int, int]
    grid_shape: Tuple[int, int, int]
    self_term: float


@dataclass(frozen=True)
class CorrectionSetup:
    """
    Near-field correction.

    Attributes
    ----------
    r_er : float
        Correction radius (cm).
    operator : SparseOperator
        kind ``correction``, (N' x N').
    observers, sources : ndarray
        Pair indices, every pair within ``r_er`` (minimum image) once,
        self pairs included.
    displacements : ndarray, shape (n_pairs, 3)
        ``r_observer - r_source`` reduced to the minimum image.
    """
    r_er: float
    operator: SparseOperator
    observers: np.ndarray
    sources: np.ndarray
    displacements: np.ndarray


@dataclass(frozen=True)
class BaimSetup:
    """All precomputed artifacts of the fast potential solver."""
    grid: Grid
    projection: Projection
    kernel: KernelTable
    correction: CorrectionSetup
    pgf: PgfSpec
    mesh_hash: str
    workers: int = 1

    def compute_psp(self, charges: np.ndarray, mesh: Optional[Mesh] = None) -> np.ndarray:
        return compute_psp(self, charges, mesh)


# =====================================================================
# Grid
# =====================================================================
def _fast_planes(target: float, minimum: int) -> int:
    """2^a 3^b 5^c plane count closest in ratio to ``target``, at least ``minimum``."""
    up = fft.next_fast_len(max(minimum, int(np.ceil(target))), real=True)
    down = max(minimum, int(np.floor(target)))
    while down > minimum and fft.next_fast_len(down, real=True) != down:
        down -= 1
    if fft.next_fast_len(down, real=True) != down:
        return up
    return down if target / down <= up / target else up


def build_grid(
    mesh: Mesh,
    spec: PeriodicSpec,
    points_per_box: float = 0.25,
    stencil_order: int = 3,
    counts: Optional[Sequence[int]] = None,
    rer_scale: float = 7.0,
) -> Grid:
    """
    Choose the convolution grid.

    Periodic axes hold one period with an FFT-friendly plane count
    (2^a 3^b 5^c) and no endpoint duplication. Non-periodic axes hold
    ``N`` planes over the extent D (spacing D/(N-1)) plus stencil padding on
    both sides. Without explicit ``counts`` each axis gets the plane count
    closest to ``points_per_box`` nodes per interior box; the spacing is then
    refined only as far as needed to keep the correction radius
    ``rer_scale * max(spacing)`` below half the shortest period.

    Raises
    ------
    GridError
        Zero extent on a non-periodic axis, or invalid explicit counts.
    """
    pts = mesh.parent_nodes(folded=True)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = hi - lo
    periods = spec.periods
    flags = spec.flags
    pad = (stencil_order + 1) // 2

    for a in range(3):
        if not flags[a] and extent[a] <= 0:
            raise GridError(f"degenerate extent on non-periodic axis {'xyz'[a]}")

    def layout(planes: Sequence[int]) -> Tuple[Tuple[int, ...], np.ndarray, np.ndarray]:
        shape, spacing, origin = [], [], []
        for a in range(3):
            if flags[a]:
                shape.append(int(planes[a]))
                spacing.append(periods[a] / planes[a])
                origin.append(lo[a])
            else:
                delta = extent[a] / (planes[a] - 1)
                shape.append(int(planes[a]) + 2 * pad)
                spacing.append(delta)
                origin.append(lo[a] - pad * delta)
        return tuple(shape), np.array(spacing), np.array(origin)

    if counts is not None:
        counts = [int(c) for c in counts]
        for a in range(3):
            if flags[a] and counts[a] < MIN_PERIODIC_PLANES:
                raise GridError(f"periodic axis {'xyz'[a]} needs >= {MIN_PERIODIC_PLANES} planes")
            if not flags[a] and counts[a] < 2:
                raise GridError(f"non-periodic axis {'xyz'[a]} needs >= 2 planes")
        shape, spacing, origin = layout(counts)
    else:
        sizes = np.where(flags, periods, extent)
        h = (float(np.prod(sizes)) * points_per_box / mesh.n_parents) ** (1.0 / 3.0)
        min_periodic = max(MIN_PERIODIC_PLANES, int(np.floor(2 * rer_scale)) + 1)
        for _ in range(100):
            planes = [
                _fast_planes(sizes[a] / h, min_periodic)
                if flags[a] else max(2, int(round(sizes[a] / h)) + 1)
                for a in range(3)
            ]
            shape, spacing, origin = layout(planes)
            if not any(flags) or rer_scale * spacing.max() < 0.5 * periods[list(spec.periodic_axes)].min():
                break
            h *= 0.9

    grid = Grid(shape=shape, spacing=spacing, origin=origin, periodic=tuple(flags),
                periods=np.asarray(periods, dtype=float), order=int(stencil_order))
    density = mesh.n_parents / grid.n_boxes
    log(f"BAIM grid {grid.shape}, spacing {tuple(float(f'{d:.4g}') for d in spacing)}, "
        f"{density:.2f} nodes per box")
    if counts is None and density < 0.5 * points_per_box:
        warn(f"BAIM grid is finer than {points_per_box:g} nodes per box: "
             f"r_ER = {rer_scale:g} spacings must stay below half the shortest period")
    return grid


# =====================================================================
# Projection / interpolation
# =====================================================================
def lagrange_stencil(t: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    1D Lagrange stencils at fractional grid coordinates ``t``.

    Returns the first stencil plane ``base`` and weights of shape
    (len(t), order + 1); weights sum to one.
    """
    base = np.floor(t).astype(np.int64) - (order - 1) // 2
    s = t - base
    weights = np.ones((t.size, order + 1))
    for j in range(order + 1):
        for m in range(order + 1):
            if m != j:
                weights[:, j] *= (s - m) / (j - m)
    return base, weights


def build_projection(mesh: Mesh, grid: Grid) -> Projection:
    """
    Sparse projection of nodal charges onto the grid.

    Interpolation of grid potentials back to the nodes reuses the transpose.

    Raises
    ------
    GridError
        If a stencil leaves the grid on a non-periodic axis.
    """
    pts = mesh.parent_nodes(folded=True)
    n = pts.shape[0]
    order = grid.order
    width = order + 1
    bases, weights, indices = [], [], []
    for a in range(3):
        t = (pts[:, a] - grid.origin[a]) / grid.spacing[a]
        base, w = lagrange_stencil(t, order)
        idx = base[:, None] + np.arange(width)[None, :]
        if grid.periodic[a]:
            idx = np.mod(idx, grid.shape[a])
        elif idx.min() < 0 or idx.max() >= grid.shape[a]:
            bad = int(np.flatnonzero((idx < 0).any(axis=1) | (idx >= grid.shape[a]).any(axis=1))[0])
            raise GridError(f"node {bad} lies outside the grid on axis {'xyz'[a]}")
        bases.append(base)
        weights.append(w)
        indices.append(idx)

    nx, ny, nz = grid.shape
    flat = (indices[0][:, :, None, None] * ny * nz
            + indices[1][:, None, :, None] * nz
            + indices[2][:, None, None, :])
    vals = (weights[0][:, :, None, None] * weights[1][:, None, :, None]
            * weights[2][:, None, None, :])
    cols = np.broadcast_to(np.arange(n)[:, None, None, None], flat.shape)
    matrix = sparse.coo_matrix((vals.ravel(), (flat.ravel(), cols.ravel())),
                               shape=(grid.n_points, n)).tocsr()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return Projection(
        operator=SparseOperator("projection", matrix, mesh_hash(mesh)),
        base=np.stack(bases, axis=1),
        weights=np.stack(weights, axis=1),
    )


# =====================================================================
# Kernel and convolution
# =====================================================================
def _displacement_axis(n: int, spacing: float, periodic: bool) -> np.ndarray:
    if periodic:
        return np.arange(n) * spacing
    idx = np.arange(2 * n)
    signed = np.where(idx < n, idx, idx - 2 * n)
    signed[n] = 0
    return signed * spacing


def tabulate_kernel(grid: Grid, pgf_spec: PgfSpec, workers: int = 1) -> KernelTable:
    """
    Sample the PGF on all grid displacements and transform it.

    The zero displacement holds the image-only self term; the singular free
    part never enters the grid.
    """
    axes = [_displacement_axis(n, d, p) for n, d, p in zip(grid.shape, grid.spacing, grid.periodic)]
    mesh_axes = np.meshgrid(*axes, indexing="ij")
    disp = np.stack([m.ravel() for m in mesh_axes], axis=1)
    values = np.empty(disp.shape[0])
    zero = np.all(disp == 0, axis=1)
    self_term = pgf_self_term(pgf_spec)
    values[zero] = self_term
    values[~zero] = pgf_eval(pgf_spec, disp[~zero])
    values = values.reshape(mesh_axes[0].shape)
    if pgf_spec.dims:
        sample = disp[~zero][:: max(1, disp.shape[0] // 32)]
        achieved = check_convergence(pgf_spec, sample)
        log(f"PGF table {values.shape}: cutoff relative error {achieved:.2e}")
    spectrum = fft.rfftn(values, workers=workers)
    return KernelTable(values=values, spectrum=spectrum, fft_shape=grid.fft_shape,
                       grid_shape=grid.shape, self_term=self_term)


def convolve(kernel: KernelTable, grid_charges: np.ndarray, workers: int = 1) -> np.ndarray:
    """
    Grid potentials ``sum_g' K(g - g') q_g'``.

    Circular on periodic axes, linear (zero-padded to twice the length) on
    the others.

    Raises
    ------
    GridError
        If the charge array does not match the grid shape.
    """
    q = np.asarray(grid_charges, dtype=float).reshape(-1)
    if q.size != int(np.prod(kernel.grid_shape)):
        raise GridError(f"grid charges of size {q.size} do not match grid {kernel.grid_shape}")
    q = q.reshape(kernel.grid_shape)
    padded = fft.rfftn(q, s=kernel.fft_shape, workers=workers)
    full = fft.irfftn(padded * kernel.spectrum, s=kernel.fft_shape, workers=workers)
    nx, ny, nz = kernel.grid_shape
    return full[:nx, :ny, :nz]


# =====================================================================
# Near-field correction
# =====================================================================
def _stencil_products(w_obs: np.ndarray, w_src: np.ndarray) -> np.ndarray:
    """Per-axis correlation c[d] = sum_{i-j=d} w_obs[i] w_src[j], shape (B, 3, 2p+1)."""
    width = w_obs.shape[-1]
    out = np.zeros(w_obs.shape[:-1] + (2 * width - 1,))
    for i in range(width):
        for j in range(width):
            out[..., i - j + width - 1] += w_obs[..., i] * w_src[..., j]
    return out


def _grid_free_space(products: np.ndarray, offsets: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    """sum over stencil pairs of weights times 1/|grid displacement| (0 at the origin)."""
    width = products.shape[-1]
    half = width // 2
    shifts = np.arange(-half, half + 1)
    comp = (offsets[:, :, None] + shifts[None, None, :]) * spacing[None, :, None]
    dist2 = (comp[:, 0, :, None, None] ** 2 + comp[:, 1, None, :, None] ** 2
             + comp[:, 2, None, None, :] ** 2)
    with np.errstate(divide="ignore"):
        inv = np.where(dist2 > 0, 1.0 / np.sqrt(dist2), 0.0)
    return np.einsum("bi,bj,bk,bijk->b", products[:, 0], products[:, 1], products[:, 2], inv)


def build_correction(mesh: Mesh, grid: Grid, projection: Projection, r_er: float) -> CorrectionSetup:
    """
    Sparse near-field correction.

    For every observer n and source k within ``r_er`` (minimum image, so
    sources near the opposite periodic face are reached through their image)
    the entry is ``G0(r_n - r_k) - interp_n . K0 . proj_k``, where the second
    term is the free-space part of the grid-mediated interaction. Self pairs
    carry only the subtraction term.

    Raises
    ------
    GridError
        If ``r_er`` is not below half the shortest period.
    """
    pts = mesh.parent_nodes(folded=True)
    n = pts.shape[0]
    periods = grid.periods
    flags = np.array(grid.periodic)
    if flags.any() and not r_er < 0.5 * periods[flags].min():
        raise GridError(f"r_ER = {r_er:.4g} must be below half the shortest period "
                        f"({0.5 * periods[flags].min():.4g})")

    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    coords = pts - lo
    box = np.where(flags, periods, 4.0 * (extent + r_er) + 1.0)
    coords = np.where(flags, np.mod(coords, np.where(flags, periods, 1.0)), coords)
    coords = np.where(coords >= box, 0.0, coords)
    tree = cKDTree(coords, boxsize=box)
    pairs = tree.query_pairs(r_er, output_type="ndarray")
    obs, src = pairs[:, 0], pairs[:, 1]

    raw = pts[obs] - pts[src]
    safe = np.where(flags, periods, 1.0)
    shift = np.where(flags, np.round(raw / safe), 0.0)
    disp = raw - shift * periods
    offsets = (projection.base[obs] - projection.base[src]
               - (shift * np.array(grid.shape)).astype(np.int64))

    grid_term = np.empty(obs.size)
    for start in range(0, obs.size, _PAIR_CHUNK):
        sl = slice(start, start + _PAIR_CHUNK)
        prods = _stencil_products(projection.weights[obs[sl]], projection.weights[src[sl]])
        grid_term[sl] = _grid_free_space(prods, offsets[sl], grid.spacing)
    near = g0(disp) - grid_term

    self_prods = _stencil_products(projection.weights, projection.weights)
    self_term = -_grid_free_space(self_prods, np.zeros((n, 3), dtype=np.int64), grid.spacing)

    observers = np.concatenate([obs, src, np.arange(n)])
    sources = np.concatenate([src, obs, np.arange(n)])
    values = np.concatenate([near, near, self_term])
    displacements = np.concatenate([disp, -disp, np.zeros((n, 3))])
    matrix = sparse.coo_matrix((values, (observers, sources)), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    log(f"BAIM correction: r_ER = {r_er:.4g}, {obs.size} near pairs, {matrix.nnz} entries")
    return CorrectionSetup(
        r_er=float(r_er),
        operator=SparseOperator("correction", matrix, mesh_hash(mesh)),
        observers=observers,
        sources=sources,
        displacements=displacements,
    )


# =====================================================================
# Setup and evaluation
# =====================================================================
def build_baim(mesh: Mesh, periodic: PeriodicSpec, settings: BaimSettings = BaimSettings(),
               workers: int = 1) -> BaimSetup:
    """
    Build grid, stencils, kernel table and correction for ``mesh``.

    Parameters
    ----------
    mesh : Mesh
        Paired and (if protruding) folded mesh.
    periodic : PeriodicSpec
    settings : BaimSettings
    workers : int
        FFT worker threads.
    """
    grid = build_grid(mesh, periodic, settings.points_per_box, settings.stencil_order,
                      settings.grid_counts, settings.rer_scale)
    projection = build_projection(mesh, grid)
    pgf_spec = PgfSpec.from_periodic(periodic, target_rel_error=settings.pgf_target_rel_error)
    kernel = tabulate_kernel(grid, pgf_spec, workers)
    r_er = settings.rer_scale * float(grid.spacing.max())
    correction = build_correction(mesh, grid, projection, r_er)
    return BaimSetup(grid=grid, projection=projection, kernel=kernel, correction=correction,
                     pgf=pgf_spec, mesh_hash=mesh_hash(mesh), workers=workers)


def compute_psp(setup: BaimSetup, charges: np.ndarray, mesh: Optional[Mesh] = None) -> np.ndarray:
    """
    Corrected periodic scalar potential at the parent nodes.

    ``u = P^T conv(K, P q) + C q``.

    Raises
    ------
    StaleSetupError
        If ``mesh`` is given and differs from the mesh of the setup, or the
        charge vector has the wrong length.
    """
    if mesh is not None and mesh_hash(mesh) != setup.mesh_hash:
        raise StaleSetupError("BAIM setup was built for a different mesh")
    q = np.asarray(charges, dtype=float)
    if q.shape != (setup.projection.operator.n_cols,):
        raise StaleSetupError(f"expected {setup.projection.operator.n_cols} charges, got {q.shape}")
    grid_q = setup.projection.project(q)
    grid_u = convolve(setup.kernel, grid_q, setup.workers)
    return setup.projection.interpolate(grid_u.ravel()) + setup.correction.operator.apply(q)


# =====================================================================
# Direct oracle
# =====================================================================
def _ewald_pairs_3d(pts: np.ndarray, q: np.ndarray, spec: PgfSpec) -> np.ndarray:
    """Tinfoil Ewald potential of point charges with a pair-friendly split."""
    lengths = spec.lengths
    volume = float(np.prod(lengths))
    reach = np.sqrt(-np.log(spec.target_rel_error)) + 0.5
    alpha = 2.0 * reach / float(lengths.min())
    n = pts.shape[0]

    real = np.zeros(n)
    step = max(1, 4_000_000 // n)
    for start in range(0, n, step):
        sl = slice(start, start + step)
        d = pts[sl, None, :] - pts[None, :, :]
        d -= lengths * np.round(d / lengths)
        dist = np.linalg.norm(d, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            kernel = np.where(dist > 0, erfc(alpha * dist) / dist, 0.0)
        real[sl] = kernel @ q

    k_max = 2.0 * alpha * reach
    counts = [int(np.ceil(k_max * L / (2 * np.pi))) for L in lengths]
    grids = np.meshgrid(*[np.arange(-c, c + 1) for c in counts], indexing="ij")
    m = np.stack([g.ravel() for g in grids], axis=1)
    m = m[np.any(m != 0, axis=1)]
    kvec = 2 * np.pi * m / lengths
    kk = np.sum(kvec ** 2, axis=1)
    keep = kk <= k_max ** 2
    kvec, kk = kvec[keep], kk[keep]
    coef = (4 * np.pi / volume) * np.exp(-kk / (4 * alpha ** 2)) / kk

    recip = np.zeros(n)
    step = max(1, 4_000_000 // n)
    for start in range(0, kvec.shape[0], step):
        phase = pts @ kvec[start : start + step].T
        c, s = np.cos(phase), np.sin(phase)
        recip += c @ (coef[start : start + step] * (q @ c)) + s @ (coef[start : start + step] * (q @ s))

    return real + recip - np.pi / (alpha ** 2 * volume) * q.sum() - 2 * alpha / np.sqrt(np.pi) * q


def direct_psp_oracle(charges: np.ndarray, pgf_spec: PgfSpec, mesh: Mesh) -> np.ndarray:
    """
    Literal superposition ``u_n = sum_{k != n} G_p(r_n - r_k) q_k + G_self q_n``.

    Uses the folded parent coordinates, like the fast solver.

    Raises
    ------
    OracleGuardError
        For more than 20000 parent nodes.
    PgfConvergenceError
        If the Ewald cutoffs miss the accuracy target on sampled pairs.
    """
    pts = mesh.parent_nodes(folded=True)
    n = pts.shape[0]
    if n > ORACLE_MAX_NODES:
        raise OracleGuardError(f"direct oracle limited to {ORACLE_MAX_NODES} nodes, got {n}")
    q = np.asarray(charges, dtype=float)
    if not np.any(q):
        return np.zeros(n)

    if pgf_spec.dims == 3 and pgf_spec.method == "ewald":
        return _ewald_pairs_3d(pts, q, pgf_spec)

    if n > 1:
        check_convergence(pgf_spec, pts[1:][:: max(1, n // 32)] - pts[0])
    u = pgf_self_term(pgf_spec) * q
    rows = max(1, 20000 // n)
    for start in range(0, n, rows):
        stop = min(start + rows, n)
        d = pts[start:stop, None, :] - pts[None, :, :]
        d = d.reshape(-1, 3)
        own = (np.arange(start, stop)[:, None] == np.arange(n)[None, :]).ravel()
        values = np.zeros(d.shape[0])
        values[~own] = pgf_eval(pgf_spec, d[~own])
        u[start:stop] += values.reshape(stop - start, n) @ q
    return u


def relative_rms(values: np.ndarray, reference: np.ndarray) -> float:
    """Relative RMS difference after removing the best-fit additive constant."""
    err = values - reference
    err = err - err.mean()
    ref = reference - reference.mean()
    return float(np.sqrt(np.mean(err ** 2)) / np.sqrt(np.mean(ref ** 2)))


def oracle_report(setup: BaimSetup, mesh: Mesh, charges: Optional[np.ndarray] = None,
                  seed: int = 0) -> pd.DataFrame:
    """
    Compare ``compute_psp`` against ``direct_psp_oracle``.

    Without ``charges`` a charge-neutral random set is drawn.

    Returns
    -------
    pd.DataFrame
        One row: n_nodes, grid, r_er, relative_rms, fast_seconds, direct_seconds.
    """
    n = mesh.n_parents
    if charges is None:
        rng = np.random.default_rng(seed)
        charges = rng.standard_normal(n)
        charges -= charges.mean()
    t0 = time.perf_counter()
    fast = compute_psp(setup, charges, mesh)
    t1 = time.perf_counter()
    direct = direct_psp_oracle(charges, setup.pgf, mesh)
    t2 = time.perf_counter()
    rms = relative_rms(fast, direct)
    log(f"Oracle check: relative RMS {rms:.3e} (fast {t1 - t0:.2f}s, direct {t2 - t1:.2f}s)")
    return pd.DataFrame([{
        "n_nodes": n,
        "grid": "x".join(str(s) for s in setup.grid.shape),
        "r_er": setup.correction.r_er,
        "relative_rms": rms,
        "fast_seconds": t1 - t0,
        "direct_seconds": t2 - t1,
    }])


def scaling_report(cells: Sequence[int], settings: BaimSettings = BaimSettings(),
                   repeats: int = 3, seed: int = 0) -> pd.DataFrame:
    """
    Time ``compute_psp`` on fully periodic unit cubes of increasing size.

    Setup cost is excluded; each row keeps the best of ``repeats`` calls.
    ``doubling_ratio`` is the fitted growth of the time per doubling of N
    (2.0 for linear, roughly 2.2 for N log N), repeated on every row.
    """
    spec = PeriodicSpec(True, True, True, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(seed)
    rows = []
    for n in cells:
        mesh = detect_pbc_pairs(box_mesh((1.0, 1.0, 1.0), (n, n, n)), spec)
        setup = build_baim(mesh, spec, settings)
        q = rng.standard_normal(mesh.n_parents)
        q -= q.mean()
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            compute_psp(setup, q)
            best = min(best, time.perf_counter() - t0)
        rows.append({"n_nodes": mesh.n_parents,
                     "grid": "x".join(str(s) for s in setup.grid.shape),
                     "n_corrections": int(setup.correction.operator.matrix.nnz),
                     "seconds": best})
    report = pd.DataFrame(rows)
    slope = np.polyfit(np.log2(report["n_nodes"]), np.log2(report["seconds"]), 1)[0]
    report["doubling_ratio"] = float(2.0 ** slope)
    log(f"Scaling: {2.0 ** slope:.2f}x time per doubling of N over {len(report)} sizes")
    return report
