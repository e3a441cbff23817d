"""
src/mesh.py

Tetrahedral mesh ingestion and periodic bookkeeping.

This module:
- reads and writes the plain-text node/tet mesh format,
- detects touching periodic node pairs and merges them to their lowest
  common ancestors (LCA) with contiguous parent reindexing,
- classifies the unit cell (touching / protruding),
- folds protruding geometry back into one period for the magnetostatic
  solver.

A Mesh is immutable once built; every operation returns a new Mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import chain, product
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from src.config import PeriodicSpec
from src.errors import (
    AmbiguousMatchError,
    DegenerateElementError,
    InconsistentComponentError,
    MeshFormatError,
)
from src.utils import array_digest, log, validate_file_exists

DEGENERATE_RELATIVE_VOLUME = 1e-12
DEFAULT_TOLERANCE_FACTOR = 1e-6

# Local edges of a tetrahedron
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def _frozen(arr: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Mesh:
    """
    Tetrahedral mesh with periodic bookkeeping.

    Attributes
    ----------
    nodes : ndarray, shape (N, 3)
        Node positions (cm) in the original geometry, kept verbatim through
        folding. Used by all FEM operators.
    tets : ndarray, shape (T, 4)
        Node indices per element, positively oriented.
    region : ndarray, shape (T,)
        Material tag per element.
    lca : ndarray, shape (N,)
        Parent (lowest common ancestor) of each node; ``lca[n] == n`` for parents.
    n_parents : int
        Number of parent nodes N'. Parents occupy indices [0, N').
    pbc_pairs : ndarray, shape (N - N', 2)
        (parent, child) pairs.
    fold_map : ndarray, shape (N, 3)
        Integer period shifts applied by folding.
    folded_nodes : ndarray, shape (N, 3)
        ``nodes + fold_map * periods``; equals ``nodes`` when unfolded.
    periods : ndarray, shape (3,)
        Periods the bookkeeping was built with (0 on non-periodic axes).
    permutation : ndarray, shape (N,)
        Index of each node in the originally loaded mesh.
    """
    nodes: np.ndarray
    tets: np.ndarray
    region: np.ndarray
    lca: np.ndarray
    n_parents: int
    pbc_pairs: np.ndarray
    fold_map: np.ndarray
    folded_nodes: np.ndarray
    periods: np.ndarray
    permutation: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_tets(self) -> int:
        return int(self.tets.shape[0])

    @property
    def is_folded(self) -> bool:
        return bool(np.any(self.fold_map))

    def parent_nodes(self, folded: bool = True) -> np.ndarray:
        """Positions of the N' parent nodes (folded coordinates by default)."""
        source = self.folded_nodes if folded else self.nodes
        return source[: self.n_parents]


@dataclass(frozen=True)
class CellClassification:
    """
    Touching / protruding classification of a unit cell.

    ``extent`` holds the bounding extents D_x, D_y, D_z of the parent nodes
    in (possibly folded) coordinates.
    """
    touching: bool
    protruding: bool
    extent: tuple[float, float, float]


# =====================================================================
# Construction and geometry
# =====================================================================
def tet_signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volume of every tetrahedron (positive for right-handed order)."""
    p = nodes[tets]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    d3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", d1, np.cross(d2, d3)) / 6.0


def make_mesh(nodes: np.ndarray, tets: np.ndarray,
              region: Optional[np.ndarray] = None) -> Mesh:
    """
    Build an unpaired, unfolded Mesh from raw arrays.

    Negatively oriented elements are reoriented by swapping two vertices.

    Raises
    ------
    MeshFormatError
        If an element references a node outside [0, N).
    DegenerateElementError
        If an element volume is below 1e-12 of the mean element volume.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
    n = nodes.shape[0]
    region = (np.zeros(tets.shape[0], dtype=np.int64) if region is None
              else np.asarray(region, dtype=np.int64))

    if tets.size and (tets.min() < 0 or tets.max() >= n):
        bad = int(np.flatnonzero((tets < 0).any(axis=1) | (tets >= n).any(axis=1))[0])
        raise MeshFormatError(f"tet {bad} references a node outside [0, {n})")

    vol = tet_signed_volumes(nodes, tets)
    negative = vol < 0
    if np.any(negative):
        tets[negative] = tets[negative][:, [0, 2, 1, 3]]
        vol = np.abs(vol)

    if tets.shape[0]:
        threshold = DEGENERATE_RELATIVE_VOLUME * vol.mean()
        degenerate = np.flatnonzero(vol <= threshold)
        if degenerate.size:
            e = int(degenerate[0])
            raise DegenerateElementError(e, float(vol[e]))

    return Mesh(
        nodes=_frozen(nodes),
        tets=_frozen(tets),
        region=_frozen(region),
        lca=_frozen(np.arange(n)),
        n_parents=n,
        pbc_pairs=_frozen(np.zeros((0, 2), dtype=np.int64)),
        fold_map=_frozen(np.zeros((n, 3), dtype=np.int64)),
        folded_nodes=_frozen(nodes),
        periods=_frozen(np.zeros(3)),
        permutation=_frozen(np.arange(n)),
    )


def parse_mesh_text(text: str) -> Mesh:
    """
    Parse the node/tet text format.

    Header ``nodes <N> tets <T>``, then N lines ``x y z`` and T lines
    ``i j k l tag`` (0-based). Blank lines and ``#`` comments are ignored.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise MeshFormatError("empty mesh file")

    lineno, head = rows[0]
    if len(head) != 4 or head[0] != "nodes" or head[2] != "tets":
        raise MeshFormatError("expected header 'nodes <N> tets <T>'", line=lineno)
    try:
        n_nodes, n_tets = int(head[1]), int(head[3])
    except ValueError:
        raise MeshFormatError("non-integer counts in header", line=lineno) from None
    if len(rows) - 1 != n_nodes + n_tets:
        raise MeshFormatError(
            f"header announces {n_nodes} nodes + {n_tets} tets, "
            f"found {len(rows) - 1} data lines", line=lineno,
        )

    nodes = np.empty((n_nodes, 3))
    for i, (lineno, parts) in enumerate(rows[1 : 1 + n_nodes]):
        if len(parts) != 3:
            raise MeshFormatError("node line needs 3 coordinates", line=lineno)
        try:
            nodes[i] = [float(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"bad coordinate in {' '.join(parts)!r}", line=lineno) from None

    tets = np.empty((n_tets, 4), dtype=np.int64)
    region = np.empty(n_tets, dtype=np.int64)
    for e, (lineno, parts) in enumerate(rows[1 + n_nodes :]):
        if len(parts) != 5:
            raise MeshFormatError("tet line needs 4 node indices and a region tag", line=lineno)
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"bad index in {' '.join(parts)!r}", line=lineno) from None
        if min(values[:4]) < 0 or max(values[:4]) >= n_nodes:
            raise MeshFormatError(f"node index out of range [0, {n_nodes})", line=lineno)
        tets[e] = values[:4]
        region[e] = values[4]

    return make_mesh(nodes, tets, region)


def load_mesh(path: Path) -> Mesh:
    """
    Load a mesh text file.

    Parameters
    ----------
    path : Path
        Mesh file in the node/tet text format.

    Returns
    -------
    Mesh
        With identity LCA map and no periodic pairs. Duplicate nodes are
        kept as-is.
    """
    validate_file_exists(Path(path), "mesh file")
    mesh = parse_mesh_text(Path(path).read_text())
    log(f"Loaded mesh {path}: {mesh.n_nodes} nodes, {mesh.n_tets} tets")
    return mesh


def save_mesh(mesh: Mesh, path: Path) -> None:
    """Write the (unfolded) mesh in the node/tet text format."""
    lines = [f"nodes {mesh.n_nodes} tets {mesh.n_tets}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.nodes.tolist()]
    lines += [f"{a} {b} {c} {d} {t}"
              for (a, b, c, d), t in zip(mesh.tets.tolist(), mesh.region.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def edge_lengths(mesh: Mesh) -> np.ndarray:
    """Lengths of the unique mesh edges."""
    edges = np.sort(mesh.tets[:, TET_EDGES].reshape(-1, 2), axis=1)
    edges = np.unique(edges, axis=0)
    return np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)


def default_match_tolerance(mesh: Mesh) -> float:
    return DEFAULT_TOLERANCE_FACTOR * float(edge_lengths(mesh).min())


def mesh_hash(mesh: Mesh) -> str:
    """Digest of geometry, topology and periodic bookkeeping."""
    return array_digest(mesh.nodes, mesh.tets, mesh.region, mesh.lca, mesh.folded_nodes)


# =====================================================================
# Periodic pairing
# =====================================================================
def _image_offsets(spec: PeriodicSpec) -> np.ndarray:
    # the zero offset joins nodes that coincide after folding
    choices = [(-1, 0, 1) if f else (0,) for f in spec.flags]
    return np.array(list(product(*choices)), dtype=np.int64).reshape(-1, 3)


def _reindex(mesh: Mesh, order: np.ndarray, parent_of: np.ndarray,
             n_parents: int, periods: np.ndarray) -> Mesh:
    n = mesh.n_nodes
    new_index = np.empty(n, dtype=np.int64)
    new_index[order] = np.arange(n)
    lca = new_index[parent_of[order]]
    children = np.arange(n_parents, n)
    pairs = np.column_stack([lca[children], children]) if children.size else \
        np.zeros((0, 2), dtype=np.int64)
    return replace(
        mesh,
        nodes=_frozen(mesh.nodes[order]),
        tets=_frozen(new_index[mesh.tets]),
        lca=_frozen(lca),
        n_parents=int(n_parents),
        pbc_pairs=_frozen(pairs),
        fold_map=_frozen(mesh.fold_map[order]),
        folded_nodes=_frozen(mesh.folded_nodes[order]),
        periods=_frozen(periods),
        permutation=_frozen(mesh.permutation[order]),
    )


def detect_pbc_pairs(mesh: Mesh, spec: PeriodicSpec) -> Mesh:
    """
    Detect touching periodic node pairs and merge them to their LCAs.

    Every node j found at ``r_i + (a L_x, b L_y, c L_z)`` for an offset with
    components in {-1, 0, 1} on periodic axes (within the match tolerance,
    in folded coordinates) is unioned with node i. Folding first brings
    translates that lie several periods apart within one period of each
    other. Each connected component keeps its minimum node index as parent;
    parents are then moved to [0, N') and children to [N', N), both in their
    previous relative order.

    Parameters
    ----------
    mesh : Mesh
        Loaded mesh, folded or not. The translate check of each component
        uses the original coordinates.
    spec : PeriodicSpec
        Periodicity; with no periodic axis the mesh is returned with an
        identity LCA map.

    Returns
    -------
    Mesh
        Reindexed mesh with ``lca``, ``n_parents`` and ``pbc_pairs`` set.
        Running this function twice gives identical results.

    Raises
    ------
    AmbiguousMatchError
        Two distinct nodes coincide (within tolerance) in the original mesh.
    InconsistentComponentError
        A component holds nodes that are not integer-period translates.
    """
    n = mesh.n_nodes
    periods = spec.periods
    if spec.dims == 0:
        identity = np.arange(n)
        return _reindex(mesh, identity, identity, n, periods)

    tol = spec.match_tolerance or default_match_tolerance(mesh)
    duplicates = cKDTree(mesh.nodes).query_pairs(tol, output_type="ndarray")
    if duplicates.size:
        i, j = (int(v) for v in duplicates[0])
        raise AmbiguousMatchError(i, (i, j))

    coords = mesh.folded_nodes
    tree = cKDTree(coords)
    rows, cols = [], []
    for offset in _image_offsets(spec):
        hits = tree.query_ball_point(coords + offset * periods, tol)
        counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=n)
        src = np.repeat(np.arange(n), counts)
        dst = np.fromiter(chain.from_iterable(hits), dtype=np.int64, count=int(counts.sum()))
        keep = src != dst
        rows.append(src[keep])
        cols.append(dst[keep])

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    graph = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)

    comp_min = np.full(n_comp, n, dtype=np.int64)
    np.minimum.at(comp_min, labels, np.arange(n))
    parent_of = comp_min[labels]

    # Members must be integer-period translates of their parent.
    comp_size = np.bincount(labels, minlength=n_comp)[labels]
    slack = tol * np.maximum(comp_size - 1, 1)
    diff = mesh.nodes - mesh.nodes[parent_of]
    safe_periods = np.where(periods > 0, periods, 1.0)
    shifts = np.round(diff / safe_periods)
    residual = np.where(periods > 0, diff - shifts * periods, diff)
    bad = np.flatnonzero(np.abs(residual).max(axis=1) > slack)
    if bad.size:
        k = int(bad[0])
        raise InconsistentComponentError(
            f"node {k} at {mesh.nodes[k].tolist()} is not a period translate of "
            f"its component parent {int(parent_of[k])} at {mesh.nodes[parent_of[k]].tolist()}"
        )

    is_parent = parent_of == np.arange(n)
    order = np.concatenate([np.flatnonzero(is_parent), np.flatnonzero(~is_parent)])
    n_parents = int(is_parent.sum())
    paired = _reindex(mesh, order, parent_of, n_parents, periods)
    log(f"Periodic pairing: {n - n_parents} pairs, N' = {n_parents} of N = {n}")
    return paired


# =====================================================================
# Classification and folding
# =====================================================================
def classify_cell(mesh: Mesh, spec: PeriodicSpec) -> CellClassification:
    """
    Classify a unit cell as touching and/or protruding.

    Extents are measured over the parent nodes in folded coordinates, so a
    touching cell whose two faces coincide under one period is not reported
    as protruding.
    """
    parents = mesh.parent_nodes(folded=True)
    extent = parents.max(axis=0) - parents.min(axis=0) if parents.size else np.zeros(3)
    tol = spec.match_tolerance or (default_match_tolerance(mesh) if mesh.n_tets else 0.0)
    protruding = any(
        flag and extent[i] > length + tol
        for i, (flag, length) in enumerate(zip(spec.flags, spec.periods))
    )
    return CellClassification(
        touching=bool(len(mesh.pbc_pairs) > 0),
        protruding=bool(protruding),
        extent=tuple(float(d) for d in extent),
    )


def fold_protruding(mesh: Mesh, spec: PeriodicSpec,
                    reference: Optional[np.ndarray] = None) -> Mesh:
    """
    Fold protruding geometry into a single period.

    Each node is shifted by an integer number of periods on every periodic
    axis so that its Manhattan distance to ``reference`` is minimal. The
    per-axis problem is separable and solved by ``delta = -round((x - x0)/L)``.

    Parameters
    ----------
    mesh : Mesh
    spec : PeriodicSpec
    reference : ndarray, optional
        Fixed point r0; defaults to the mean of the parent-node coordinates.

    Returns
    -------
    Mesh
        With ``folded_nodes`` and ``fold_map`` set. Non-protruding meshes are
        returned unchanged.
    """
    if not classify_cell(mesh, spec).protruding:
        return mesh

    periods = spec.periods
    if reference is None:
        reference = mesh.nodes[: mesh.n_parents].mean(axis=0)
    reference = np.asarray(reference, dtype=float)

    safe_periods = np.where(periods > 0, periods, 1.0)
    delta = -np.round((mesh.nodes - reference) / safe_periods)
    delta[:, periods == 0] = 0
    delta = delta.astype(np.int64)
    folded = fold_coordinates(mesh.nodes, delta, periods)

    result = replace(mesh, fold_map=_frozen(delta), folded_nodes=_frozen(folded),
                     periods=_frozen(periods))
    after = classify_cell(result, spec)
    log(f"Folded protruding cell: {int(np.count_nonzero(delta.any(axis=1)))} nodes shifted, "
        f"extent {tuple(round(d, 12) for d in after.extent)}")
    return result


def fold_coordinates(nodes: np.ndarray, fold_map: np.ndarray,
                     periods: np.ndarray) -> np.ndarray:
    return nodes + fold_map * periods


def unfold_coordinates(mesh: Mesh) -> np.ndarray:
    """
    Original coordinates of a folded mesh.

    These are the stored ``nodes``, so the result is bit-identical to the
    loaded geometry; subtracting the shifts from ``folded_nodes`` is not.
    """
    return np.array(mesh.nodes)


def unfold_mesh(mesh: Mesh) -> Mesh:
    """Drop the fold, restoring the stored original coordinates."""
    return replace(mesh, fold_map=_frozen(np.zeros_like(mesh.fold_map)),
                   folded_nodes=_frozen(unfold_coordinates(mesh)))


def prepare_mesh(mesh: Mesh, spec: PeriodicSpec) -> tuple[Mesh, CellClassification]:
    """
    Fold, pair and classify a freshly loaded mesh.

    Folding runs first so that pairing finds translates however many periods
    apart they were loaded. Returns the solver-ready mesh and its final
    classification (``protruding`` describes the loaded geometry).
    """
    before = classify_cell(mesh, spec)
    folded = fold_protruding(mesh, spec) if before.protruding else mesh
    paired = detect_pbc_pairs(folded, spec)
    after = classify_cell(paired, spec)
    return paired, CellClassification(after.touching, before.protruding, after.extent)
