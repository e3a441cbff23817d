"""
src/femops.py

Periodicity-aware sparse FEM operators on linear tetrahedra.

All operators are assembled over the full N-node mesh and then folded onto
the N' parent nodes through the LCA map: child rows accumulate into their
parent row, child columns are remapped to the parent column and duplicate
(row, col) entries are summed. Fields passed to the operators are therefore
per-parent arrays of length N'.

Conventions (CGS):
- exchange:  H_ex = -(1/V_n) sum_e (2 A_e / Ms_e^2) K_e M
- charge:    q_n  = integral of grad(phi_n) . M dV  (volume plus surface charge)
- gradient:  (grad u)_n = (1/V_n) sum_e (V_e / 4) grad(u)|_e
with V_n the lumped nodal volume (a quarter of every adjacent element).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from src.config import Material
from src.errors import MaterialError, MeshFormatError
from src.mesh import Mesh, mesh_hash
from src.utils import log

AXES = "xyz"


@dataclass(frozen=True)
class SparseOperator:
    """
    Assembled sparse operator.

    Attributes
    ----------
    kind : str
        ``laplace``, ``stiffness``, ``charge_x|y|z``, ``grad_x|y|z``,
        ``projection`` or ``correction``.
    matrix : scipy.sparse.csr_matrix
        Row-compressed weights with duplicates summed.
    mesh_hash : str
        Digest of the mesh the operator was built for.
    """
    kind: str
    matrix: sparse.csr_matrix
    mesh_hash: str

    @property
    def n_rows(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.matrix.shape[1])

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def to_triplets(self) -> pd.DataFrame:
        """Entries as a ``row, col, weight`` table sorted by row then column."""
        coo = self.matrix.tocoo()
        df = pd.DataFrame({"row": coo.row, "col": coo.col, "weight": coo.data})
        return df.sort_values(["row", "col"]).reset_index(drop=True)


# =====================================================================
# Element geometry
# =====================================================================
def element_geometry(nodes: np.ndarray, tets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Volumes and basis-function gradients of linear tetrahedra.

    Parameters
    ----------
    nodes : ndarray, shape (N, 3)
    tets : ndarray, shape (T, 4)
        Positively oriented elements.

    Returns
    -------
    volumes : ndarray, shape (T,)
    grads : ndarray, shape (T, 4, 3)
        ``grads[e, i]`` is the (constant) gradient of the basis function of
        local vertex i on element e.
    """
    p = nodes[tets]
    a = np.concatenate([np.ones((tets.shape[0], 4, 1)), p], axis=2)
    volumes = np.linalg.det(a) / 6.0
    coeffs = np.linalg.inv(a)
    grads = np.transpose(coeffs[:, 1:, :], (0, 2, 1))
    return volumes, grads


def _fold(mesh: Mesh, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> sparse.csr_matrix:
    n = mesh.n_parents
    out = sparse.coo_matrix(
        (vals.ravel(), (mesh.lca[rows.ravel()], mesh.lca[cols.ravel()])), shape=(n, n)
    ).tocsr()
    out.sum_duplicates()
    return out


def _pairs(tets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rows = np.broadcast_to(tets[:, :, None], (tets.shape[0], 4, 4))
    cols = np.broadcast_to(tets[:, None, :], (tets.shape[0], 4, 4))
    return rows, cols


def lumped_volumes(mesh: Mesh) -> np.ndarray:
    """
    Lumped nodal volumes V_n over the N' parent nodes.

    Each element contributes a quarter of its volume to each vertex; child
    contributions accumulate on their parent.

    Raises
    ------
    MeshFormatError
        If a parent node touches no element.
    """
    volumes, _ = element_geometry(mesh.nodes, mesh.tets)
    v = np.bincount(mesh.lca[mesh.tets].ravel(), weights=np.repeat(volumes / 4.0, 4),
                    minlength=mesh.n_parents)[: mesh.n_parents]
    empty = np.flatnonzero(v <= 0)
    if empty.size:
        raise MeshFormatError(f"node {int(empty[0])} has zero lumped volume")
    return v


# =====================================================================
# Material lookup
# =====================================================================
def _material_index(mesh: Mesh, materials: Mapping[int, Material]) -> Tuple[np.ndarray, np.ndarray]:
    tags = np.unique(mesh.region)
    missing = [int(t) for t in tags if int(t) not in materials]
    if missing:
        raise MaterialError(f"region tag {missing[0]} has no material entry")
    return tags, np.searchsorted(tags, mesh.region)


def element_parameters(mesh: Mesh, materials: Mapping[int, Material]) -> Dict[str, np.ndarray]:
    """Per-element Ms, A_ex and alpha arrays."""
    tags, idx = _material_index(mesh, materials)
    return {
        name: np.array([getattr(materials[int(t)], name) for t in tags])[idx]
        for name in ("Ms", "A_ex", "alpha")
    }


def node_regions(mesh: Mesh, materials: Mapping[int, Material]) -> np.ndarray:
    """
    Region tag of every parent node.

    A node on a material interface takes the region holding the largest share
    of its lumped volume.
    """
    tags, idx = _material_index(mesh, materials)
    volumes, _ = element_geometry(mesh.nodes, mesh.tets)
    share = np.zeros((mesh.n_parents, tags.size))
    np.add.at(share, (mesh.lca[mesh.tets], np.repeat(idx[:, None], 4, axis=1)),
              np.repeat(volumes[:, None] / 4.0, 4, axis=1))
    return tags[np.argmax(share, axis=1)]


def node_parameters(mesh: Mesh, materials: Mapping[int, Material]) -> Dict[str, np.ndarray]:
    """Per-parent-node Ms, A_ex and alpha arrays (dominant region)."""
    regions = node_regions(mesh, materials)
    return {
        name: np.array([getattr(materials[int(t)], name) for t in regions])
        for name in ("Ms", "A_ex", "alpha")
    }


# =====================================================================
# Operators
# =====================================================================
def assemble_stiffness(mesh: Mesh, weights: Optional[np.ndarray] = None,
                       fold: bool = True) -> sparse.csr_matrix:
    """
    Stiffness matrix sum_e w_e * integral(grad phi_m . grad phi_n) dV.

    With ``fold=False`` the raw (N x N) symmetric matrix is returned.
    """
    volumes, grads = element_geometry(mesh.nodes, mesh.tets)
    scale = volumes if weights is None else volumes * weights
    local = scale[:, None, None] * np.einsum("eid,ejd->eij", grads, grads)
    rows, cols = _pairs(mesh.tets)
    if fold:
        return _fold(mesh, rows, cols, local)
    n = mesh.n_nodes
    raw = sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    raw.sum_duplicates()
    return raw


def assemble_exchange(mesh: Mesh, materials: Mapping[int, Material]) -> SparseOperator:
    """
    Exchange operator mapping M (N', per component) to H_ex (Oe).

    Parameters
    ----------
    mesh : Mesh
        LCA-resolved mesh.
    materials : mapping of region tag to Material

    Returns
    -------
    SparseOperator
        kind ``laplace``; rows sum to zero on touching periodic meshes.
    """
    params = element_parameters(mesh, materials)
    coupling = 2.0 * params["A_ex"] / params["Ms"] ** 2
    stiffness = assemble_stiffness(mesh, coupling)
    inv_volume = sparse.diags(-1.0 / lumped_volumes(mesh))
    op = SparseOperator("laplace", (inv_volume @ stiffness).tocsr(), mesh_hash(mesh))
    log(f"Assembled exchange operator: {op.matrix.nnz} nonzeros")
    return op


def assemble_charge(mesh: Mesh, materials: Optional[Mapping[int, Material]] = None
                    ) -> Tuple[SparseOperator, SparseOperator, SparseOperator]:
    """
    Nodal magnetic charge operators (one per M component).

    ``q = C_x M_x + C_y M_y + C_z M_z`` with
    ``C_d[n, k] = sum_e (V_e / 4) d(phi_n)/dd``.

    When ``materials`` is given, element e scales the contribution of node k
    by ``Ms_e / Ms_k`` so that interfaces between materials with different
    saturation magnetization carry the correct surface charge.
    """
    volumes, grads = element_geometry(mesh.nodes, mesh.tets)
    rows, cols = _pairs(mesh.tets)
    scale = np.ones((mesh.n_tets, 4, 4))
    if materials is not None and len(materials) > 1:
        ms_e = element_parameters(mesh, materials)["Ms"]
        ms_n = node_parameters(mesh, materials)["Ms"]
        scale = np.broadcast_to(
            (ms_e[:, None] / ms_n[mesh.lca[mesh.tets]])[:, None, :], scale.shape
        )
    digest = mesh_hash(mesh)
    ops = []
    for d, name in enumerate(AXES):
        local = (volumes[:, None, None] / 4.0) * grads[:, :, d][:, :, None] * scale
        ops.append(SparseOperator(f"charge_{name}", _fold(mesh, rows, cols, local), digest))
    log(f"Assembled charge operators: {ops[0].matrix.nnz} nonzeros each")
    return tuple(ops)


def assemble_gradient(mesh: Mesh) -> Tuple[SparseOperator, SparseOperator, SparseOperator]:
    """
    Nodal gradient recovery operators.

    The piecewise-constant element gradient of a linear field is averaged
    over the elements adjacent to each node with weights V_e/4. Elements
    adjacent to a child node count for its parent, so nodes on a periodic
    face see both sides of the cell.
    """
    volumes, grads = element_geometry(mesh.nodes, mesh.tets)
    rows, cols = _pairs(mesh.tets)
    inv_volume = sparse.diags(1.0 / lumped_volumes(mesh))
    digest = mesh_hash(mesh)
    ops = []
    for d, name in enumerate(AXES):
        local = (volumes[:, None, None] / 4.0) * grads[:, :, d][:, None, :]
        matrix = (inv_volume @ _fold(mesh, rows, cols, np.broadcast_to(local, rows.shape))).tocsr()
        ops.append(SparseOperator(f"grad_{name}", matrix, digest))
    log(f"Assembled gradient operators: {ops[0].matrix.nnz} nonzeros each")
    return tuple(ops)


def apply_vector(ops: Tuple[SparseOperator, ...], field: np.ndarray) -> np.ndarray:
    """Apply per-component operators: charge(M) -> q, or gradient(u) -> (N', 3)."""
    if field.ndim == 2:
        return sum(op.apply(field[:, d]) for d, op in enumerate(ops))
    return np.stack([op.apply(field) for op in ops], axis=1)
