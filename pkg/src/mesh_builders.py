"""
src/mesh_builders.py

Structured tetrahedral meshes.

Every builder subdivides a regular hexahedral lattice into six tetrahedra per
cube and optionally maps it onto a curved shape:
- box / film: rectangular blocks (Kuhn or mirrored subdivision),
- sphere: cube-to-ball map,
- rod: cylinder along x via a square-to-disk map of the cross-section,
- parallelogram: x-sheared slab whose x extent exceeds its period.

The mirrored subdivision reflects the Kuhn pattern in every cube with an odd
index along an axis. With an even cell count this makes the mesh symmetric
under reflection, which removes the one-sided bias of nodal gradient
recovery.
"""

from __future__ import annotations

from itertools import permutations
from typing import Callable, Dict, Sequence

import numpy as np

from src.config import MeshSource
from src.errors import ConfigError
from src.mesh import Mesh, load_mesh, make_mesh
from src.utils import log


def _lattice_nodes(size: Sequence[float], cells: Sequence[int],
                   origin: Sequence[float]) -> np.ndarray:
    axes = [o + np.linspace(0.0, s, n + 1) for o, s, n in zip(origin, size, cells)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def _lattice_tets(cells: Sequence[int], mirrored: bool) -> np.ndarray:
    nx, ny, nz = (int(c) for c in cells)
    if min(nx, ny, nz) < 1:
        raise ConfigError(f"cell counts must be >= 1, got {tuple(cells)}")
    I, J, K = (a.ravel() for a in np.meshgrid(np.arange(nx), np.arange(ny),
                                               np.arange(nz), indexing="ij"))
    flip = np.stack([I % 2, J % 2, K % 2], axis=1) if mirrored else np.zeros((I.size, 3), int)

    def node_id(bits: np.ndarray) -> np.ndarray:
        b = bits ^ flip
        return (I + b[:, 0]) * (ny + 1) * (nz + 1) + (J + b[:, 1]) * (nz + 1) + (K + b[:, 2])

    tets = []
    for perm in permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            path.append(corner.copy())
        tets.append(np.stack([node_id(np.broadcast_to(v, (I.size, 3))) for v in path], axis=1))
    return np.concatenate(tets, axis=0)


def box_mesh(
    size: Sequence[float] = (1.0, 1.0, 1.0),
    cells: Sequence[int] = (4, 4, 4),
    origin: Sequence[float] = (0.0, 0.0, 0.0),
    mirrored: bool = False,
    region: int = 0,
) -> Mesh:
    """
    Rectangular block split into 6 tetrahedra per cube.

    Parameters
    ----------
    size : sequence of float
        Edge lengths (cm).
    cells : sequence of int
        Cube counts per axis.
    origin : sequence of float
        Lower corner (cm).
    mirrored : bool
        Use the reflection-symmetric subdivision instead of plain Kuhn.
    region : int
        Region tag for every element.
    """
    nodes = _lattice_nodes(size, cells, origin)
    tets = _lattice_tets(cells, mirrored)
    return make_mesh(nodes, tets, np.full(tets.shape[0], int(region)))


def sphere_mesh(radius: float = 1.0, n: int = 8,
                center: Sequence[float] = (0.0, 0.0, 0.0), region: int = 0) -> Mesh:
    """Ball of ``radius`` mapped from a mirrored n^3 lattice on [-1, 1]^3."""
    if n < 2 or n % 2:
        raise ConfigError("sphere builder needs an even n >= 2")
    base = box_mesh((2.0, 2.0, 2.0), (n, n, n), (-1.0, -1.0, -1.0), mirrored=True)
    x, y, z = base.nodes.T
    x2, y2, z2 = x * x, y * y, z * z
    mapped = np.stack([
        x * np.sqrt(np.clip(1 - y2 / 2 - z2 / 2 + y2 * z2 / 3, 0.0, None)),
        y * np.sqrt(np.clip(1 - z2 / 2 - x2 / 2 + z2 * x2 / 3, 0.0, None)),
        z * np.sqrt(np.clip(1 - x2 / 2 - y2 / 2 + x2 * y2 / 3, 0.0, None)),
    ], axis=1)
    nodes = radius * mapped + np.asarray(center, dtype=float)
    return make_mesh(nodes, base.tets, np.full(base.n_tets, int(region)))


def rod_mesh(radius: float = 1.0, length: float = 1.0, n: int = 4, layers: int = 4,
             region: int = 0) -> Mesh:
    """
    Circular cylinder along x, spanning x in [0, length].

    The square cross-section [-1, 1]^2 is mapped onto the disk of ``radius``.
    End faces are identical up to a translation by ``length``, so the rod is
    touching when periodic along x with ``L_x = length``.
    """
    if n < 2 or n % 2:
        raise ConfigError("rod builder needs an even n >= 2")
    base = box_mesh((length, 2.0, 2.0), (layers, n, n), (0.0, -1.0, -1.0), mirrored=True)
    x, y, z = base.nodes.T
    mapped = np.stack([
        x,
        radius * y * np.sqrt(1 - z * z / 2),
        radius * z * np.sqrt(1 - y * y / 2),
    ], axis=1)
    return make_mesh(mapped, base.tets, np.full(base.n_tets, int(region)))


def parallelogram_mesh(period: float = 2.0, shear: float = 1.0, height: float = 1.0,
                       depth: float = 1.0, cells: Sequence[int] = (8, 4, 2),
                       region: int = 0) -> Mesh:
    """
    Slab sheared along x: ``x -> x + shear * y``.

    With ``period = 2`` and ``shear = height = 1`` the x extent is 3 while the
    end faces still match under a translation by ``period``.
    """
    base = box_mesh((period, height, depth), cells)
    nodes = base.nodes.copy()
    nodes[:, 0] += shear * nodes[:, 1]
    return make_mesh(nodes, base.tets, np.full(base.n_tets, int(region)))


BUILDERS: Dict[str, Callable[..., Mesh]] = {
    "box": box_mesh,
    "film": box_mesh,
    "sphere": sphere_mesh,
    "rod": rod_mesh,
    "parallelogram": parallelogram_mesh,
}


def build_mesh(source: MeshSource) -> Mesh:
    """
    Materialize a MeshSource: read the file or call the named builder.

    Raises
    ------
    ConfigError
        Unknown builder name or unsupported builder parameters.
    """
    if source.path is not None:
        return load_mesh(source.path)
    if source.builder not in BUILDERS:
        raise ConfigError(f"unknown mesh builder {source.builder!r}; "
                          f"expected one of {sorted(BUILDERS)}")
    try:
        mesh = BUILDERS[source.builder](**source.params)
    except TypeError as exc:
        raise ConfigError(f"mesh builder {source.builder!r}: {exc}") from None
    log(f"Built {source.builder} mesh: {mesh.n_nodes} nodes, {mesh.n_tets} tets")
    return mesh
