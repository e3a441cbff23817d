import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.config import Material, PeriodicSpec
from src.errors import MaterialError
from src.femops import (
    apply_vector,
    assemble_charge,
    assemble_exchange,
    assemble_gradient,
    assemble_stiffness,
    lumped_volumes,
    node_regions,
)
from src.mesh import detect_pbc_pairs, make_mesh
from src.mesh_builders import box_mesh

MS = 800.0
A_EX = 1.3e-6
MATERIALS = {0: Material(Ms=MS, A_ex=A_EX)}


def periodic_bar(n, length=1.0, mirrored=False):
    """Fully periodic bar of n cells along x, 2 x 2 cells across."""
    width = length / 4
    spec = PeriodicSpec(True, True, True, length, width, width)
    mesh = box_mesh((length, width, width), (n, 2, 2), mirrored=mirrored)
    return detect_pbc_pairs(mesh, spec)


def parent_x(mesh):
    return mesh.parent_nodes()[:, 0]


# ---------------------------------------------------------------------
# Stiffness and exchange
# ---------------------------------------------------------------------
def test_unit_tet_stiffness(unit_tet):
    K = assemble_stiffness(unit_tet, fold=False).toarray()
    assert K[0, 0] == pytest.approx(0.5)
    assert K[1, 1] == pytest.approx(1.0 / 6.0)
    assert_allclose(K.sum(axis=1), 0.0, atol=1e-15)


def test_raw_stiffness_is_symmetric(periodic_cube):
    K = assemble_stiffness(periodic_cube, fold=False)
    assert abs(K - K.T).max() <= 1e-14 * abs(K).max()
    folded = assemble_stiffness(periodic_cube)
    assert folded.shape == (64, 64)
    assert abs(folded - folded.T).max() <= 1e-14 * abs(folded).max()


def test_lumped_volumes_sum_to_cell(periodic_cube):
    V = lumped_volumes(periodic_cube)
    assert V.shape == (64,)
    assert_allclose(V, 1.0 / 64, rtol=1e-12)


def test_exchange_rows_sum_to_zero(periodic_cube, materials):
    op = assemble_exchange(periodic_cube, materials)
    row_sums = op.apply(np.ones(op.n_cols))
    assert np.max(np.abs(row_sums)) <= 1e-10 * abs(op.matrix).max()


def test_uniform_magnetization_has_no_exchange_field(periodic_cube, materials):
    op = assemble_exchange(periodic_cube, materials)
    M = np.tile([0.0, 0.6 * MS, 0.8 * MS], (op.n_cols, 1))
    H = op.apply(M)
    assert np.max(np.abs(H)) <= 1e-10 * abs(op.matrix).max() * MS


def _sinusoid_error(n):
    mesh = periodic_bar(n)
    op = assemble_exchange(mesh, MATERIALS)
    k = 2 * np.pi
    m = np.cos(k * parent_x(mesh))
    H = op.apply(MS * m)
    expected = -(2 * A_EX / MS ** 2) * k ** 2 * MS * m
    return np.max(np.abs(H - expected)) / np.max(np.abs(expected))


def test_sinusoidal_profile_converges_to_exchange_eigenvalue():
    coarse, fine = _sinusoid_error(16), _sinusoid_error(32)
    assert fine < 1e-2
    assert coarse / fine > 3.5


def test_fold_equivalence_with_unrolled_bar():
    # One period with PBC against two periods with PBC over twice the length:
    # a field periodic in L sees identical operators on both.
    one = periodic_bar(8)
    two_raw = box_mesh((2.0, 0.25, 0.25), (16, 2, 2))
    two = detect_pbc_pairs(two_raw, PeriodicSpec(True, True, True, 2.0, 0.25, 0.25))

    key = lambda p: tuple(np.round(p * 64).astype(int))  # noqa: E731
    index_two = {key(p): i for i, p in enumerate(two.parent_nodes())}
    match = np.array([index_two[key(p)] for p in one.parent_nodes()])

    u_one = np.sin(2 * np.pi * parent_x(one)) + np.cos(2 * np.pi * one.parent_nodes()[:, 1] * 4)
    u_two = np.sin(2 * np.pi * parent_x(two)) + np.cos(2 * np.pi * two.parent_nodes()[:, 1] * 4)

    ex_one = assemble_exchange(one, MATERIALS).apply(u_one)
    ex_two = assemble_exchange(two, MATERIALS).apply(u_two)
    assert_allclose(ex_one, ex_two[match], rtol=0, atol=1e-12 * np.max(np.abs(ex_one)))

    g_one = apply_vector(assemble_gradient(one), u_one)
    g_two = apply_vector(assemble_gradient(two), u_two)
    assert_allclose(g_one, g_two[match], rtol=0, atol=1e-12 * np.max(np.abs(g_one)))


# ---------------------------------------------------------------------
# Charges
# ---------------------------------------------------------------------
def test_uniform_magnetization_is_charge_free_in_periodic_cell(periodic_cube, materials):
    charge = assemble_charge(periodic_cube, materials)
    M = np.tile([0.3 * MS, -0.5 * MS, 0.81 * MS], (periodic_cube.n_parents, 1))
    q = apply_vector(charge, M)
    assert np.max(np.abs(q)) <= 1e-10 * MS * lumped_volumes(periodic_cube).max()


def test_isolated_cube_charges_are_neutral_with_dipole_moment():
    mesh = box_mesh((1.0, 1.0, 1.0), (3, 3, 3), mirrored=True)
    charge = assemble_charge(mesh)
    M = np.tile([0.0, 0.0, 1.0], (mesh.n_nodes, 1))
    q = apply_vector(charge, M)
    assert abs(q.sum()) <= 1e-12
    # sum_n q_n r_n recovers the total moment M V for a uniform state
    assert_allclose(q @ mesh.nodes, [0.0, 0.0, 1.0], atol=1e-12)
    interior = np.all((mesh.nodes > 0) & (mesh.nodes < 1), axis=1)
    assert_allclose(q[interior], 0.0, atol=1e-14)


def test_missing_material_is_rejected():
    mesh = box_mesh((1.0, 1.0, 1.0), (1, 1, 1), region=3)
    with pytest.raises(MaterialError):
        assemble_charge(mesh, {0: Material(Ms=1.0), 1: Material(Ms=2.0)})
    with pytest.raises(MaterialError):
        assemble_exchange(mesh, MATERIALS)


def test_interface_node_takes_dominant_region():
    nodes = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -2]]
    mesh = make_mesh(nodes, [[0, 1, 2, 3], [0, 2, 1, 4]], region=[0, 1])
    mats = {0: Material(Ms=1.0), 1: Material(Ms=2.0)}
    regions = node_regions(mesh, mats)
    assert regions[3] == 0 and regions[4] == 1
    assert regions[0] == 1


# ---------------------------------------------------------------------
# Gradient
# ---------------------------------------------------------------------
def test_gradient_of_linear_field_is_exact():
    mesh = box_mesh((1.0, 2.0, 1.0), (3, 4, 2))
    grads = apply_vector(assemble_gradient(mesh), 2.0 * mesh.nodes[:, 0] - mesh.nodes[:, 2])
    assert_allclose(grads, np.tile([2.0, 0.0, -1.0], (mesh.n_nodes, 1)), atol=1e-12)


def test_gradient_of_constant_vanishes(periodic_cube):
    grads = apply_vector(assemble_gradient(periodic_cube), np.full(64, 3.0))
    assert_allclose(grads, 0.0, atol=1e-12)


def _gradient_error(n):
    mesh = periodic_bar(n, mirrored=True)
    x = parent_x(mesh)
    k = 2 * np.pi
    g = apply_vector(assemble_gradient(mesh), np.sin(k * x))
    err = np.abs(g[:, 0] - k * np.cos(k * x))
    on_face = x == 0.0
    return err, on_face, k * (k / n) ** 2 / 6


def test_gradient_on_periodic_face_is_second_order():
    err16, face16, bound16 = _gradient_error(16)
    err32, face32, _ = _gradient_error(32)
    # nodes on the periodic face see both sides of the cell: centered difference
    assert np.max(err16) <= 1.01 * bound16
    assert np.max(err16[face16]) <= 1.01 * bound16
    assert np.max(err16[face16]) / np.max(err32[face32]) > 3.5
