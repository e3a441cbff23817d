import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.config import AppliedFieldSpec, Material, PeriodicSpec
from src.errors import ConfigError, MaterialError
from src.field import (
    AnisotropyTable,
    FieldAssembly,
    MacrospinField,
    anisotropy_energy_density,
    anisotropy_field,
    applied_field,
    initial_magnetization,
    random_magnetization,
    uniform_magnetization,
)
from src.mesh import detect_pbc_pairs
from src.mesh_builders import box_mesh, sphere_mesh

MS = 800.0


def _table(material, n=1):
    return AnisotropyTable.from_materials(np.zeros(n, dtype=int), {0: material})


# ---------------------------------------------------------------------
# Local terms
# ---------------------------------------------------------------------
def test_uniaxial_field_along_and_across_axis():
    mat = Material(Ms=MS, anisotropy="uniaxial", K=1e5, axis=(0.0, 0.0, 1.0))
    table, Ms = _table(mat, 2), np.full(2, MS)
    M = np.array([[0.0, 0.0, MS], [MS, 0.0, 0.0]])
    H = anisotropy_field(M, Ms, table)
    assert_allclose(H[0], [0.0, 0.0, 2e5 / MS])
    assert_allclose(H[1], 0.0)
    assert_allclose(anisotropy_energy_density(M, Ms, table), [-1e5, 0.0])


def test_cubic_easy_axes_carry_no_field():
    c, s = np.cos(0.3), np.sin(0.3)
    axes = ((c, s, 0.0), (-s, c, 0.0), (0.0, 0.0, 1.0))
    mat = Material(Ms=MS, anisotropy="cubic", K=4e5, axes=axes)
    table, Ms = _table(mat, 3), np.full(3, MS)
    M = MS * np.array(axes)
    assert_allclose(anisotropy_field(M, Ms, table), 0.0, atol=1e-9)
    body = MS * np.sum(axes, axis=0)[None, :] / np.sqrt(3.0)
    assert anisotropy_energy_density(body, Ms[:1], table)[0] == pytest.approx(4e5 / 3)


@pytest.mark.parametrize("material", [
    Material(Ms=MS, anisotropy="uniaxial", K=2e5, axis=(0.6, 0.0, 0.8)),
    Material(Ms=MS, anisotropy="cubic", K=-3e5),
], ids=["uniaxial", "cubic"])
def test_anisotropy_field_is_minus_energy_gradient(material, rng):
    table, Ms = _table(material), np.array([MS])
    M = random_magnetization(Ms, rng)
    H = anisotropy_field(M, Ms, table)[0]
    eps = 1e-3 * MS
    for d in range(3):
        step = np.zeros((1, 3))
        step[0, d] = eps
        grad = (anisotropy_energy_density(M + step, Ms, table)
                - anisotropy_energy_density(M - step, Ms, table))[0] / (2 * eps)
        assert -grad == pytest.approx(H[d], rel=1e-5, abs=1e-6 * np.abs(H).max())


def test_applied_field_kinds():
    nodes = np.array([[0.5, 0.0, 0.5], [0.55, 0.3, 0.5], [0.9, 0.0, 0.5]])
    static = AppliedFieldSpec(H0=(0.0, 0.0, 50.0))
    assert_allclose(applied_field(static, 3.0, nodes), np.tile([0.0, 0.0, 50.0], (3, 1)))

    ac = AppliedFieldSpec(kind="uniform_ac", H0=(10.0, 0.0, 0.0), omega=2.0)
    assert_allclose(applied_field(ac, np.pi / 2.0, nodes)[:, 0], -10.0)

    line = AppliedFieldSpec(kind="line_source", H0=(5.0, 0.0, 0.0), omega=1.0,
                            wavenumber=2.0, line_axis=1, line_position=(0.5, 0.0, 0.5),
                            width=0.2)
    H = applied_field(line, 0.0, nodes)
    assert_allclose(H[0], [5.0, 0.0, 0.0])
    assert_allclose(H[1], [5.0 * np.cos(-0.6), 0.0, 0.0])
    assert_allclose(H[2], 0.0)


def test_applied_field_spec_validation():
    with pytest.raises(ConfigError):
        AppliedFieldSpec(kind="pulse")
    with pytest.raises(ConfigError):
        AppliedFieldSpec(kind="line_source", width=0.0)


# ---------------------------------------------------------------------
# Full assembly
# ---------------------------------------------------------------------
def test_uniform_state_in_periodic_cube_is_field_free(periodic_cube, materials, cube_cell):
    fields = FieldAssembly(periodic_cube, materials, cube_cell)
    M = uniform_magnetization(fields.Ms, (1.0, 2.0, 2.0))
    terms = fields.field_terms(M)
    assert_allclose(terms["exchange"], 0.0, atol=1e-8 * MS)
    assert_allclose(terms["magnetostatic"], 0.0, atol=1e-8 * MS)
    assert fields.energies(M)["total"] == pytest.approx(0.0, abs=1e-8)


def test_effective_field_reduces_to_applied_field(periodic_cube, cube_cell):
    bare = {0: Material(Ms=MS)}
    fields = FieldAssembly(periodic_cube, bare, cube_cell, magnetostatics=False)
    driven = fields.with_applied(AppliedFieldSpec(H0=(0.0, 0.0, 100.0)))
    M = random_magnetization(fields.Ms, np.random.default_rng(0))
    assert_allclose(driven.effective_field(M), np.tile([0.0, 0.0, 100.0], (64, 1)))
    assert_allclose(fields.effective_field(M), 0.0)
    assert driven.exchange is fields.exchange


def test_magnetostatic_operator_is_reciprocal(periodic_cube, materials, cube_cell, rng):
    fields = FieldAssembly(periodic_cube, materials, cube_cell)
    V = fields.volumes[:, None]
    M1 = random_magnetization(fields.Ms, rng)
    M2 = random_magnetization(fields.Ms, rng)
    a = np.sum(V * M1 * fields.magnetostatic_field(M2))
    b = np.sum(V * M2 * fields.magnetostatic_field(M1))
    assert a == pytest.approx(b, rel=1e-8)


def test_effective_field_is_minus_energy_gradient(periodic_cube, cube_cell, rng):
    mats = {0: Material(Ms=MS, A_ex=1e-2, anisotropy="uniaxial", K=5e4, axis=(0.0, 1.0, 0.0))}
    fields = FieldAssembly(periodic_cube, mats, cube_cell,
                           applied=AppliedFieldSpec(H0=(30.0, 0.0, -20.0)))
    M = random_magnetization(fields.Ms, rng)
    H = fields.effective_field(M)
    eps = 1e-2 * MS
    scale = np.max(np.abs(fields.volumes[:, None] * H))
    for n, d in [(0, 0), (17, 1), (40, 2), (63, 0)]:
        plus, minus = M.copy(), M.copy()
        plus[n, d] += eps
        minus[n, d] -= eps
        grad = (fields.energies(plus)["total"] - fields.energies(minus)["total"]) / (2 * eps)
        assert -grad == pytest.approx(fields.volumes[n] * H[n, d], abs=1e-6 * scale)


def _film():
    spec = PeriodicSpec(True, True, False, 1.0, 1.0, 0.0)
    mesh = detect_pbc_pairs(box_mesh((1.0, 1.0, 0.5), (8, 8, 4)), spec)
    return FieldAssembly(mesh, {0: Material(Ms=MS)}, spec), mesh


def test_film_demagnetizing_field():
    fields, mesh = _film()
    middle = mesh.parent_nodes()[:, 2] == 0.25
    assert np.count_nonzero(middle) == 64

    H = fields.magnetostatic_field(uniform_magnetization(fields.Ms, (0.0, 0.0, 1.0)))
    target = -4 * np.pi * MS
    assert np.all(np.abs(H[middle, 2] - target) <= 0.02 * abs(target))
    assert np.all(np.abs(H[middle, :2]) <= 0.02 * abs(target))

    in_plane = fields.magnetostatic_field(uniform_magnetization(fields.Ms, (1.0, 0.0, 0.0)))
    assert np.max(np.abs(in_plane)) <= 1e-6 * abs(target)


@pytest.mark.slow
def test_sphere_center_sees_one_third_demagnetization():
    mesh = detect_pbc_pairs(sphere_mesh(1.0, 12), PeriodicSpec())
    fields = FieldAssembly(mesh, {0: Material(Ms=MS)}, PeriodicSpec())
    H = fields.magnetostatic_field(uniform_magnetization(fields.Ms, (0.0, 0.0, 1.0)))
    center = int(np.argmin(np.linalg.norm(mesh.parent_nodes(), axis=1)))
    target = -4 * np.pi / 3 * MS
    assert H[center, 2] == pytest.approx(target, rel=0.03)
    assert np.all(np.abs(H[center, :2]) <= 0.03 * abs(target))


# ---------------------------------------------------------------------
# Macrospin and initial states
# ---------------------------------------------------------------------
def test_macrospin_terms_and_energies():
    mat = Material(Ms=MS, anisotropy="uniaxial", K=1e5, axis=(0.0, 0.0, 1.0))
    spin = MacrospinField(mat, demag=(0.0, 0.0, 4 * np.pi), volume=2.0)
    M = np.array([[0.0, 0.0, MS]])
    terms = spin.field_terms(M)
    assert_allclose(terms["magnetostatic"], [[0.0, 0.0, -4 * np.pi * MS]])
    energies = spin.energies(M)
    assert energies["anisotropy"] == pytest.approx(-2e5)
    assert energies["magnetostatic"] == pytest.approx(4 * np.pi * MS ** 2)
    assert energies["exchange"] == 0.0

    driven = spin.with_applied(AppliedFieldSpec(H0=(0.0, 0.0, 10.0)))
    assert driven.energies(M)["applied"] == pytest.approx(-2.0 * MS * 10.0)
    assert spin.energies(M)["applied"] == 0.0


def test_macrospin_rejects_negative_demag():
    with pytest.raises(MaterialError):
        MacrospinField(Material(Ms=MS), demag=(-1.0, 0.0, 0.0))


def test_initial_magnetization_descriptions():
    Ms = np.array([MS, 2 * MS])
    assert_allclose(initial_magnetization("uniform 0 3 4", Ms), [[0.0, 0.6 * MS, 0.8 * MS],
                                                                 [0.0, 1.2 * MS, 1.6 * MS]])
    rand = initial_magnetization("random", Ms, seed=4)
    assert_allclose(np.linalg.norm(rand, axis=1), Ms)
    assert_allclose(initial_magnetization("random", Ms, seed=4), rand)
    with pytest.raises(ConfigError):
        initial_magnetization("vortex", Ms)
