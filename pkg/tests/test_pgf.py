import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.config import PeriodicSpec
from src.errors import PgfConvergenceError, PgfDomainError
from src.pgf import (
    PgfSpec,
    check_convergence,
    g0,
    pgf_difference_field,
    pgf_eval,
    pgf_self_term,
    run_selftest,
    wrap,
)

LINE = PgfSpec(periods=(1.0, 0.0, 0.0))
SHEET = PgfSpec(periods=(1.0, 1.0, 0.0))
BULK = PgfSpec(periods=(1.0, 1.0, 1.0))

POINTS = np.array([
    [0.31, 0.12, -0.27],
    [-0.18, 0.41, 0.09],
    [0.05, -0.22, 0.36],
])


def test_free_space_values():
    assert g0(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)
    assert g0(np.array([0.0, 3.0, 4.0])) == pytest.approx(0.2)
    with pytest.raises(PgfDomainError):
        g0(np.zeros(3))


def test_free_space_spec_uses_coulomb_kernel():
    spec = PgfSpec()
    assert spec.dims == 0
    assert_allclose(pgf_eval(spec, POINTS), 1.0 / np.linalg.norm(POINTS, axis=1))
    assert pgf_self_term(spec) == 0.0


def test_from_periodic_spec():
    spec = PgfSpec.from_periodic(PeriodicSpec(periodic_x=True, periodic_z=True, L_x=2.0, L_z=3.0))
    assert spec.periodic_axes == (0, 2)
    assert_allclose(spec.lengths, [2.0, 3.0])


def test_wrap_maps_into_primary_cell():
    w = wrap(BULK, np.array([[1.7, -0.6, 2.2]]))
    assert_allclose(w, [[-0.3, 0.4, 0.2]], atol=1e-15)


@pytest.mark.parametrize("spec", [LINE, SHEET, BULK], ids=["1d", "2d", "3d"])
def test_periodicity_and_parity(spec):
    base = pgf_eval(spec, POINTS)
    scale = np.max(np.abs(base))
    for axis in spec.periodic_axes:
        shift = np.zeros(3)
        shift[axis] = spec.periods[axis]
        assert_allclose(pgf_eval(spec, POINTS + shift), base, atol=1e-8 * scale)
        assert_allclose(pgf_eval(spec, POINTS - 2 * shift), base, atol=1e-8 * scale)
    assert_allclose(pgf_eval(spec, -POINTS), base, atol=1e-8 * scale)


@pytest.mark.parametrize("spec", [LINE, SHEET, BULK], ids=["1d", "2d", "3d"])
def test_lattice_image_is_singular(spec):
    image = np.zeros(3)
    image[spec.periodic_axes[0]] = spec.periods[spec.periodic_axes[0]]
    with pytest.raises(PgfDomainError):
        pgf_eval(spec, image)


def test_line_lattice_against_direct_sum():
    r = np.array([0.5, 0.3, 0.0])
    ewald = float(pgf_eval(LINE, r))
    direct = float(pgf_eval(PgfSpec(periods=(1.0, 0.0, 0.0), method="truncated_direct"), r))
    assert ewald == pytest.approx(direct, rel=1e-6)


def test_line_self_term_vanishes():
    assert abs(pgf_self_term(LINE)) < 1e-8


@pytest.mark.parametrize("spec", [LINE, SHEET, BULK], ids=["1d", "2d", "3d"])
def test_independent_of_splitting_parameter(spec):
    base = pgf_eval(spec, POINTS)
    for factor in (0.7, 2.0):
        other = PgfSpec(periods=spec.periods, ewald_alpha=factor * spec.alpha)
        assert_allclose(pgf_eval(other, POINTS), base, atol=1e-7 * np.max(np.abs(base)))
    self_other = pgf_self_term(PgfSpec(periods=spec.periods, ewald_alpha=2.0 * spec.alpha))
    assert self_other == pytest.approx(pgf_self_term(spec), abs=1e-7)


def test_sheet_difference_matches_reciprocal_series():
    # Away from the plane the 2D lattice sum is -2 pi |z| / A plus decaying modes.
    rho = np.array([0.25, 0.0])
    z1, z2 = 0.5, 1.0
    m = np.array([(i, j) for i in range(-12, 13) for j in range(-12, 13) if (i, j) != (0, 0)])
    mag = np.linalg.norm(m, axis=1)
    phase = np.cos(2 * np.pi * m @ rho)
    series = np.sum(phase / mag * (np.exp(-2 * np.pi * mag * z1) - np.exp(-2 * np.pi * mag * z2)))
    expected = 2 * np.pi * (z2 - z1) + series
    got = pgf_difference_field(SHEET, np.array([0.25, 0.0, z1]), np.array([0.25, 0.0, z2]))
    assert float(got) == pytest.approx(expected, rel=1e-7)


def test_difference_field_of_equal_points_is_zero():
    assert_allclose(pgf_difference_field(BULK, POINTS, POINTS), 0.0)


@pytest.mark.parametrize("spec", [SHEET, BULK], ids=["2d", "3d"])
def test_methods_agree_through_differences(spec):
    direct = PgfSpec(periods=spec.periods, method="truncated_direct")
    ref = POINTS[::-1] * 0.5
    ewald = pgf_difference_field(spec, POINTS, ref)
    brute = pgf_difference_field(direct, POINTS, ref)
    assert_allclose(brute, ewald, atol=1e-5 * np.max(np.abs(ewald)))


def test_sheet_methods_agree_across_the_plane():
    direct = PgfSpec(periods=(1.0, 1.0, 0.0), method="truncated_direct")
    above = np.array([[0.25, 0.0, 0.5], [0.1, 0.3, -0.8]])
    below = np.array([[0.25, 0.0, 1.0], [0.4, -0.2, 0.2]])
    ewald = pgf_difference_field(SHEET, above, below)
    brute = pgf_difference_field(direct, above, below)
    assert ewald[0] == pytest.approx(3.2225, abs=1e-3)
    assert_allclose(brute, ewald, rtol=1e-5)


def test_cutoff_check_and_verify():
    assert check_convergence(BULK, POINTS) <= BULK.target_rel_error
    pgf_eval(BULK, POINTS, verify=True)
    starved = PgfSpec(periods=(1.0, 1.0, 1.0), ewald_alpha=3 * np.sqrt(np.pi),
                      real_cutoff=1, recip_cutoff=1)
    with pytest.raises(PgfConvergenceError) as excinfo:
        pgf_eval(starved, POINTS, verify=True)
    assert excinfo.value.achieved > starved.target_rel_error


def test_invalid_specs():
    with pytest.raises(PgfDomainError):
        PgfSpec(method="multipole")
    with pytest.raises(PgfDomainError):
        PgfSpec(periods=(1.0, -1.0, 0.0))
    with pytest.raises(PgfDomainError):
        PgfSpec(target_rel_error=0.0)


def test_selftest_report_passes():
    report = run_selftest(n_points=4, seed=3)
    assert list(report.columns) == ["dims", "check", "value", "tolerance", "passed"]
    assert set(report["dims"]) == {1, 2, 3}
    assert report["passed"].all(), report[~report["passed"]]
    alpha_rows = report[report["check"] == "alpha_independence"]
    assert (alpha_rows["tolerance"] == 1e-8).all()
    assert (report[report["check"] == "method_agreement"]["tolerance"] == 1e-5).all()
