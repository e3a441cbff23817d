import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.config import (
    AppliedFieldSpec,
    HysteresisSchedule,
    LlgParams,
    Material,
    PeriodicSpec,
)
from src.dynamics import (
    StepperState,
    dispersion_curve,
    integrate,
    kalinikos_dispersion,
    kalinikos_omega2,
    llg_rhs,
    macrospin_solution,
    max_torque,
    norm_deviation,
    relax,
    run_dynamics,
    run_hysteresis,
    step,
    sweep_fields,
    tilted_direction,
    zero_crossing,
)
from src.errors import DispersionRootError, StepperError
from src.field import FieldAssembly, MacrospinField, random_magnetization
from src.mesh import detect_pbc_pairs, prepare_mesh
from src.mesh_builders import box_mesh, rod_mesh

GAMMA = 1.7595e7
MS = 800.0
H0 = 1000.0
THETA0 = 1.0


def precessing_spin(alpha):
    return MacrospinField(Material(Ms=MS, alpha=alpha),
                          applied=AppliedFieldSpec(H0=(0.0, 0.0, H0)))


def tilted_state(params):
    M0 = MS * np.array([[np.sin(THETA0), 0.0, np.cos(THETA0)]])
    return StepperState.initial(M0, params)


def period(alpha):
    return 2 * np.pi * (1 + alpha ** 2) / (GAMMA * H0)


# ---------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------
def test_rhs_vanishes_for_aligned_field():
    M = np.array([[0.0, 0.0, MS]])
    assert_allclose(llg_rhs(M, np.array([[0.0, 0.0, 5.0]]), MS, 0.3, GAMMA), 0.0)


def test_undamped_rhs_is_pure_precession():
    M = np.array([[MS, 0.0, 0.0]])
    H = np.array([[0.0, 0.0, H0]])
    rhs = llg_rhs(M, H, MS, 0.0, GAMMA)
    assert_allclose(rhs, [[0.0, GAMMA * MS * H0, 0.0]])


def test_damping_pulls_toward_field():
    M = MS * np.array([[np.sin(THETA0), 0.0, np.cos(THETA0)]])
    rhs = llg_rhs(M, np.array([[0.0, 0.0, H0]]), MS, 0.5, GAMMA)
    assert rhs[0, 2] > 0
    assert rhs[0] @ M[0] == pytest.approx(0.0, abs=1e-9 * np.abs(rhs).max() * MS)


def test_rhs_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        llg_rhs(np.zeros((2, 3)), np.zeros((3, 3)), MS, 0.1, GAMMA)


# ---------------------------------------------------------------------
# Stepper
# ---------------------------------------------------------------------
def test_damped_precession_follows_closed_form():
    alpha = 0.1
    params = LlgParams(tol=1e-6)
    model = precessing_spin(alpha)
    worst = []

    def compare(s):
        exact = macrospin_solution(s.t, MS, H0, alpha, GAMMA, THETA0)
        worst.append(np.linalg.norm(s.M[0] - exact) / MS)

    final = integrate(tilted_state(params), model, params, 10 * period(alpha), callback=compare)
    assert final.t == pytest.approx(10 * period(alpha), rel=1e-12)
    assert max(worst) <= 1e-3
    assert final.accepted == len(worst)


@pytest.mark.slow
def test_undamped_precession_conserves_energy():
    params = LlgParams(tol=1e-6, corrector_tol=1e-12)
    model = precessing_spin(0.0)
    state = tilted_state(params)
    e0 = model.energies(state.M)["total"]
    final = integrate(state, model, params, 100 * period(0.0))
    assert abs(model.energies(final.M)["total"] - e0) <= 1e-6 * abs(e0)


def _fixed_step_error(n_per_period):
    alpha = 0.1
    T = period(alpha)
    dt = T / n_per_period
    params = LlgParams(dt_initial=dt, dt_max=dt, adaptive=False, corrector_tol=1e-12)
    final = integrate(tilted_state(params), precessing_spin(alpha), params, 2 * T)
    exact = macrospin_solution(final.t, MS, H0, alpha, GAMMA, THETA0)
    return np.linalg.norm(final.M[0] - exact) / MS


def test_fixed_step_mode_is_second_order():
    assert _fixed_step_error(50) / _fixed_step_error(100) > 3.73


def test_norm_is_preserved_between_renormalizations():
    params = LlgParams(renormalize_every=50)
    mat = Material(Ms=MS, alpha=0.05, anisotropy="uniaxial", K=2e5, axis=(1.0, 0.0, 0.0))
    model = MacrospinField(mat, demag=(0.0, 0.0, 4 * np.pi),
                           applied=AppliedFieldSpec(H0=(0.0, 300.0, 0.0)))
    final = integrate(tilted_state(params), model, params, 2e-10)
    assert final.accepted > 1
    assert norm_deviation(final.M, model.Ms) <= 1e-6


def test_damped_energy_never_increases():
    params = LlgParams(tol=1e-6)
    mat = Material(Ms=MS, alpha=0.2, anisotropy="uniaxial", K=1e5, axis=(0.0, 0.0, 1.0))
    model = MacrospinField(mat, applied=AppliedFieldSpec(H0=(150.0, 0.0, 400.0)))
    energies = []
    integrate(tilted_state(params), model, params, 1e-9,
              callback=lambda s: energies.append(model.energies(s.M)["total"]))
    scale = abs(energies[0])
    assert np.all(np.diff(energies) <= 1e-9 * scale)
    assert energies[-1] < energies[0]


def test_step_size_floor_raises():
    params = LlgParams(tol=1e-16, dt_initial=1e-13, dt_min=1e-13)
    with pytest.raises(StepperError):
        step(tilted_state(params), precessing_spin(0.1), params)


def test_adaptive_step_grows_when_error_is_small():
    params = LlgParams(tol=1e-5)
    state = step(tilted_state(params), precessing_spin(0.1), params)
    assert state.accepted == 1
    assert state.error < params.tol
    assert params.dt_initial < state.dt <= params.dt_max


# ---------------------------------------------------------------------
# Relaxation
# ---------------------------------------------------------------------
def test_relax_returns_immediately_at_equilibrium():
    params = LlgParams()
    model = precessing_spin(0.1)
    state = relax(StepperState.initial(np.array([[0.0, 0.0, MS]]), params), model, params)
    assert state.converged is True
    assert state.accepted == 0


def test_relax_aligns_nodes_with_strong_field(periodic_cube, materials, cube_cell, rng):
    fields = FieldAssembly(periodic_cube, materials, cube_cell, magnetostatics=False,
                           applied=AppliedFieldSpec(H0=(0.0, 1e4, 0.0)))
    params = LlgParams()
    state = relax(StepperState.initial(random_magnetization(fields.Ms, rng), params),
                  fields, params)
    assert state.converged is True
    cosines = state.M[:, 1] / fields.Ms
    assert np.all(cosines > 0.999)
    assert max_torque(state.M, fields.effective_field(state.M), fields.Ms) < params.relax_tau


@pytest.mark.slow
def test_thin_film_relaxes_into_uniform_in_plane_state():
    size = (2e-6, 2e-6, 1e-6)
    spec = PeriodicSpec(True, True, False, size[0], size[1], 0.0)
    mesh = detect_pbc_pairs(box_mesh(size, (4, 4, 2)), spec)
    fields = FieldAssembly(mesh, {0: Material(Ms=MS, A_ex=1.3e-6)}, spec)
    params = LlgParams(relax_max_steps=50000)
    M0 = np.tile(MS * np.array([np.cos(0.1), 0.0, np.sin(0.1)]), (mesh.n_parents, 1))
    state = relax(StepperState.initial(M0, params), fields, params)
    assert state.converged is True
    m = state.M / MS
    assert np.max(np.abs(m[:, 2])) < 1e-2
    assert np.max(np.linalg.norm(m - m.mean(axis=0), axis=1)) < 1e-2


def test_relax_reports_exhausted_budget():
    params = LlgParams()
    state = relax(tilted_state(params), precessing_spin(0.1), params, max_steps=1)
    assert state.converged is False
    assert state.accepted == 2


# ---------------------------------------------------------------------
# Hysteresis
# ---------------------------------------------------------------------
def test_sweep_points_and_tilt():
    down, up = sweep_fields(HysteresisSchedule(axis=(0.0, 0.0, 1.0), H_max=100, H_min=-100, step=50))
    assert_allclose(down, [100, 50, 0, -50, -100])
    assert_allclose(up, [-50, 0, 50, 100])
    d = tilted_direction((0.0, 0.0, 2.0), 0.01)
    assert np.linalg.norm(d) == pytest.approx(1.0)
    assert d[2] == pytest.approx(np.cos(0.01))


def test_zero_crossing_interpolates():
    H = np.array([10.0, 0.0, -10.0, -20.0])
    assert zero_crossing(H, np.array([1.0, 0.8, 0.6, -0.2])) == pytest.approx(-17.5)
    assert np.isnan(zero_crossing(H, np.ones(4)))


def test_stoner_wohlfarth_coercivity():
    mat = Material(Ms=1000.0, alpha=0.1, anisotropy="uniaxial", K=1e6, axis=(0.0, 0.0, 1.0))
    schedule = HysteresisSchedule(axis=(0.0, 0.0, 1.0), H_max=2200, H_min=-2200, step=20)
    result = run_hysteresis(schedule, MacrospinField(mat), LlgParams(tol=1e-5))
    h_k = 2 * mat.K / mat.Ms
    assert result.H_c == pytest.approx(h_k, rel=0.02)
    assert result.H_c_ascending == pytest.approx(h_k, rel=0.02)
    curve = result.curve
    assert list(curve.columns) == ["H", "M_parallel", "branch", "converged"]
    assert len(curve) == 221 + 220
    start = curve[curve["H"] == 2200.0]["M_parallel"]
    assert np.all(start > 0.999)
    assert curve[curve["branch"] == "descending"]["M_parallel"].iloc[-1] < -0.999


# ---------------------------------------------------------------------
# Time series
# ---------------------------------------------------------------------
def test_run_dynamics_samples_mean_magnetization():
    params = LlgParams()
    model = precessing_spin(0.1)
    series, final = run_dynamics(tilted_state(params), model, params, 1e-10, sample_every=5)
    assert list(series.columns) == ["t", "Mx", "My", "Mz", "E_total", "dt"]
    assert series["t"].iloc[0] == 0.0
    assert series["t"].iloc[-1] == pytest.approx(1e-10)
    assert final.t == pytest.approx(1e-10)
    assert series["Mz"].iloc[-1] > series["Mz"].iloc[0]


# ---------------------------------------------------------------------
# Spin-wave dispersion
# ---------------------------------------------------------------------
FILM = dict(Ms=MS, A_ex=1.3e-6, D_z=2e-7)
OMEGA0 = 2 * np.pi * 10e9


def test_dispersion_root_solves_relation():
    for theta in (0.0, 0.4, np.pi / 2):
        lam = kalinikos_dispersion(theta, OMEGA0, **FILM)
        k = 2 * np.pi / lam
        residual = kalinikos_omega2(k, theta, gamma=GAMMA, **FILM) - OMEGA0 ** 2
        assert abs(residual) <= 1e-10 * OMEGA0 ** 2


def test_dispersion_symmetry_and_monotonicity():
    thetas = np.linspace(0.0, np.pi / 2, 7)
    lams = np.array([kalinikos_dispersion(t, OMEGA0, **FILM) for t in thetas])
    assert np.all(np.diff(lams) > 0)
    assert kalinikos_dispersion(-0.7, OMEGA0, **FILM) == pytest.approx(
        kalinikos_dispersion(0.7, OMEGA0, **FILM), rel=1e-12)


def test_dispersion_without_root_raises():
    with pytest.raises(DispersionRootError):
        kalinikos_dispersion(0.3, OMEGA0, k_range=(1e2, 1e3), **FILM)
    with pytest.raises(DispersionRootError):
        kalinikos_dispersion(0.3, OMEGA0, Ms=MS, A_ex=0.0, D_z=2e-7)


def test_dispersion_curve_table():
    table = dispersion_curve([0.0, np.pi / 4], OMEGA0, **FILM)
    assert list(table.columns) == ["theta", "k_sw", "wavelength", "k_drive"]
    assert_allclose(table["k_sw"] * table["wavelength"], 2 * np.pi)
    assert_allclose(table["k_drive"], table["k_sw"] * np.cos(table["theta"]))


# ---------------------------------------------------------------------
# Periodic rod
# ---------------------------------------------------------------------
@pytest.mark.slow
@pytest.mark.rod
def test_periodic_rod_coercivity():
    spec = PeriodicSpec(periodic_x=True, L_x=4e-6)
    mesh, _ = prepare_mesh(rod_mesh(2e-6, 4e-6, n=6, layers=8), spec)
    mats = {0: Material(Ms=490.0, A_ex=9.604e-7, alpha=0.5)}
    fields = FieldAssembly(mesh, mats, spec)
    schedule = HysteresisSchedule(axis=(1.0, 0.0, 0.0), H_max=5000, H_min=-5000, step=100)
    result = run_hysteresis(schedule, fields, LlgParams())
    assert result.H_c == pytest.approx(3085.0, rel=0.15)
