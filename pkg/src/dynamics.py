"""
src/dynamics.py

Landau-Lifshitz-Gilbert time integration and the drivers built on it.

Purpose
-------
- llg_rhs: nodewise right-hand side of the discrete LLG equation
- step: one adaptive predictor-corrector step (AB2 predictor, implicit
  midpoint corrector solved by fixed-point iteration)
- relax: damped integration down to a torque criterion
- run_hysteresis / run_dynamics: M-H loops and sampled time series
- macrospin_solution: closed-form damped precession of a single spin
- kalinikos_dispersion / dispersion_curve: analytic thin-film spin-wave
  wavelength at a fixed driving frequency

Equation of motion (CGS)
------------------------
  dM/dt = -gamma/(1+alpha^2) * ( M x H + (alpha/Ms) M x (M x H) )

Step-size control
-----------------
The difference between predictor and corrector estimates the local error,
  est = ||M_corr - M_pred|| / ||M||,
a step is accepted when est < tol and the next step size is
  dt * clamp(0.9 (tol/est)^(1/3), 0.3, 2.0)
bounded to [dt_min, dt_max].

Field models
------------
Every driver takes a field model exposing ``Ms``, ``alpha``, ``volumes``,
``effective_field(M, t)``, ``energies(M, t)`` and ``with_applied(spec)``;
both ``FieldAssembly`` and ``MacrospinField`` qualify.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from src.config import AppliedFieldSpec, HysteresisSchedule, LlgParams
from src.errors import DispersionRootError, StepperError
from src.utils import log, warn

H_FLOOR = 1.0  # Oe


# =====================================================================
# Equation of motion
# =====================================================================
def llg_rhs(M: np.ndarray, H: np.ndarray, Ms: np.ndarray, alpha: np.ndarray,
            gamma: float) -> np.ndarray:
    """
    dM/dt of the LLG equation in double-cross form.

    Parameters
    ----------
    M, H : ndarray, shape (N, 3)
        Magnetization (emu/cm^3) and effective field (Oe).
    Ms, alpha : ndarray, shape (N,) or scalar
        Saturation magnetization and damping per node.
    gamma : float
        Gyromagnetic ratio (rad s^-1 Oe^-1).

    Returns
    -------
    ndarray, shape (N, 3)
        emu cm^-3 s^-1.
    """
    if M.shape != H.shape:
        raise ValueError(f"M and H shapes differ: {M.shape} vs {H.shape}")
    Ms = np.broadcast_to(np.asarray(Ms, dtype=float), M.shape[:1])
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), M.shape[:1])
    mxh = np.cross(M, H)
    mxmxh = np.cross(M, mxh)
    pre = -gamma / (1.0 + alpha ** 2)
    return pre[:, None] * (mxh + (alpha / Ms)[:, None] * mxmxh)


def max_torque(M: np.ndarray, H: np.ndarray, Ms: np.ndarray) -> float:
    """max_n |M_n x H_n| / (Ms_n (|H_n| + 1 Oe)), the relaxation criterion."""
    torque = np.linalg.norm(np.cross(M, H), axis=1)
    return float(np.max(torque / (Ms * (np.linalg.norm(H, axis=1) + H_FLOOR))))


def renormalize(M: np.ndarray, Ms: np.ndarray) -> np.ndarray:
    return M * (Ms / np.linalg.norm(M, axis=1))[:, None]


def norm_deviation(M: np.ndarray, Ms: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.norm(M, axis=1) - Ms) / Ms))


# =====================================================================
# Stepper
# =====================================================================
@dataclass(frozen=True)
class StepperState:
    """
    State of the adaptive predictor-corrector.

    Attributes
    ----------
    t, dt : float
        Current time and the step size the next step will try (s).
    M : ndarray, shape (N, 3)
        Current magnetization.
    M_prev : ndarray or None
        Magnetization before the last accepted step.
    rhs_prev : ndarray or None
        dM/dt at the start of the last accepted step (AB2 history).
    dt_prev : float
        Size of the last accepted step.
    error : float
        Local error estimate of the last accepted step.
    accepted, rejected : int
        Step counters.
    converged : bool or None
        Set by ``relax``.
    """
    t: float
    dt: float
    M: np.ndarray
    M_prev: Optional[np.ndarray] = None
    rhs_prev: Optional[np.ndarray] = None
    dt_prev: float = 0.0
    error: float = 0.0
    accepted: int = 0
    rejected: int = 0
    converged: Optional[bool] = None

    @classmethod
    def initial(cls, M: np.ndarray, params: LlgParams, t: float = 0.0) -> "StepperState":
        dt = float(np.clip(params.dt_initial, params.dt_min, params.dt_max))
        return cls(t=t, dt=dt, M=np.array(M, dtype=float))

    def restart(self) -> "StepperState":
        """Drop the multistep history (the field model changed)."""
        return replace(self, M_prev=None, rhs_prev=None, dt_prev=0.0, converged=None)


def _predict(state: StepperState, f_n: np.ndarray, dt: float) -> np.ndarray:
    if state.rhs_prev is None:
        return state.M + dt * f_n
    r = dt / state.dt_prev
    return state.M + dt * ((1.0 + 0.5 * r) * f_n - 0.5 * r * state.rhs_prev)


def _midpoint(M: np.ndarray, t: float, dt: float, rhs: Callable[[np.ndarray, float], np.ndarray],
              guess: np.ndarray, params: LlgParams) -> Tuple[np.ndarray, bool]:
    current = guess
    for _ in range(params.corrector_max_iter):
        updated = M + dt * rhs(0.5 * (M + current), t + 0.5 * dt)
        change = np.linalg.norm(updated - current)
        current = updated
        if change <= params.corrector_tol * np.linalg.norm(updated):
            return current, True
    return current, False


def step(state: StepperState, model, params: LlgParams,
         alpha: Optional[np.ndarray] = None) -> StepperState:
    """
    Advance by one accepted step.

    Parameters
    ----------
    state : StepperState
    model : field model
        Provides ``Ms``, ``alpha`` and ``effective_field(M, t)``.
    params : LlgParams
    alpha : ndarray, optional
        Damping override (``relax`` raises it).

    Returns
    -------
    StepperState
        Advanced state; ``dt`` holds the proposal for the next step.

    Raises
    ------
    StepperError
        If the step size falls below ``dt_min`` without an accepted step,
        or the corrector fails in fixed-step mode.
    """
    Ms = model.Ms
    damping = model.alpha if alpha is None else alpha

    def rhs(M: np.ndarray, t: float) -> np.ndarray:
        return llg_rhs(M, model.effective_field(M, t), Ms, damping, params.gamma_gr)

    f_n = rhs(state.M, state.t)
    scale = np.linalg.norm(state.M)
    dt = state.dt
    rejected = state.rejected
    while True:
        predicted = _predict(state, f_n, dt)
        corrected, ok = _midpoint(state.M, state.t, dt, rhs, predicted, params)
        est = float(np.linalg.norm(corrected - predicted) / scale)
        if not params.adaptive:
            if not ok:
                raise StepperError(f"midpoint corrector did not converge at fixed dt={dt:.3e}")
            break
        if ok and est < params.tol:
            break
        rejected += 1
        factor = 0.5 if not ok else min(1.0, max(0.3, 0.9 * (params.tol / est) ** (1.0 / 3.0)))
        dt *= factor
        if dt < params.dt_min:
            raise StepperError(
                f"step size fell below dt_min={params.dt_min:.1e} at t={state.t:.6e}"
                f" (error estimate {est:.3e})"
            )

    accepted = state.accepted + 1
    if params.renormalize_every and accepted % params.renormalize_every == 0:
        corrected = renormalize(corrected, Ms)

    next_dt = dt
    if params.adaptive:
        factor = 2.0 if est == 0.0 else min(2.0, max(0.3, 0.9 * (params.tol / est) ** (1.0 / 3.0)))
        next_dt = float(np.clip(dt * factor, params.dt_min, params.dt_max))

    return StepperState(
        t=state.t + dt,
        dt=next_dt,
        M=corrected,
        M_prev=state.M,
        rhs_prev=f_n,
        dt_prev=dt,
        error=est,
        accepted=accepted,
        rejected=rejected,
        converged=None,
    )


def integrate(state: StepperState, model, params: LlgParams, t_end: float,
              alpha: Optional[np.ndarray] = None,
              callback: Optional[Callable[[StepperState], None]] = None) -> StepperState:
    """
    Step until ``t_end`` is reached exactly.

    The last step is shortened to land on ``t_end``; ``callback`` sees every
    accepted state.
    """
    while state.t < t_end * (1.0 - 1e-14):
        remaining = t_end - state.t
        if state.dt > remaining:
            state = replace(state, dt=remaining)
        state = step(state, model, params, alpha)
        if callback is not None:
            callback(state)
    return state


# =====================================================================
# Drivers
# =====================================================================
def relax(state: StepperState, model, params: LlgParams, tau: Optional[float] = None,
          max_steps: Optional[int] = None, max_time: Optional[float] = None) -> StepperState:
    """
    Integrate with elevated damping until the torque criterion holds.

    Parameters
    ----------
    state : StepperState
    model : field model
    params : LlgParams
        ``relax_alpha`` replaces the material damping.
    tau : float, optional
        Criterion on ``max_torque``; defaults to ``params.relax_tau``.
    max_steps : int, optional
        Step budget; defaults to ``params.relax_max_steps``.
    max_time : float, optional
        Simulated-time budget (s).

    Returns
    -------
    StepperState
        ``converged`` is False when a budget ran out first.
    """
    tau = params.relax_tau if tau is None else tau
    max_steps = params.relax_max_steps if max_steps is None else max_steps
    damping = np.full(model.Ms.shape, params.relax_alpha)
    start_t = state.t
    for _ in range(max_steps + 1):
        torque = max_torque(state.M, model.effective_field(state.M, state.t), model.Ms)
        if torque < tau:
            return replace(state, converged=True)
        if max_time is not None and state.t - start_t >= max_time:
            break
        state = step(state, model, params, alpha=damping)
    warn(f"Relaxation stopped unconverged after {state.accepted} steps (torque {torque:.3e} >= {tau:.1e})")
    return replace(state, converged=False)


def mean_magnetization(M: np.ndarray, volumes: np.ndarray) -> np.ndarray:
    """Volume-weighted mean of M (emu/cm^3)."""
    return np.sum(volumes[:, None] * M, axis=0) / np.sum(volumes)


def projected_magnetization(M: np.ndarray, model, axis: np.ndarray) -> float:
    """sum V (M . axis) / sum V Ms."""
    V = model.volumes
    return float(np.sum(V * (M @ axis)) / np.sum(V * model.Ms))


def tilted_direction(axis: Sequence[float], tilt: float) -> np.ndarray:
    """``axis`` rotated by ``tilt`` radians toward its least aligned coordinate axis."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    e = np.eye(3)[int(np.argmin(np.abs(a)))]
    perp = e - (e @ a) * a
    perp /= np.linalg.norm(perp)
    return np.cos(tilt) * a + np.sin(tilt) * perp


def sweep_fields(schedule: HysteresisSchedule) -> Tuple[np.ndarray, np.ndarray]:
    """Descending then ascending field values (Oe)."""
    down = np.arange(schedule.H_max, schedule.H_min - 0.5 * schedule.step, -schedule.step)
    up = down[::-1][1:]
    return down, up


def zero_crossing(H: np.ndarray, m: np.ndarray) -> float:
    """Linearly interpolated first sign change of ``m`` along ``H``; NaN if none."""
    for i in range(m.size - 1):
        if m[i] == 0.0:
            return float(H[i])
        if m[i] * m[i + 1] <= 0.0:
            return float(H[i] - m[i] * (H[i + 1] - H[i]) / (m[i + 1] - m[i]))
    return float("nan")


@dataclass(frozen=True)
class HysteresisResult:
    """
    M-H loop.

    Attributes
    ----------
    curve : DataFrame
        Columns ``H, M_parallel, branch, converged``.
    H_c : float
        Coercive field, |zero crossing| of the descending branch (Oe).
    H_c_ascending : float
        Same for the ascending branch.
    state : StepperState
        Final state of the sweep.
    """
    curve: pd.DataFrame
    H_c: float
    H_c_ascending: float
    state: StepperState


def run_hysteresis(schedule: HysteresisSchedule, model, params: LlgParams,
                   M0: Optional[np.ndarray] = None) -> HysteresisResult:
    """
    Sweep the applied field from H_max to H_min and back.

    The field points along ``schedule.axis`` tilted by ``schedule.tilt``;
    every point relaxes from the previous equilibrium. Points whose
    relaxation runs out of budget are flagged and the sweep continues.
    """
    axis = np.asarray(schedule.axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    direction = tilted_direction(axis, schedule.tilt)
    if M0 is None:
        M0 = model.Ms[:, None] * axis[None, :]
    state = StepperState.initial(M0, params)

    down, up = sweep_fields(schedule)
    log(f"Hysteresis sweep: {down.size + up.size} field points, step {schedule.step:g} Oe")
    rows = []
    for branch, fields in (("descending", down), ("ascending", up)):
        for H in fields:
            current = model.with_applied(AppliedFieldSpec("uniform_static", tuple(H * direction)))
            state = relax(state.restart(), current, params, tau=schedule.tau)
            rows.append({
                "H": float(H),
                "M_parallel": projected_magnetization(state.M, model, axis),
                "branch": branch,
                "converged": bool(state.converged),
            })
    curve = pd.DataFrame(rows)

    failed = int((~curve["converged"]).sum())
    if failed:
        warn(f"{failed} hysteresis points did not reach tau={schedule.tau:g}")
    desc = curve[curve["branch"] == "descending"]
    asc = curve[curve["branch"] == "ascending"]
    H_c = abs(zero_crossing(desc["H"].to_numpy(), desc["M_parallel"].to_numpy()))
    H_c_up = abs(zero_crossing(asc["H"].to_numpy(), asc["M_parallel"].to_numpy()))
    log(f"Coercive field: descending {H_c:.2f} Oe, ascending {H_c_up:.2f} Oe")
    return HysteresisResult(curve, H_c, H_c_up, state)


def run_dynamics(state: StepperState, model, params: LlgParams, run_time: float,
                 sample_every: int = 10) -> Tuple[pd.DataFrame, StepperState]:
    """
    Integrate for ``run_time`` seconds and sample the mean magnetization.

    Returns
    -------
    series : DataFrame
        Columns ``t, Mx, My, Mz, E_total, dt``; one row at the start, one
        every ``sample_every`` accepted steps and one at the end.
    state : StepperState
    """
    rows = []

    def sample(s: StepperState, dt: float) -> None:
        mean = mean_magnetization(s.M, model.volumes)
        rows.append({
            "t": s.t, "Mx": mean[0], "My": mean[1], "Mz": mean[2],
            "E_total": model.energies(s.M, s.t)["total"], "dt": dt,
        })

    def on_step(s: StepperState) -> None:
        if (s.accepted - state.accepted) % sample_every == 0:
            sample(s, s.dt_prev)

    sample(state, 0.0)
    t_end = state.t + run_time
    final = integrate(state, model, params, t_end, callback=on_step)
    if (final.accepted - state.accepted) % sample_every != 0:
        sample(final, final.dt_prev)
    log(f"Dynamics: {final.accepted - state.accepted} accepted, "
        f"{final.rejected - state.rejected} rejected steps to t={final.t:.3e} s")
    return pd.DataFrame(rows), final


# =====================================================================
# Analytic references
# =====================================================================
def macrospin_solution(t: np.ndarray, Ms: float, H0: float, alpha: float, gamma: float,
                       theta0: float, phi0: float = 0.0) -> np.ndarray:
    """
    Closed-form M(t) of a spin in a static field H0 along +z.

    tan(theta/2) = tan(theta0/2) exp(-t/tau) with tau = (1+alpha^2)/(gamma alpha H0),
    phi = phi0 + gamma H0 t / (1+alpha^2).
    """
    t = np.asarray(t, dtype=float)
    if alpha > 0:
        decay = np.exp(-t * gamma * alpha * H0 / (1.0 + alpha ** 2))
    else:
        decay = np.ones_like(t)
    theta = 2.0 * np.arctan(np.tan(0.5 * theta0) * decay)
    phi = phi0 + gamma * H0 * t / (1.0 + alpha ** 2)
    return Ms * np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def kalinikos_omega2(k: float, theta: float, Ms: float, A_ex: float, D_z: float,
                     gamma: float) -> float:
    """Squared spin-wave frequency of a film of thickness D_z at wavenumber k (rad^2/s^2)."""
    omega_m = gamma * Ms
    gamma_ex = A_ex / (2.0 * np.pi * Ms ** 2)
    x = gamma_ex * omega_m * k ** 2
    kd = k * D_z
    bracket = (1.0 - 0.5 * kd * np.cos(theta) ** 2
               + kd * (2.0 - kd) * np.sin(theta) ** 2 / (4.0 * gamma_ex * k ** 2))
    return x * (x + omega_m * bracket)


def kalinikos_dispersion(theta: float, omega0: float, Ms: float, A_ex: float, D_z: float,
                         gamma: float = 1.7595e7, k_range: Tuple[float, float] = (1e2, 1e9),
                         n_scan: int = 400) -> float:
    """
    Spin-wave wavelength (cm) at driving frequency ``omega0`` and angle ``theta``.

    The smallest root of omega(k)^2 = omega0^2 is bracketed on a log-spaced
    scan of ``k_range`` and refined with Brent's method.

    Raises
    ------
    DispersionRootError
        If no sign change occurs in ``k_range`` or the film has no exchange.
    """
    if A_ex <= 0 or Ms <= 0 or D_z <= 0:
        raise DispersionRootError("dispersion needs positive Ms, A_ex and film thickness")

    def residual(k: float) -> float:
        return kalinikos_omega2(k, theta, Ms, A_ex, D_z, gamma) - omega0 ** 2

    ks = np.geomspace(k_range[0], k_range[1], n_scan)
    values = np.array([residual(k) for k in ks])
    change = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)
    if change.size == 0:
        raise DispersionRootError(
            f"no root of the dispersion relation for k in [{k_range[0]:.1e}, {k_range[1]:.1e}] 1/cm"
        )
    i = int(change[0])
    k_sw = brentq(residual, ks[i], ks[i + 1], xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    return 2.0 * np.pi / k_sw


def dispersion_curve(thetas: Sequence[float], omega0: float, Ms: float, A_ex: float,
                     D_z: float, gamma: float = 1.7595e7) -> pd.DataFrame:
    """Wavelength versus angle: columns ``theta, k_sw, wavelength, k_drive``."""
    rows = []
    for theta in thetas:
        lam = kalinikos_dispersion(theta, omega0, Ms, A_ex, D_z, gamma)
        k = 2.0 * np.pi / lam
        rows.append({"theta": float(theta), "k_sw": k, "wavelength": lam,
                     "k_drive": k * np.cos(theta)})
    log(f"Dispersion curve evaluated at {len(rows)} angles")
    return pd.DataFrame(rows)
