"""
Backward-Euler gradient flow for du/dt = -A u^m.

Each step solves w + dt A w^m = u by Newton's method in v = w^m. run_flow
marches the step to extinction while keeping geometrically spaced snapshots,
snapshots at evenly spaced levels of ||u||_{1+m}^{1-m}, and the last steps
before extinction.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
from typing import NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField
from scipy import linalg
from scipy.optimize import minimize

from ffde_lab.errors import InsufficientData, NewtonDivergence, ProfileNotFound
from ffde_lab.mesh import FloatArray, Grid
from ffde_lab.norms import (
    Field,
    h_norm,
    hstar_norm,
    lp_norm,
    lp_phi_norm,
    rayleigh_q,
    rayleigh_qstar,
)
from ffde_lab.operators import DiscreteOperator

logger = logging.getLogger(__name__)

NORM_COLUMNS = (
    "norm_L1",
    "norm_Lp",
    "norm_Linf",
    "norm_L1phi",
    "norm_L1pm",
    "norm_Hstar",
    "Q",
    "Qstar",
)
MIN_FIT_POINTS = 8
FIT_WINDOW_FRACTION = 0.9
FIT_SANITY_BRACKET = (0.5, 1.5)
LINE_SEARCH_MIN_STEP = 1e-10
AUDIT_RTOL = 1e-10
DECAY_RTOL = 1e-12
PROFILE_RTOL = 1e-10


class DtPolicy(StrEnum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


class SolverConfig(BaseModel):
    """Time stepping and Newton parameters of a flow run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dt_init: float = PydanticField(default=1e-3, gt=0.0)
    dt_policy: DtPolicy = DtPolicy.FIXED
    adapt_c: float = PydanticField(default=0.01, gt=0.0)
    dt_min: float = PydanticField(default=1e-8, gt=0.0)
    newton_tol: float = PydanticField(default=1e-12, gt=0.0)
    newton_max_iter: int = PydanticField(default=60, ge=1)
    extinction_eps_rel: float = PydanticField(default=1e-10, gt=0.0)
    t_max: float = PydanticField(default=100.0, gt=0.0)
    tail_steps: int = PydanticField(default=30, ge=1)
    time_probes: int = PydanticField(default=40, ge=2)
    level_probes: int = PydanticField(default=40, ge=0)
    max_halvings: int = PydanticField(default=20, ge=0)
    max_steps: int = PydanticField(default=5_000_000, ge=1)
    snapshot_every: int | None = PydanticField(default=None, ge=1)
    audit_energy: bool = False


class ExtinctionEstimate(NamedTuple):
    """First time below the extinction threshold and the linear-law intercept."""

    t_hat: float
    t_fit: float | None


@dataclass(frozen=True, eq=False)
class StepTrace:
    """||u||_inf and ||u||_{1+m} after every accepted step (t = 0 included)."""

    t: FloatArray
    linf: FloatArray
    l1pm: FloatArray


@dataclass
class StepAudit:
    """Counts of per-step structural inequalities that failed."""

    steps: int = 0
    energy_violations: int = 0
    norm_violations: int = 0
    l1phi_violations: int = 0

    @property
    def clean(self) -> bool:
        return self.energy_violations == self.norm_violations == self.l1phi_violations == 0


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Snapshots of one flow run with their norm table.

    times is strictly increasing and norm_series[column][k] belongs to
    snapshots[k]. Besides NORM_COLUMNS the table holds norm_Hum, the H norm of
    u^m.
    """

    operator: DiscreteOperator
    m: float
    lp: float
    times: FloatArray
    snapshots: tuple[Field, ...]
    norm_series: dict[str, FloatArray]
    trace: StepTrace
    extinction_threshold: float
    extinction: ExtinctionEstimate | None = None
    signed_input: bool = False
    newton_tol: float = 1e-12
    audit: StepAudit | None = field(default=None)

    @property
    def grid(self) -> Grid:
        return self.operator.grid

    @property
    def u0(self) -> Field:
        return self.snapshots[0]

    @property
    def extinct(self) -> bool:
        return self.extinction is not None


def _inf_norm(values: FloatArray) -> float:
    return float(np.abs(values).max(initial=0.0))


def proximal_step(
    op: DiscreteOperator, u: Field, m: float, dt: float, cfg: SolverConfig
) -> Field:
    """
    Solve w + dt A w^m = u for w >= 0.

    Newton runs on v = w^m with F(v) = v^(1/m) + dt A v - u, whose Jacobian
    dt A + diag(v^(1/m - 1)/m) is symmetric positive definite for v >= 0. Each
    iterate is clipped at zero and the step is halved until the residual drops.
    At least one update is taken and the residual test is relative to
    ||u||_inf, so steps close to extinction still move.

    Args:
        op: Operator A
        u: Previous state (nonnegative)
        m: Nonlinearity exponent in (0, 1)
        dt: Time step
        cfg: Newton tolerance and iteration cap

    Returns:
        The next state w

    Raises:
        NewtonDivergence: If ||F(v)||_inf stays above newton_tol ||u||_inf (and
            the roundoff floor) after newton_max_iter iterations
    """
    if u.is_zero():
        return Field.zeros(u.grid)

    A = op.matrix
    abs_a = np.abs(A)
    target = u.values
    inv_m = 1.0 / m
    u_inf = _inf_norm(target)
    eps = np.finfo(np.float64).eps

    def residual(v: FloatArray) -> FloatArray:
        return v**inv_m + dt * (A @ v) - target

    def tolerance(v: FloatArray) -> float:
        floor = 64.0 * eps * (u_inf + dt * _inf_norm(abs_a @ v))
        return max(cfg.newton_tol * u_inf, floor)

    v = np.clip(target, 0.0, None) ** m
    res_vec = residual(v)
    res = _inf_norm(res_vec)
    for iteration in range(1, cfg.newton_max_iter + 1):
        if iteration > 1 and res <= tolerance(v):
            logger.debug("Newton converged in %d iterations (res=%.3e)", iteration - 1, res)
            return u.with_values(v**inv_m)

        jacobian = dt * A + np.diag(inv_m * v ** (inv_m - 1.0))
        try:
            step = linalg.solve(jacobian, res_vec, assume_a="pos")
        except linalg.LinAlgError as e:
            raise NewtonDivergence(f"Newton Jacobian is singular at iteration {iteration}") from e

        lam = 1.0
        while True:
            trial = np.clip(v - lam * step, 0.0, None)
            trial_vec = residual(trial)
            trial_res = _inf_norm(trial_vec)
            if trial_res < res or lam < LINE_SEARCH_MIN_STEP:
                break
            lam *= 0.5
        v, res_vec, res = trial, trial_vec, trial_res

    if res <= tolerance(v):
        return u.with_values(v**inv_m)
    raise NewtonDivergence(
        f"Newton did not converge in {cfg.newton_max_iter} iterations (res={res:.3e}, dt={dt:.3e})"
    )


def norm_row(f: Field, op: DiscreteOperator, m: float, lp: float) -> dict[str, float]:
    """Every tracked norm of one field; Q and Q* are NaN for the zero field."""
    phi1 = op.spectral.phi1
    green = op.green
    row = {
        "norm_L1": lp_norm(f, 1.0),
        "norm_Lp": lp_norm(f, lp),
        "norm_Linf": lp_norm(f, math.inf),
        "norm_L1phi": lp_phi_norm(f, 1.0, phi1),
        "norm_L1pm": lp_norm(f, 1.0 + m),
        "norm_Hstar": hstar_norm(f, green),
        "Q": math.nan,
        "Qstar": math.nan,
        "norm_Hum": h_norm(f.with_values(f.signed_power(m)), op),
    }
    if not f.is_zero():
        row["Q"] = rayleigh_q(f, op, m)
        row["Qstar"] = rayleigh_qstar(f, op.green, m)
    return row


def compute_norm_series(
    snapshots: tuple[Field, ...], op: DiscreteOperator, m: float, lp: float
) -> dict[str, FloatArray]:
    rows = [norm_row(f, op, m, lp) for f in snapshots]
    keys = (*NORM_COLUMNS, "norm_Hum")
    return {key: np.array([row[key] for row in rows]) for key in keys}


def _energy(values: FloatArray, m: float, weight: float) -> float:
    return float(np.sum(np.abs(values) ** (1.0 + m))) * weight / (1.0 + m)


def _audit_step(
    audit: StepAudit,
    op: DiscreteOperator,
    u: Field,
    w: Field,
    m: float,
    dt: float,
    newton_tol: float,
) -> None:
    """Check the proximal energy inequality and the norm decays for one step."""
    weight = u.grid.quad_weight
    slack = newton_tol * (1.0 + _inf_norm(u.values))
    audit.steps += 1

    e_old = _energy(u.values, m, weight)
    dissipation = hstar_norm(w.with_values(w.values - u.values), op.green) ** 2 / (2.0 * dt)
    if _energy(w.values, m, weight) + dissipation > e_old * (1.0 + AUDIT_RTOL) + slack:
        audit.energy_violations += 1

    phi1 = op.spectral.phi1
    if lp_phi_norm(w, 1.0, phi1) > lp_phi_norm(u, 1.0, phi1) * (1.0 + DECAY_RTOL) + slack:
        audit.l1phi_violations += 1

    if op.offdiag_nonpositive and bool(np.all(op.row_sums >= 0.0)):
        for p in (1.0, 2.0, math.inf):
            if lp_norm(w, p) > lp_norm(u, p) * (1.0 + DECAY_RTOL) + slack:
                audit.norm_violations += 1
                break


def _step_with_halving(
    op: DiscreteOperator, u: Field, m: float, dt: float, cfg: SolverConfig, t: float
) -> tuple[Field, float]:
    step_dt = dt
    for halving in range(cfg.max_halvings + 1):
        try:
            return proximal_step(op, u, m, step_dt, cfg), step_dt
        except NewtonDivergence as e:
            if halving == cfg.max_halvings:
                raise NewtonDivergence(
                    f"Step at t={t:.6g} failed after {cfg.max_halvings} dt halvings"
                ) from e
            step_dt *= 0.5
            logger.warning("Newton failed at t=%.6g; halving dt to %.3e", t, step_dt)
    raise AssertionError("unreachable")


def run_flow(
    op: DiscreteOperator,
    u0: Field,
    m: float,
    cfg: SolverConfig,
    lp: float = 2.0,
) -> Trajectory:
    """
    March proximal steps from u0 until ||u||_inf < eps_rel ||u0||_inf or t >= t_max.

    Signed data are replaced by |u0| and the trajectory is flagged. If the run
    reaches t_max first the extinction record is absent.

    Args:
        op: Operator A
        u0: Initial datum
        m: Nonlinearity exponent in (0, 1)
        cfg: Solver configuration
        lp: Exponent of the norm_Lp column

    Returns:
        Trajectory with its norm table and step trace

    Raises:
        ValueError: If m is not in (0, 1)
        NewtonDivergence: If a step fails after max_halvings halvings
    """
    if not 0.0 < m < 1.0:
        raise ValueError(f"m must lie in (0, 1), got {m}")

    signed = bool(np.any(u0.values < 0.0))
    if signed:
        logger.warning("Initial datum changes sign; running |u0| instead")
        u0 = u0.with_values(np.abs(u0.values))

    weight = u0.grid.quad_weight
    u0_inf = _inf_norm(u0.values)
    threshold = cfg.extinction_eps_rel * u0_inf

    if u0.is_zero():
        snapshots = (u0,)
        trace = StepTrace(t=np.zeros(1), linf=np.zeros(1), l1pm=np.zeros(1))
        return Trajectory(
            operator=op,
            m=m,
            lp=lp,
            times=np.zeros(1),
            snapshots=snapshots,
            norm_series=compute_norm_series(snapshots, op, m, lp),
            trace=trace,
            extinction_threshold=0.0,
            extinction=ExtinctionEstimate(t_hat=0.0, t_fit=0.0),
            signed_input=signed,
            newton_tol=cfg.newton_tol,
        )

    def l1pm_of(values: FloatArray) -> float:
        return float((np.sum(values ** (1.0 + m)) * weight) ** (1.0 / (1.0 + m)))

    probe_times = np.geomspace(cfg.dt_init, cfg.t_max, cfg.time_probes)
    y0 = l1pm_of(u0.values) ** (1.0 - m)
    levels = y0 * (1.0 - np.arange(1, cfg.level_probes) / max(cfg.level_probes, 1))
    next_probe = 0
    next_level = 0

    recorded: dict[float, Field] = {0.0: u0}
    tail: deque[tuple[float, Field]] = deque(maxlen=cfg.tail_steps)
    trace_t = [0.0]
    trace_linf = [u0_inf]
    trace_l1pm = [l1pm_of(u0.values)]
    audit = StepAudit() if cfg.audit_energy else None

    t = 0.0
    u = u0
    steps = 0
    extinct = False
    while t < cfg.t_max:
        if steps >= cfg.max_steps:
            logger.warning("Stopped after max_steps=%d at t=%.6g", cfg.max_steps, t)
            break
        dt = cfg.dt_init
        if cfg.dt_policy is DtPolicy.ADAPTIVE:
            dt = max(cfg.dt_min, cfg.adapt_c * trace_linf[-1] ** (1.0 - m))

        w, dt = _step_with_halving(op, u, m, dt, cfg, t)
        if audit is not None:
            _audit_step(audit, op, u, w, m, dt, cfg.newton_tol)
        t += dt
        u = w
        steps += 1

        linf = _inf_norm(u.values)
        l1pm = l1pm_of(u.values)
        trace_t.append(t)
        trace_linf.append(linf)
        trace_l1pm.append(l1pm)
        tail.append((t, u))

        keep = cfg.snapshot_every is not None and steps % cfg.snapshot_every == 0
        while next_probe < len(probe_times) and t >= probe_times[next_probe]:
            next_probe += 1
            keep = True
        y = l1pm ** (1.0 - m)
        while next_level < len(levels) and y <= levels[next_level]:
            next_level += 1
            keep = True
        if keep:
            recorded[t] = u

        if linf < threshold:
            extinct = True
            logger.info("Extinction detected at t=%.6g after %d steps", t, steps)
            break

    for tail_t, tail_u in tail:
        recorded[tail_t] = tail_u
    recorded[t] = u

    times = np.array(sorted(recorded))
    snapshots = tuple(recorded[float(tk)] for tk in times)
    trace = StepTrace(t=np.array(trace_t), linf=np.array(trace_linf), l1pm=np.array(trace_l1pm))
    trajectory = Trajectory(
        operator=op,
        m=m,
        lp=lp,
        times=times,
        snapshots=snapshots,
        norm_series=compute_norm_series(snapshots, op, m, lp),
        trace=trace,
        extinction_threshold=threshold,
        signed_input=signed,
        newton_tol=cfg.newton_tol,
        audit=audit,
    )
    if audit is not None and not audit.clean:
        logger.warning("Step audit found violations: %s", audit)
    if not extinct:
        logger.info("No extinction before t_max=%.6g", cfg.t_max)
        return trajectory

    try:
        estimate = detect_extinction(trajectory)
    except InsufficientData as e:
        logger.warning("Extinction fit skipped: %s", e)
        estimate = ExtinctionEstimate(t_hat=t, t_fit=None)
    return replace(trajectory, extinction=estimate)


def detect_extinction(traj: Trajectory) -> ExtinctionEstimate:
    """
    Estimate the extinction time from the step trace.

    t_hat is the first time ||u||_inf drops below the threshold. t_fit is the
    root of the least-squares line through ||u(t)||_{1+m}^{1-m} over the points
    with t >= 0.9 t_hat (at least the last 8), excluding the extinct state.

    Raises:
        InsufficientData: If the run did not extinguish or fewer than 8 points precede it
    """
    trace = traj.trace
    below = np.flatnonzero(trace.linf < traj.extinction_threshold)
    if below.size == 0:
        raise InsufficientData("Trajectory did not reach the extinction threshold")
    k_hat = int(below[0])
    t_hat = float(trace.t[k_hat])
    if k_hat < MIN_FIT_POINTS:
        raise InsufficientData(
            f"Only {k_hat} points before extinction, need {MIN_FIT_POINTS}"
        )

    t_before = trace.t[:k_hat]
    y_before = trace.l1pm[:k_hat] ** (1.0 - traj.m)
    start = min(int(np.searchsorted(t_before, FIT_WINDOW_FRACTION * t_hat)), k_hat - MIN_FIT_POINTS)
    slope, intercept = np.polyfit(t_before[start:], y_before[start:], 1)
    if slope >= 0.0:
        raise InsufficientData("Norm does not decrease over the fit window")
    t_fit = float(-intercept / slope)

    lo, hi = FIT_SANITY_BRACKET
    if not lo * t_hat <= t_fit <= hi * t_hat:
        logger.warning("t_fit=%.6g is outside [%.1f, %.1f] * t_hat=%.6g", t_fit, lo, hi, t_hat)
    return ExtinctionEstimate(t_hat=t_hat, t_fit=t_fit)


def scalar_closed_form(t: FloatArray, u0: float, a: float, m: float) -> FloatArray:
    """Exact solution (u0^(1-m) - (1-m) a t)_+^(1/(1-m)) of u' = -a u^m."""
    base = np.clip(u0 ** (1.0 - m) - (1.0 - m) * a * np.asarray(t, dtype=np.float64), 0.0, None)
    return base ** (1.0 / (1.0 - m))


def _profile_residual(op: DiscreteOperator, v: FloatArray, m: float) -> FloatArray:
    return op.matrix @ v - v ** (1.0 / m) / (1.0 - m)


def _profile_tolerance(op: DiscreteOperator, v: FloatArray, m: float) -> float:
    w_inf = _inf_norm(v ** (1.0 / m))
    eps = np.finfo(np.float64).eps
    roundoff = 64.0 * eps * (_inf_norm(np.abs(op.matrix) @ v) + w_inf / (1.0 - m))
    return max(PROFILE_RTOL * w_inf, roundoff)


def _profile_newton(
    op: DiscreteOperator, v: FloatArray, m: float, max_iter: int
) -> FloatArray | None:
    """Newton on A v - v^(1/m)/(1-m) = 0 with residual-halving line search."""
    A = op.matrix
    inv_m = 1.0 / m
    res_vec = _profile_residual(op, v, m)
    res = _inf_norm(res_vec)
    for _ in range(max_iter):
        if res <= _profile_tolerance(op, v, m):
            return v
        jacobian = A - np.diag(v ** (inv_m - 1.0) / (m * (1.0 - m)))
        try:
            step = linalg.solve(jacobian, res_vec)
        except linalg.LinAlgError:
            return None
        lam = 1.0
        while True:
            trial = np.clip(v - lam * step, 0.0, None)
            trial_vec = _profile_residual(op, trial, m)
            trial_res = _inf_norm(trial_vec)
            if trial_res < res or lam < LINE_SEARCH_MIN_STEP:
                break
            lam *= 0.5
        if trial_res >= res:
            return None
        v, res_vec, res = trial, trial_vec, trial_res
    return v if res <= _profile_tolerance(op, v, m) else None


def _ground_state_direction(op: DiscreteOperator, m: float) -> tuple[FloatArray, float]:
    """
    Minimize <z, A z> / ||z||_{1+1/m}^2 from Phi_1.

    At the minimizer normalized to ||z||_{1+1/m} = 1 one has A z = mu z^(1/m)
    with mu = <z, A z>.
    """
    A = op.matrix
    weight = op.grid.quad_weight
    r = 1.0 + 1.0 / m

    def log_quotient(z: FloatArray) -> tuple[float, FloatArray]:
        az = A @ z
        energy = float(z @ az) * weight
        abs_z = np.abs(z)
        total = float(np.sum(abs_z**r)) * weight
        value = math.log(energy) - (2.0 / r) * math.log(total)
        grad = 2.0 * az * weight / energy - 2.0 * np.sign(z) * abs_z ** (r - 1.0) * weight / total
        return value, grad

    result = minimize(
        log_quotient,
        op.spectral.phi1.values,
        jac=True,
        method="L-BFGS-B",
        options={"gtol": 1e-12, "maxiter": 100_000},
    )
    z = np.abs(result.x)
    z = z / (float(np.sum(z**r)) * weight) ** (1.0 / r)
    mu = float(z @ (A @ z)) * weight
    return z, mu


def solve_separable_profile(
    op: DiscreteOperator, m: float, *, max_iter: int = 200
) -> Field:
    """
    Profile w >= 0 of the separable solution (T - t)^(1/(1-m)) w.

    Solves A w^m = w/(1-m) for v = w^m. Newton starts from c Phi_1 with c
    chosen so the equation holds along Phi_1. If that fails the start is
    replaced by the minimizer of the quotient <z, A z>/||z||_{1+1/m}^2 rescaled
    to the equation's amplitude, then polished by Newton. The profile is the one
    reached from these starts; no uniqueness is claimed.

    Raises:
        ValueError: If m is not in (0, 1)
        ProfileNotFound: If neither strategy meets the residual test
    """
    if not 0.0 < m < 1.0:
        raise ValueError(f"m must lie in (0, 1), got {m}")

    spectral = op.spectral
    phi = spectral.phi1.values
    weight = op.grid.quad_weight
    inv_m = 1.0 / m
    overlap = float(np.sum(phi ** (1.0 + inv_m))) * weight
    c = (spectral.lambda1 * (1.0 - m) / overlap) ** (m / (1.0 - m))
    floor = 1e-6 * c * _inf_norm(phi)

    v = _profile_newton(op, c * phi, m, max_iter)
    if v is not None and _inf_norm(v) > floor:
        return Field(v**inv_m, op.grid)

    logger.warning("Newton from the Phi_1 start failed; trying the quotient minimizer")
    z, mu = _ground_state_direction(op, m)
    v_start = (mu * (1.0 - m)) ** (m / (1.0 - m)) * z
    v = _profile_newton(op, v_start, m, max_iter)
    if v is None:
        residual = _inf_norm(_profile_residual(op, v_start, m))
        if residual <= _profile_tolerance(op, v_start, m):
            v = v_start
    if v is None or _inf_norm(v) <= floor:
        raise ProfileNotFound(f"No separable profile found for m={m}")
    return Field(v**inv_m, op.grid)
