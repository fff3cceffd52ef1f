"""
Estimate harness.

Each check evaluates one inequality along a computed trajectory (or on an
operator) and returns an InequalityReport. Free-constant checks report the
empirical constant; explicit-constant checks also carry a verdict against the
stated constant with a relative slack. Hypotheses are evaluated before any
arithmetic and failing ones yield not_applicable.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
from functools import cache
from typing import Any, NamedTuple

import numpy as np

from ffde_lab.constants import (
    alpha_critical,
    cpm,
    critical_exponents,
    is_pole,
    kappa_pq,
    moser_kappa,
)
from ffde_lab.errors import MismatchedTrajectories, UnknownCheck
from ffde_lab.flow import Trajectory, detect_extinction
from ffde_lab.mesh import FloatArray
from ffde_lab.norms import Field, hstar_norm, lp_norm, lp_phi_norm, rayleigh_q, rayleigh_qstar
from ffde_lab.operators import DiscreteOperator, GreenMatrix, SpectralData

logger = logging.getLogger(__name__)

EXPLICIT_RTOL = 0.01
MONOTONE_RTOL = 1e-8
RAYLEIGH_RTOL = 1e-6
PROBE_ATOL = 1e-12
DRIFT_LIMIT = 2.0
EXTINCTION_WINDOW = 0.9
RAYLEIGH_FLOOR = 1e-6
OUTSIDE_NOTE = "outside stated hypotheses (N <= 2s)"


class Verdict(StrEnum):
    HOLDS = "holds"
    HOLDS_WITH_CONSTANT = "holds_with_constant"
    VIOLATED = "violated"
    NOT_APPLICABLE = "not_applicable"


_SEVERITY = {
    Verdict.NOT_APPLICABLE: 0,
    Verdict.HOLDS: 1,
    Verdict.HOLDS_WITH_CONSTANT: 2,
    Verdict.VIOLATED: 3,
}


class SmoothingKind(StrEnum):
    LP = "Lp"
    LP_PHI = "LpPhi"
    HSTAR = "Hstar"


class GreenBranch(StrEnum):
    LINEAR = "linear"
    LOGARITHMIC = "logarithmic"
    POWER = "power"


class Record(NamedTuple):
    """One evaluated instance: ratio = lhs / rhs."""

    label: str
    lhs: float
    rhs: float
    ratio: float


@dataclass
class InequalityReport:
    """
    Outcome of one check.

    For explicit checks verdict holds means every record satisfies
    lhs <= rhs (1 + tolerance) + atol, with atol listed in details.
    """

    name: str
    records: list[Record]
    verdict: Verdict
    empirical_constant: float = math.nan
    theoretical_constant: float | None = None
    hypothesis_note: str = ""
    explicit: bool = False
    tolerance: float = 0.0
    children: list[InequalityReport] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return len(self.records)

    def worst_record(self) -> Record | None:
        finite = [r for r in self.records if not math.isnan(r.ratio)]
        if not finite:
            return None
        return max(finite, key=lambda r: r.ratio)

    def has_explicit_violation(self) -> bool:
        """True if this report or a child is an explicit check that failed."""
        if self.explicit and self.verdict is Verdict.VIOLATED:
            return True
        return any(child.has_explicit_violation() for child in self.children)

    def to_json(self) -> dict[str, Any]:
        worst = self.worst_record()
        return {
            "name": self.name,
            "hypothesis_note": self.hypothesis_note,
            "verdict": str(self.verdict),
            "empirical_constant": self.empirical_constant,
            "theoretical_constant": self.theoretical_constant,
            "n_records": self.n_records,
            "worst_record": worst._asdict() if worst is not None else None,
            "details": self.details,
            "children": [child.to_json() for child in self.children],
        }


def _ratio(lhs: FloatArray, rhs: FloatArray) -> FloatArray:
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(rhs > 0.0, rhs, 1.0)
        degenerate = np.where(lhs > 0.0, np.inf, 0.0)
        return np.where(rhs > 0.0, lhs / safe, degenerate)


def _records(labels: list[str], lhs: FloatArray, rhs: FloatArray) -> list[Record]:
    ratio = _ratio(lhs, rhs)
    return [
        Record(label, float(a), float(b), float(r))
        for label, a, b, r in zip(labels, lhs, rhs, ratio, strict=True)
    ]


def _not_applicable(name: str, note: str, *, explicit: bool = False) -> InequalityReport:
    return InequalityReport(
        name=name,
        records=[],
        verdict=Verdict.NOT_APPLICABLE,
        hypothesis_note=note,
        explicit=explicit,
    )


def _explicit_report(
    name: str,
    labels: list[str],
    lhs: FloatArray,
    rhs: FloatArray,
    *,
    tol: float,
    atol: FloatArray | float = 0.0,
    note: str = "",
    theoretical: float | None = None,
) -> InequalityReport:
    """Report for lhs <= rhs with a fixed constant; verdict against the slack."""
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    ok = lhs <= rhs * (1.0 + tol) + atol
    records = _records(labels, lhs, rhs)
    sup = max((r.ratio for r in records), default=math.nan)
    return InequalityReport(
        name=name,
        records=records,
        verdict=Verdict.HOLDS if bool(np.all(ok)) else Verdict.VIOLATED,
        empirical_constant=sup,
        theoretical_constant=theoretical,
        hypothesis_note=note,
        explicit=True,
        tolerance=tol,
        details={"atol": float(np.max(atol)) if np.size(atol) else 0.0},
    )


def _free_report(
    name: str,
    records: list[Record],
    *,
    note: str = "",
    theoretical: float | None = None,
) -> InequalityReport:
    """Report whose output is sup(lhs/rhs); holds_with_constant when finite."""
    sup = max((r.ratio for r in records), default=math.nan)
    verdict = Verdict.HOLDS_WITH_CONSTANT if math.isfinite(sup) else Verdict.VIOLATED
    if not records:
        verdict = Verdict.NOT_APPLICABLE
    return InequalityReport(
        name=name,
        records=records,
        verdict=verdict,
        empirical_constant=sup,
        theoretical_constant=theoretical,
        hypothesis_note=note,
    )


def _aggregate(name: str, children: list[InequalityReport], **details: Any) -> InequalityReport:
    verdict = max((c.verdict for c in children), key=_SEVERITY.__getitem__, default=Verdict.NOT_APPLICABLE)
    return InequalityReport(
        name=name,
        records=[],
        verdict=verdict,
        children=children,
        details=dict(details),
    )


def _hypothesis_base(traj_or_op: Trajectory | DiscreteOperator) -> tuple[int, float, float]:
    op = traj_or_op.operator if isinstance(traj_or_op, Trajectory) else traj_or_op
    return op.grid.dim, op.spec.s, op.spec.gamma


def _outside_note(N: int, s: float) -> str:
    return OUTSIDE_NOTE if N <= 2.0 * s else ""


class _SmoothingSetup(NamedTuple):
    source_label: str
    source: FloatArray
    source_exp: float
    time_exp: float
    gate: str


def _smoothing_setup(traj: Trajectory, p: float, kind: SmoothingKind) -> _SmoothingSetup | str:
    """
    Source norms and exponents, or the reason they are undefined.

    Below the critical line theta is negative but finite; the exponents are
    still returned together with a non-empty gate naming the failed hypothesis.
    """
    N, s, gamma = _hypothesis_base(traj)
    table = critical_exponents(N, s, traj.m, gamma)
    snaps = traj.snapshots

    if kind is SmoothingKind.LP:
        if p < 1.0:
            return f"p={p} < 1"
        theta = table.theta(p)
        if is_pole(theta):
            return f"p={p} is the pole p_c={table.p_c:.6g}"
        gate = "" if theta > 0.0 else f"p={p} <= p_c={table.p_c:.6g} (m={traj.m} <= m_c={table.m_c:.6g})"
        source = np.array([lp_norm(f, p) for f in snaps])
        return _SmoothingSetup("L^p", source, 2.0 * s * p * theta, N * theta, gate)

    if kind is SmoothingKind.LP_PHI:
        if not 2.0 * s > gamma:
            return f"weighted smoothing needs 2s > gamma, got s={s}, gamma={gamma}"
        if p < 1.0:
            return f"p={p} < 1"
        theta = table.theta_gamma(p)
        if is_pole(theta):
            return f"p={p} is the pole p_c_gamma={table.p_c_gamma:.6g}"
        gate = "" if theta > 0.0 else f"p={p} <= p_c_gamma={table.p_c_gamma:.6g}"
        phi1 = traj.operator.spectral.phi1
        source = np.array([lp_phi_norm(f, p, phi1) for f in snaps])
        return _SmoothingSetup("L^p_Phi1", source, (2.0 * s - gamma) * p * theta, N * theta, gate)

    theta = table.theta_1pm
    if is_pole(theta):
        return f"m={traj.m} is the pole m_s={table.m_s:.6g}"
    gate = "" if theta > 0.0 else f"m={traj.m} <= m_s={table.m_s:.6g}"
    source = traj.norm_series["norm_Hstar"]
    return _SmoothingSetup("H*", source, 4.0 * s * theta, (N + 2.0 * s) * theta, gate)


def _smoothing_records(
    traj: Trajectory, source: FloatArray, source_exp: float, time_exp: float
) -> list[Record]:
    """Worst t0 for every t of kappa = ||u(t)||_inf (t - t0)^a / ||u(t0)||^b."""
    times = traj.times
    linf = traj.norm_series["norm_Linf"]
    K = len(times)
    i, j = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    valid = (i < j) & (source[i] > 0.0)
    gap = np.where(valid, times[j] - times[i], 1.0)
    rhs = np.where(valid, np.where(source[i] > 0.0, source[i], 1.0) ** source_exp / gap**time_exp, np.nan)
    kappa = np.where(valid, linf[j] / rhs, -np.inf)

    records = []
    for col in range(1, K):
        if not valid[:, col].any():
            continue
        row = int(np.argmax(kappa[:, col]))
        records.append(
            Record(
                f"t0={times[row]:.6g},t={times[col]:.6g}",
                float(linf[col]),
                float(rhs[row, col]),
                float(kappa[row, col]),
            )
        )
    return records


def smoothing_drift(coarse: float, fine: float) -> float:
    """max(fine/coarse, coarse/fine), infinite when either constant is not positive and finite."""
    if 0.0 < coarse < math.inf and 0.0 < fine < math.inf:
        return max(fine / coarse, coarse / fine)
    return math.inf


def check_smoothing(
    traj: Trajectory,
    p: float,
    kind: SmoothingKind | str = SmoothingKind.LP,
    *,
    refined: Trajectory | None = None,
    sobolev_S: float | None = None,
) -> InequalityReport:
    """
    L^p, L^p_Phi1 or H* to L^infinity smoothing along all snapshot pairs.

    kappa_hat = ||u(t)||_inf (t-t0)^{N theta} / ||u(t0)||^{exp} with the
    exponents of the matching smoothing theorem. With a refined trajectory the
    verdict is holds_with_constant when the two suprema differ by at most 2x.

    Below the critical line (theta < 0) kappa_hat is still measured and kept in
    the report, together with the refinement drift when a refined trajectory is
    given, but the verdict stays not_applicable.

    Args:
        traj: Trajectory
        p: Source exponent (ignored for kind Hstar)
        kind: Lp, LpPhi or Hstar
        refined: Same experiment on a finer grid
        sobolev_S: Estimated S_A, enables the Moser constant for kind Lp
    """
    kind = SmoothingKind(kind)
    name = f"smoothing_{kind}"
    N, s, _ = _hypothesis_base(traj)
    setup = _smoothing_setup(traj, p, kind)
    if isinstance(setup, str):
        return _not_applicable(name, setup)

    records = _smoothing_records(traj, setup.source, setup.source_exp, setup.time_exp)
    theoretical = None
    if kind is SmoothingKind.LP and sobolev_S is not None and p > 1.0 and not setup.gate:
        theoretical = moser_kappa(p, N, s, traj.m, sobolev_S)
    note = "; ".join(filter(None, [setup.gate, _outside_note(N, s)]))
    report = _free_report(name, records, note=note, theoretical=theoretical)
    report.details.update(
        {
            "p": p,
            "source_norm": setup.source_label,
            "source_exponent": setup.source_exp,
            "time_exponent": setup.time_exp,
            "kappa_hat": report.empirical_constant,
            "below_critical": bool(setup.gate),
        }
    )
    if theoretical is not None:
        report.details["theoretical_dominates"] = theoretical >= report.empirical_constant

    if refined is not None and records:
        fine = check_smoothing(refined, p, kind)
        drift = smoothing_drift(report.empirical_constant, fine.empirical_constant)
        report.details.update({"kappa_refined": fine.empirical_constant, "drift": drift})
        if not setup.gate:
            report.verdict = Verdict.HOLDS_WITH_CONSTANT if drift <= DRIFT_LIMIT else Verdict.VIOLATED
    if setup.gate:
        report.verdict = Verdict.NOT_APPLICABLE
    return report


@cache
def _log_theta_sign_once() -> None:
    logger.info("L^p-L^q smoothing uses theta_r = 1/(2sr - N(1-m)) (minus sign form)")


def check_lp_lq_smoothing(
    traj: Trajectory, p: float, q: float, *, sobolev_S: float | None = None
) -> InequalityReport:
    """
    ||u(t)||_q <= kappa ||u(t0)||_p^{p theta_p/(q theta_q)} / (t-t0)^{N(q-p) theta_p/q}.

    Uses theta_r = 1/(2sr - N(1-m)) for both exponents.
    """
    name = "lp_lq_smoothing"
    N, s, gamma = _hypothesis_base(traj)
    table = critical_exponents(N, s, traj.m, gamma)
    if not max(1.0, table.p_c) < p < q:
        return _not_applicable(name, f"needs max(1, p_c={table.p_c:.6g}) < p={p} < q={q}")
    _log_theta_sign_once()

    theta_p = table.theta(p)
    theta_q = table.theta(q)
    source_exp = p * theta_p / (q * theta_q)
    time_exp = N * (q - p) * theta_p / q

    times = traj.times
    src = np.array([lp_norm(f, p) for f in traj.snapshots])
    target = np.array([lp_norm(f, q) for f in traj.snapshots])
    records = []
    for col in range(1, len(times)):
        rows = np.flatnonzero((np.arange(len(times)) < col) & (src > 0.0))
        if rows.size == 0:
            continue
        rhs = src[rows] ** source_exp / (times[col] - times[rows]) ** time_exp
        ratio = target[col] / rhs
        k = int(np.argmax(ratio))
        records.append(
            Record(f"t0={times[rows[k]]:.6g},t={times[col]:.6g}", float(target[col]), float(rhs[k]), float(ratio[k]))
        )

    theoretical = kappa_pq(p, q, N, s, traj.m, sobolev_S) if sobolev_S is not None else None
    report = _free_report(name, records, note=_outside_note(N, s), theoretical=theoretical)
    report.details.update({"p": p, "q": q, "source_exponent": source_exp, "time_exponent": time_exp})
    return report


def boundary_profile(phi: FloatArray, s: float, gamma: float) -> FloatArray:
    """B_1(Phi): Phi if 2s > gamma, Phi(1+|log Phi|) if 2s = gamma, Phi^{2s/gamma} otherwise."""
    two_s = 2.0 * s
    if math.isclose(two_s, gamma, rel_tol=1e-12):
        with np.errstate(divide="ignore"):
            return np.where(phi > 0.0, phi * (1.0 + np.abs(np.log(np.where(phi > 0.0, phi, 1.0)))), 0.0)
    if two_s > gamma:
        return phi
    return phi ** (two_s / gamma)


def check_boundary_estimate(
    traj: Trajectory,
    p: float,
    gamma: float | None = None,
    spectral: SpectralData | None = None,
    *,
    weighted: bool = False,
) -> InequalityReport:
    """
    Upper boundary estimate u^m(t,x) <= kappa B(Phi_1(x)) ||u(t0)||^{exp} / (t-t0)^{1 + N theta}.

    The plain variant uses the L^p norm with B = B_1; the weighted variant
    uses the L^p_Phi1 norm with B = Phi_1 and needs 2s > gamma. The worst node
    of every snapshot pair is recorded.
    """
    name = "boundary_estimate_weighted" if weighted else "boundary_estimate"
    op = traj.operator
    N, s, op_gamma = _hypothesis_base(traj)
    gamma = op_gamma if gamma is None else gamma
    spectral = spectral or op.spectral
    table = critical_exponents(N, s, traj.m, gamma)
    phi = spectral.phi1.values

    if weighted:
        if not 2.0 * s > gamma:
            return _not_applicable(name, f"weighted variant needs 2s > gamma, got s={s}, gamma={gamma}")
        theta = table.theta_gamma(p)
        if p < 1.0 or is_pole(theta) or theta <= 0.0:
            return _not_applicable(name, f"p={p} <= p_c_gamma")
        source = np.array([lp_phi_norm(f, p, spectral.phi1) for f in traj.snapshots])
        source_exp = (2.0 * s - gamma) * p * theta
        profile = phi
    else:
        theta = table.theta(p)
        if p < 1.0 or is_pole(theta) or theta <= 0.0:
            return _not_applicable(name, f"p={p} <= p_c={table.p_c:.6g}")
        source = np.array([lp_norm(f, p) for f in traj.snapshots])
        source_exp = 2.0 * s * p * theta
        profile = boundary_profile(phi, s, gamma)
    time_exp = 1.0 + N * theta

    nodes = profile > 0.0
    powered = np.array([f.values[nodes] ** traj.m for f in traj.snapshots])
    times = traj.times
    records = []
    for j in range(1, len(times)):
        for i in range(j):
            if source[i] <= 0.0:
                continue
            scale = source[i] ** source_exp / (times[j] - times[i]) ** time_exp
            ratio = powered[j] / (profile[nodes] * scale)
            k = int(np.argmax(ratio))
            node = int(np.flatnonzero(nodes)[k])
            records.append(
                Record(
                    f"t0={times[i]:.6g},t={times[j]:.6g},node={node}",
                    float(powered[j][k]),
                    float(profile[node] * scale),
                    float(ratio[k]),
                )
            )

    report = _free_report(name, records, note=_outside_note(N, s))
    report.details.update({"p": p, "gamma": gamma, "time_exponent": time_exp})
    return report


def _linear_law(
    name: str, times: FloatArray, values: FloatArray, T: float, note: str = ""
) -> InequalityReport:
    """
    Two-sided law c (T - t) <= y(t) <= y(t0) - c (t - t0).

    Records y(t)/(T - t); empirical_constant is the lower rate and the upper
    rate min (y(t0) - y(t))/(t - t0) over consecutive points is in details.
    """
    if len(times) < 2:
        return _not_applicable(name, "fewer than two snapshots before 0.9 T")
    labels = [f"t={t:.6g}" for t in times]
    records = _records(labels, values, T - times)
    lower_rate = min(r.ratio for r in records)
    upper_rate = float(np.min(-np.diff(values) / np.diff(times)))
    verdict = Verdict.HOLDS_WITH_CONSTANT if lower_rate > 0.0 and upper_rate > 0.0 else Verdict.VIOLATED
    return InequalityReport(
        name=name,
        records=records,
        verdict=verdict,
        empirical_constant=lower_rate,
        hypothesis_note=note,
        details={"lower_rate": lower_rate, "upper_rate": upper_rate},
    )


def check_extinction_bounds(
    traj: Trajectory, p: float = 2.0, alpha: float = 1.0
) -> InequalityReport:
    """
    Extinction-rate inequalities with T = t_fit over snapshots with t <= 0.9 T.

    Children:
        (a) c_p (T-t) <= ||u(t)||_p^{1-m} <= ||u(t0)||_p^{1-m} - c_p (t-t0), p > p_c
        (b) the same law for ||u^alpha(t)||_{H*}^{(1-m)/alpha}, alpha > alpha_c
        (c) ||u(t)||_{L^1_Phi1} <= lambda_1^{1/(1-m)} ||Phi_1||_1 (T-t)^{1/(1-m)}
        (d) ||u(t)||_{1+m}^{1-m} <= (1-m) Q[u0] (T-t)
        (e) ||u(t)||_{H*} <= ((1-m) Q*[u0] (T-t))^{1/(1-m)}
    (c), (d) and (e) have explicit constants and carry verdicts.

    Raises:
        InsufficientData: If the trajectory did not extinguish
    """
    estimate = detect_extinction(traj)
    T = float(estimate.t_fit) if estimate.t_fit is not None else estimate.t_hat
    m = traj.m
    op = traj.operator
    N, s, gamma = _hypothesis_base(traj)
    table = critical_exponents(N, s, m, gamma)
    spectral = op.spectral
    phi1 = spectral.phi1
    e = 1.0 / (1.0 - m)

    window = traj.times <= EXTINCTION_WINDOW * T
    times = traj.times[window]
    snaps = [f for f, keep in zip(traj.snapshots, window, strict=True) if keep]
    labels = [f"t={t:.6g}" for t in times]
    children = []

    theta = table.theta(p)
    if is_pole(theta) or theta <= 0.0:
        children.append(_not_applicable("(a) Lp_rate", f"p={p} <= p_c={table.p_c:.6g}"))
    else:
        y = np.array([lp_norm(f, p) ** (1.0 - m) for f in snaps])
        children.append(_linear_law("(a) Lp_rate", times, y, T))

    alpha_c = alpha_critical(N, s, m)
    if not alpha_c < alpha <= 1.0:
        children.append(_not_applicable("(b) Hstar_alpha_rate", f"needs alpha_c={alpha_c:.6g} < alpha={alpha} <= 1"))
    else:
        y = np.array(
            [hstar_norm(f.with_values(f.values**alpha), op.green) ** ((1.0 - m) / alpha) for f in snaps]
        )
        children.append(_linear_law("(b) Hstar_alpha_rate", times, y, T))

    phi_l1 = lp_norm(phi1, 1.0)
    c1 = spectral.lambda1**e * phi_l1
    lhs_c = np.array([lp_phi_norm(f, 1.0, phi1) for f in snaps])
    children.append(
        _explicit_report(
            "(c) L1phi_rate", labels, lhs_c, c1 * (T - times) ** e, tol=EXPLICIT_RTOL, theoretical=c1
        )
    )

    u0 = traj.u0
    q0 = rayleigh_q(u0, op, m)
    lhs_d = np.array([lp_norm(f, 1.0 + m) ** (1.0 - m) for f in snaps])
    children.append(
        _explicit_report(
            "(d) L1pm_sharp_rate",
            labels,
            lhs_d,
            (1.0 - m) * q0 * (T - times),
            tol=EXPLICIT_RTOL,
            theoretical=(1.0 - m) * q0,
        )
    )

    qstar0 = rayleigh_qstar(u0, op.green, m)
    lhs_e = np.array([hstar_norm(f, op.green) for f in snaps])
    children.append(
        _explicit_report(
            "(e) Hstar_sharp_rate",
            labels,
            lhs_e,
            ((1.0 - m) * qstar0 * (T - times)) ** e,
            tol=EXPLICIT_RTOL,
            theoretical=((1.0 - m) * qstar0) ** e,
        )
    )

    u0_phi = lp_phi_norm(u0, 1.0, phi1)
    lower_printed = spectral.lambda1 * (u0_phi * phi_l1) ** (1.0 - m)
    lower_ode = u0_phi ** (1.0 - m) / ((1.0 - m) * spectral.lambda1 * phi_l1 ** (1.0 - m))
    return _aggregate(
        "extinction_bounds",
        children,
        T_fit=estimate.t_fit,
        T_hat=estimate.t_hat,
        T_lower_printed=lower_printed,
        T_lower_ode=lower_ode,
        T_lower_printed_holds=T >= lower_printed,
        T_lower_ode_holds=T >= lower_ode,
    )


def check_time_monotonicity(traj: Trajectory) -> InequalityReport:
    """
    t1^{-1/(1-m)} u(t1,x) <= t0^{-1/(1-m)} u(t0,x) (1 + 1e-8) for all pairs t0 < t1.

    Only the smallest earlier value matters for each t1, so the check runs on
    the running minimum. The absolute slack 2 newton_tol (1 + ||u0||_inf) t1^{-1/(1-m)}
    absorbs the Newton residual.
    """
    name = "time_monotonicity"
    positive = traj.times > 0.0
    times = traj.times[positive]
    if len(times) < 2:
        return _not_applicable(name, "needs two snapshots with t > 0", explicit=True)

    e = 1.0 / (1.0 - traj.m)
    values = np.array([f.values for f, keep in zip(traj.snapshots, positive, strict=True) if keep])
    scaled = values * times[:, None] ** (-e)
    earlier = np.minimum.accumulate(scaled, axis=0)[:-1]
    later = scaled[1:]
    u0_inf = float(np.abs(traj.u0.values).max())
    atol = 2.0 * traj.newton_tol * (1.0 + u0_inf) * times[1:] ** (-e)

    excess = later - earlier * (1.0 + MONOTONE_RTOL) - atol[:, None]
    worst = np.argmax(excess, axis=1)
    rows = np.arange(len(worst))
    labels = [f"t={times[k + 1]:.6g},node={int(worst[k])}" for k in rows]
    return _explicit_report(
        name,
        labels,
        later[rows, worst],
        earlier[rows, worst],
        tol=MONOTONE_RTOL,
        atol=atol,
    )


def _monotone_series(
    name: str, times: FloatArray, series: FloatArray, tol: float, atol: float
) -> InequalityReport:
    labels = [f"t0={a:.6g},t1={b:.6g}" for a, b in zip(times[:-1], times[1:], strict=True)]
    return _explicit_report(name, labels, series[1:], series[:-1], tol=tol, atol=atol)


def check_contraction(traj_u: Trajectory, traj_v: Trajectory) -> InequalityReport:
    """
    T-contraction of two runs on their common snapshot times.

    Children: ||(u-v)_+||_{L^1_Phi1} and ||(u-v)_-||_{L^1_Phi1} non-increasing,
    ||u-v||_{H*} non-increasing, and for ordered data the order is kept while
    int (v-u) Phi_1 does not increase. The L^1_Phi1 children and comparison need
    nonpositive off-diagonals.

    Raises:
        MismatchedTrajectories: If operators or m differ, or fewer than two times are shared
    """
    op = traj_u.operator
    other = traj_v.operator
    if traj_u.m != traj_v.m:
        raise MismatchedTrajectories(f"m differs: {traj_u.m} vs {traj_v.m}")
    if op is not other and (
        op.spec != other.spec or op.matrix.shape != other.matrix.shape or not np.array_equal(op.matrix, other.matrix)
    ):
        raise MismatchedTrajectories("Trajectories use different operators")
    common, iu, iv = np.intersect1d(traj_u.times, traj_v.times, return_indices=True)
    if len(common) < 2:
        raise MismatchedTrajectories("Trajectories share fewer than two snapshot times")

    phi1 = op.spectral.phi1
    diffs = [traj_u.snapshots[a].values - traj_v.snapshots[b].values for a, b in zip(iu, iv, strict=True)]
    grid = op.grid
    u0, v0 = traj_u.u0.values, traj_v.u0.values
    scale = 1.0 + float(np.abs(u0).max()) + float(np.abs(v0).max())
    atol = 10.0 * traj_u.newton_tol * scale

    children = []
    if op.offdiag_nonpositive:
        pos = np.array([lp_phi_norm(Field(np.clip(d, 0.0, None), grid), 1.0, phi1) for d in diffs])
        neg = np.array([lp_phi_norm(Field(np.clip(-d, 0.0, None), grid), 1.0, phi1) for d in diffs])
        children.append(_monotone_series("positive_part_L1phi", common, pos, MONOTONE_RTOL, atol))
        children.append(_monotone_series("negative_part_L1phi", common, neg, MONOTONE_RTOL, atol))
    else:
        note = "operator has positive off-diagonal entries"
        children.append(_not_applicable("positive_part_L1phi", note, explicit=True))
        children.append(_not_applicable("negative_part_L1phi", note, explicit=True))

    hstar = np.array([hstar_norm(Field(d, grid), op.green) for d in diffs])
    children.append(_monotone_series("hstar_distance", common, hstar, MONOTONE_RTOL, atol))

    ordered_up = bool(np.all(u0 <= v0))
    ordered_down = bool(np.all(v0 <= u0))
    if not (ordered_up or ordered_down):
        children.append(_not_applicable("ordered_comparison", "initial data are not ordered", explicit=True))
    elif not op.offdiag_nonpositive:
        children.append(
            _not_applicable("ordered_comparison", "operator has positive off-diagonal entries", explicit=True)
        )
    else:
        sign = 1.0 if ordered_up else -1.0
        crossing = np.array([float(np.clip(sign * d, 0.0, None).max()) for d in diffs])
        labels = [f"t={t:.6g}" for t in common]
        children.append(
            _explicit_report("ordered_comparison", labels, crossing, np.zeros_like(crossing), tol=0.0, atol=atol)
        )
        gap = np.array([float(np.sum(-sign * d * phi1.values)) * grid.quad_weight for d in diffs])
        children.append(_monotone_series("ordered_l1phi_gap", common, gap, MONOTONE_RTOL, atol))

    return _aggregate("contraction", children, n_common_times=len(common))


def check_rayleigh_monotonicity(traj: Trajectory) -> InequalityReport:
    """Q and Q* non-increasing within 1e-6 relative over snapshots above 1e-6 ||u0||_inf."""
    name = "rayleigh_monotonicity"
    linf = traj.norm_series["norm_Linf"]
    keep = linf >= RAYLEIGH_FLOOR * linf[0]
    if int(keep.sum()) < 3 or linf[0] == 0.0:
        return _not_applicable(name, "needs three snapshots before the extinction window", explicit=True)
    times = traj.times[keep]
    children = [
        _monotone_series("Q", times, traj.norm_series["Q"][keep], RAYLEIGH_RTOL, 0.0),
        _monotone_series("Qstar", times, traj.norm_series["Qstar"][keep], RAYLEIGH_RTOL, 0.0),
    ]
    return _aggregate(name, children)


def check_pointwise_formula(
    traj: Trajectory,
    green: GreenMatrix | None = None,
    p_values: tuple[float, ...] | list[float] = (),
) -> InequalityReport:
    """
    Pointwise chain on consecutive snapshot pairs with t0 > 0:

        u^m(t1)/t1^{m/(1-m)} <= G[u(t0) - u(t1)] / ((1-m)(t1^e - t0^e)) <= u^m(t0)/t0^{m/(1-m)}

    with e = 1/(1-m). For each requested p >= 1 also
    u^{p+m-1}(t1) <= c_{p,m} t1^{(p+m-1)/(1-m)} G[u(t0)^p] / (t1 - t0)^{p/(1-m)}.
    """
    green = green or traj.operator.green
    m = traj.m
    e = 1.0 / (1.0 - m)
    pairs = [(k, k + 1) for k in range(len(traj.times) - 1) if traj.times[k] > 0.0]
    if not pairs:
        return _not_applicable("pointwise_formula", "needs snapshot pairs with t0 > 0", explicit=True)

    u0_inf = float(np.abs(traj.u0.values).max())
    lower_lhs, lower_rhs, upper_lhs, upper_rhs, lower_labels, upper_labels, atols = [], [], [], [], [], [], []
    for k0, k1 in pairs:
        t0, t1 = float(traj.times[k0]), float(traj.times[k1])
        a, b = traj.snapshots[k0].values, traj.snapshots[k1].values
        low = b**m / t1 ** (m * e)
        mid = green.apply(a - b) / ((1.0 - m) * (t1**e - t0**e))
        up = a**m / t0 ** (m * e)
        atol = 1e-9 * (1.0 + u0_inf**m) * t0 ** (-m * e)
        i = int(np.argmax(low - mid))
        j = int(np.argmax(mid - up))
        lower_lhs.append(low[i])
        lower_rhs.append(mid[i])
        upper_lhs.append(mid[j])
        upper_rhs.append(up[j])
        lower_labels.append(f"t0={t0:.6g},t1={t1:.6g},node={i}")
        upper_labels.append(f"t0={t0:.6g},t1={t1:.6g},node={j}")
        atols.append(atol)

    atol_arr = np.array(atols)
    children = [
        _explicit_report("lower", lower_labels, np.array(lower_lhs), np.array(lower_rhs), tol=EXPLICIT_RTOL, atol=atol_arr),
        _explicit_report("upper", upper_labels, np.array(upper_lhs), np.array(upper_rhs), tol=EXPLICIT_RTOL, atol=atol_arr),
    ]

    for p in p_values:
        if p < 1.0:
            children.append(_not_applicable(f"p={p}", f"p={p} < 1", explicit=True))
            continue
        c = cpm(p, m)
        lhs, rhs, labels = [], [], []
        for k0, k1 in pairs:
            t0, t1 = float(traj.times[k0]), float(traj.times[k1])
            a, b = traj.snapshots[k0].values, traj.snapshots[k1].values
            left = b ** (p + m - 1.0)
            right = c * t1 ** ((p + m - 1.0) * e) * green.apply(a**p) / (t1 - t0) ** (p * e)
            node = int(np.argmax(_ratio(left, right)))
            lhs.append(left[node])
            rhs.append(right[node])
            labels.append(f"t0={t0:.6g},t1={t1:.6g},node={node}")
        children.append(
            _explicit_report(f"p={p}", labels, np.array(lhs), np.array(rhs), tol=EXPLICIT_RTOL, atol=atol_arr, theoretical=c)
        )
    return _aggregate("pointwise_formula", children)


def check_energy_estimate(traj: Trajectory, op: DiscreteOperator | None = None) -> InequalityReport:
    """
    For snapshot triples t0 < t < t1:

        ||u^m(t1)||_H^2 <= ||u(t)||_{1+m}^{1+m} / (2m (t1-t))
                        <= ||u(t0)||_{H*}^2 / (2m(1+m)(t1-t)(t-t0))

    The worst triple for each middle time is recorded.
    """
    del op
    m = traj.m
    times = traj.times
    K = len(times)
    if K < 3:
        return _not_applicable("energy_estimate", "needs three snapshot times", explicit=True)

    hum_sq = traj.norm_series["norm_Hum"] ** 2
    mass = traj.norm_series["norm_L1pm"] ** (1.0 + m)
    hstar_sq = traj.norm_series["norm_Hstar"] ** 2

    left_lhs, left_rhs, right_lhs, right_rhs, left_labels, right_labels = [], [], [], [], [], []
    left_atol, right_atol = [], []
    for k in range(1, K - 1):
        later = np.arange(k + 1, K)
        earlier = np.arange(k)
        mid = mass[k] / (2.0 * m * (times[later] - times[k]))
        lhs = hum_sq[later]
        i = int(np.argmax(_ratio(lhs, mid)))
        left_lhs.append(lhs[i])
        left_rhs.append(mid[i])
        left_labels.append(f"t={times[k]:.6g},t1={times[later[i]]:.6g}")
        left_atol.append(1e-9 * float(hum_sq.max(initial=0.0)))

        gap_after = (times[later] - times[k])[:, None]
        gap_before = (times[k] - times[earlier])[None, :]
        rhs = hstar_sq[earlier][None, :] / (2.0 * m * (1.0 + m) * gap_after * gap_before)
        mid_grid = np.broadcast_to(mid[:, None], rhs.shape)
        ratio = _ratio(mid_grid, rhs)
        a, b = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        right_lhs.append(mid_grid[a, b])
        right_rhs.append(rhs[a, b])
        right_labels.append(f"t0={times[earlier[b]]:.6g},t={times[k]:.6g},t1={times[later[a]]:.6g}")
        right_atol.append(1e-9 * float(mid.max(initial=0.0)))

    children = [
        _explicit_report("left", left_labels, np.array(left_lhs), np.array(left_rhs), tol=EXPLICIT_RTOL, atol=np.array(left_atol)),
        _explicit_report("right", right_labels, np.array(right_lhs), np.array(right_rhs), tol=EXPLICIT_RTOL, atol=np.array(right_atol)),
    ]
    return _aggregate("energy_estimate", children)


def _structure_gate(op: DiscreteOperator) -> str:
    """Reason the nonnegative-kernel hypothesis fails, or an empty string."""
    if not op.offdiag_nonpositive:
        return "operator has positive off-diagonal entries"
    tol = 1e-12 * float(np.abs(np.diag(op.matrix)).max())
    if bool(np.any(op.row_sums < -tol)):
        return "operator has negative row sums"
    return ""


def check_stroock_varopoulos(
    op: DiscreteOperator, q: float, trials: int = 100, seed: int = 0
) -> InequalityReport:
    """
    (4(q-1)/q^2) <v^{q/2}, A v^{q/2}> <= <v^{q-1}, A v> + 1e-12 scale on |standard normal| fields.
    """
    name = f"stroock_varopoulos_q={q}"
    if q <= 1.0:
        return _not_applicable(name, f"needs q > 1, got {q}", explicit=True)
    gate = _structure_gate(op)
    if gate:
        return _not_applicable(name, gate, explicit=True)

    const = 4.0 * (q - 1.0) / q**2
    weight = op.grid.quad_weight
    A = op.matrix
    abs_a = np.abs(A)
    rng = np.random.default_rng(seed)
    lhs, rhs, atol = [], [], []
    for _ in range(trials):
        v = np.abs(rng.standard_normal(op.size))
        half = v ** (q / 2.0)
        lhs.append(const * float(half @ (A @ half)) * weight)
        rhs.append(float(v ** (q - 1.0) @ (A @ v)) * weight)
        atol.append(PROBE_ATOL * float(v ** (q - 1.0) @ (abs_a @ v) + const * half @ (abs_a @ half)) * weight)
    labels = [f"trial={k}" for k in range(trials)]
    return _explicit_report(name, labels, np.array(lhs), np.array(rhs), tol=0.0, atol=np.array(atol), theoretical=const)


KatoFunction = tuple[str, Callable[[FloatArray], FloatArray], Callable[[FloatArray], FloatArray]]


def kato_functions(c: float = 0.5, r: float = 1.5) -> list[KatoFunction]:
    """Convex f with f(0) = 0 and their right derivatives."""
    return [
        ("identity", lambda v: v, np.ones_like),
        ("positive_part", lambda v: np.clip(v, 0.0, None), lambda v: (v >= 0.0).astype(np.float64)),
        ("abs", np.abs, lambda v: np.where(v >= 0.0, 1.0, -1.0)),
        ("positive_part_squared", lambda v: np.clip(v, 0.0, None) ** 2, lambda v: 2.0 * np.clip(v, 0.0, None)),
        (
            f"shifted_power_r={r}",
            lambda v: (np.clip(v, 0.0, None) + c) ** r - c**r,
            lambda v: np.where(v >= 0.0, r * (np.clip(v, 0.0, None) + c) ** (r - 1.0), 0.0),
        ),
    ]


def _num_ineq_report(trials: int, rng: np.random.Generator) -> InequalityReport:
    """(a^alpha - b^alpha)(a^beta - b^beta) >= alpha beta (a-b)^2, alpha + beta = 2."""
    a = np.abs(rng.standard_normal(trials))
    b = np.abs(rng.standard_normal(trials))
    alpha = rng.uniform(0.0, 2.0, trials)
    beta = 2.0 - alpha
    left = alpha * beta * (a - b) ** 2
    right = (a**alpha - b**alpha) * (a**beta - b**beta)
    atol = PROBE_ATOL * (np.abs(right) + left)
    labels = [f"a={x:.6g},b={y:.6g},alpha={z:.6g}" for x, y, z in zip(a, b, alpha, strict=True)]
    return _explicit_report("num_ineq1", labels, left, right, tol=0.0, atol=atol)


def check_kato(op: DiscreteOperator, trials: int = 100, seed: int = 0) -> InequalityReport:
    """
    A f(v) <= f'(v) A v entrywise for convex f with f(0) = 0 on signed standard normal fields.

    The num-ineq1 sub-check runs on the same generator and is gated by nothing.
    """
    rng = np.random.default_rng(seed)
    gate = _structure_gate(op)
    children = []
    if gate:
        children.append(_not_applicable("kato", gate, explicit=True))
    else:
        A = op.matrix
        abs_a = np.abs(A)
        fields = [rng.standard_normal(op.size) for _ in range(trials)]
        for label, f, df in kato_functions():
            lhs, rhs, atol, labels = [], [], [], []
            for k, v in enumerate(fields):
                left = A @ f(v)
                right = df(v) * (A @ v)
                scale = abs_a @ np.abs(f(v)) + np.abs(df(v)) * (abs_a @ np.abs(v))
                node = int(np.argmax(left - right - PROBE_ATOL * scale))
                lhs.append(left[node])
                rhs.append(right[node])
                atol.append(PROBE_ATOL * scale[node])
                labels.append(f"trial={k},node={node}")
            rhs_arr = np.array(rhs)
            lhs_arr = np.array(lhs)
            atol_arr = np.array(atol)
            ok = lhs_arr <= rhs_arr + atol_arr
            records = _records(labels, lhs_arr, rhs_arr)
            children.append(
                InequalityReport(
                    name=f"kato_{label}",
                    records=records,
                    verdict=Verdict.HOLDS if bool(np.all(ok)) else Verdict.VIOLATED,
                    empirical_constant=float(np.max(lhs_arr - rhs_arr)),
                    explicit=True,
                    details={"max_excess": float(np.max(lhs_arr - rhs_arr - atol_arr))},
                )
            )
    children.append(_num_ineq_report(trials, rng))
    return _aggregate("kato", children, trials=trials, seed=seed)


def check_strong_derivative(traj: Trajectory, phi1: Field | None = None) -> InequalityReport:
    """||(u(t+h) - u(t))/h||_{L^1_Phi1} <= 2 ||u0||_{L^1_Phi1} / ((1-m) t) on consecutive snapshots, t > 0."""
    name = "strong_derivative"
    phi1 = phi1 or traj.operator.spectral.phi1
    m = traj.m
    bound = 2.0 * lp_phi_norm(traj.u0, 1.0, phi1) / (1.0 - m)
    times = traj.times
    pairs = [k for k in range(len(times) - 1) if times[k] > 0.0]
    if not pairs:
        return _not_applicable(name, "needs consecutive snapshots with t > 0", explicit=True)

    grid = traj.grid
    lhs = np.array(
        [
            lp_phi_norm(
                Field((traj.snapshots[k + 1].values - traj.snapshots[k].values) / (times[k + 1] - times[k]), grid),
                1.0,
                phi1,
            )
            for k in pairs
        ]
    )
    rhs = np.array([bound / times[k] for k in pairs])
    labels = [f"t={times[k]:.6g},h={times[k + 1] - times[k]:.6g}" for k in pairs]
    atol = 1e-9 * (1.0 + rhs)
    return _explicit_report(name, labels, lhs, rhs, tol=EXPLICIT_RTOL, atol=atol)


def green_norm_branch(q: float, N: int, s: float, gamma: float) -> GreenBranch:
    """Branch of B_q: linear below q* = N/(N-2s+gamma), logarithmic at q*, power above."""
    den = N - 2.0 * s + gamma
    q_star = N / den if den > 0.0 else math.inf
    if math.isclose(q, q_star, rel_tol=1e-12):
        return GreenBranch.LOGARITHMIC
    return GreenBranch.LINEAR if q < q_star else GreenBranch.POWER


def green_norm_profile(phi: FloatArray, q: float, N: int, s: float, gamma: float) -> FloatArray:
    branch = green_norm_branch(q, N, s, gamma)
    if branch is GreenBranch.LINEAR:
        return phi
    if branch is GreenBranch.LOGARITHMIC:
        with np.errstate(divide="ignore"):
            logs = np.abs(np.log(np.where(phi > 0.0, phi, 1.0)))
        return phi * (1.0 + logs ** (1.0 / q))
    return phi ** ((N - q * (N - 2.0 * s)) / (q * gamma))


def check_green_norm_bounds(
    green: GreenMatrix, spectral: SpectralData, q: float, gamma: float | None = None
) -> InequalityReport:
    """
    c3 Phi_1(x0) <= ||G(x0, .)||_q <= c B_q(Phi_1(x0)) over all nodes.

    Needs 0 < q < N/(N-2s); for N <= 2s the Green function is bounded and any
    q > 0 is accepted with the outside-hypotheses note.
    """
    name = f"green_norm_bounds_q={q}"
    N = green.grid.dim
    s = green.spec.s
    gamma = green.spec.gamma if gamma is None else gamma
    limit = N / (N - 2.0 * s) if N > 2.0 * s else math.inf
    if not 0.0 < q < limit:
        return _not_applicable(name, f"needs 0 < q < N/(N-2s)={limit:.6g}")

    phi = spectral.phi1.values
    weight = green.grid.quad_weight
    norms = (np.sum(np.abs(green.g) ** q, axis=1) * weight) ** (1.0 / q)
    branch = green_norm_branch(q, N, s, gamma)
    profile = green_norm_profile(phi, q, N, s, gamma)
    nodes = np.flatnonzero(profile > 0.0)
    labels = [f"node={k}" for k in nodes]

    upper = _free_report("upper", _records(labels, norms[nodes], profile[nodes]), note=_outside_note(N, s))
    lower_ratio = norms[nodes] / phi[nodes]
    lower = InequalityReport(
        name="lower",
        records=_records(labels, phi[nodes], norms[nodes]),
        verdict=Verdict.HOLDS_WITH_CONSTANT if float(lower_ratio.min()) > 0.0 else Verdict.VIOLATED,
        empirical_constant=float(lower_ratio.min()),
    )
    report = _aggregate(name, [upper, lower], branch=str(branch), q=q, gamma=gamma)
    report.empirical_constant = upper.empirical_constant
    report.hypothesis_note = _outside_note(N, s)
    return report


@dataclass(frozen=True)
class CheckContext:
    """Inputs available to registry adapters."""

    trajectory: Trajectory | None = None
    operator: DiscreteOperator | None = None
    partner: Trajectory | None = None
    refined: Trajectory | None = None
    sobolev_S: float | None = None
    seed: int = 0

    def require_operator(self) -> DiscreteOperator:
        if self.operator is not None:
            return self.operator
        if self.trajectory is not None:
            return self.trajectory.operator
        raise ValueError("Check needs an operator or a trajectory")

    def require_trajectory(self) -> Trajectory:
        if self.trajectory is None:
            raise ValueError("Check needs a trajectory")
        return self.trajectory


CheckFunc = Callable[[CheckContext, dict[str, Any]], InequalityReport]


@dataclass(frozen=True)
class CheckSpec:
    func: CheckFunc
    explicit: bool
    description: str


def _run_smoothing(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    return check_smoothing(
        ctx.require_trajectory(),
        float(params.get("p", 1.0)),
        params.get("kind", SmoothingKind.LP),
        refined=ctx.refined,
        sobolev_S=ctx.sobolev_S,
    )


def _run_lp_lq(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    return check_lp_lq_smoothing(
        ctx.require_trajectory(), float(params.get("p", 2.0)), float(params.get("q", 4.0)), sobolev_S=ctx.sobolev_S
    )


def _run_boundary(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    gamma = params.get("gamma")
    return check_boundary_estimate(
        ctx.require_trajectory(),
        float(params.get("p", 1.0)),
        None if gamma is None else float(gamma),
        weighted=bool(params.get("weighted", False)),
    )


def _run_extinction(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    return check_extinction_bounds(
        ctx.require_trajectory(), float(params.get("p", 2.0)), float(params.get("alpha", 1.0))
    )


def _run_contraction(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    if ctx.partner is None:
        return _not_applicable("contraction", "no partner trajectory supplied", explicit=True)
    return check_contraction(ctx.require_trajectory(), ctx.partner)


def _run_pointwise(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    p_values = params.get("p_values", [])
    return check_pointwise_formula(ctx.require_trajectory(), p_values=[float(p) for p in p_values])


def _run_sv(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    q_values = params.get("q_values", [params.get("q", 2.0)])
    op = ctx.require_operator()
    trials = int(params.get("trials", 100))
    seed = int(params.get("seed", ctx.seed))
    children = [check_stroock_varopoulos(op, float(q), trials, seed) for q in q_values]
    if len(children) == 1:
        return children[0]
    return _aggregate("stroock_varopoulos", children)


def _run_kato(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    return check_kato(
        ctx.require_operator(), int(params.get("trials", 100)), int(params.get("seed", ctx.seed))
    )


def _run_green(ctx: CheckContext, params: dict[str, Any]) -> InequalityReport:
    op = ctx.require_operator()
    gamma = params.get("gamma")
    return check_green_norm_bounds(
        op.green, op.spectral, float(params.get("q", 1.0)), None if gamma is None else float(gamma)
    )


CHECKS: dict[str, CheckSpec] = {
    "smoothing": CheckSpec(_run_smoothing, False, "L^p / L^p_Phi1 / H* to L^inf smoothing"),
    "lp_lq_smoothing": CheckSpec(_run_lp_lq, False, "L^p to L^q smoothing"),
    "boundary_estimate": CheckSpec(_run_boundary, False, "upper boundary estimate"),
    "extinction_bounds": CheckSpec(_run_extinction, True, "extinction-rate bounds"),
    "time_monotonicity": CheckSpec(
        lambda ctx, _: check_time_monotonicity(ctx.require_trajectory()), True, "t^{-1/(1-m)} u non-increasing"
    ),
    "contraction": CheckSpec(_run_contraction, True, "T-contraction and comparison"),
    "rayleigh_monotonicity": CheckSpec(
        lambda ctx, _: check_rayleigh_monotonicity(ctx.require_trajectory()), True, "Q and Q* non-increasing"
    ),
    "pointwise_formula": CheckSpec(_run_pointwise, True, "fundamental pointwise estimates"),
    "energy_estimate": CheckSpec(
        lambda ctx, _: check_energy_estimate(ctx.require_trajectory()), True, "energy estimate"
    ),
    "stroock_varopoulos": CheckSpec(_run_sv, True, "Stroock-Varopoulos inequality"),
    "kato": CheckSpec(_run_kato, True, "Kato inequality"),
    "strong_derivative": CheckSpec(
        lambda ctx, _: check_strong_derivative(ctx.require_trajectory()), True, "L^1_Phi1 time-derivative bound"
    ),
    "green_norm_bounds": CheckSpec(_run_green, False, "L^q norms of the Green function"),
}


def run_check(name: str, context: CheckContext, params: dict[str, Any] | None = None) -> InequalityReport:
    """
    Run a registered check by name.

    Raises:
        UnknownCheck: If name is not registered
    """
    try:
        spec = CHECKS[name]
    except KeyError as e:
        raise UnknownCheck(f"Unknown check: {name}. Available: {', '.join(sorted(CHECKS))}") from e
    logger.debug("Running check %s with %s", name, params)
    return spec.func(context, dict(params or {}))
