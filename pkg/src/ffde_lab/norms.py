"""
Norms, dual norms and nonlinear Rayleigh quotients on the grid.

All integrals use the single quadrature weight h^dim of the grid. The H* norm
goes through the Green matrix, the H norm through the operator matrix.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import minimize

from ffde_lab.errors import BrokenQuadraticForm, FieldError
from ffde_lab.mesh import FloatArray, Grid

if TYPE_CHECKING:
    from ffde_lab.operators import DiscreteOperator, GreenMatrix

logger = logging.getLogger(__name__)

QUADRATIC_FORM_FLOOR = 1e-12
DEFAULT_STARTS = 50
DEFAULT_GTOL = 1e-8
DEFAULT_MAXITER = 100_000


@dataclass(frozen=True, eq=False)
class Field:
    """A real value per grid node."""

    values: FloatArray
    grid: Grid

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.grid.size,):
            raise FieldError(
                f"Field has shape {values.shape}, expected ({self.grid.size},)"
            )
        if not np.all(np.isfinite(values)):
            raise FieldError("Field contains NaN or Inf entries")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid) -> Field:
        return cls(np.zeros(grid.size), grid)

    def with_values(self, values: FloatArray) -> Field:
        """New field on the same grid."""
        return Field(values, self.grid)

    def is_zero(self) -> bool:
        return not bool(np.any(self.values))

    def signed_power(self, exponent: float) -> FloatArray:
        """|f|^(exponent-1) f entrywise."""
        return np.sign(self.values) * np.abs(self.values) ** exponent


def _check_p(p: float) -> None:
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")


def lp_norm(f: Field, p: float) -> float:
    """
    Discrete L^p norm (sum |f_i|^p h^dim)^(1/p); p = inf gives max |f_i|.

    Raises:
        ValueError: If p < 1
    """
    _check_p(p)
    values = np.abs(f.values)
    if math.isinf(p):
        return float(values.max(initial=0.0))
    return float((np.sum(values**p) * f.grid.quad_weight) ** (1.0 / p))


def lp_phi_norm(f: Field, p: float, phi1: Field) -> float:
    """Weighted norm (sum |f_i|^p Phi_1,i h^dim)^(1/p)."""
    _check_p(p)
    if np.any(phi1.values < 0.0):
        raise FieldError("Weight Phi_1 must be nonnegative")
    total = np.sum(np.abs(f.values) ** p * phi1.values) * f.grid.quad_weight
    return float(total ** (1.0 / p))


def _checked_sqrt(value: float, scale: float, label: str) -> float:
    if value < -QUADRATIC_FORM_FLOOR * max(scale, 1.0):
        raise BrokenQuadraticForm(f"{label} quadratic form is negative: {value:.3e}")
    return math.sqrt(max(value, 0.0))


def hstar_norm(f: Field, green: GreenMatrix) -> float:
    """
    Dual norm sqrt(sum_i f_i (G f)_i h^dim), with (G f)_i = sum_j g_ij f_j h^dim.

    Raises:
        BrokenQuadraticForm: If the form is negative beyond roundoff
    """
    w = f.grid.quad_weight
    gf = green.apply(f.values)
    value = float(f.values @ gf) * w
    scale = float(np.abs(f.values) @ np.abs(gf)) * w
    return _checked_sqrt(value, scale, "H*")


def h_norm(f: Field, op: DiscreteOperator) -> float:
    """Energy norm sqrt(sum_i f_i (A f)_i h^dim)."""
    w = f.grid.quad_weight
    af = op.matrix @ f.values
    value = float(f.values @ af) * w
    scale = float(np.abs(f.values) @ np.abs(af)) * w
    return _checked_sqrt(value, scale, "H")


def _reject_zero(f: Field) -> None:
    if f.is_zero():
        raise FieldError("Rayleigh quotients are undefined for the zero field")


def rayleigh_q(f: Field, op: DiscreteOperator, m: float) -> float:
    """Q[f] = <f^m, A f^m> / ||f||_{1+m}^{2m}; invariant under f -> c f."""
    _reject_zero(f)
    fm = f.with_values(f.signed_power(m))
    return h_norm(fm, op) ** 2 / lp_norm(f, 1.0 + m) ** (2.0 * m)


def rayleigh_qstar(f: Field, green: GreenMatrix, m: float) -> float:
    """Q*[f] = ||f||_{1+m}^{1+m} / ||f||_{H*}^{1+m}; invariant under f -> c f."""
    _reject_zero(f)
    return (lp_norm(f, 1.0 + m) / hstar_norm(f, green)) ** (1.0 + m)


@dataclass(frozen=True)
class FunctionalConstants:
    """
    Lower-bound estimates of the discrete Sobolev and HLS constants.

    sobolev_S and hls_H are None when N <= 2s, where the embeddings with
    2* = 2N/(N-2s) do not exist.
    """

    lambda1: float
    sobolev_S: float | None
    hls_H: float | None
    two_star: float | None
    applicable: bool
    sobolev_converged: bool = True
    hls_converged: bool = True

    @property
    def converged(self) -> bool:
        return self.sobolev_converged and self.hls_converged


def _maximize_log_ratio(
    objective: Callable[[FloatArray], tuple[float, FloatArray]],
    starts: list[FloatArray],
    gtol: float,
    maxiter: int,
) -> tuple[float, bool]:
    """
    Maximize a 0-homogeneous log-ratio from several starts with L-BFGS.

    The objective returns (value, gradient) of the log-ratio to maximize.
    Returns the best value and whether L-BFGS reported convergence at it.
    """

    def negated(x: FloatArray) -> tuple[float, FloatArray]:
        value, grad = objective(x)
        return -value, -grad

    best = -math.inf
    best_converged = False
    for x0 in starts:
        start_value, _ = objective(x0)
        result = minimize(
            negated,
            x0,
            jac=True,
            method="L-BFGS-B",
            options={"gtol": gtol, "maxiter": maxiter},
        )
        value = -float(result.fun)
        if not np.isfinite(value):
            value = -math.inf
        # a start value the optimizer did not reach again is never converged
        candidate = max(start_value, value)
        if candidate > best:
            best = candidate
            best_converged = bool(result.success) and value >= start_value
    return best, best_converged


def estimate_functional_constants(
    op: DiscreteOperator,
    green: GreenMatrix,
    N_eff: int,
    s: float,
    *,
    starts: int = DEFAULT_STARTS,
    seed: int = 0,
    gtol: float = DEFAULT_GTOL,
    maxiter: int = DEFAULT_MAXITER,
) -> FunctionalConstants:
    """
    Estimate S_A and H_A by multistart maximization of 0-homogeneous ratios.

    S_A maximizes ||f||_{2*}/||f||_H and H_A maximizes ||f||_{H*}/||f||_{(2*)'}.
    Starts are Phi_1 plus `starts` fields of |standard normal| draws. The
    returned values are lower bounds on the discrete constants.

    Args:
        op: Discrete operator
        green: Its Green matrix
        N_eff: Dimension entering 2* = 2N/(N-2s)
        s: Fractional order
        starts: Number of random starts besides Phi_1
        seed: Seed of the random starts
        gtol: Gradient tolerance of L-BFGS
        maxiter: Iteration cap per start

    Returns:
        FunctionalConstants, flagged not applicable when N_eff <= 2s
    """
    spectral = op.spectral
    lambda1 = float(spectral.eigenvalues[0])
    if N_eff <= 2.0 * s:
        return FunctionalConstants(
            lambda1=lambda1, sobolev_S=None, hls_H=None, two_star=None, applicable=False
        )

    w = op.grid.quad_weight
    A = op.matrix
    g = green.g
    r = 2.0 * N_eff / (N_eff - 2.0 * s)
    r_dual = 2.0 * N_eff / (N_eff + 2.0 * s)

    def sobolev_log_ratio(f: FloatArray) -> tuple[float, FloatArray]:
        af = A @ f
        energy = float(f @ af) * w
        abs_f = np.abs(f)
        s_r = float(np.sum(abs_f**r)) * w
        if energy <= 0.0 or s_r <= 0.0:
            return -math.inf, np.zeros_like(f)
        value = math.log(s_r) / r - 0.5 * math.log(energy)
        grad = (abs_f ** (r - 2.0) * f) * w / s_r - af * w / energy
        return value, grad

    def hls_log_ratio(f: FloatArray) -> tuple[float, FloatArray]:
        gf = g @ f
        dual = float(f @ gf) * w * w
        abs_f = np.abs(f)
        s_r = float(np.sum(abs_f**r_dual)) * w
        if dual <= 0.0 or s_r <= 0.0:
            return -math.inf, np.zeros_like(f)
        value = 0.5 * math.log(dual) - math.log(s_r) / r_dual
        grad = gf * w * w / dual - np.sign(f) * abs_f ** (r_dual - 1.0) * w / s_r
        return value, grad

    rng = np.random.default_rng(seed)
    start_fields = [spectral.phi1.values.copy()]
    start_fields.extend(np.abs(rng.standard_normal(op.grid.size)) for _ in range(starts))

    log_s, s_converged = _maximize_log_ratio(sobolev_log_ratio, start_fields, gtol, maxiter)
    log_h, h_converged = _maximize_log_ratio(hls_log_ratio, start_fields, gtol, maxiter)
    if not (s_converged and h_converged):
        logger.warning("Functional constant maximization did not converge for every start")

    return FunctionalConstants(
        lambda1=lambda1,
        sobolev_S=math.exp(log_s),
        hls_H=math.exp(log_h),
        two_star=r,
        applicable=True,
        sobolev_converged=s_converged,
        hls_converged=h_converged,
    )
