"""
Explicit exponents and constants of the smoothing and extinction theory.

Everything here is a pure function of (N, s, m, gamma, p, q). Exponents that
hit a pole return a PoleValue instead of raising, because parameter sweeps
cross the critical lines on purpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
from typing import Any

import numpy as np
from scipy.optimize import minimize_scalar

GOLDEN_TOL = 1e-10


class PoleValue(float):
    """
    NaN-valued float tagged with the reason it is undefined.

    Behaves as NaN in arithmetic, so downstream comparisons are False, while
    callers can still tell a pole from an ordinary NaN with is_pole().
    """

    label: str

    def __new__(cls, label: str = "pole") -> PoleValue:
        obj = super().__new__(cls, math.nan)
        obj.label = label
        return obj

    def __repr__(self) -> str:
        return f"PoleValue({self.label!r})"


def is_pole(value: float) -> bool:
    """True if value is a tagged pole."""
    return isinstance(value, PoleValue)


class RegimeLabel(StrEnum):
    """Fast diffusion regime relative to m_c."""

    GOOD_FAST_DIFFUSION = "good_fast_diffusion"
    VERY_FAST_DIFFUSION = "very_fast_diffusion"


def _reciprocal(den: float, label: str) -> float:
    if den == 0.0:
        return PoleValue(label)
    return 1.0 / den


@dataclass(frozen=True)
class ExponentTable:
    """Critical exponents for one (N, s, m, gamma) combination."""

    N: int
    s: float
    m: float
    gamma: float
    m_c: float
    p_c: float
    m_s: float
    m_c_gamma: float
    p_c_gamma: float
    two_star: float
    dual_two_star: float
    alpha_c: float
    regime_label: RegimeLabel
    outside_hypotheses: bool

    def theta(self, p: float) -> float:
        """theta_p = 1/(2sp - N(1-m)); positive exactly when p > p_c."""
        den = 2.0 * self.s * p - self.N * (1.0 - self.m)
        return _reciprocal(den, f"theta_p pole at p={p}")

    def theta_gamma(self, p: float) -> float:
        """theta_{p,gamma} = 1/((2s - gamma)p - N(1-m))."""
        den = (2.0 * self.s - self.gamma) * p - self.N * (1.0 - self.m)
        return _reciprocal(den, f"theta_p_gamma pole at p={p}")

    @property
    def theta_1pm(self) -> float:
        """theta_{1+m} = 1/(2s(1+m) - N(1-m))."""
        den = 2.0 * self.s * (1.0 + self.m) - self.N * (1.0 - self.m)
        return _reciprocal(den, "theta_1pm pole")

    def to_dict(self) -> dict[str, Any]:
        """Plain mapping for JSON output; poles become None."""
        data: dict[str, Any] = {
            "N": self.N,
            "s": self.s,
            "m": self.m,
            "gamma": self.gamma,
        }
        for key in (
            "m_c",
            "p_c",
            "m_s",
            "m_c_gamma",
            "p_c_gamma",
            "two_star",
            "dual_two_star",
            "alpha_c",
        ):
            value = getattr(self, key)
            data[key] = None if is_pole(value) else float(value)
        theta_1pm = self.theta_1pm
        data["theta_1pm"] = None if is_pole(theta_1pm) else theta_1pm
        data["regime_label"] = str(self.regime_label)
        data["outside_hypotheses"] = self.outside_hypotheses
        return data


def critical_exponents(N: int, s: float, m: float, gamma: float) -> ExponentTable:
    """
    Compute the critical exponents m_c, p_c, m_s, m_{c,gamma}, p_{c,gamma}.

    Args:
        N: Spatial dimension (>= 1)
        s: Fractional order in (0, 1]
        m: Nonlinearity exponent in (0, 1)
        gamma: Boundary exponent in [0, 1]

    Returns:
        ExponentTable; N <= 2s is flagged outside_hypotheses but still computed

    Raises:
        ValueError: If any argument is out of range

    Example:
        >>> table = critical_exponents(2, 0.5, 0.5, 0.5)
        >>> table.m_c, table.p_c, table.p_c_gamma
        (0.5, 1.0, 2.0)
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if not 0.0 < s <= 1.0:
        raise ValueError(f"s must lie in (0, 1], got {s}")
    if not 0.0 < m < 1.0:
        raise ValueError(f"m must lie in (0, 1), got {m}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")

    two_s = 2.0 * s
    m_c = (N - two_s) / N
    if two_s > gamma:
        p_c_gamma: float = N * (1.0 - m) / (two_s - gamma)
    else:
        p_c_gamma = PoleValue("p_c_gamma undefined for 2s <= gamma")

    if N > two_s:
        two_star: float = 2.0 * N / (N - two_s)
    else:
        two_star = PoleValue("two_star undefined for N <= 2s")

    return ExponentTable(
        N=N,
        s=s,
        m=m,
        gamma=gamma,
        m_c=m_c,
        p_c=N * (1.0 - m) / two_s,
        m_s=(N - two_s) / (N + two_s),
        m_c_gamma=(N + gamma - two_s) / N,
        p_c_gamma=p_c_gamma,
        two_star=two_star,
        dual_two_star=2.0 * N / (N + two_s),
        alpha_c=alpha_critical(N, s, m),
        regime_label=(
            RegimeLabel.GOOD_FAST_DIFFUSION if m > m_c else RegimeLabel.VERY_FAST_DIFFUSION
        ),
        outside_hypotheses=N <= two_s,
    )


def alpha_critical(N: int, s: float, m: float) -> float:
    """alpha_c = min{1, (N+2s)(1-m)/(4s)}."""
    return min(1.0, (N + 2.0 * s) * (1.0 - m) / (4.0 * s))


def dual_two_star(N: int, s: float) -> float:
    """(2*)' = 2N/(N+2s)."""
    return 2.0 * N / (N + 2.0 * s)


def gns_theta(p: float, q: float, N: int, s: float, m: float) -> float:
    """
    Interpolation parameter of the Gagliardo-Nirenberg-Sobolev step.

    Solves (q+m-1)/(q*theta) - 1 = (2sp - N(1-m)) / (N(q-p)) for theta.
    """
    if q <= p:
        raise ValueError(f"gns_theta needs q > p, got p={p}, q={q}")
    gap = N * (q - p)
    return gap * (q + m - 1.0) / (q * (gap + 2.0 * s * p - N * (1.0 - m)))


def _check_above_critical(p: float, N: int, s: float, m: float) -> float:
    theta_p = critical_exponents(N, s, m, 0.0).theta(p)
    if is_pole(theta_p) or theta_p <= 0.0:
        p_c = N * (1.0 - m) / (2.0 * s)
        raise ValueError(f"p={p} must exceed p_c={p_c}")
    return theta_p


def kappa_pq(p: float, q: float, N: int, s: float, m: float, S_A: float) -> float:
    """
    Constant of the L^p - L^q smoothing effect.

    kappa_{p,q} = (N S_A^2 (q-p)(q+m-1)^2 theta_p / (4 q (q-1) m))^(N(q-p) theta_p / q)

    Raises:
        ValueError: If p <= p_c, q < p, q <= 1 or S_A <= 0
    """
    theta_p = _check_above_critical(p, N, s, m)
    if q < p:
        raise ValueError(f"kappa_pq needs q >= p, got p={p}, q={q}")
    if q <= 1.0:
        raise ValueError(f"kappa_pq needs q > 1, got q={q}")
    if S_A <= 0.0:
        raise ValueError(f"S_A must be positive, got {S_A}")
    if q == p:
        return 1.0

    base = N * S_A**2 * (q - p) * (q + m - 1.0) ** 2 * theta_p / (4.0 * q * (q - 1.0) * m)
    exponent = N * (q - p) * theta_p / q
    return float(base**exponent)


def moser_kappa(p: float, N: int, s: float, m: float, S_A: float) -> float:
    """
    Limit constant of the Moser iteration for the L^p - L^infinity smoothing.

    With c_bar = (N S_A^2 / 2m) p^2 / ((p-1)(2sp - N(1-m))), the iterated
    product converges to 2^(N/(sp)) * c_bar^(N theta_p): the doubling factor
    2^(N/(2 s^2 p)) is raised to 2s because p_k theta_k -> 1/(2s).

    Raises:
        ValueError: If p <= max(1, p_c) or S_A <= 0
    """
    if p <= 1.0:
        raise ValueError(f"moser_kappa needs p > 1, got p={p}")
    theta_p = _check_above_critical(p, N, s, m)
    if S_A <= 0.0:
        raise ValueError(f"S_A must be positive, got {S_A}")

    c_bar = (N * S_A**2 / (2.0 * m)) * p**2 / ((p - 1.0) * (2.0 * s * p - N * (1.0 - m)))
    return float(2.0 ** (N / (s * p)) * c_bar ** (N * theta_p))


def cpm(p: float, m: float) -> float:
    """c_{p,m} = (p+m-1)/(m(1-m)); needs p + m > 1."""
    if not 0.0 < m < 1.0:
        raise ValueError(f"m must lie in (0, 1), got {m}")
    if p + m <= 1.0:
        raise ValueError(f"cpm needs p + m > 1, got p={p}, m={m}")
    return (p + m - 1.0) / (m * (1.0 - m))


def cmq(m: float, q: float) -> float:
    """c_{m,q} = 4(q-1)m/(q+m-1)^2, the Stroock-Varopoulos constant for u^m."""
    if not 0.0 < m < 1.0:
        raise ValueError(f"m must lie in (0, 1), got {m}")
    if q <= 1.0:
        raise ValueError(f"cmq needs q > 1, got q={q}")
    return 4.0 * (q - 1.0) * m / (q + m - 1.0) ** 2


def _degiorgi_lower(alpha: float, theta: float) -> float:
    return float(theta ** (1.0 / alpha))


def degiorgi_constant(alpha: float, lam: float, theta: float) -> float:
    """
    De Giorgi iteration constant c = 1/((1-lam)^alpha (1 - theta/lam^alpha)).

    Raises:
        ValueError: Unless alpha > 0, theta in [0, 1) and lam in (theta^(1/alpha), 1)
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    lower = _degiorgi_lower(alpha, theta)
    if not lower < lam < 1.0:
        raise ValueError(f"lambda must lie in ({lower}, 1), got {lam}")
    return 1.0 / ((1.0 - lam) ** alpha * (1.0 - theta / lam**alpha))


def optimal_degiorgi_lambda(alpha: float, theta: float) -> tuple[float, float]:
    """
    Minimize degiorgi_constant over lambda by golden-section search.

    Returns:
        (lambda*, c*). For theta = 0 the infimum 1 is approached as lambda -> 0
        and (0.0, 1.0) is returned.
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    if theta == 0.0:
        return 0.0, 1.0

    lower = _degiorgi_lower(alpha, theta)
    width = 1.0 - lower
    lo = lower + 1e-9 * width
    hi = 1.0 - 1e-9 * width
    grid = np.linspace(lo, hi, 65)[1:-1]
    values = [degiorgi_constant(alpha, float(lam), theta) for lam in grid]
    mid = float(grid[int(np.argmin(values))])

    result = minimize_scalar(
        lambda lam: degiorgi_constant(alpha, float(lam), theta),
        bracket=(lo, mid, hi),
        method="golden",
        tol=GOLDEN_TOL,
    )
    lam_star = float(result.x)
    return lam_star, degiorgi_constant(alpha, lam_star, theta)
