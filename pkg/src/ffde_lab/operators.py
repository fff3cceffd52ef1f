"""
Discrete Dirichlet-type diffusion operators.

Builds the local Laplacian and the spectral, restricted and censored
fractional Laplacians on the unit grid as dense symmetric positive-definite
matrices, and exposes their spectral data, Green matrix and empirical kernel
bounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
from functools import cached_property
from typing import Any

import numpy as np
from scipy import linalg
from scipy.integrate import quad
from scipy.special import beta, gamma

from ffde_lab.errors import NotPositiveDefinite, OperatorConstructionError, TooFewNodes
from ffde_lab.mesh import BoundaryDistance, FloatArray, Grid, boundary_distance
from ffde_lab.norms import Field

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
OFFDIAG_TOL = 1e-12
MAX_2D_NODES_PER_AXIS = 64
DEFAULT_EXCLUDED_BAND = 1
FIT_WINDOW_MAX = 0.1
FIT_MIN_NODES = 4
FIT_MIN_N_PER_AXIS = 32
FIT_2D_TRANSVERSE_MIN = 0.25
KERNEL_CHUNK_ROWS = 512


class OperatorKind(StrEnum):
    """Supported diffusion operators."""

    LOCAL = "local"
    SFL = "sfl"
    RFL = "rfl"
    CFL = "cfl"


@dataclass(frozen=True)
class OperatorSpec:
    """
    Operator family and fractional order.

    The boundary exponent gamma is fixed by the family: 1 for the local and
    spectral operators, s for the restricted one and 2s - 1 for the censored one.
    """

    kind: OperatorKind
    s: float

    def __post_init__(self) -> None:
        try:
            kind = OperatorKind(self.kind)
        except ValueError as e:
            raise OperatorConstructionError(f"Unknown operator kind: {self.kind}") from e
        object.__setattr__(self, "kind", kind)

        s = float(self.s)
        if kind is OperatorKind.LOCAL and s != 1.0:
            raise OperatorConstructionError(f"The local Laplacian has s = 1, got {s}")
        if kind is OperatorKind.SFL and not 0.0 < s <= 1.0:
            raise OperatorConstructionError(f"SFL needs s in (0, 1], got {s}")
        if kind is OperatorKind.RFL and not 0.0 < s < 1.0:
            raise OperatorConstructionError(f"RFL needs s in (0, 1), got {s}")
        if kind is OperatorKind.CFL and not 0.5 < s < 1.0:
            raise OperatorConstructionError(
                f"CFL needs s in (1/2, 1) for the Dirichlet condition to hold, got {s}"
            )
        object.__setattr__(self, "s", s)

    @property
    def gamma(self) -> float:
        if self.kind is OperatorKind.RFL:
            return self.s
        if self.kind is OperatorKind.CFL:
            return 2.0 * self.s - 1.0
        return 1.0

    def to_dict(self) -> dict[str, Any]:
        return {"kind": str(self.kind), "s": self.s, "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class SpectralData:
    """
    Full eigen-decomposition of an operator.

    Eigenvectors are orthonormal in the discrete L^2 product sum f g h^dim;
    phi1 is the nonnegative ground state with unit L^2 norm.
    """

    eigenvalues: FloatArray
    eigenvectors: FloatArray
    phi1: Field

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])


@dataclass(frozen=True, eq=False)
class GreenMatrix:
    """Kernel of A^{-1}: (A^{-1} f)(x_i) = sum_j g_ij f(x_j) h^dim."""

    g: FloatArray
    grid: Grid
    spec: OperatorSpec

    def apply(self, values: FloatArray) -> FloatArray:
        return (self.g @ values) * self.grid.quad_weight

    @property
    def min_relative_entry(self) -> float:
        """min g / max g; discrete Green positivity means this is >= -1e-10."""
        return float(self.g.min() / np.abs(self.g).max())


@dataclass(eq=False)
class DiscreteOperator:
    """Dense symmetric positive-definite matrix representing A on a grid."""

    spec: OperatorSpec
    grid: Grid
    matrix: FloatArray
    offdiag_nonpositive: bool
    scale: float = 1.0

    @cached_property
    def spectral(self) -> SpectralData:
        return spectrum(self)

    @cached_property
    def green(self) -> GreenMatrix:
        return green_matrix(self)

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def row_sums(self) -> FloatArray:
        return self.matrix.sum(axis=1)

    def apply(self, values: FloatArray) -> FloatArray:
        return self.matrix @ values

    def rescaled(self, factor: float) -> DiscreteOperator:
        """Return factor * A; used to pin lambda_1 or the scalar operator to 1."""
        if factor <= 0.0:
            raise OperatorConstructionError(f"Rescaling factor must be positive, got {factor}")
        return DiscreteOperator(
            spec=self.spec,
            grid=self.grid,
            matrix=self.matrix * factor,
            offdiag_nonpositive=self.offdiag_nonpositive,
            scale=self.scale * factor,
        )

    def normalized(self) -> DiscreteOperator:
        """Rescale so that lambda_1 = 1."""
        return self.rescaled(1.0 / self.spectral.lambda1)


@dataclass(frozen=True)
class KernelBoundReport:
    """Empirical constants of the two-sided Green function bounds."""

    c1_hat: float
    c1_unweighted_hat: float
    c0_hat: float
    k4_ratio_range: tuple[float, float]
    excluded_band: int
    upper_template_applicable: bool
    n_pairs: int


def fractional_constant(N: int, s: float) -> float:
    """Normalization c_{N,s} = s 4^s Gamma((N+2s)/2) / (pi^(N/2) Gamma(1-s))."""
    return float(s * 4.0**s * gamma((N + 2.0 * s) / 2.0) / (math.pi ** (N / 2.0) * gamma(1.0 - s)))


def _offdiag_nonpositive(matrix: FloatArray) -> bool:
    off = matrix - np.diag(np.diag(matrix))
    return bool(off.max(initial=0.0) <= OFFDIAG_TOL * np.abs(np.diag(matrix)).max())


def _finalize(spec: OperatorSpec, grid: Grid, matrix: FloatArray) -> DiscreteOperator:
    asym = np.abs(matrix - matrix.T).max(initial=0.0)
    if asym > SYMMETRY_TOL * np.abs(matrix).max():
        raise OperatorConstructionError(f"Assembled matrix is not symmetric (defect {asym:.3e})")
    matrix = 0.5 * (matrix + matrix.T)
    try:
        linalg.cho_factor(matrix)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"{spec.kind} operator is not positive definite") from e

    op = DiscreteOperator(
        spec=spec,
        grid=grid,
        matrix=matrix,
        offdiag_nonpositive=_offdiag_nonpositive(matrix),
    )
    logger.debug(
        "Built %s operator (s=%s, M=%d, offdiag_nonpositive=%s)",
        spec.kind,
        spec.s,
        grid.size,
        op.offdiag_nonpositive,
    )
    return op


def _laplacian_matrix(grid: Grid) -> FloatArray:
    n = grid.n_per_axis
    lap1 = (
        2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    ) / grid.h**2
    if grid.dim == 1:
        return lap1
    eye = np.eye(n)
    return np.kron(lap1, eye) + np.kron(eye, lap1)


def build_local_laplacian(grid: Grid) -> DiscreteOperator:
    """
    Standard (2 dim + 1)-point Dirichlet finite-difference Laplacian.

    Example:
        >>> op = build_local_laplacian(make_grid(1, 3))
        >>> op.matrix[0, :2].tolist()
        [32.0, -16.0]
    """
    return _finalize(OperatorSpec(OperatorKind.LOCAL, 1.0), grid, _laplacian_matrix(grid))


def build_sfl(grid: Grid, s: float) -> DiscreteOperator:
    """
    Spectral fractional Laplacian V diag(mu^s) V^T from the local eigenpairs.

    Raises:
        OperatorConstructionError: If s is out of range or the eigensolver fails
    """
    spec = OperatorSpec(OperatorKind.SFL, s)
    lap = _laplacian_matrix(grid)
    if spec.s == 1.0:
        return _finalize(spec, grid, lap)
    try:
        mu, vectors = linalg.eigh(lap)
    except linalg.LinAlgError as e:
        raise OperatorConstructionError("Eigen-decomposition of the Laplacian failed") from e
    return _finalize(spec, grid, (vectors * mu**spec.s) @ vectors.T)


def _pair_distances(grid: Grid) -> FloatArray:
    diff = grid.nodes[:, None, :] - grid.nodes[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=2))


def _interaction_weights(grid: Grid, s: float, c: float) -> FloatArray:
    """
    Kernel mass of every other cell seen from each node (zero diagonal).

    In 1D the cell integral of c|z|^{-1-2s} is exact; in 2D the regular cells
    use the midpoint rule, which underestimates the convex kernel.
    """
    dist = _pair_distances(grid)
    weights = np.zeros_like(dist)
    off = dist > 0.0
    h = grid.h
    if grid.dim == 1:
        d = dist[off]
        weights[off] = c * ((d - h / 2.0) ** (-2.0 * s) - (d + h / 2.0) ** (-2.0 * s)) / (2.0 * s)
    else:
        weights[off] = c * h**2 * dist[off] ** (-2.0 - 2.0 * s)
    return weights


def _own_cell_exterior(grid: Grid, s: float, c: float) -> float:
    """c times the kernel integral over R^dim minus the node's own cell."""
    a = grid.h / 2.0
    if grid.dim == 1:
        return c * a ** (-2.0 * s) / s
    angular, _ = quad(lambda t: math.cos(t) ** (2.0 * s), 0.0, math.pi / 4.0)
    return c * (4.0 / s) * a ** (-2.0 * s) * angular


def _corner_integral(a: float, b: float, s: float) -> float:
    """Kernel integral |z|^{-2-2s} over the quadrant {u > a, v > b}."""
    split = math.atan2(b, a)
    near, _ = quad(lambda t: (math.sin(t) / b) ** (2.0 * s), 0.0, split)
    far, _ = quad(lambda t: (math.cos(t) / a) ** (2.0 * s), split, math.pi / 2.0)
    return (near + far) / (2.0 * s)


def _outside_domain_integral(grid: Grid, s: float, c: float) -> FloatArray:
    """c times the kernel integral over the complement of the unit box, per node."""
    x = grid.nodes
    if grid.dim == 1:
        return c * (x[:, 0] ** (-2.0 * s) + (1.0 - x[:, 0]) ** (-2.0 * s)) / (2.0 * s)

    half_plane = beta(0.5, s + 0.5) / (2.0 * s)
    result = np.empty(grid.size)
    for i, (px, py) in enumerate(x):
        sides = (px, 1.0 - px)
        tops = (py, 1.0 - py)
        planes = half_plane * sum(d ** (-2.0 * s) for d in (*sides, *tops))
        corners = sum(_corner_integral(a, b, s) for a in sides for b in tops)
        result[i] = planes - corners
    return c * result


def _check_2d_allowed(grid: Grid, allow_2d: bool, label: str) -> None:
    if grid.dim == 1:
        return
    if not allow_2d:
        raise OperatorConstructionError(
            f"2D {label} kernels are disabled; set FFDE_ENABLE_2D_KERNELS=true to enable them"
        )
    if grid.n_per_axis > MAX_2D_NODES_PER_AXIS:
        raise OperatorConstructionError(
            f"2D {label} kernels support n_per_axis <= {MAX_2D_NODES_PER_AXIS}, got {grid.n_per_axis}"
        )


def build_rfl(grid: Grid, s: float, *, allow_2d: bool = False) -> DiscreteOperator:
    """
    Restricted fractional Laplacian with the exterior Dirichlet tail.

    Off-diagonals are minus the kernel mass of the other cells; the diagonal is
    the kernel mass of everything outside the node's own cell, so each row sum
    equals the (strictly positive) mass outside the interior cells.

    Raises:
        OperatorConstructionError: If s is not in (0, 1) or 2D is not enabled
    """
    spec = OperatorSpec(OperatorKind.RFL, s)
    _check_2d_allowed(grid, allow_2d, "RFL")
    c = fractional_constant(grid.dim, spec.s)
    weights = _interaction_weights(grid, spec.s, c)
    matrix = -weights
    np.fill_diagonal(matrix, _own_cell_exterior(grid, spec.s, c))
    return _finalize(spec, grid, matrix)


def build_cfl(grid: Grid, s: float, *, allow_2d: bool = False) -> DiscreteOperator:
    """
    Censored fractional Laplacian: the kernel integral is restricted to the domain.

    The interior kernel weights coincide with build_rfl. The diagonal drops the
    mass outside the domain but keeps the boundary strips inside it, which
    carries the Dirichlet condition and keeps the matrix definite.

    Raises:
        OperatorConstructionError: If s <= 1/2, n_per_axis < 2, or 2D is not enabled
    """
    spec = OperatorSpec(OperatorKind.CFL, s)
    if grid.n_per_axis < 2:
        raise OperatorConstructionError(
            "CFL needs at least two nodes per axis; a single node has no interior pairs"
        )
    _check_2d_allowed(grid, allow_2d, "CFL")
    c = fractional_constant(grid.dim, spec.s)
    weights = _interaction_weights(grid, spec.s, c)
    matrix = -weights
    diagonal = _own_cell_exterior(grid, spec.s, c) - _outside_domain_integral(grid, spec.s, c)
    np.fill_diagonal(matrix, diagonal)
    return _finalize(spec, grid, matrix)


def build_operator(
    spec: OperatorSpec, grid: Grid, *, allow_2d: bool = False
) -> DiscreteOperator:
    """Dispatch on the operator kind."""
    if spec.kind is OperatorKind.LOCAL:
        return build_local_laplacian(grid)
    if spec.kind is OperatorKind.SFL:
        return build_sfl(grid, spec.s)
    if spec.kind is OperatorKind.RFL:
        return build_rfl(grid, spec.s, allow_2d=allow_2d)
    return build_cfl(grid, spec.s, allow_2d=allow_2d)


def spectrum(op: DiscreteOperator) -> SpectralData:
    """
    Full symmetric eigen-decomposition with L^2-normalized eigenvectors.

    Raises:
        OperatorConstructionError: If the eigensolver does not converge
        NotPositiveDefinite: If any eigenvalue is <= 0
    """
    try:
        eigenvalues, vectors = linalg.eigh(op.matrix)
    except linalg.LinAlgError as e:
        raise OperatorConstructionError("Eigen-decomposition did not converge") from e
    if eigenvalues[0] <= 0.0:
        raise NotPositiveDefinite(f"Smallest eigenvalue is {eigenvalues[0]:.3e}")

    vectors = vectors / math.sqrt(op.grid.quad_weight)
    if vectors[:, 0].sum() < 0.0:
        vectors[:, 0] = -vectors[:, 0]
    phi1 = Field(np.abs(vectors[:, 0]), op.grid)
    return SpectralData(eigenvalues=eigenvalues, eigenvectors=vectors, phi1=phi1)


def green_matrix(op: DiscreteOperator) -> GreenMatrix:
    """
    Green matrix g = A^{-1} / h^dim.

    Raises:
        NotPositiveDefinite: If the matrix is singular or indefinite
    """
    try:
        factor = linalg.cho_factor(op.matrix, lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite("Operator matrix is singular") from e
    inverse = linalg.cho_solve(factor, np.eye(op.size))
    g = 0.5 * (inverse + inverse.T) / op.grid.quad_weight
    return GreenMatrix(g=g, grid=op.grid, spec=op.spec)


def check_kernel_bounds(
    green: GreenMatrix,
    spec: OperatorSpec,
    *,
    excluded_band: int = DEFAULT_EXCLUDED_BAND,
) -> KernelBoundReport:
    """
    Empirical constants of c0 Phi(x)Phi(y) <= G(x,y) <= c1 |x-y|^{-(N-2s)} (...)(...).

    Pairs whose axis indices differ by at most excluded_band are skipped. The
    upper templates need N > 2s and are reported as NaN otherwise.
    """
    grid = green.grid
    N = grid.dim
    s = spec.s
    gam = spec.gamma
    upper = N > 2.0 * s

    weight = boundary_distance(grid).delta ** gam
    index = grid.multi_index
    nodes = grid.nodes

    c0 = math.inf
    c1 = -math.inf
    c1_unweighted = -math.inf
    k4_low = math.inf
    n_pairs = 0
    for start in range(0, grid.size, KERNEL_CHUNK_ROWS):
        rows = slice(start, min(grid.size, start + KERNEL_CHUNK_ROWS))
        sep = np.abs(index[rows, None, :] - index[None, :, :]).max(axis=2)
        mask = sep > excluded_band
        if not mask.any():
            continue
        block = green.g[rows]
        n_pairs += int(mask.sum())
        lower_ratio = block / (weight[rows, None] * weight[None, :])
        c0 = min(c0, float(lower_ratio[mask].min()))
        if not upper:
            continue
        dist = np.sqrt(np.sum((nodes[rows, None, :] - nodes[None, :, :]) ** 2, axis=2))
        dist = np.where(mask, dist, 1.0)
        singular = dist ** (N - 2.0 * s)
        cut_i = np.minimum(weight[rows, None] / dist**gam, 1.0)
        cut_j = np.minimum(weight[None, :] / dist**gam, 1.0)
        ratio = block * singular / (cut_i * cut_j)
        c1 = max(c1, float(ratio[mask].max()))
        k4_low = min(k4_low, float(ratio[mask].min()))
        c1_unweighted = max(c1_unweighted, float((block * singular)[mask].max()))

    if n_pairs == 0:
        c0 = math.nan
    if not upper or n_pairs == 0:
        c1 = c1_unweighted = k4_low = math.nan
    return KernelBoundReport(
        c1_hat=c1,
        c1_unweighted_hat=c1_unweighted,
        c0_hat=c0,
        k4_ratio_range=(k4_low, c1),
        excluded_band=excluded_band,
        upper_template_applicable=upper,
        n_pairs=n_pairs,
    )


def fit_boundary_exponent(spectral: SpectralData, bd: BoundaryDistance) -> float:
    """
    Least-squares slope of log Phi_1 against log delta for delta in [2h, 0.1].

    In 2D only nodes at distance >= 0.25 from the other sides are used, so the
    fit sees the distance to one edge rather than to a corner.

    Raises:
        TooFewNodes: If n_per_axis < 32 or fewer than 4 nodes are in the window
    """
    grid = spectral.phi1.grid
    if grid.n_per_axis < FIT_MIN_N_PER_AXIS:
        raise TooFewNodes(
            f"Boundary fit needs n_per_axis >= {FIT_MIN_N_PER_AXIS}, got {grid.n_per_axis}"
        )
    delta = bd.delta
    phi = spectral.phi1.values
    lo = 2.0 * grid.h * (1.0 - 1e-9)
    hi = FIT_WINDOW_MAX * (1.0 + 1e-9)
    mask = (delta >= lo) & (delta <= hi) & (phi > 0.0)
    if grid.dim == 2:
        per_axis = np.sort(np.minimum(grid.nodes, 1.0 - grid.nodes), axis=1)
        mask &= per_axis[:, 1] >= FIT_2D_TRANSVERSE_MIN
    if int(mask.sum()) < FIT_MIN_NODES:
        raise TooFewNodes(f"Only {int(mask.sum())} nodes in the boundary fit window")
    slope, _ = np.polyfit(np.log(delta[mask]), np.log(phi[mask]), 1)
    return float(slope)
