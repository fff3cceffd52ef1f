"""
Discrete domain geometry.

The domain is the unit interval or the unit square. Only interior nodes carry
unknowns; the homogeneous exterior condition lives in the operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ffde_lab.errors import GridError

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

SUPPORTED_DIMS = (1, 2)


@dataclass(frozen=True, eq=False)
class Grid:
    """
    Uniform interior grid on (0, 1)^dim.

    Nodes are stored as an (M, dim) array in lexicographic order: the first
    axis varies slowest. The quadrature weight h^dim is the cell measure used
    by every integral in the package.
    """

    dim: int
    n_per_axis: int
    h: float
    nodes: FloatArray
    quad_weight: float

    @property
    def size(self) -> int:
        """Total number of interior nodes."""
        return int(self.nodes.shape[0])

    @property
    def axis_coords(self) -> FloatArray:
        """Node coordinates along a single axis."""
        return self.h * np.arange(1, self.n_per_axis + 1, dtype=np.float64)

    @property
    def multi_index(self) -> IntArray:
        """Integer axis indices of every node, shape (M, dim)."""
        idx = np.indices((self.n_per_axis,) * self.dim).reshape(self.dim, -1).T
        return idx.astype(np.int64)

    def center_index(self) -> int:
        """Index of the node closest to the centre of the domain."""
        dist = np.linalg.norm(self.nodes - 0.5, axis=1)
        return int(np.argmin(dist))


@dataclass(frozen=True, eq=False)
class BoundaryDistance:
    """Distance from every node to the boundary of the unit box."""

    delta: FloatArray


def make_grid(dim: int, n_per_axis: int) -> Grid:
    """
    Build the uniform interior grid.

    Args:
        dim: Spatial dimension, 1 or 2
        n_per_axis: Interior nodes per axis, at least 1

    Returns:
        Grid with spacing h = 1/(n_per_axis + 1)

    Raises:
        GridError: If dim is unsupported or n_per_axis < 1

    Example:
        >>> make_grid(1, 3).nodes.ravel().tolist()
        [0.25, 0.5, 0.75]
    """
    if dim not in SUPPORTED_DIMS:
        raise GridError(f"Unsupported dimension {dim}; expected one of {SUPPORTED_DIMS}")
    if n_per_axis < 1:
        raise GridError(f"n_per_axis must be at least 1, got {n_per_axis}")

    h = 1.0 / (n_per_axis + 1)
    coords = h * np.arange(1, n_per_axis + 1, dtype=np.float64)
    if dim == 1:
        nodes = coords[:, None]
    else:
        xx, yy = np.meshgrid(coords, coords, indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])

    nodes.setflags(write=False)
    return Grid(
        dim=dim,
        n_per_axis=n_per_axis,
        h=h,
        nodes=nodes,
        quad_weight=h**dim,
    )


def boundary_distance(grid: Grid) -> BoundaryDistance:
    """Distance to the boundary, min over axes of min(x_i, 1 - x_i)."""
    per_axis = np.minimum(grid.nodes, 1.0 - grid.nodes)
    return BoundaryDistance(delta=per_axis.min(axis=1))
