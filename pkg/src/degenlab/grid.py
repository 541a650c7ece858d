"""Meshes, nodal fields and time grids for the unit-interval problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = ["Mesh1D", "Field", "TimeGrid", "SpaceTimeField", "default_grading"]


def default_grading(alpha):
    """Grading exponent 2/(1-alpha) clamped to [1, 4].

    The solutions behave like x^(1-alpha) near the degenerate end, so nodes
    x_i = (i/n)^q with q ~ 2/(1-alpha) restore first-order nodal accuracy.
    """
    return float(min(4.0, max(1.0, 2.0 / (1.0 - alpha))))


@dataclass(frozen=True)
class Mesh1D:
    """Strictly increasing nodes x_0 = x_min >= 0 < ... < x_n = 1.

    ``grading_exponent`` q > 1 with x_min = 0 means x_i = (i/n)^q, clustering
    nodes at the degeneracy.  Treat instances as immutable.
    """

    nodes: np.ndarray
    grading_exponent: float = 1.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise InvalidInputError("mesh needs at least 3 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidInputError("mesh nodes must be strictly increasing")
        if nodes[0] < 0:
            raise InvalidInputError("mesh must start at x_min >= 0")
        if abs(nodes[-1] - 1.0) > 1e-12:
            raise InvalidInputError("mesh must end at x = 1")

    @classmethod
    def uniform(cls, n, x_min=0.0):
        return cls(np.linspace(x_min, 1.0, n + 1), grading_exponent=1.0)

    @classmethod
    def graded(cls, n, q):
        if q < 1.0:
            raise InvalidInputError("grading exponent must be >= 1")
        return cls((np.arange(n + 1) / n) ** q, grading_exponent=float(q))

    @classmethod
    def for_weight(cls, n, alpha):
        """Mesh on (0, 1) with the default grading for exponent ``alpha``."""
        return cls.graded(n, default_grading(alpha))

    @property
    def n_elements(self):
        return self.nodes.size - 1

    @property
    def n_nodes(self):
        return self.nodes.size

    @property
    def x_min(self):
        return float(self.nodes[0])

    @property
    def h(self):
        return np.diff(self.nodes)

    def cut_index(self, x_cut):
        """Index of the first node >= x_cut (used to snap truncated domains)."""
        return int(np.searchsorted(self.nodes, x_cut, side="left"))

    def restrict(self, x_cut):
        """Submesh on [first node >= x_cut, 1] together with its start index."""
        j = self.cut_index(x_cut)
        if j < 1 or self.nodes.size - j < 3:
            raise InvalidInputError(
                f"cannot restrict mesh to ({x_cut}, 1): too few nodes remain"
            )
        return Mesh1D(self.nodes[j:].copy(), grading_exponent=1.0), j

    def element_midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def window_elements(self, a, b):
        """Boolean mask of elements whose midpoint lies in (a, b)."""
        mid = self.element_midpoints()
        return (mid > a) & (mid < b)


@dataclass
class Field:
    """Nodal values of a piecewise-linear function on a mesh."""

    mesh: Mesh1D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_nodes,):
            raise InvalidInputError(
                f"field has {values.size} values for {self.mesh.n_nodes} nodes"
            )
        self.values = values

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_nodes))

    @classmethod
    def from_function(cls, mesh, fn):
        return cls(mesh, np.asarray(fn(mesh.nodes), dtype=float))

    @classmethod
    def dirichlet(cls, mesh, values):
        """Field with the boundary values forced to exactly zero."""
        v = np.array(values, dtype=float)
        v[0] = 0.0
        v[-1] = 0.0
        return cls(mesh, v)

    def is_dirichlet(self):
        return self.values[0] == 0.0 and self.values[-1] == 0.0

    def require_dirichlet(self, what="field"):
        if not self.is_dirichlet():
            raise InvalidInputError(f"{what} must vanish at both endpoints")

    def copy(self):
        return Field(self.mesh, self.values.copy())


@dataclass(frozen=True)
class TimeGrid:
    """Uniform steps on (0, T); theta = 1/2 (trapezoidal) or 1 (implicit)."""

    T: float
    n_t: int
    theta: float = 0.5

    def __post_init__(self):
        if self.T <= 0:
            raise InvalidInputError("final time must be positive")
        if self.n_t < 8:
            raise InvalidInputError("need at least 8 time steps")
        if self.theta not in (0.5, 1.0):
            raise InvalidInputError("theta must be 0.5 or 1.0")

    @property
    def dt(self):
        return self.T / self.n_t

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.n_t + 1)


@dataclass
class SpaceTimeField:
    """Frames of nodal values on mesh x time grid, all Dirichlet in space."""

    mesh: Mesh1D
    time_grid: TimeGrid
    frames: np.ndarray = field(repr=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        expected = (self.time_grid.n_t + 1, self.mesh.n_nodes)
        if frames.shape != expected:
            raise InvalidInputError(
                f"frames shape {frames.shape} does not match grid {expected}"
            )
        if np.any(frames[:, 0] != 0.0) or np.any(frames[:, -1] != 0.0):
            raise InvalidInputError("every frame must satisfy the Dirichlet conditions")
        self.frames = frames

    def frame(self, n):
        return Field(self.mesh, self.frames[n])

    @property
    def initial(self):
        return Field(self.mesh, self.frames[0])

    @property
    def final(self):
        return Field(self.mesh, self.frames[-1])
