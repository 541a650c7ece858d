"""Power weights: Muckenhoupt estimates, weighted norms, Hardy and Poincare checks.

The weight is w(x) = x^alpha on (0, 1).  This module provides the calibrating
quantities every solver module leans on: the A_p constant estimate over an
interval family, weighted L2 norms, the Hardy inequality with its explicit
constant 4/(1-alpha)^2, and the smallest generalized eigenvalue beta of
``int a (u')^2 = beta int u^2 w`` (weighted Poincare constant beta^(-1/2)
up to the ellipticity factor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConvergenceError, InvalidInputError
from .grid import Field, Mesh1D
from .linalg import TridiagSPD
from .quadrature import (
    gram_tridiag,
    power_moment,
    quad_form_tridiag,
    sq_norm_weighted,
    tridiag_matvec,
)

__all__ = [
    "WeightSpec",
    "CoefficientSpec",
    "PoincareResult",
    "HardyCheck",
    "ap_constant_estimate",
    "dyadic_intervals",
    "weighted_l2_norm",
    "hardy_check",
    "poincare_constant",
    "poincare_sweep",
]


@dataclass(frozen=True)
class WeightSpec:
    """The degeneracy weight w(x) = x^alpha on (domain_left, 1).

    alpha in [0, 2) keeps x^alpha inside the Muckenhoupt class A_3 relevant
    in one dimension (alpha = 0 is the non-degenerate control case).  The
    solver modules additionally require alpha < 1.
    """

    alpha: float
    domain_left: float = 0.0
    domain_right: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 2.0:
            raise InvalidInputError("weight exponent must lie in [0, 2)")
        if self.domain_left < 0.0 or self.domain_left >= 1.0:
            raise InvalidInputError("domain_left must lie in [0, 1)")
        if self.domain_right != 1.0:
            raise InvalidInputError("domain_right is fixed to 1")

    def __call__(self, x):
        return np.asarray(x, dtype=float) ** self.alpha

    def require_solver_range(self):
        if self.alpha >= 1.0:
            raise InvalidInputError(
                "solver operations require alpha < 1 (weak degeneracy)"
            )


@dataclass(frozen=True)
class CoefficientSpec:
    """Diffusion coefficient a(x) with lam * w <= a <= w / lam, lam in (0, 1].

    ``func is None`` means a = w exactly, in which case all element integrals
    of a are computed from closed-form antiderivatives.  A callable coefficient
    is integrated with a fixed 5-point Gauss rule per element instead.
    """

    weight: WeightSpec
    lam: float = 1.0
    func: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise InvalidInputError("ellipticity constant must lie in (0, 1]")
        self.weight.require_solver_range()

    @classmethod
    def default(cls, alpha):
        return cls(WeightSpec(alpha))

    def a(self, x):
        if self.func is None:
            return self.weight(x)
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def validate_on(self, mesh: Mesh1D, rtol=1e-12):
        """Check the two-sided bound against w at every mesh node."""
        x = mesh.nodes
        a = self.a(x)
        w = self.weight(x)
        lo = self.lam * w
        hi = w / self.lam
        slack = rtol * (1.0 + np.abs(w))
        if np.any(a < lo - slack) or np.any(a > hi + slack):
            raise InvalidInputError(
                "coefficient violates the two-sided ellipticity bound against the weight"
            )

    def element_integrals(self, mesh: Mesh1D):
        """Per-element integrals of a(x); exact for the power form."""
        x0, x1 = mesh.nodes[:-1], mesh.nodes[1:]
        if self.func is None:
            return power_moment(x0, x1, self.weight.alpha)
        # 5-point Gauss-Legendre on each element
        gp, gw = np.polynomial.legendre.leggauss(5)
        mid = 0.5 * (x0 + x1)
        half = 0.5 * (x1 - x0)
        pts = mid[:, None] + half[:, None] * gp[None, :]
        return half * (self.a(pts) @ gw)


class HardyCheck(NamedTuple):
    lhs: float
    rhs: float
    bound: float


@dataclass
class PoincareResult:
    """Smallest beta with int a (u')^2 = beta int u^2 w, plus its minimizer."""

    beta: float
    eigenfunction: Field
    iterations: int


def dyadic_intervals(levels=12):
    """Dyadic cells [j 2^-l, (j+1) 2^-l] for l = 0..levels as an (m, 2) array.

    The j = 0 cells are the left-anchored family [0, 2^-l], which realises the
    supremum for the power weight.
    """
    if levels < 0:
        raise InvalidInputError("levels must be non-negative")
    out = []
    for lev in range(levels + 1):
        step = 0.5**lev
        j = np.arange(2**lev)
        out.append(np.column_stack((j * step, (j + 1) * step)))
    return np.vstack(out)


def ap_constant_estimate(w: WeightSpec, p, intervals):
    """Max over the intervals of (avg w) * (avg w^(-1/(p-1)))^(p-1).

    Both averages use exact power antiderivatives.  Returns +inf when a
    left-anchored interval makes the dual average diverge (alpha >= p - 1),
    which is the correct value of the supremum in that case.
    """
    if p <= 1.0:
        raise InvalidInputError("Muckenhoupt exponent must satisfy p > 1")
    ivals = np.asarray(intervals, dtype=float)
    if ivals.ndim != 2 or ivals.shape[1] != 2:
        raise InvalidInputError("intervals must be an iterable of (left, right) pairs")
    left, right = ivals[:, 0], ivals[:, 1]
    if np.any(right - left <= 0.0):
        raise InvalidInputError("intervals must have positive length")
    if np.any(left < 0.0) or np.any(right > 1.0):
        raise InvalidInputError("intervals must lie inside [0, 1]")
    length = right - left
    avg_w = power_moment(left, right, w.alpha) / length
    dual = -w.alpha / (p - 1.0)
    if w.alpha > 0.0 and dual <= -1.0 and np.any(left == 0.0):
        return float("inf")
    avg_dual = power_moment(left, right, dual) / length
    return float(np.max(avg_w * avg_dual ** (p - 1.0)))


def weighted_l2_norm(u: Field, w: WeightSpec, sign=1):
    """(int |u|^2 w^sign)^(1/2) with exact elementwise quadrature.

    sign = -1 gives the dual norm; for alpha < 1 it is finite for any
    piecewise-linear u, and the quadrature rejects genuinely divergent cases.
    """
    if sign not in (1, -1):
        raise InvalidInputError("sign must be +1 or -1")
    p = sign * w.alpha
    return float(np.sqrt(sq_norm_weighted(u.mesh.nodes, p, u.values)))


def hardy_check(v: Field, w: WeightSpec):
    """Both sides of int x^(alpha-2) v^2 <= 4/(1-alpha)^2 * int x^alpha (v')^2.

    Requires 0 < alpha < 1 and v = 0 at both mesh endpoints.
    """
    if not 0.0 < w.alpha < 1.0:
        raise InvalidInputError("Hardy check requires alpha in (0, 1)")
    v.require_dirichlet("Hardy test function")
    nodes = v.mesh.nodes
    lhs = sq_norm_weighted(nodes, w.alpha - 2.0, v.values)
    slopes = np.diff(v.values) / v.mesh.h
    rhs = float(np.sum(slopes**2 * power_moment(nodes[:-1], nodes[1:], w.alpha)))
    bound = 4.0 / (1.0 - w.alpha) ** 2
    return HardyCheck(lhs, rhs, bound)


def _interior_matrices(mesh: Mesh1D, coeff: CoefficientSpec):
    """Interior (Dirichlet) stiffness and weighted-mass tridiagonals."""
    from .elliptic import assemble  # deferred: elliptic builds on this module

    system = assemble(mesh, coeff)
    return (system.diag, system.offdiag), (system.mass_diag, system.mass_offdiag)


def poincare_constant(mesh: Mesh1D, coeff: CoefficientSpec, tol=1e-10, max_iter=500):
    """Smallest beta of the pencil K u = beta M_w u by shift-invert iteration.

    K is the stiffness with coefficient a, M_w the w-weighted mass; both are
    symmetric positive definite tridiagonals on the Dirichlet subspace, so
    plain inverse iteration with one factorization converges geometrically.
    The eigenfunction comes back normalized to unit weighted L2 norm.
    """
    (kd, ko), (md, mo) = _interior_matrices(mesh, coeff)
    solver = TridiagSPD(kd, ko)

    x = mesh.nodes[1:-1]
    u = np.sin(np.pi * (x - mesh.x_min) / (1.0 - mesh.x_min))
    u /= np.sqrt(quad_form_tridiag(md, mo, u))
    beta = quad_form_tridiag(kd, ko, u)

    iterations = 0
    for iterations in range(1, max_iter + 1):
        u = solver.solve(tridiag_matvec(md, mo, u))
        u /= np.sqrt(quad_form_tridiag(md, mo, u))
        beta_new = quad_form_tridiag(kd, ko, u)
        done = abs(beta_new - beta) <= tol * max(1.0, abs(beta_new))
        beta = beta_new
        if done:
            break
    else:
        done = False

    full = np.zeros(mesh.n_nodes)
    full[1:-1] = u
    result = PoincareResult(float(beta), Field(mesh, full), iterations)
    if not done:
        raise ConvergenceError(
            f"inverse iteration did not converge in {max_iter} iterations",
            last_result=result,
        )
    return result


def poincare_sweep(mesh: Mesh1D, coeff: CoefficientSpec, ks):
    """beta on the truncated domains (1/k, 1) plus the full domain.

    Truncated meshes are node-subsets of ``mesh`` so that zero extension maps
    discrete eigenfunctions into the full discrete space; the returned rows
    are (k, beta, iterations) sorted by k, followed by (inf, beta_full, its).
    """
    rows = []
    for k in sorted(ks):
        if k < 2:
            raise InvalidInputError("truncation index k must be >= 2")
        sub, _ = mesh.restrict(1.0 / k)
        res = poincare_constant(sub, coeff)
        rows.append((int(k), res.beta, res.iterations))
    full = poincare_constant(mesh, coeff)
    rows.append((float("inf"), full.beta, full.iterations))
    return rows
