"""P1 finite elements for -(a(x) u')' = f on (0, 1) with a ~ x^alpha at 0.

The Dirichlet condition is imposed strongly at both ends, including the
degenerate endpoint x = 0: for alpha < 1 the solution space supports a trace
there and the boundary condition is part of the problem.  Truncated-domain
solves live on (1/k, 1), snapped to mesh nodes, and are extended by zero so
they can be compared with full-domain solutions node by node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .grid import Field, Mesh1D
from .linalg import TridiagSPD
from .quadrature import gram_tridiag, sq_norm_weighted, tridiag_matvec
from .weights import CoefficientSpec

__all__ = [
    "BandedSystem",
    "assemble",
    "as_nodal",
    "load_vector",
    "solve_elliptic",
    "solve_truncated",
    "elliptic_convergence_sweep",
    "SweepRow",
]

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class BandedSystem:
    """Interior (Dirichlet) tridiagonals: stiffness and w-weighted mass."""

    mesh: Mesh1D
    diag: np.ndarray
    offdiag: np.ndarray
    mass_diag: np.ndarray
    mass_offdiag: np.ndarray

    def __post_init__(self):
        if np.any(self.offdiag > 0.0):
            raise InvalidInputError("stiffness off-diagonals must be <= 0 (M-matrix)")


def assemble(mesh: Mesh1D, coeff: CoefficientSpec) -> BandedSystem:
    """Stiffness int a phi_i' phi_j' and weighted mass int w phi_i phi_j.

    Entries are exact when a is the power weight itself; the weighted mass is
    always exact.  Both are restricted to the interior (Dirichlet) nodes.
    """
    coeff.validate_on(mesh)
    h = mesh.h
    a_int = coeff.element_integrals(mesh)
    k_off_full = -a_int / h**2
    k_diag_full = np.zeros(mesh.n_nodes)
    k_diag_full[:-1] -= k_off_full
    k_diag_full[1:] -= k_off_full

    m_diag_full, m_off_full = gram_tridiag(mesh.nodes, coeff.weight.alpha)
    return BandedSystem(
        mesh=mesh,
        diag=k_diag_full[1:-1],
        offdiag=k_off_full[1:-1],
        mass_diag=m_diag_full[1:-1],
        mass_offdiag=m_off_full[1:-1],
    )


def as_nodal(f, mesh: Mesh1D):
    """Interpret a source (callable, Field, array or scalar) as nodal values."""
    if f is None:
        return np.zeros(mesh.n_nodes)
    if isinstance(f, Field):
        if f.mesh is not mesh and not np.array_equal(f.mesh.nodes, mesh.nodes):
            raise InvalidInputError("source field lives on a different mesh")
        return f.values
    if callable(f):
        return np.asarray(f(mesh.nodes), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.n_nodes, float(arr))
    if arr.shape != (mesh.n_nodes,):
        raise InvalidInputError("source array length does not match the mesh")
    return arr


def load_vector(f, mesh: Mesh1D):
    """Hat-function loads of the nodal interpolant of f (exact for P1 x P1)."""
    md, mo = gram_tridiag(mesh.nodes, 0.0)
    return tridiag_matvec(md, mo, as_nodal(f, mesh))


def solve_elliptic(f, mesh: Mesh1D, coeff: CoefficientSpec) -> Field:
    """Dirichlet FEM solution of -(a u')' = f via one banded Cholesky solve."""
    system = assemble(mesh, coeff)
    solver = TridiagSPD(system.diag, system.offdiag)
    rhs = load_vector(f, mesh)[1:-1]
    u = solver.solve(rhs)
    resid = solver.residual(u, rhs)
    if resid > RESIDUAL_TOL:
        raise RuntimeError(f"linear solve residual {resid:.3e} exceeds {RESIDUAL_TOL}")
    full = np.zeros(mesh.n_nodes)
    full[1:-1] = u
    return Field(mesh, full)


def solve_truncated(f, k, mesh: Mesh1D, coeff: CoefficientSpec) -> Field:
    """Solve on the truncated domain (1/k, 1) and extend by zero to ``mesh``.

    The cut 1/k is snapped to the first mesh node >= 1/k, so the extension is
    exactly zero on every node in [0, 1/k].
    """
    if int(k) != k or k < 2:
        raise InvalidInputError("truncation index k must be an integer >= 2")
    sub, j = mesh.restrict(1.0 / k)
    sub_f = f if (f is None or callable(f) or np.ndim(f) == 0) else as_nodal(f, mesh)[j:]
    sub_solution = solve_elliptic(sub_f, sub, coeff)
    full = np.zeros(mesh.n_nodes)
    full[j:] = sub_solution.values
    return Field(mesh, full)


@dataclass(frozen=True)
class SweepRow:
    k: int
    err_full: float
    err_window: float


def _reference_values(f, mesh, coeff, reference):
    if reference is None:
        fine = Mesh1D.graded(4 * mesh.n_elements, mesh.grading_exponent)
        fine_solution = solve_elliptic(f, fine, coeff)
        return fine_solution.values[::4]  # graded refinement is node-nested
    if isinstance(reference, Field):
        return as_nodal(reference, mesh)
    if callable(reference):
        return np.asarray(reference(mesh.nodes), dtype=float)
    raise InvalidInputError("reference must be None, a Field, or a callable")


def elliptic_convergence_sweep(
    f, ks, omega, mesh: Mesh1D, coeff: CoefficientSpec, reference=None
):
    """Truncated-domain errors against a reference solution, one row per k.

    Rows are (k, weighted L2 error on (0,1), weighted L2 error on omega),
    sorted by k.  ``reference`` defaults to a 4x finer solve on the nested
    graded mesh; a closed form can be passed as a callable.
    """
    a, b = omega
    if not 0.0 < a < b < 1.0:
        raise InvalidInputError("omega must satisfy 0 < a < b < 1")
    ref = _reference_values(f, mesh, coeff, reference)
    window = mesh.window_elements(a, b)
    alpha = coeff.weight.alpha
    rows = []
    for k in sorted(ks):
        diff = solve_truncated(f, k, mesh, coeff).values - ref
        err_full = np.sqrt(sq_norm_weighted(mesh.nodes, alpha, diff))
        err_win = np.sqrt(sq_norm_weighted(mesh.nodes, alpha, diff, element_mask=window))
        rows.append(SweepRow(int(k), float(err_full), float(err_win)))
    return rows
