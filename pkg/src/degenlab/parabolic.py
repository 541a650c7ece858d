"""Theta-scheme time stepping for the degenerate heat operator.

Forward problem:   dphi/dt - (a phi_x)_x = f,  phi(0) given.
Backward problem:  dphi/dt + (w phi_x)_x = g,  phi(T) given; solved by the
substitution tau = T - t, which turns it into a forward problem with source
-g(x, T - tau), and reversing the frames afterwards.

The time pairing is the plain L2 inner product, so the mass matrix here is
unweighted; the weight enters through the stiffness.  theta = 1/2 is the
accurate default, theta = 1 the dissipative choice used by the energy check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .grid import Field, Mesh1D, SpaceTimeField, TimeGrid
from .linalg import TridiagSPD
from .quadrature import gram_tridiag, quad_form_tridiag, tridiag_matvec
from .weights import CoefficientSpec, poincare_constant

__all__ = [
    "ThetaScheme",
    "solve_parabolic",
    "solve_backward",
    "solve_parabolic_truncated",
    "solve_backward_truncated",
    "energy_check",
    "EnergyCheck",
    "parabolic_convergence_sweep",
    "space_time_sq_norm",
    "mass_l2_norm",
    "trapezoid_weights",
]


def _time_source(f, mesh: Mesh1D):
    """Normalize a source into a function t -> nodal values."""
    if f is None:
        zeros = np.zeros(mesh.n_nodes)
        return lambda t: zeros
    if callable(f):
        return lambda t: np.asarray(f(mesh.nodes, t), dtype=float)
    if isinstance(f, Field):
        values = f.values
        return lambda t: values
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        const = np.full(mesh.n_nodes, float(arr))
        return lambda t: const
    if arr.shape != (mesh.n_nodes,):
        raise InvalidInputError("source array length does not match the mesh")
    return lambda t: arr


class ThetaScheme:
    """Matrices and factorizations for one (mesh, coefficient, time grid)."""

    def __init__(self, mesh: Mesh1D, coeff: CoefficientSpec, time_grid: TimeGrid):
        from .elliptic import assemble  # local import to avoid a cycle

        self.mesh = mesh
        self.coeff = coeff
        self.time_grid = time_grid
        self.mass_diag_full, self.mass_off_full = gram_tridiag(mesh.nodes, 0.0)
        system = assemble(mesh, coeff)
        self.stiff_diag = system.diag
        self.stiff_off = system.offdiag
        self.mass_diag = self.mass_diag_full[1:-1]
        self.mass_off = self.mass_off_full[1:-1]
        dt, theta = time_grid.dt, time_grid.theta
        self.aplus = TridiagSPD(
            self.mass_diag + theta * dt * self.stiff_diag,
            self.mass_off + theta * dt * self.stiff_off,
        )
        self._am_diag = self.mass_diag - (1.0 - theta) * dt * self.stiff_diag
        self._am_off = self.mass_off - (1.0 - theta) * dt * self.stiff_off

    def aminus_matvec(self, v):
        return tridiag_matvec(self._am_diag, self._am_off, v)

    def mass_matvec_interior(self, v):
        return tridiag_matvec(self.mass_diag, self.mass_off, v)

    def load_interior(self, nodal_values):
        """Interior hat loads of a full nodal source vector."""
        return tridiag_matvec(self.mass_diag_full, self.mass_off_full, nodal_values)[1:-1]

    def step(self, u_interior, load_interior=None):
        rhs = self.aminus_matvec(u_interior)
        if load_interior is not None:
            rhs = rhs + self.time_grid.dt * load_interior
        return self.aplus.solve(rhs)

    def forward_frames(self, phi0_values, f=None, loads=None):
        """Run the scheme; ``loads`` (n_t, interior) overrides source sampling."""
        n_t = self.time_grid.n_t
        dt, theta = self.time_grid.dt, self.time_grid.theta
        source = _time_source(f, self.mesh)
        frames = np.zeros((n_t + 1, self.mesh.n_nodes))
        frames[0] = phi0_values
        u = phi0_values[1:-1].copy()
        for n in range(n_t):
            if loads is not None:
                load = loads[n]
            elif f is None:
                load = None
            else:
                load = self.load_interior(source((n + theta) * dt))
            u = self.step(u, load)
            frames[n + 1, 1:-1] = u
        return frames


def solve_parabolic(
    phi0: Field, f, coeff: CoefficientSpec, time_grid: TimeGrid
) -> SpaceTimeField:
    """Forward trajectory from initial datum phi0 under source f = f(x, t)."""
    phi0.require_dirichlet("initial datum")
    scheme = ThetaScheme(phi0.mesh, coeff, time_grid)
    frames = scheme.forward_frames(phi0.values, f)
    return SpaceTimeField(phi0.mesh, time_grid, frames)


def solve_backward(
    phiT: Field, g, coeff: CoefficientSpec, time_grid: TimeGrid
) -> SpaceTimeField:
    """Backward trajectory with terminal datum; frames[n_t] equals phiT exactly."""
    phiT.require_dirichlet("terminal datum")
    T = time_grid.T
    if g is None:
        reversed_g = None
    elif callable(g):
        reversed_g = lambda x, tau: -np.asarray(g(x, T - tau), dtype=float)
    else:
        static = _time_source(g, phiT.mesh)(0.0)
        reversed_g = lambda x, tau: -static
    scheme = ThetaScheme(phiT.mesh, coeff, time_grid)
    frames = scheme.forward_frames(phiT.values, reversed_g)
    return SpaceTimeField(phiT.mesh, time_grid, frames[::-1].copy())


def _restrict_static(data, mesh: Mesh1D, j):
    """Nodal restriction of time-independent data to the submesh starting at j."""
    if data is None or callable(data) or np.ndim(data) == 0:
        return data
    from .elliptic import as_nodal

    return as_nodal(data, mesh)[j:]


def solve_parabolic_truncated(
    phi0: Field, f, k, coeff: CoefficientSpec, time_grid: TimeGrid
) -> SpaceTimeField:
    """Forward solve on (1/k, 1), zero-extended to the full mesh frame by frame.

    The initial datum is restricted nodally (no smoothing) and re-zeroed at the
    new left boundary.
    """
    if int(k) != k or k < 2:
        raise InvalidInputError("truncation index k must be an integer >= 2")
    mesh = phi0.mesh
    sub, j = mesh.restrict(1.0 / k)
    sub_phi0 = Field.dirichlet(sub, phi0.values[j:])
    traj = solve_parabolic(sub_phi0, _restrict_static(f, mesh, j), coeff, time_grid)
    frames = np.zeros((time_grid.n_t + 1, mesh.n_nodes))
    frames[:, j:] = traj.frames
    return SpaceTimeField(mesh, time_grid, frames)


def solve_backward_truncated(
    phiT: Field, g, k, coeff: CoefficientSpec, time_grid: TimeGrid
) -> SpaceTimeField:
    """Backward counterpart of the truncated solve (terminal datum restricted)."""
    if int(k) != k or k < 2:
        raise InvalidInputError("truncation index k must be an integer >= 2")
    mesh = phiT.mesh
    sub, j = mesh.restrict(1.0 / k)
    sub_phiT = Field.dirichlet(sub, phiT.values[j:])
    traj = solve_backward(sub_phiT, _restrict_static(g, mesh, j), coeff, time_grid)
    frames = np.zeros((time_grid.n_t + 1, mesh.n_nodes))
    frames[:, j:] = traj.frames
    return SpaceTimeField(mesh, time_grid, frames)


class EnergyCheck(NamedTuple):
    identity_residual: float
    bound_margin: float


def energy_check(traj: SpaceTimeField, phi0: Field, f, coeff: CoefficientSpec):
    """Discrete energy identity and a-priori bound for a forward trajectory.

    identity_residual is |E(T) - E(0) + int int a(phi_x)^2 - int int f phi|
    with all time integrals taken at the theta-weighted states, so it equals
    the scheme's dissipation surplus (zero to roundoff for theta = 1/2,
    (1/2) sum ||phi^{n+1} - phi^n||_M^2 for theta = 1).

    bound_margin is RHS - LHS of the a-priori estimate

        max_m [ E(t_m) + (lam/2) int_0^{t_m} int w (phi_x)^2 ]
            <= E(0) + (1 / 2 beta) int int f^2 w^{-1},

    with beta the discrete eigenvalue from ``poincare_constant``; the chain
    Cauchy-Schwarz -> Young -> discrete Poincare holds exactly at the
    discrete level, so the margin is nonnegative up to roundoff.
    """
    mesh, tg = traj.mesh, traj.time_grid
    if phi0.mesh is not mesh and not np.array_equal(phi0.mesh.nodes, mesh.nodes):
        raise InvalidInputError("initial datum mesh does not match the trajectory")
    if not np.array_equal(traj.frames[0], phi0.values):
        raise InvalidInputError("trajectory does not start at the given initial datum")
    theta, dt = tg.theta, tg.dt
    alpha = coeff.weight.alpha

    scheme = ThetaScheme(mesh, coeff, tg)
    kw_coeff = CoefficientSpec(coeff.weight)  # pure-weight stiffness for the bound
    from .elliptic import assemble

    kw = assemble(mesh, kw_coeff)
    dual_diag, dual_off = gram_tridiag(mesh.nodes, -alpha)

    source = _time_source(f, mesh)
    psi = theta * traj.frames[1:] + (1.0 - theta) * traj.frames[:-1]

    energy = 0.5 * np.array(
        [
            quad_form_tridiag(scheme.mass_diag_full, scheme.mass_off_full, fr)
            for fr in traj.frames
        ]
    )
    a_terms = np.array(
        [
            quad_form_tridiag(scheme.stiff_diag, scheme.stiff_off, ps[1:-1])
            for ps in psi
        ]
    )
    w_terms = np.empty(tg.n_t)
    f_terms = np.empty(tg.n_t)
    work = np.empty(tg.n_t)
    for n in range(tg.n_t):
        f_nodes = source((n + theta) * dt)
        load = tridiag_matvec(scheme.mass_diag_full, scheme.mass_off_full, f_nodes)
        work[n] = load @ psi[n]
        f_terms[n] = quad_form_tridiag(dual_diag, dual_off, f_nodes)
        w_terms[n] = quad_form_tridiag(kw.diag, kw.offdiag, psi[n][1:-1])

    identity = energy[-1] - energy[0] + dt * a_terms.sum() - dt * work.sum()

    beta = poincare_constant(mesh, coeff).beta
    lhs_running = energy[1:] + 0.5 * coeff.lam * dt * np.cumsum(w_terms)
    lhs_max = max(energy[0], float(lhs_running.max()))
    rhs = energy[0] + dt * f_terms.sum() / (2.0 * beta)
    return EnergyCheck(float(abs(identity)), float(rhs - lhs_max))


def trapezoid_weights(time_grid: TimeGrid):
    w = np.full(time_grid.n_t + 1, time_grid.dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def space_time_sq_norm(traj: SpaceTimeField, p, window=None):
    """Trapezoid-in-time integral of the weighted spatial square norms.

    ``window`` = (a, b) restricts to elements whose midpoint lies in (a, b).
    """
    mask = None if window is None else traj.mesh.window_elements(*window)
    gd, go = gram_tridiag(traj.mesh.nodes, p, element_mask=mask)
    tw = trapezoid_weights(traj.time_grid)
    per_frame = np.array([quad_form_tridiag(gd, go, fr) for fr in traj.frames])
    return float(np.sum(tw * per_frame))


def mass_l2_norm(u: Field):
    """Plain L2(0,1) norm of a nodal field (consistent mass quadrature)."""
    gd, go = gram_tridiag(u.mesh.nodes, 0.0)
    return float(np.sqrt(quad_form_tridiag(gd, go, u.values)))


def parabolic_convergence_sweep(
    phi0_fn, f, ks, omega, mesh: Mesh1D, coeff: CoefficientSpec, time_grid: TimeGrid
):
    """Truncation errors ||traj_k - traj_ref|| in L2(omega x (0,T); w) per k.

    The reference is a full-domain solve on the nested (2n, 2 n_t) grid,
    injected back onto the coarse nodes/steps; ``phi0_fn`` must therefore be a
    callable of x.  Rows come back sorted by k.
    """
    a, b = omega
    if not 0.0 < a < b < 1.0:
        raise InvalidInputError("omega must satisfy 0 < a < b < 1")
    if not callable(phi0_fn):
        raise InvalidInputError("phi0_fn must be callable for the mesh-nested reference")
    fine_mesh = Mesh1D.graded(2 * mesh.n_elements, mesh.grading_exponent)
    fine_tg = TimeGrid(time_grid.T, 2 * time_grid.n_t, time_grid.theta)
    fine = solve_parabolic(
        Field.dirichlet(fine_mesh, phi0_fn(fine_mesh.nodes)), f, coeff, fine_tg
    )
    ref = fine.frames[::2, ::2]

    mask = mesh.window_elements(a, b)
    gd, go = gram_tridiag(mesh.nodes, coeff.weight.alpha, element_mask=mask)
    tw = trapezoid_weights(time_grid)
    phi0 = Field.dirichlet(mesh, phi0_fn(mesh.nodes))
    rows = []
    for k in sorted(ks):
        traj = solve_parabolic_truncated(phi0, f, k, coeff, time_grid)
        diff = traj.frames - ref
        per_frame = np.array([quad_form_tridiag(gd, go, d) for d in diff])
        rows.append((int(k), float(np.sqrt(np.sum(tw * per_frame)))))
    return rows
