"""Carleman weight construction and evaluation of the weighted inequalities.

The weight triple is

    Theta(t) = 1 / [t (T - t)]^4,
    eta(x)   = x^(2-alpha)            on (0, r1],
               C^3 positive bridge     on (r1, r2),
               (1 - x) x^(-alpha)      on [r2, 1),
    xi(x,t)  = gamma * Theta(t) * (eta(x) - 2 |eta|_inf),

with r1 = (2a+b)/3 and r2 = (a+2b)/3 the tercile points of the control
window (a, b).  The bridge is the two-point Hermite interpolant matching
value and first three derivatives of the outer branches, which is the
minimal-degree polynomial (degree 7) meeting the C^3 requirement; its
positivity is verified by sampling at construction time.

Numerical convention: Theta blows up at t in {0, T} while every integrand of
interest tends to zero, so all products Theta^m * exp(2 s xi) * (..)^2 are
composed in log space (m log Theta + 2 s xi + 2 log |..|) and integrals are
accumulated with log-sum-exp.  This keeps t -> 0, T limits at exactly zero
instead of inf * 0, and keeps the left/right-hand-side RATIO of the
inequalities meaningful even when exp(2 s xi) underflows float64 everywhere
(already at s = 2 for gamma = 1, T = 1).  Linear-space integral values are
reported as exp(log value), which is 0.0 in the underflowed regime.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import ConstructionError, InvalidInputError
from .grid import SpaceTimeField
from .quadrature import hat_moments

__all__ = [
    "theta",
    "theta_log",
    "theta_dt",
    "EtaProfile",
    "build_eta",
    "CarlemanParams",
    "xi",
    "xi_derivatives",
    "XiDerivatives",
    "transform_and_decompose",
    "carleman_report",
    "CarlemanReport",
]


# ---------------------------------------------------------------------------
# time factor


def _check_time(t, T):
    if T <= 0:
        raise InvalidInputError("final time must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0) or np.any(t >= T):
        raise InvalidInputError("time must lie strictly inside (0, T)")
    return t


def theta(t, T):
    """Blow-up factor [t(T-t)]^(-4) for t in (0, T)."""
    t = _check_time(t, T)
    return (t * (T - t)) ** -4.0


def theta_log(t, T):
    """log Theta, for underflow-safe composition with exp(2 s xi)."""
    t = _check_time(t, T)
    return -4.0 * np.log(t * (T - t))


def theta_dt(t, T):
    """d Theta / dt = -4 (T - 2t) [t(T-t)]^(-5)."""
    t = _check_time(t, T)
    return -4.0 * (T - 2.0 * t) * (t * (T - t)) ** -5.0


# ---------------------------------------------------------------------------
# spatial profile


def _power_sum_deriv(terms, x, order):
    """order-th derivative of sum c * x^e for (c, e) pairs."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c, e in terms:
        fac = c
        for k in range(order):
            fac *= e - k
        out += fac * x ** (e - order)
    return out


@dataclass(frozen=True)
class EtaProfile:
    """Piecewise spatial profile eta with cached supremum over (0, 1)."""

    alpha: float
    a: float
    b: float
    r1: float
    r2: float
    bridge: np.ndarray  # monomial coefficients in sigma = (x - r1)/(r2 - r1)
    sup: float

    def _left_terms(self):
        return [(1.0, 2.0 - self.alpha)]

    def _right_terms(self):
        return [(1.0, -self.alpha), (-1.0, 1.0 - self.alpha)]

    def deriv(self, x, order=0):
        """eta^(order)(x) for order in 0..3, vectorised and piecewise."""
        if order not in (0, 1, 2, 3):
            raise InvalidInputError("eta derivatives are available up to order 3")
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        left = x <= self.r1
        right = x >= self.r2
        mid = ~(left | right)
        if left.any():
            out[left] = _power_sum_deriv(self._left_terms(), x[left], order)
        if right.any():
            out[right] = _power_sum_deriv(self._right_terms(), x[right], order)
        if mid.any():
            width = self.r2 - self.r1
            sigma = (x[mid] - self.r1) / width
            coeffs = np.polynomial.polynomial.polyder(self.bridge, order) if order else self.bridge
            out[mid] = np.polynomial.polynomial.polyval(sigma, coeffs) / width**order
        return out

    def __call__(self, x):
        return self.deriv(x, 0)


def _golden_max(fn, lo, hi, iters=120):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(iters):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = fn(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = fn(x1)
        if hi - lo < 1e-13:
            break
    return max(f1, f2)


def build_eta(alpha, a, b, positivity_samples=10_000):
    """Construct the spatial profile for exponent alpha and window (a, b).

    Raises ``ConstructionError`` (with the offending abscissa) if the Hermite
    bridge fails to stay positive on the middle region.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("profile construction requires alpha in (0, 1)")
    if not 0.0 < a < b < 1.0:
        raise InvalidInputError("window must satisfy 0 < a < b < 1")
    r1 = (2.0 * a + b) / 3.0
    r2 = (a + 2.0 * b) / 3.0
    width = r2 - r1

    left = [(1.0, 2.0 - alpha)]
    right = [(1.0, -alpha), (-1.0, 1.0 - alpha)]
    lvals = [_power_sum_deriv(left, r1, k) * width**k for k in range(4)]
    rvals = [_power_sum_deriv(right, r2, k) * width**k for k in range(4)]

    # monomial coefficients in sigma: c_k = P^(k)(0)/k! for k <= 3, then solve
    # the 4x4 system P^(k)(1) = rvals[k] for c_4..c_7
    coeffs = np.zeros(8)
    fact = 1.0
    for k in range(4):
        coeffs[k] = lvals[k] / fact
        fact *= k + 1
    rows = np.zeros((4, 4))
    rhs = np.zeros(4)
    for k in range(4):
        total = 0.0
        for j in range(k, 4):
            fac = np.prod(np.arange(j, j - k, -1)) if k else 1.0
            total += fac * coeffs[j]
        for col, j in enumerate(range(4, 8)):
            rows[k, col] = np.prod(np.arange(j, j - k, -1)) if k else 1.0
        rhs[k] = rvals[k] - total
    coeffs[4:] = np.linalg.solve(rows, rhs)

    sigma = np.linspace(0.0, 1.0, positivity_samples)
    bridge_vals = np.polynomial.polynomial.polyval(sigma, coeffs)
    if bridge_vals.min() <= 0.0:
        bad = r1 + width * sigma[int(np.argmin(bridge_vals))]
        raise ConstructionError(
            f"profile bridge is not positive near x = {bad:.6g}", offending_x=bad
        )

    profile = EtaProfile(alpha, a, b, r1, r2, coeffs, sup=0.0)
    xs = np.linspace(0.0, 1.0, 10_001)[1:-1]
    vals = profile.deriv(xs, 0)
    i = int(np.argmax(vals))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]
    sup = max(float(vals[i]), _golden_max(lambda x: float(profile.deriv(x, 0)), lo, hi))
    return replace(profile, sup=sup)


# ---------------------------------------------------------------------------
# parameters and the transform


@dataclass(frozen=True)
class CarlemanParams:
    """Everything fixed in the weighted inequalities: (alpha, a, b, T, gamma, s)
    plus the constructed profile and its supremum.

    s = 0 is admitted as a diagnostic limit (the transform then reduces to the
    identity and the operator split to the plain equation); the inequality
    reports themselves require s >= 1.
    """

    alpha: float
    a: float
    b: float
    T: float
    gamma: float
    s: float
    eta: EtaProfile
    eta_sup: float

    def __post_init__(self):
        if self.T <= 0:
            raise InvalidInputError("final time must be positive")
        if self.gamma < 1.0:
            raise InvalidInputError("gamma must be >= 1")
        if self.s != 0.0 and self.s < 1.0:
            raise InvalidInputError("s must be 0 (diagnostic) or >= 1")
        if not 0.0 < self.eta.r1 < self.eta.r2 < 1.0:
            raise InvalidInputError("region boundaries must satisfy 0 < r1 < r2 < 1")

    @classmethod
    def build(cls, alpha, a, b, T, gamma=1.0, s=1.0):
        eta = build_eta(alpha, a, b)
        return cls(alpha, a, b, T, gamma, s, eta, eta.sup)

    def with_s(self, s):
        return replace(self, s=float(s))

    @property
    def r1(self):
        return self.eta.r1

    @property
    def r2(self):
        return self.eta.r2


class XiDerivatives(NamedTuple):
    value: np.ndarray
    dx: np.ndarray
    dxx: np.ndarray
    dt: np.ndarray


def xi(x, t, params: CarlemanParams):
    """xi(x, t) = gamma Theta(t) (eta(x) - 2 |eta|_inf); strictly negative."""
    th = theta(t, params.T)
    return params.gamma * th * (params.eta(np.asarray(x, dtype=float)) - 2.0 * params.eta_sup)


def xi_derivatives(x, t, params: CarlemanParams):
    """xi and its analytic partial derivatives (d/dx, d2/dx2, d/dt)."""
    x = np.asarray(x, dtype=float)
    th = theta(t, params.T)
    thp = theta_dt(t, params.T)
    bracket = params.eta(x) - 2.0 * params.eta_sup
    return XiDerivatives(
        value=params.gamma * th * bracket,
        dx=params.gamma * th * params.eta.deriv(x, 1),
        dxx=params.gamma * th * params.eta.deriv(x, 2),
        dt=params.gamma * thp * bracket,
    )


def _log_abs(values):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(values))


def _signed_exp(sign_source, log_magnitude):
    return np.sign(sign_source) * np.exp(log_magnitude)


def _interior_xi_grids(traj: SpaceTimeField, params: CarlemanParams):
    """(times, log Theta, xi) on interior time nodes x all space nodes."""
    tg = traj.time_grid
    times = tg.times[1:-1]
    log_th = theta_log(times, params.T)
    bracket = params.eta(traj.mesh.nodes) - 2.0 * params.eta_sup
    xi_grid = params.gamma * np.exp(log_th)[:, None] * bracket[None, :]
    return times, log_th, xi_grid


def transform_and_decompose(traj: SpaceTimeField, g, params: CarlemanParams):
    """Apply v = e^(s xi) phi and split e^(s xi) g into the two operator parts.

    Returns (v, residual) where residual is the relative discrete L2(Q) norm
    of  P1 v + P2 v - e^(s xi) g  over the interior space-time grid, computed
    with centred differences in time/space and the conservative flux for the
    second-order term.  Spots where exp(s xi) underflows hold exact zeros on
    both sides, so they contribute nothing.
    """
    if abs(params.T - traj.time_grid.T) > 1e-12:
        raise InvalidInputError("params.T does not match the trajectory time grid")
    mesh, tg = traj.mesh, traj.time_grid
    nodes, dt = mesh.nodes, tg.dt
    s = params.s

    times, _, xi_grid = _interior_xi_grids(traj, params)
    frames = traj.frames
    v = np.zeros_like(frames)
    if s == 0.0:
        v[1:-1] = frames[1:-1]
    else:
        v[1:-1] = _signed_exp(frames[1:-1], s * xi_grid + _log_abs(frames[1:-1]))

    # interior stencil data (time indices 1..n_t-1, space indices 1..n-1)
    hl = np.diff(nodes)[:-1]
    hr = np.diff(nodes)[1:]
    xin = nodes[1:-1]
    w_mid = (0.5 * (nodes[:-1] + nodes[1:])) ** params.alpha
    w_node = xin**params.alpha

    vin = v[1:-1]
    dtv = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2.0 * dt)
    c_m = -hr / (hl * (hl + hr))
    c_0 = (hr - hl) / (hl * hr)
    c_p = hl / (hr * (hl + hr))
    dxv = c_m * vin[:, :-2] + c_0 * vin[:, 1:-1] + c_p * vin[:, 2:]
    flux_r = w_mid[1:] * (vin[:, 2:] - vin[:, 1:-1]) / hr
    flux_l = w_mid[:-1] * (vin[:, 1:-1] - vin[:, :-2]) / hl
    div_wdx = (flux_r - flux_l) / (0.5 * (hl + hr))

    eta1 = params.eta.deriv(xin, 1)
    eta2 = params.eta.deriv(xin, 2)
    th = np.exp(theta_log(times, params.T))
    thp = theta_dt(times, params.T)
    bracket = params.eta(xin) - 2.0 * params.eta_sup
    xi_x = params.gamma * th[:, None] * eta1[None, :]
    xi_t = params.gamma * thp[:, None] * bracket[None, :]
    div_w_xi_x = (
        params.gamma
        * th[:, None]
        * (params.alpha * xin ** (params.alpha - 1.0) * eta1 + w_node * eta2)[None, :]
    )

    vmid = vin[:, 1:-1]
    p1 = dtv - 2.0 * s * w_node * dxv * xi_x - s * vmid * div_w_xi_x
    p2 = div_wdx - s * vmid * xi_t + s**2 * vmid * w_node * xi_x**2

    if g is None:
        esg = np.zeros_like(p1)
    else:
        g_vals = np.array(
            [np.asarray(g(xin, t), dtype=float) for t in times]
        )
        if s == 0.0:
            esg = g_vals
        else:
            esg = _signed_exp(g_vals, s * xi_grid[:, 1:-1] + _log_abs(g_vals))

    cell = 0.5 * (hl + hr)

    def norm(arr):
        return float(np.sqrt(np.sum(arr**2 * cell[None, :]) * dt))

    num = norm(p1 + p2 - esg)
    den = max(norm(esg), float(np.hypot(norm(p1), norm(p2))))
    residual = 0.0 if den == 0.0 else num / den
    return SpaceTimeField(mesh, tg, v), residual


# ---------------------------------------------------------------------------
# inequality reports


@dataclass(frozen=True)
class CarlemanReport:
    """Both sides of the weighted inequality for one trajectory and one s.

    ``lhs_terms`` holds (gradient term on region 1, gradient term on regions
    2+3, zero-order term on region 1, zero-order term on regions 2+3) in
    truncated mode; in full mode the two global terms sit in slots 0 and 2.
    Linear-space entries are exp() of the log accumulators and collapse to 0.0
    when the exponential weight underflows; ``empirical_c`` is formed from the
    log totals and stays finite whenever the window integral is positive in
    log space.
    """

    mode: str
    s: float
    gamma: float
    lhs_terms: tuple
    rhs_source: float
    rhs_window: float
    empirical_c: float
    log_lhs_total: float
    log_rhs_total: float
    violation: bool


def _log_integral(log_nodal, log_i0, log_i1, elem_mask, log_dt, log_elem=None):
    """log of sum_t dt * sum_e int_e x^m G(x) dx with G >= 0 nodally interpolated.

    ``log_nodal``: (nt-1, n+1) log of nodal factors; ``log_elem``: optional
    (nt-1, n) additive per-element log factor (squared gradients).
    """
    contrib = np.logaddexp(
        log_nodal[:, :-1] + log_i0[None, :], log_nodal[:, 1:] + log_i1[None, :]
    )
    if log_elem is not None:
        contrib = contrib + log_elem
    masked = contrib[:, elem_mask]
    if masked.size == 0:
        return -np.inf
    return float(logsumexp(masked) + log_dt)


def carleman_report(traj: SpaceTimeField, g, params: CarlemanParams, k=None):
    """Evaluate the inequality for a backward trajectory (full or truncated).

    ``k`` selects the truncated-domain variant: integrals are restricted to
    elements right of 1/k and the left-hand side is split across the three
    spatial regions (0, r1), (r1, r2), (r2, 1).  Elements are assigned to
    regions by midpoint, so the regions tile the domain exactly.
    """
    if params.s < 1.0:
        raise InvalidInputError("inequality reports require s >= 1")
    if abs(params.T - traj.time_grid.T) > 1e-12:
        raise InvalidInputError("params.T does not match the trajectory time grid")
    mesh, tg = traj.mesh, traj.time_grid
    nodes = mesh.nodes
    s, alpha = params.s, params.alpha
    log_s = np.log(s)
    log_dt = np.log(tg.dt)

    times, log_th, xi_grid = _interior_xi_grids(traj, params)
    frames = traj.frames[1:-1]
    log_phi2 = 2.0 * _log_abs(frames)
    two_s_xi = 2.0 * s * xi_grid

    h = mesh.h
    slopes2_log = 2.0 * _log_abs(np.diff(traj.frames[1:-1], axis=1) / h[None, :])

    mid = mesh.element_midpoints()
    q1 = mid < params.r1
    q3 = mid > params.r2
    q2 = ~(q1 | q3)
    everywhere = np.ones_like(q1)
    window = mesh.window_elements(params.a, params.b)
    if k is not None:
        if int(k) != k or k < 2:
            raise InvalidInputError("truncation index k must be an integer >= 2")
        inside = mid > 1.0 / k
        q1, q2, q3 = q1 & inside, q2 & inside, q3 & inside
        everywhere = inside
        window = window & inside

    moments = {
        m: tuple(np.log(part) for part in hat_moments(nodes, m))
        for m in (alpha, 2.0 - alpha, 0.0)
    }

    def grad_term(power, mask, n_log_theta):
        li0, li1 = moments[power]
        log_nodal = two_s_xi + n_log_theta * log_th[:, None]
        return _log_integral(log_nodal, li0, li1, mask, log_dt, log_elem=slopes2_log)

    def zero_term(power, mask, n_log_theta):
        li0, li1 = moments[power]
        log_nodal = two_s_xi + log_phi2 + n_log_theta * log_th[:, None]
        return _log_integral(log_nodal, li0, li1, mask, log_dt)

    if k is None:
        logs = [
            log_s + grad_term(alpha, everywhere, 1.0),
            -np.inf,
            3.0 * log_s + zero_term(2.0 - alpha, everywhere, 3.0),
            -np.inf,
        ]
        mode = "full"
    else:
        q23 = q2 | q3
        logs = [
            log_s + grad_term(alpha, q1, 1.0),
            log_s + grad_term(0.0, q23, 1.0),
            3.0 * log_s + zero_term(2.0 - alpha, q1, 3.0),
            3.0 * log_s + zero_term(0.0, q23, 3.0),
        ]
        mode = "truncated"

    if g is None:
        log_rhs_source = -np.inf
    else:
        g_vals = np.array([np.asarray(g(nodes, t), dtype=float) for t in times])
        li0, li1 = moments[0.0]
        log_rhs_source = _log_integral(
            two_s_xi + 2.0 * _log_abs(g_vals), li0, li1, everywhere, log_dt
        )
    log_rhs_window = 3.0 * log_s + zero_term(0.0, window, 3.0)

    log_lhs_total = float(logsumexp(logs))
    log_rhs_total = float(np.logaddexp(log_rhs_source, log_rhs_window))

    if np.isneginf(log_rhs_total):
        violation = not np.isneginf(log_lhs_total)
        empirical_c = float("inf") if violation else 0.0
    else:
        violation = False
        empirical_c = float(np.exp(log_lhs_total - log_rhs_total))

    return CarlemanReport(
        mode=mode,
        s=s,
        gamma=params.gamma,
        lhs_terms=tuple(float(np.exp(v)) for v in logs),
        rhs_source=float(np.exp(log_rhs_source)),
        rhs_window=float(np.exp(log_rhs_window)),
        empirical_c=empirical_c,
        log_lhs_total=log_lhs_total,
        log_rhs_total=log_rhs_total,
        violation=violation,
    )
