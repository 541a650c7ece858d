"""Exact moment quadrature for piecewise-linear functions against power weights.

Every weighted integral in this package reduces, element by element, to
moments of the form  ``m_j = int_{x0}^{x1} (x - x0)^j x^p dx``  with
j in {0, 1, 2} and a real exponent p.  These are evaluated from closed-form
antiderivatives of x^q; no sampled rule is used anywhere near x = 0, where
the integrands are singular and Gauss points on a reference element lose
exactly the digits that matter.

Two numerical points deserve a note:

* ``power_moment`` uses ``x0^q * expm1(q * log(x1/x0)) / q`` for x0 > 0,
  which stays accurate when x1/x0 is close to 1 (thin elements far from the
  origin) and when q is close to 0.
* The shifted moments m_1, m_2 are produced by an integration-by-parts
  recurrence.  The naive expansion ``m_2 = pm(p+2) - 2 x0 pm(p+1) + x0^2
  pm(p)`` loses ~(x0/h)^2 digits to cancellation; the recurrence loses only
  ~(x0/h), which is harmless for the meshes used here.

Divergent moments (possible only on the first element when x0 == 0 and the
exponent is too negative) are flagged with +inf; consumers either forbid
them outright or verify the matching polynomial coefficient vanishes.
"""

from __future__ import annotations

import numpy as np

from .errors import DivergentIntegralError

__all__ = [
    "power_moment",
    "shifted_moments",
    "product_integral",
    "sq_norm_weighted",
    "gram_tridiag",
    "hat_moments",
]

_TINY_EXP = 1e-8


def power_moment(x0, x1, p):
    """Integral of x**p over [x0, x1] with 0 <= x0 < x1, exact antiderivative.

    Accepts scalars or equal-length arrays for ``x0``/``x1``; ``p`` is scalar.
    Raises ``DivergentIntegralError`` if any interval touches 0 while p <= -1.
    """
    x0a = np.atleast_1d(np.asarray(x0, dtype=float))
    x1a = np.atleast_1d(np.asarray(x1, dtype=float))
    scalar = np.isscalar(x0) or (np.ndim(x0) == 0)
    q = p + 1.0
    out = np.empty_like(x1a)

    zero = x0a == 0.0
    if zero.any():
        if q <= 0.0:
            raise DivergentIntegralError(
                f"integral of x**{p} over an interval touching 0 diverges"
            )
        out[zero] = x1a[zero] ** q / q
    pos = ~zero
    if pos.any():
        lr = np.log(x1a[pos] / x0a[pos])
        if q == 0.0:
            out[pos] = lr
        else:
            out[pos] = x0a[pos] ** q * np.expm1(q * lr) / q
    return out[0] if scalar else out


def _moment_zero_left(x1, p, j):
    # int_0^{x1} x^(p+j) dx, +inf when divergent
    e = p + j + 1.0
    if e <= 0.0:
        return np.full_like(x1, np.inf)
    return x1**e / e


def shifted_moments(x0, x1, p):
    """Return ``(m0, m1, m2)`` with ``m_j = int (x-x0)^j x^p dx`` over [x0, x1].

    Vectorised over elements.  Entries are +inf where the moment diverges
    (only possible when x0 == 0); callers must then check that the matching
    coefficient is zero.
    """
    x0a = np.asarray(x0, dtype=float)
    x1a = np.asarray(x1, dtype=float)
    h = x1a - x0a
    m0 = np.empty_like(h)
    m1 = np.empty_like(h)
    m2 = np.empty_like(h)

    zero = x0a == 0.0
    if zero.any():
        z1 = x1a[zero]
        m0[zero] = _moment_zero_left(z1, p, 0)
        m1[zero] = _moment_zero_left(z1, p, 1)
        m2[zero] = _moment_zero_left(z1, p, 2)

    pos = ~zero
    if pos.any():
        a, b, hh = x0a[pos], x1a[pos], h[pos]

        def pm(pp):
            return power_moment(a, b, pp)

        m0[pos] = pm(p)
        q1 = p + 1.0
        q2 = p + 2.0
        if abs(q1) > _TINY_EXP:
            m1p = (hh * b**q1 - pm(p + 1.0)) / q1
        else:
            m1p = pm(p + 1.0) - a * pm(p)
        if abs(q2) > _TINY_EXP:
            m1_next = (hh * b**q2 - pm(p + 2.0)) / q2  # shifted m1 at exponent p+1
        else:
            m1_next = pm(p + 2.0) - a * pm(p + 1.0)
        if abs(q1) > _TINY_EXP:
            m2p = (hh * hh * b**q1 - 2.0 * m1_next) / q1
        else:
            m2p = pm(p + 2.0) - 2.0 * a * pm(p + 1.0) + a * a * pm(p)
        m1[pos] = m1p
        m2[pos] = m2p
    return m0, m1, m2


def product_integral(nodes, p, u, v, element_mask=None):
    """``int x^p u(x) v(x) dx`` for piecewise-linear u, v given by nodal values.

    ``element_mask`` restricts the integral to a subset of elements.  A
    divergent first-element moment is tolerated as long as the coefficient
    multiplying it is exactly zero (e.g. Dirichlet data at a degenerate end).
    """
    nodes = np.asarray(nodes, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    x0, x1 = nodes[:-1], nodes[1:]
    h = x1 - x0
    m0, m1, m2 = shifted_moments(x0, x1, p)
    cu = np.diff(u) / h
    cv = np.diff(v) / h
    a0 = u[:-1] * v[:-1]
    a1 = u[:-1] * cv + v[:-1] * cu
    a2 = cu * cv
    total = np.zeros_like(h)
    for aj, mj in ((a0, m0), (a1, m1), (a2, m2)):
        live = aj != 0.0
        if np.any(live & ~np.isfinite(mj)):
            raise DivergentIntegralError(
                f"integral of x**{p} against nonzero data at the degenerate endpoint diverges"
            )
        total[live] += aj[live] * mj[live]
    if element_mask is not None:
        total = total[np.asarray(element_mask, dtype=bool)]
    return float(total.sum())


def sq_norm_weighted(nodes, p, values, element_mask=None):
    """``int x^p |u|^2 dx`` for the piecewise-linear u with the given nodal values."""
    return product_integral(nodes, p, values, values, element_mask=element_mask)


def gram_tridiag(nodes, p, element_mask=None):
    """Tridiagonal Gram matrix of the hat basis against weight x^p, p > -1.

    Returns ``(diag, off)`` of length n+1 and n.  With ``element_mask`` the
    contributions of excluded elements are dropped (used for window-restricted
    norms); the result is then only positive semidefinite.
    """
    nodes = np.asarray(nodes, dtype=float)
    x0, x1 = nodes[:-1], nodes[1:]
    h = x1 - x0
    m0, m1, m2 = shifted_moments(x0, x1, p)
    if not np.all(np.isfinite(m0)):
        raise DivergentIntegralError(
            f"hat-basis Gram matrix against x**{p} diverges on an element touching 0"
        )
    g00 = m0 - 2.0 * m1 / h + m2 / h**2
    g01 = m1 / h - m2 / h**2
    g11 = m2 / h**2
    if element_mask is not None:
        keep = np.asarray(element_mask, dtype=float)
        g00 = g00 * keep
        g01 = g01 * keep
        g11 = g11 * keep
    diag = np.zeros(nodes.size)
    diag[:-1] += g00
    diag[1:] += g11
    return diag, g01


def hat_moments(nodes, p):
    """Per-element integrals ``(I0, I1)`` of x^p against the two local hats.

    I0 weighs the left node's hat on the element, I1 the right node's.
    Requires p > -1 so both are finite on an element touching 0.
    """
    nodes = np.asarray(nodes, dtype=float)
    x0, x1 = nodes[:-1], nodes[1:]
    h = x1 - x0
    m0, m1, _ = shifted_moments(x0, x1, p)
    if not np.all(np.isfinite(m0)):
        raise DivergentIntegralError(f"hat moments against x**{p} diverge at 0")
    i1 = m1 / h
    return m0 - i1, i1


def quad_form_tridiag(diag, off, values):
    """Evaluate v' G v for the symmetric tridiagonal G given by (diag, off)."""
    v = np.asarray(values, dtype=float)
    return float(np.sum(diag * v * v) + 2.0 * np.sum(off * v[:-1] * v[1:]))


def tridiag_matvec(diag, off, values):
    """Matrix-vector product with the symmetric tridiagonal (diag, off)."""
    v = np.asarray(values, dtype=float)
    out = diag * v
    out[:-1] += off * v[1:]
    out[1:] += off * v[:-1]
    return out
