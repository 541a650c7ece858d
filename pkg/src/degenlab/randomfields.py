"""Seeded random test data.

Two flavours are used throughout the test batteries:

* smooth fields: random sine series with polynomially decaying coefficients.
  These are *functions* of x, so refining the mesh re-samples the same field,
  which is what refinement-stability checks need.  Their spectral content
  stays in the resolved range, so trapezoidal time stepping sees no
  high-frequency ringing.
* rough fields: independent nodal noise with zero boundary values, used where
  a test explicitly wants arbitrary piecewise-linear data (e.g. the Hardy
  inequality, which involves no time stepping).
"""

from __future__ import annotations

import numpy as np

from .grid import Field, Mesh1D

__all__ = ["sine_series", "random_smooth_function", "random_smooth_field", "random_nodal_field"]


def sine_series(coefficients):
    """Callable x -> sum_m c_m sin(m pi x); vanishes at 0 and 1."""
    coeffs = np.asarray(coefficients, dtype=float)
    modes = np.arange(1, coeffs.size + 1)

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.sin(np.pi * np.outer(x, modes)) @ coeffs

    return fn


def random_smooth_function(rng, modes=8, decay=2.0):
    """Random sine series with coefficients ~ N(0, m^-2*decay)."""
    m = np.arange(1, modes + 1, dtype=float)
    return sine_series(rng.standard_normal(modes) * m**-decay)


def random_smooth_field(mesh: Mesh1D, rng, modes=8, decay=2.0):
    values = random_smooth_function(rng, modes=modes, decay=decay)(mesh.nodes)
    return Field.dirichlet(mesh, values)


def random_nodal_field(mesh: Mesh1D, rng):
    """Uniform(-1, 1) nodal noise with exactly zero boundary values."""
    values = rng.uniform(-1.0, 1.0, mesh.n_nodes)
    return Field.dirichlet(mesh, values)
