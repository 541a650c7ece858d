"""Thin wrapper around LAPACK's banded Cholesky for SPD tridiagonal systems."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .quadrature import tridiag_matvec

__all__ = ["TridiagSPD"]


class TridiagSPD:
    """Factor a symmetric positive definite tridiagonal once, solve many times."""

    def __init__(self, diag, off):
        self.diag = np.asarray(diag, dtype=float)
        self.off = np.asarray(off, dtype=float)
        ab = np.zeros((2, self.diag.size))
        ab[0, 1:] = self.off
        ab[1, :] = self.diag
        self._chol = cholesky_banded(ab, lower=False)

    def solve(self, rhs):
        return cho_solve_banded((self._chol, False), np.asarray(rhs, dtype=float))

    def matvec(self, v):
        return tridiag_matvec(self.diag, self.off, v)

    def residual(self, x, rhs):
        """Backward-error style relative residual of ``A x = rhs``."""
        r = self.matvec(x) - rhs
        scale = np.linalg.norm(
            np.abs(self.diag) * np.abs(x)
            + np.concatenate((np.abs(self.off) * np.abs(x[1:]), [0.0]))
            + np.concatenate(([0.0], np.abs(self.off) * np.abs(x[:-1])))
        ) + np.linalg.norm(rhs)
        if scale == 0.0:
            return 0.0
        return float(np.linalg.norm(r) / scale)
