"""Aitken-Steffensen extrapolation for (R)ALS fixed-point iterations.

Only two forms are provided: the scalar Δ² formula, kept as a small utility,
and the matrix form that works on the stacked ``(I+J+K)×r`` factor matrix.
The vector form over all ``r(I+J+K)`` coordinates needs that many past
iterates and is deliberately left out.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import NumericalFailure
from .tensor_core import FactorSet

__all__ = ["AccelStep", "DegenerateInput", "scalar_aitken", "accel_step", "matrix_aitken"]


class DegenerateInput(ZeroDivisionError):
    """The second difference vanishes, so the Δ² formula is undefined."""


def scalar_aitken(x0: float, x1: float, x2: float) -> float:
    """Δ² extrapolation ``x0 - (x1 - x0)**2 / (x2 - 2*x1 + x0)``.

    Exact for sequences of the form ``c + a*q**n``.

    >>> scalar_aitken(2.0, 1.5, 1.25)
    1.0
    """
    d2 = x2 - 2.0 * x1 + x0
    if d2 == 0.0:
        raise DegenerateInput("zero second difference")
    return x0 - (x1 - x0) ** 2 / d2


@dataclass(frozen=True, eq=False)
class AccelStep:
    """All intermediate matrices of one matrix Aitken-Steffensen step.

    Every matrix is in stacked ``(I+J+K)×r`` form. ``x_out == x_in - z``.
    """

    x_in: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    z: np.ndarray
    x_out: np.ndarray
    ls_residual: float
    rhs_norm: float
    degenerate: bool

    def factors(self, dims) -> FactorSet:
        return FactorSet.from_stacked(self.x_out, dims)


def matrix_aitken(x: np.ndarray, s1: np.ndarray, s2: np.ndarray, rcond: float = 1e-12):
    """Solve ``Z (s2 - 2 s1 + x)^T = (s1 - x)(s1 - x)^T`` for ``Z``.

    The minimum-norm least-squares solution is used, so a zero right-hand
    side always gives ``Z = 0``. Returns ``(z, ls_residual, rhs_norm, degenerate)``
    where ``degenerate`` reports a rank-deficient second difference.
    """
    delta = s1 - x
    d2 = s2 - 2.0 * s1 + x
    if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(d2))):
        raise NumericalFailure("non-finite iterate passed to the acceleration step")
    # Z = R (D2^T)^+ = delta (D2^+ delta)^T with D2^+ from a truncated SVD
    w, _, rank, _ = np.linalg.lstsq(d2, delta, rcond=rcond)
    z = delta @ w.T
    rhs = delta @ delta.T
    ls_residual = float(np.linalg.norm(z @ d2.T - rhs))
    degenerate = rank < min(d2.shape)
    if not np.all(np.isfinite(z)):
        raise NumericalFailure("acceleration step produced non-finite values")
    return z, ls_residual, float(np.linalg.norm(rhs)), degenerate


Sweep = Callable[[FactorSet], FactorSet]


def accel_step(x: FactorSet, sweep: Sweep, rcond: float = 1e-12) -> AccelStep:
    """One accelerated update ``T(x) = x - Z`` built from ``sweep(x)`` and ``sweep(sweep(x))``.

    Parameters
    ----------
    x : FactorSet
        Current iterate.
    sweep : callable
        The plain one-sweep operator of the variant being accelerated, e.g.
        ``lambda f: rals_sweep(t, f, lam)``.
    rcond : float
        Relative singular-value cutoff for the pseudo-inverse of the second
        difference.
    """
    dims = x.dims
    f1 = sweep(x)
    f2 = sweep(f1)
    X, S1, S2 = x.stacked, f1.stacked, f2.stacked
    z, res, rhs_norm, degenerate = matrix_aitken(X, S1, S2, rcond)
    x_out = X - z
    FactorSet.from_stacked(x_out, dims)  # shape check
    return AccelStep(X, S1, S2, z, x_out, res, rhs_norm, degenerate)
