"""ALS and proximal ALS (RALS) sweeps and the outer iteration.

One RALS sweep updates the factors in the order A, B, C; each block solves

    argmin_A  f(A, B, C) + lam/2 * ||A - A_prev||^2
      = (T_(1)(C⊙B) + lam*A_prev) ((C⊙B)^T(C⊙B) + lam*I)^{-1}

and likewise for B and C with the freshest neighbours. ``lam = 0`` gives the
plain ALS sweep, solved with a truncated pseudo-inverse.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
from scipy import linalg as sla

from . import accel
from .exceptions import NumericalFailure
from .tensor_core import FactorSet, Tensor3, TensorLike, _as_array, khatri_rao, matricize

__all__ = [
    "ALGORITHMS",
    "LambdaSchedule",
    "SolverConfig",
    "IterRecord",
    "ConvergenceTrace",
    "solve_substep",
    "als_sweep",
    "rals_sweep",
    "run",
    "Problem",
]

Algorithm = Literal["als", "als-a", "rals", "rals-a", "rals-l", "rals-al"]
ALGORITHMS: Tuple[str, ...] = ("als", "als-a", "rals", "rals-a", "rals-l", "rals-al")
ACCELERATED = frozenset({"als-a", "rals-a", "rals-al"})
REGULARIZED = frozenset({"rals", "rals-a", "rals-l", "rals-al"})
DECREASING = frozenset({"rals-l", "rals-al"})


@dataclass(frozen=True)
class LambdaSchedule:
    """Regularization weight ``lam_n`` for the transition ``x^(n) -> x^(n+1)``.

    ``constant``: ``lambda0``; ``geometric``: ``max(lambda_min, lambda0*gamma**n)``;
    ``harmonic``: ``max(lambda_min, lambda0/(1+n))``.
    """

    kind: Literal["constant", "geometric", "harmonic"] = "constant"
    lambda0: float = 1.0
    gamma: float = 0.99
    lambda_min: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "geometric", "harmonic"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if self.kind == "geometric" and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.lambda_min < 0:
            raise ValueError("lambda_min must be nonnegative")

    def __call__(self, n: int) -> float:
        if self.kind == "constant":
            return self.lambda0
        if self.kind == "geometric":
            return max(self.lambda_min, self.lambda0 * self.gamma ** n)
        return max(self.lambda_min, self.lambda0 / (1.0 + n))

    @classmethod
    def decreasing(cls) -> "LambdaSchedule":
        """Default schedule of the ``-l`` variants: ``max(1e-8, 0.99**n)``."""
        return cls("geometric", 1.0, 0.99, 1e-8)


@dataclass(frozen=True)
class SolverConfig:
    algorithm: Algorithm = "rals"
    schedule: Optional[LambdaSchedule] = None
    tol: float = 1e-12
    max_iter: int = 50_000
    accel_alpha: float = 1e-6
    accel_q: int = 100
    pinv_threshold: float = 1e-12
    seed: int = 0
    keep_iterates: bool = False
    # reject an accelerated step whose residual exceeds 10x the current one
    accel_safeguard: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.accel_alpha > 0 or self.accel_q < 1:
            raise ValueError("accel_alpha must be positive and accel_q >= 1")
        if not self.pinv_threshold > 0:
            raise ValueError("pinv_threshold must be positive")

    @property
    def lambdas(self) -> LambdaSchedule:
        """Schedule in effect; defaults depend on the algorithm."""
        if self.schedule is not None:
            return self.schedule
        if self.algorithm in DECREASING:
            return LambdaSchedule.decreasing()
        return LambdaSchedule()

    def lam(self, n: int) -> float:
        if self.algorithm not in REGULARIZED:
            return 0.0
        return self.lambdas(n)


@dataclass(frozen=True)
class IterRecord:
    n: int
    err_sq: float
    f_val: float
    grad_norm: float
    lambda_used: float
    accel_applied: bool
    elapsed: float  # seconds since the start of the run


@dataclass
class ConvergenceTrace:
    records: List[IterRecord]
    status: Literal["converged", "max-iter", "numerical-failure"]
    final_factors: FactorSet
    algorithm: str = "rals"
    f0: float = float("nan")
    grad_norm0: float = float("nan")
    tol: float = 1e-12
    iterates: Optional[List[FactorSet]] = None
    accel_steps: List[accel.AccelStep] = field(default_factory=list, repr=False)

    @property
    def n_iter(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def err_sq(self) -> np.ndarray:
        return self.column("err_sq")

    @property
    def f_val(self) -> np.ndarray:
        return self.column("f_val")


def _solve(mttkrp, gram, lam, prev, pinv_threshold):
    if lam > 0:
        try:
            cho = sla.cho_factor(gram + lam * np.eye(gram.shape[0]), check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("proximal normal equations are not positive definite") from exc
        out = sla.cho_solve(cho, (mttkrp + lam * prev).T, check_finite=False).T
    else:
        out = mttkrp @ np.linalg.pinv(gram, rcond=pinv_threshold, hermitian=True)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("substep produced non-finite values")
    return out


def solve_substep(rhs, kr, lam: float, prev=None, pinv_threshold: float = 1e-12) -> np.ndarray:
    """Solve one block least-squares problem.

    Parameters
    ----------
    rhs : ndarray
        ``T_(k) @ kr``, the unfolding times the Khatri-Rao product.
    kr : ndarray
        Khatri-Rao product of the two fixed factors.
    lam : float
        Proximal weight. ``lam > 0`` solves with a Cholesky factorization of
        ``kr^T kr + lam*I``; ``lam == 0`` applies the pseudo-inverse of
        ``kr^T kr``, discarding singular values below
        ``pinv_threshold * sigma_max``.
    prev : ndarray
        Previous value of the block (required when ``lam > 0``).
    """
    rhs = np.asarray(rhs, dtype=float)
    kr = np.asarray(kr, dtype=float)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if kr.shape[1] != rhs.shape[1]:
        raise ValueError(f"rhs has {rhs.shape[1]} columns but kr has {kr.shape[1]}")
    if lam > 0:
        if prev is None:
            raise ValueError("prev is required when lam > 0")
        prev = np.asarray(prev, dtype=float)
        if prev.shape != rhs.shape:
            raise ValueError(f"prev shape {prev.shape} differs from rhs shape {rhs.shape}")
    return _solve(rhs, kr.T @ kr, lam, prev, pinv_threshold)


class Problem:
    """A tensor with its three unfoldings cached for repeated sweeps."""

    def __init__(self, t: TensorLike):
        self.tensor = t if isinstance(t, Tensor3) else Tensor3(t)
        arr = self.tensor.data
        self.dims = self.tensor.dims
        self.T1, self.T2, self.T3 = (matricize(arr, m) for m in (1, 2, 3))
        self.norm_sq = float(np.vdot(arr, arr))

    def check(self, x: FactorSet):
        if x.dims != self.dims:
            raise ValueError(f"factor dims {x.dims} do not match tensor dims {self.dims}")

    def sweep(self, x: FactorSet, lam: float, pinv_threshold: float = 1e-12):
        """One Gauss-Seidel pass A -> B -> C.

        Returns the new factors and ``T_(3)(B⊙A)`` at the new point, which
        :meth:`evaluate` reuses.
        """
        A, B, C = x.blocks
        AtA, BtB, CtC = A.T @ A, B.T @ B, C.T @ C
        A = _solve(self.T1 @ khatri_rao(C, B), CtC * BtB, lam, A, pinv_threshold)
        AtA = A.T @ A
        B = _solve(self.T2 @ khatri_rao(C, A), CtC * AtA, lam, B, pinv_threshold)
        BtB = B.T @ B
        m3 = self.T3 @ khatri_rao(B, A)
        C = _solve(m3, BtB * AtA, lam, C, pinv_threshold)
        return FactorSet(A, B, C), m3

    def evaluate(self, x: FactorSet, m3=None) -> Tuple[float, float]:
        """Residual ``f(x)`` and the norm of its gradient."""
        A, B, C = x.blocks
        AtA, BtB, CtC = A.T @ A, B.T @ B, C.T @ C
        if m3 is None:
            m3 = self.T3 @ khatri_rao(B, A)
        gC = C @ (BtB * AtA) - m3
        gA = A @ (CtC * BtB) - self.T1 @ khatri_rao(C, B)
        gB = B @ (CtC * AtA) - self.T2 @ khatri_rao(C, A)
        model_sq = float(np.sum(AtA * BtB * CtC))
        inner = float(np.sum(C * m3))
        # clip tiny negative values from cancellation
        f = max(0.5 * (self.norm_sq - 2.0 * inner + model_sq), 0.0)
        g = float(np.sqrt(np.sum(gA * gA) + np.sum(gB * gB) + np.sum(gC * gC)))
        return f, g


def als_sweep(t: TensorLike, x: FactorSet, pinv_threshold: float = 1e-12) -> FactorSet:
    """``S_ALS(x)``: exact least-squares updates of A, B, C in that order."""
    p = t if isinstance(t, Problem) else Problem(t)
    p.check(x)
    return p.sweep(x, 0.0, pinv_threshold)[0]


def rals_sweep(t: TensorLike, x: FactorSet, lam: float) -> FactorSet:
    """``S(x)``: proximal updates of A, B, C in that order, each anchored at ``x``."""
    if not lam > 0:
        raise ValueError("rals_sweep needs lam > 0; use als_sweep for lam = 0")
    p = t if isinstance(t, Problem) else Problem(t)
    p.check(x)
    return p.sweep(x, lam)[0]


def _sq_dist(x: FactorSet, y: FactorSet) -> float:
    return float(sum(np.sum((a - b) ** 2) for a, b in zip(x.blocks, y.blocks)))


def _finite(x: FactorSet) -> bool:
    return all(np.all(np.isfinite(m)) for m in x.blocks)


def run(
    t: TensorLike,
    x0: FactorSet,
    cfg: SolverConfig = SolverConfig(),
    callback: Optional[Callable[[IterRecord, FactorSet], None]] = None,
) -> ConvergenceTrace:
    """Iterate the configured variant until ``err_sq < cfg.tol`` or ``cfg.max_iter``.

    ``err_sq`` is ``||X^(n) - X^(n-1)||_F^2`` on the stacked factors. The
    accelerated variants take an Aitken-Steffensen step at iteration ``n``
    when the previous ``err_sq`` is below ``cfg.accel_alpha`` and
    ``n % cfg.accel_q == 0``; the gate starts closed (``err`` is initialised
    to ``accel_alpha``). The stopping test is applied after the update, so a
    large accelerated jump is just a large ``err_sq`` for that iteration.
    """
    p = t if isinstance(t, Problem) else Problem(t)
    p.check(x0)
    algo = cfg.algorithm
    accelerated = algo in ACCELERATED
    f0, g0 = p.evaluate(x0)
    f_cur = f0
    records: List[IterRecord] = []
    iterates = [x0] if cfg.keep_iterates else None
    steps: List[accel.AccelStep] = []
    x = x0
    err = cfg.accel_alpha
    status = "max-iter"
    start = time.perf_counter()

    for n in range(1, cfg.max_iter + 1):
        lam = cfg.lam(n - 1)
        applied = False
        m3 = None
        try:
            if accelerated and err < cfg.accel_alpha and n % cfg.accel_q == 0:
                step = accel.accel_step(
                    x, lambda y: p.sweep(y, lam, cfg.pinv_threshold)[0], cfg.pinv_threshold
                )
                x_new = step.factors(p.dims)
                applied = True
                if cfg.accel_safeguard:
                    f_try, _ = p.evaluate(x_new)
                    if not np.isfinite(f_try) or f_try > 10.0 * f_cur:
                        x_new = FactorSet.from_stacked(step.s1, p.dims)
                        applied = False
                if applied:
                    steps.append(step)
            else:
                x_new, m3 = p.sweep(x, lam, cfg.pinv_threshold)
        except NumericalFailure:
            status = "numerical-failure"
            break
        if not _finite(x_new):
            status = "numerical-failure"
            break
        err = _sq_dist(x_new, x)
        f_cur, g = p.evaluate(x_new, m3)
        rec = IterRecord(n, err, f_cur, g, lam, applied, time.perf_counter() - start)
        records.append(rec)
        x = x_new
        if iterates is not None:
            iterates.append(x)
        if callback is not None:
            callback(rec, x)
        if not (np.isfinite(err) and np.isfinite(f_cur)):
            status = "numerical-failure"
            break
        if err < cfg.tol:
            status = "converged"
            break

    return ConvergenceTrace(
        records=records,
        status=status,
        final_factors=x,
        algorithm=algo,
        f0=f0,
        grad_norm0=g0,
        tol=cfg.tol,
        iterates=iterates,
        accel_steps=steps,
    )
