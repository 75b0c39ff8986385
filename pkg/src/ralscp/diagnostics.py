"""Runtime checks of the RALS convergence theory.

* :func:`check_descent` -- sufficient decrease ``f(x_n) - f(x_{n+1}) >= lam/2 ||dx||^2``;
* :func:`substep_stationarity` -- optimality of each block update at its
  staggered arguments;
* :func:`gradient_bound_profile` -- the ratio ``||grad f(x_{n+1})|| / ||dx||``;
* :func:`estimate_rate` -- log-linear fit of the step sizes;
* :func:`hessian_fd` / :func:`predict_contraction` -- local rate predicted by
  the block Gauss-Seidel splitting of the Hessian;
* :func:`detect_swamp` -- long near-stagnant stretches of the step size.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .solvers import ConvergenceTrace, LambdaSchedule
from .tensor_core import FactorSet, TensorLike, _as_array, gradient_f

__all__ = [
    "RateEstimate",
    "SpectralPrediction",
    "GradientBoundProfile",
    "check_descent",
    "substep_stationarity",
    "estimate_rate",
    "hessian_fd",
    "split_contraction",
    "predict_contraction",
    "gradient_bound_profile",
    "detect_swamp",
    "trace_summary",
]


def _err_sq(trace) -> np.ndarray:
    if isinstance(trace, ConvergenceTrace):
        return trace.err_sq
    return np.asarray(trace, dtype=float)


def check_descent(
    trace: ConvergenceTrace,
    schedule: Optional[LambdaSchedule] = None,
    slack: float = 1e-10,
) -> List[int]:
    """Iterations at which the proximal sufficient-decrease inequality fails.

    For every plain sweep ``n`` the check is
    ``f_{n-1} - f_n >= lam_{n-1}/2 * err_sq_n - slack*(1 + f_0)``; the weight
    comes from ``schedule`` if given, otherwise from the recorded
    ``lambda_used``. Accelerated iterations are skipped.
    """
    if not np.isfinite(trace.f0):
        raise ValueError("trace has no initial residual f0")
    tol = slack * (1.0 + trace.f0)
    f_prev = trace.f0
    bad = []
    for rec in trace.records:
        if not rec.accel_applied:
            lam = schedule(rec.n - 1) if schedule is not None else rec.lambda_used
            if f_prev - rec.f_val < 0.5 * lam * rec.err_sq - tol:
                bad.append(rec.n)
        f_prev = rec.f_val
    return bad


def substep_stationarity(t: TensorLike, x_old: FactorSet, x_new: FactorSet, lam: float):
    """Norms of the three block optimality residuals of one proximal sweep.

    With ``x_old = (A, B, C)`` and ``x_new = (A', B', C')``::

        grad_A f(A', B,  C ) + lam (A' - A)
        grad_B f(A', B', C ) + lam (B' - B)
        grad_C f(A', B', C') + lam (C' - C)

    all vanish for an exact A -> B -> C sweep.
    """
    A, B, C = x_old.blocks
    A1, B1, C1 = x_new.blocks
    ga = gradient_f(t, FactorSet(A1, B, C)).A + lam * (A1 - A)
    gb = gradient_f(t, FactorSet(A1, B1, C)).B + lam * (B1 - B)
    gc = gradient_f(t, FactorSet(A1, B1, C1)).C + lam * (C1 - C)
    return tuple(float(np.linalg.norm(g)) for g in (ga, gb, gc))


@dataclass(frozen=True)
class RateEstimate:
    q_fit: float
    r_squared: float
    window: Tuple[int, int]
    slope: float

    def to_dict(self):
        return asdict(self)


def estimate_rate(trace, window_fraction: float = 0.5, min_points: int = 10) -> RateEstimate:
    """Fit ``log(err_sq_n) ~ a + slope*n`` over the last ``window_fraction`` of the run.

    ``q_fit = exp(slope/2)`` is the per-iteration contraction of
    ``||X^(n) - X^(n-1)||``. ``window`` holds the first and last iteration
    numbers (1-based) used. The window is widened to ``min_points`` records
    for short runs; zero entries are dropped before taking logs.
    """
    err = _err_sq(trace)
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    n_total = err.size
    size = min(n_total, max(int(np.ceil(window_fraction * n_total)), min_points))
    start = n_total - size
    its = np.arange(start + 1, n_total + 1)
    seg = err[start:]
    keep = seg > 0
    if keep.sum() < min_points:
        raise ValueError(f"need at least {min_points} positive points in the window, got {int(keep.sum())}")
    fit = stats.linregress(its[keep], np.log(seg[keep]))
    r2 = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 0.0
    return RateEstimate(float(np.exp(fit.slope / 2.0)), r2, (int(its[0]), int(its[-1])), float(fit.slope))


def hessian_fd(t: TensorLike, x: FactorSet, step: float = 1e-5, symmetrize: bool = True) -> np.ndarray:
    """Hessian of the residual on the flat view of ``x`` by central differences of the gradient.

    Coordinate ``i`` is perturbed by ``step * (1 + |x_i|)``. Rows and columns
    follow :attr:`FactorSet.flat` (``vec A``, ``vec B``, ``vec C``).
    """
    arr = _as_array(t)
    dims, r = x.dims, x.rank
    flat = x.flat
    n = flat.size
    H = np.empty((n, n))
    for i in range(n):
        h = step * (1.0 + abs(flat[i]))
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g_up = gradient_f(arr, FactorSet.from_flat(up, dims, r)).flat
        g_dn = gradient_f(arr, FactorSet.from_flat(dn, dims, r)).flat
        H[:, i] = (g_up - g_dn) / (2.0 * h)
    if symmetrize:
        H = 0.5 * (H + H.T)
    return H


@dataclass(frozen=True)
class SpectralPrediction:
    """Predicted local contraction of a proximal block Gauss-Seidel sweep.

    ``rho_full`` is the spectral radius of ``I - M^{-1} H``. Directions in
    the null space of ``H`` (e.g. the column rescalings that leave the CP
    model unchanged) are eigenvectors with eigenvalue exactly 1 and are not
    damped or excited by the iteration, so ``rho`` reports the spectral
    radius on the complementary invariant subspace ``range(M^{-1} H)``.
    With ``H = 0`` that subspace is empty and ``rho = 1``.
    """

    rho: float
    rho_full: float
    hessian_dim: int
    null_dim: int
    lam: float

    def to_dict(self):
        return asdict(self)


def _block_lower(H: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Block lower-triangular part of ``H`` including the diagonal blocks."""
    edges = np.cumsum([0, *sizes])
    if edges[-1] != H.shape[0]:
        raise ValueError(f"block sizes {tuple(sizes)} do not add up to {H.shape[0]}")
    out = np.zeros_like(H)
    for bi in range(len(sizes)):
        rows = slice(edges[bi], edges[bi + 1])
        out[rows, : edges[bi + 1]] = H[rows, : edges[bi + 1]]
    return out


def split_contraction(H, sizes: Sequence[int], lam: float, null_rtol: float = 1e-6) -> SpectralPrediction:
    """Spectral radius of ``I - M^{-1} H`` for ``H = D - L - U`` and ``M = lam*I + D - L``."""
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    M = lam * np.eye(n) + _block_lower(H, sizes)
    try:
        MinvH = np.linalg.solve(M, H)
    except np.linalg.LinAlgError as exc:
        raise ValueError("M = lam*I + D - L is singular") from exc
    G = np.eye(n) - MinvH
    rho_full = float(np.max(np.abs(np.linalg.eigvals(G)))) if n else 1.0

    w, V = np.linalg.eigh(0.5 * (H + H.T))
    scale = np.max(np.abs(w)) if n else 0.0
    live = np.abs(w) > null_rtol * scale if scale > 0 else np.zeros(n, dtype=bool)
    if not live.any():
        return SpectralPrediction(1.0, rho_full, n, n, lam)
    # range(M^-1 H) = M^-1 range(H) is invariant under G
    W = np.linalg.solve(M, V[:, live])
    restricted = np.linalg.lstsq(W, G @ W, rcond=None)[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(restricted))))
    return SpectralPrediction(rho, rho_full, n, int(n - live.sum()), lam)


def predict_contraction(
    t: TensorLike,
    x_star: FactorSet,
    lam: float,
    grad_tol: Optional[float] = None,
    step: float = 1e-5,
) -> SpectralPrediction:
    """Local linear rate of RALS with weight ``lam`` around a stationary point.

    ``x_star`` must satisfy ``||grad f(x_star)|| <= grad_tol``, by default
    ``1e-4 * (1 + ||t||_F)``.
    """
    arr = _as_array(t)
    g = np.linalg.norm(gradient_f(arr, x_star).flat)
    if grad_tol is None:
        grad_tol = 1e-4 * (1.0 + np.linalg.norm(arr))
    if g > grad_tol:
        raise ValueError(f"x_star is not stationary: gradient norm {g:.3e} > {grad_tol:.3e}")
    H = hessian_fd(arr, x_star, step=step)
    r = x_star.rank
    sizes = [r * d for d in x_star.dims]
    return split_contraction(H, sizes, lam)


@dataclass(frozen=True)
class GradientBoundProfile:
    """Ratios ``||grad f(x_n)|| / ||x_n - x_{n-1}||`` along a run.

    Entries with a (numerically) zero displacement are NaN.
    """

    ratios: np.ndarray
    max_ratio: float
    median_second_half: float
    bounded: bool
    growing: bool

    def to_dict(self):
        return {
            "max_ratio": self.max_ratio,
            "median_second_half": self.median_second_half,
            "bounded": self.bounded,
            "growing": self.growing,
        }


def gradient_bound_profile(
    trace: ConvergenceTrace,
    t: Optional[TensorLike] = None,
    factor: float = 10.0,
    min_step: float = 1e-12,
) -> GradientBoundProfile:
    """Profile of the gradient-to-step ratio, which the theory bounds by a constant.

    Without ``t`` the stored ``grad_norm`` and ``err_sq`` columns are used.
    With ``t`` both are recomputed from the iterate snapshots, which must have
    been kept (``SolverConfig(keep_iterates=True)``).

    ``bounded`` means the largest ratio is within ``factor`` times the median
    of the second half; ``growing`` flags a second half whose ratios strictly
    increase. Displacements below ``min_step * (1 + ||x||_F)`` count as zero
    and give NaN ratios.
    """
    if t is not None:
        if not trace.iterates:
            raise ValueError("trace has no iterate snapshots; rerun with keep_iterates=True")
        xs = trace.iterates
        grads = np.array([np.linalg.norm(gradient_f(t, x).flat) for x in xs[1:]])
        steps = np.array([np.linalg.norm(b.flat - a.flat) for a, b in zip(xs[:-1], xs[1:])])
    else:
        grads = trace.column("grad_norm")
        steps = np.sqrt(trace.err_sq)
    ok = steps > min_step * (1.0 + trace.final_factors.norm())
    ratios = np.full(grads.shape, np.nan)
    ratios[ok] = grads[ok] / steps[ok]
    half = ratios[ratios.size // 2:]
    half = half[np.isfinite(half)]
    finite = ratios[np.isfinite(ratios)]
    if finite.size == 0:
        return GradientBoundProfile(ratios, float("nan"), float("nan"), True, False)
    med = float(np.median(half)) if half.size else float("nan")
    mx = float(finite.max())
    growing = half.size >= 3 and bool(np.all(np.diff(half) > 0))
    bounded = bool(np.isfinite(med) and mx <= factor * med) and not growing
    return GradientBoundProfile(ratios, mx, med, bounded, growing)


def detect_swamp(trace, plateau_ratio: float = 0.999, min_len: int = 50) -> List[Tuple[int, int]]:
    """Maximal near-stagnant windows of the step size.

    Iteration ``n`` is stagnant when ``err_sq_n / err_sq_{n-1} >= plateau_ratio``.
    A run of at least ``min_len`` stagnant iterations is reported as
    ``(first, last)`` iteration numbers (1-based) provided ``err_sq`` later
    falls below its value at the end of the run.
    """
    err = _err_sq(trace)
    if err.size < 2:
        return []
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = err[1:] / err[:-1]
    stagnant = ratio >= plateau_ratio  # ratio[k] belongs to iteration k + 2
    out = []
    k = 0
    m = stagnant.size
    while k < m:
        if not stagnant[k]:
            k += 1
            continue
        j = k
        while j + 1 < m and stagnant[j + 1]:
            j += 1
        first, last = k + 2, j + 2
        if last - first + 1 >= min_len and last < err.size and err[last:].min() < err[last - 1]:
            out.append((first, last))
        k = j + 1
    return out


def trace_summary(trace: ConvergenceTrace, window_fraction: float = 0.5) -> dict:
    """JSON-ready analysis of one run."""
    out = {"iterations": trace.n_iter, "status": trace.status}
    try:
        out["rate"] = estimate_rate(trace, window_fraction).to_dict()
    except ValueError:
        out["rate"] = None
    plateaus = detect_swamp(trace)
    out["plateaus"] = [list(p) for p in plateaus]
    out["plateau_iterations"] = int(sum(b - a + 1 for a, b in plateaus))
    if trace.algorithm.startswith("rals") and trace.records:
        out["descent_violations"] = check_descent(trace)
    return out
