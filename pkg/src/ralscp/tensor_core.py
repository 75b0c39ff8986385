"""Dense third-order tensors, unfoldings and the CP residual.

Storage convention
------------------
A :class:`Tensor3` wraps an ``(I, J, K)`` float array. Its canonical flat
layout is first-index-fastest (Fortran order), which is also the fiber order
of the mode-1 unfolding::

    T_(1) = [t_:11, ..., t_:J1, t_:12, ..., t_:JK]

so ``T_(1)[i, j + J*k] == t[i, j, k]``. Mode 2 puts ``i + I*k`` in the
columns, mode 3 puts ``i + I*j``. With these orders the CP model satisfies

    T_(1) = A (C ⊙ B)^T,   T_(2) = B (C ⊙ A)^T,   T_(3) = C (B ⊙ A)^T

where ``⊙`` is the column-wise Kronecker (Khatri-Rao) product with the
*left* factor's index varying slowest.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence, Tuple, Union

import numpy as np

Dims = Tuple[int, int, int]
ProblemKind = Literal["random-dense", "exact-rank", "swamp"]

__all__ = [
    "Tensor3",
    "FactorSet",
    "matricize",
    "fold",
    "khatri_rao",
    "cp_reconstruct",
    "residual_f",
    "gradient_f",
    "random_cp_problem",
    "swamp_factor",
    "read_tensor",
    "write_tensor",
]


def _frozen(arr, ndim: int, name: str) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    if out.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Tensor3:
    """Dense real tensor of shape ``(I, J, K)``.

    The array is copied on construction and marked read-only.
    """

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 3, "tensor data"))
        if min(self.data.shape) < 1:
            raise ValueError(f"tensor dimensions must be positive, got {self.data.shape}")

    @classmethod
    def from_values(cls, dims: Sequence[int], values) -> "Tensor3":
        """Build from a flat array in canonical (first-index-fastest) order."""
        dims = tuple(int(d) for d in dims)
        values = np.asarray(values, dtype=float).ravel()
        if values.size != int(np.prod(dims)):
            raise ValueError(f"expected {int(np.prod(dims))} values for dims {dims}, got {values.size}")
        return cls(values.reshape(dims, order="F"))

    @property
    def dims(self) -> Dims:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel(order="F")

    def norm(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True, eq=False)
class FactorSet:
    """Factor matrices ``A`` (I×r), ``B`` (J×r), ``C`` (K×r).

    Two further views of the same numbers are available: :attr:`stacked`,
    the ``(I+J+K)×r`` matrix ``[A; B; C]``, and :attr:`flat`, the vector
    ``(vec A, vec B, vec C)`` of length ``r(I+J+K)`` with each block
    vectorised column by column.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in "ABC":
            object.__setattr__(self, name, _frozen(getattr(self, name), 2, name))
        ranks = {self.A.shape[1], self.B.shape[1], self.C.shape[1]}
        if len(ranks) != 1:
            raise ValueError(
                f"factor column counts differ: {self.A.shape}, {self.B.shape}, {self.C.shape}"
            )
        if self.rank < 1:
            raise ValueError("factor matrices need at least one column")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self) -> Dims:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    @property
    def blocks(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.A, self.B, self.C

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack(self.blocks)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([m.ravel(order="F") for m in self.blocks])

    @classmethod
    def from_stacked(cls, X, dims: Sequence[int]) -> "FactorSet":
        X = np.asarray(X, dtype=float)
        I, J, K = dims
        if X.ndim != 2 or X.shape[0] != I + J + K:
            raise ValueError(f"stacked matrix of shape {X.shape} does not match dims {tuple(dims)}")
        return cls(X[:I], X[I:I + J], X[I + J:])

    @classmethod
    def from_flat(cls, x, dims: Sequence[int], rank: int) -> "FactorSet":
        x = np.asarray(x, dtype=float).ravel()
        I, J, K = dims
        if x.size != rank * (I + J + K):
            raise ValueError(f"flat vector of length {x.size} does not match dims {tuple(dims)}, r={rank}")
        a, b = rank * I, rank * (I + J)
        return cls(
            x[:a].reshape((I, rank), order="F"),
            x[a:b].reshape((J, rank), order="F"),
            x[b:].reshape((K, rank), order="F"),
        )

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(m * m) for m in self.blocks)))


TensorLike = Union[Tensor3, np.ndarray]


def _as_array(t: TensorLike) -> np.ndarray:
    arr = t.data if isinstance(t, Tensor3) else np.asarray(t, dtype=float)
    if arr.ndim != 3:
        raise ValueError(f"expected a third-order tensor, got shape {arr.shape}")
    return arr


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode


# axis permutation bringing the preserved index first, remaining ones in
# increasing order (the lower one varies fastest after Fortran reshape)
_PERM = {1: (0, 1, 2), 2: (1, 0, 2), 3: (2, 0, 1)}
_INV_PERM = {m: tuple(np.argsort(p)) for m, p in _PERM.items()}


def matricize(t: TensorLike, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of a third-order tensor.

    Returns an ``I×JK``, ``J×IK`` or ``K×IJ`` matrix whose columns are the
    mode fibers, the lower remaining index varying fastest.
    """
    arr = _as_array(t)
    perm = _PERM[_check_mode(mode)]
    n = arr.shape[perm[0]]
    return np.transpose(arr, perm).reshape((n, -1), order="F")


def fold(m, mode: int, dims: Sequence[int]) -> Tensor3:
    """Inverse of :func:`matricize`."""
    m = np.asarray(m, dtype=float)
    perm = _PERM[_check_mode(mode)]
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"dims must have three entries, got {dims}")
    permuted = tuple(dims[p] for p in perm)
    expected = (permuted[0], permuted[1] * permuted[2])
    if m.shape != expected:
        raise ValueError(f"matrix of shape {m.shape} cannot fold to {dims} along mode {mode}")
    arr = m.reshape(permuted, order="F")
    return Tensor3(np.transpose(arr, _INV_PERM[mode]))


def khatri_rao(p, q) -> np.ndarray:
    """Column-wise Kronecker product ``p ⊙ q``.

    Column ``s`` of the result is ``kron(p[:, s], q[:, s])``, so the row
    index of ``q`` varies fastest.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim != 2 or q.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if p.shape[1] != q.shape[1]:
        raise ValueError(f"column counts differ: {p.shape[1]} vs {q.shape[1]}")
    return (p[:, None, :] * q[None, :, :]).reshape(p.shape[0] * q.shape[0], p.shape[1])


def _check_factors(arr: np.ndarray, f: FactorSet):
    if tuple(arr.shape) != f.dims:
        raise ValueError(f"factor dims {f.dims} do not match tensor dims {arr.shape}")


def cp_reconstruct(f: FactorSet, dims: Sequence[int] | None = None) -> Tensor3:
    """Sum of the rank-one terms ``a_s ∘ b_s ∘ c_s``."""
    if dims is not None and tuple(dims) != f.dims:
        raise ValueError(f"factor dims {f.dims} do not match requested dims {tuple(dims)}")
    return Tensor3(np.einsum("is,js,ks->ijk", f.A, f.B, f.C))


def residual_f(t: TensorLike, f: FactorSet) -> float:
    """Half the squared Frobenius norm of ``t`` minus the CP model of ``f``."""
    arr = _as_array(t)
    _check_factors(arr, f)
    diff = arr - np.einsum("is,js,ks->ijk", f.A, f.B, f.C)
    return 0.5 * float(np.vdot(diff, diff))


def gradient_f(t: TensorLike, f: FactorSet) -> FactorSet:
    """Analytic gradient of :func:`residual_f` with respect to ``A``, ``B``, ``C``.

    Uses ``∇_A f = A (C⊙B)^T (C⊙B) - T_(1)(C⊙B)`` with the Gram matrix
    ``(C⊙B)^T (C⊙B) = (C^T C) * (B^T B)`` and cyclic analogues.
    """
    arr = _as_array(t)
    _check_factors(arr, f)
    A, B, C = f.blocks
    AtA, BtB, CtC = A.T @ A, B.T @ B, C.T @ C
    gA = A @ (CtC * BtB) - matricize(arr, 1) @ khatri_rao(C, B)
    gB = B @ (CtC * AtA) - matricize(arr, 2) @ khatri_rao(C, A)
    gC = C @ (BtB * AtA) - matricize(arr, 3) @ khatri_rao(B, A)
    return FactorSet(gA, gB, gC)


def swamp_factor(rng: np.random.Generator, n: int, r: int, collinearity: float) -> np.ndarray:
    """An ``n×r`` matrix whose columns pairwise satisfy ``|cos| >= collinearity``.

    Columns are ``v + eps * w_s`` with a shared unit vector ``v`` and normal
    ``w_s``; ``eps`` starts at 1 and shrinks by 0.8 until the bound holds.
    """
    if not 0.0 <= collinearity < 1.0:
        raise ValueError("collinearity must lie in [0, 1)")
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    W = rng.standard_normal((n, r))
    eps = 1.0
    while True:
        U = v[:, None] + eps * W
        Un = U / np.linalg.norm(U, axis=0)
        cos = np.abs(Un.T @ Un)
        if r == 1 or cos[~np.eye(r, dtype=bool)].min() >= collinearity:
            return U
        eps *= 0.8


def random_cp_problem(
    dims: Sequence[int],
    r: int,
    kind: ProblemKind = "random-dense",
    seed: int = 0,
    collinearity: float = 0.9,
    return_generators: bool = False,
):
    """Seeded test problem and a standard-normal initial guess.

    ``kind`` is one of

    * ``"random-dense"``: i.i.d. standard-normal tensor entries;
    * ``"exact-rank"``: CP model of standard-normal factors;
    * ``"swamp"``: CP model whose first factor ``A`` has near-collinear
      columns (pairwise ``|cos| >= collinearity``); ``B`` and ``C`` are
      standard normal.

    The tensor and the initial guess come from independent child streams of
    ``np.random.SeedSequence(seed)``. With ``return_generators=True`` a third
    item holds the generating factors (``None`` for ``"random-dense"``).
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be three positive integers, got {dims}")
    if r < 1:
        raise ValueError("r must be at least 1")
    tensor_ss, guess_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(tensor_ss)
    gen = None
    if kind == "random-dense":
        t = Tensor3(rng.standard_normal(dims))
    elif kind == "exact-rank":
        gen = FactorSet(*(rng.standard_normal((n, r)) for n in dims))
        t = cp_reconstruct(gen)
    elif kind == "swamp":
        I, J, K = dims
        A = swamp_factor(rng, I, r, collinearity)
        gen = FactorSet(A, rng.standard_normal((J, r)), rng.standard_normal((K, r)))
        t = cp_reconstruct(gen)
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    grng = np.random.default_rng(guess_ss)
    x0 = FactorSet(*(grng.standard_normal((n, r)) for n in dims))
    if return_generators:
        return t, x0, gen
    return t, x0


def write_tensor(t: TensorLike, path) -> None:
    """Write ``I J K`` on the first line, then the entries in canonical order."""
    arr = _as_array(t)
    vals = arr.ravel(order="F")
    with open(path, "w") as fh:
        fh.write("{} {} {}\n".format(*arr.shape))
        for v in vals:
            fh.write(f"{v:.17g}\n")


def read_tensor(path) -> Tensor3:
    text = Path(path).read_text().split()
    if len(text) < 3:
        raise ValueError(f"{path}: missing 'I J K' header")
    dims = tuple(int(s) for s in text[:3])
    return Tensor3.from_values(dims, np.array(text[3:], dtype=float))
