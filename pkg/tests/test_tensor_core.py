import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ralscp.tensor_core import (
    FactorSet,
    Tensor3,
    cp_reconstruct,
    fold,
    gradient_f,
    khatri_rao,
    matricize,
    random_cp_problem,
    read_tensor,
    residual_f,
    write_tensor,
)


def enumerate_unfolding(t, mode):
    """Fiber-by-fiber unfolding, straight from the column list of each mode."""
    I, J, K = t.shape
    cols = []
    if mode == 1:
        for k in range(K):
            for j in range(J):
                cols.append(t[:, j, k])
    elif mode == 2:
        for k in range(K):
            for i in range(I):
                cols.append(t[i, :, k])
    else:
        for j in range(J):
            for i in range(I):
                cols.append(t[i, j, :])
    return np.column_stack(cols)


def loop_model(A, B, C):
    I, J, K = A.shape[0], B.shape[0], C.shape[0]
    out = np.zeros((I, J, K))
    for i in range(I):
        for j in range(J):
            for k in range(K):
                out[i, j, k] = sum(A[i, s] * B[j, s] * C[k, s] for s in range(A.shape[1]))
    return out


def random_factors(rng, dims, r, scale=1.0):
    return FactorSet(*(scale * rng.uniform(-1, 1, (n, r)) for n in dims))


# -- matricize / fold ------------------------------------------------------

def test_matricize_2x2x2_example():
    t = np.zeros((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                t[i, j, k] = (i + 1) + 2 * j + 4 * k
    expected = enumerate_unfolding(t, 1)
    np.testing.assert_array_equal(expected, [[1, 3, 5, 7], [2, 4, 6, 8]])
    np.testing.assert_array_equal(matricize(t, 1), expected)


def test_matricize_zero():
    out = matricize(np.zeros((3, 4, 5)), 1)
    assert out.shape == (3, 20)
    assert not out.any()


def test_matricize_rank_one():
    a, b, c = np.array([1.0, 2.0]), np.array([1.0, 0.0]), np.array([1.0, 1.0])
    t = np.einsum("i,j,k->ijk", a, b, c)
    expected = np.array([[1, 0, 1, 0], [2, 0, 2, 0]], dtype=float)
    np.testing.assert_array_equal(enumerate_unfolding(t, 1), expected)
    np.testing.assert_array_equal(matricize(t, 1), expected)
    np.testing.assert_array_equal(np.outer(a, np.kron(c, b)), expected)


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_matricize_matches_fiber_enumeration(mode):
    t = np.random.default_rng(3).standard_normal((3, 4, 5))
    np.testing.assert_array_equal(matricize(t, mode), enumerate_unfolding(t, mode))


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_fold_roundtrip_bit_identical(mode):
    t = np.random.default_rng(11).standard_normal((3, 4, 5))
    back = fold(matricize(t, mode), mode, t.shape)
    np.testing.assert_array_equal(back.data, t)


def test_fold_zero_and_small_example():
    assert not fold(np.zeros((2, 4)), 1, (2, 2, 2)).data.any()
    t = np.arange(1, 9, dtype=float).reshape((2, 2, 2), order="F")
    np.testing.assert_array_equal(fold(matricize(t, 1), 1, (2, 2, 2)).data, t)


def test_fold_shape_mismatch():
    with pytest.raises(ValueError):
        fold(np.zeros((3, 5)), 1, (3, 4, 5))
    with pytest.raises(ValueError):
        matricize(np.zeros((2, 2, 2)), 4)


# -- Khatri-Rao -------------------------------------------------------------

def test_khatri_rao_identity():
    np.testing.assert_array_equal(khatri_rao(np.eye(2), np.eye(2)), [[1, 0], [0, 0], [0, 0], [0, 1]])


def test_khatri_rao_single_column():
    out = khatri_rao(np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]]))
    np.testing.assert_array_equal(out[:, 0], [3, 4, 6, 8])


def test_khatri_rao_columns_are_kronecker():
    rng = np.random.default_rng(5)
    p, q = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
    out = khatri_rao(p, q)
    for s in range(2):
        np.testing.assert_array_equal(out[:, s], np.kron(p[:, s], q[:, s]))


def test_khatri_rao_column_mismatch():
    with pytest.raises(ValueError):
        khatri_rao(np.ones((3, 2)), np.ones((3, 3)))


# -- model, residual and gradient --------------------------------------------

def test_cp_reconstruct_trivial_cases():
    ones = FactorSet(np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)))
    np.testing.assert_array_equal(cp_reconstruct(ones).data, np.ones((2, 2, 2)))
    rng = np.random.default_rng(0)
    zc = FactorSet(rng.standard_normal((3, 2)), rng.standard_normal((4, 2)), np.zeros((5, 2)))
    assert not cp_reconstruct(zc).data.any()


def test_cp_reconstruct_matches_triple_loop():
    f = random_factors(np.random.default_rng(7), (4, 3, 2), 3)
    expected = loop_model(f.A, f.B, f.C)
    got = cp_reconstruct(f, (4, 3, 2)).data
    assert np.linalg.norm(got - expected) <= 1e-13 * np.linalg.norm(expected)
    with pytest.raises(ValueError):
        cp_reconstruct(f, (4, 3, 3))


def test_residual_trivial_cases():
    f = random_factors(np.random.default_rng(1), (3, 4, 5), 2)
    t = cp_reconstruct(f)
    assert residual_f(t, f) <= 1e-20
    zero = FactorSet(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros((5, 2)))
    assert residual_f(t, zero) == pytest.approx(0.5 * t.norm() ** 2, rel=1e-14)


def test_residual_matches_loop_sum():
    rng = np.random.default_rng(9)
    t = rng.standard_normal((4, 3, 5))
    f = random_factors(rng, (4, 3, 5), 2)
    m = loop_model(f.A, f.B, f.C)
    expected = 0.5 * sum((t[i, j, k] - m[i, j, k]) ** 2 for i in range(4) for j in range(3) for k in range(5))
    assert residual_f(t, f) == pytest.approx(expected, rel=1e-12)


def fd_gradient(t, f, rel_step=1e-6):
    x = f.flat
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * (1 + abs(x[i]))
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (residual_f(t, FactorSet.from_flat(up, f.dims, f.rank))
                - residual_f(t, FactorSet.from_flat(dn, f.dims, f.rank))) / (2 * h)
    return g


def test_gradient_zero_at_exact_decomposition():
    f = random_factors(np.random.default_rng(2), (4, 3, 2), 2)
    assert np.linalg.norm(gradient_f(cp_reconstruct(f), f).flat) <= 1e-12


def test_gradient_zero_factors():
    t = np.random.default_rng(4).standard_normal((3, 3, 3))
    zero = FactorSet(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((3, 2)))
    assert not gradient_f(t, zero).flat.any()


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    t = rng.uniform(-1, 1, (4, 3, 2))
    f = random_factors(rng, (4, 3, 2), 2)
    g = gradient_f(t, f).flat
    assert g.size == 2 * (4 + 3 + 2)
    fd = fd_gradient(t, f)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


# -- problem generator and I/O -----------------------------------------------

@pytest.mark.parametrize("kind", ["random-dense", "exact-rank", "swamp"])
def test_random_problem_deterministic(kind):
    t1, x1 = random_cp_problem((4, 5, 6), 3, kind, seed=42)
    t2, x2 = random_cp_problem((4, 5, 6), 3, kind, seed=42)
    np.testing.assert_array_equal(t1.data, t2.data)
    np.testing.assert_array_equal(x1.flat, x2.flat)
    t3, _ = random_cp_problem((4, 5, 6), 3, kind, seed=43)
    assert not np.array_equal(t1.data, t3.data)


def test_exact_rank_generators_fit_exactly():
    t, _, gen = random_cp_problem((5, 4, 3), 2, "exact-rank", seed=1, return_generators=True)
    assert residual_f(t, gen) == 0.0


def test_swamp_columns_are_collinear():
    t, _, gen = random_cp_problem((10, 10, 10), 10, "swamp", seed=0, collinearity=0.99,
                                  return_generators=True)
    A = gen.A
    cos = [abs(A[:, s] @ A[:, u]) / (np.linalg.norm(A[:, s]) * np.linalg.norm(A[:, u]))
           for s in range(10) for u in range(s + 1, 10)]
    assert min(cos) >= 0.99
    assert residual_f(t, gen) <= 1e-20 * (1 + t.norm() ** 2)


def test_tensor_text_roundtrip(tmp_path):
    t = Tensor3(np.random.default_rng(0).standard_normal((2, 3, 4)))
    path = tmp_path / "t.txt"
    write_tensor(t, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "2 3 4"
    assert float(lines[2]) == t.data[1, 0, 0]  # first index fastest
    np.testing.assert_array_equal(read_tensor(path).data, t.data)


def test_views_are_lossless():
    f = random_factors(np.random.default_rng(0), (3, 4, 5), 2)
    assert f.stacked.shape == (12, 2)
    assert f.flat.size == 24
    np.testing.assert_array_equal(FactorSet.from_stacked(f.stacked, f.dims).flat, f.flat)
    np.testing.assert_array_equal(FactorSet.from_flat(f.flat, f.dims, 2).stacked, f.stacked)
    with pytest.raises(ValueError):
        FactorSet(np.ones((3, 2)), np.ones((4, 3)), np.ones((5, 2)))


# -- properties --------------------------------------------------------------

shapes = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 4))


@settings(max_examples=50, deadline=None)
@given(shapes, st.integers(0, 2**31 - 1))
def test_unfolding_identities(shape, seed):
    I, J, K, r = shape
    rng = np.random.default_rng(seed)
    f = random_factors(rng, (I, J, K), r)
    t = cp_reconstruct(f).data
    for mode in (1, 2, 3):
        np.testing.assert_array_equal(fold(matricize(t, mode), mode, t.shape).data, t)
    for mode, model in ((1, f.A @ khatri_rao(f.C, f.B).T),
                        (2, f.B @ khatri_rao(f.C, f.A).T),
                        (3, f.C @ khatri_rao(f.B, f.A).T)):
        m = matricize(t, mode)
        assert np.linalg.norm(m - model) <= 1e-12 * max(np.linalg.norm(m), 1e-300)


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(0.1, 10))
def test_residual_indeterminacies(shape, seed, sigma, tau):
    I, J, K, r = shape
    rng = np.random.default_rng(seed)
    t = rng.uniform(-1, 1, (I, J, K))
    f = random_factors(rng, (I, J, K), r)
    base = residual_f(t, f)
    assert base >= 0
    perm = rng.permutation(r)
    permuted = FactorSet(f.A[:, perm], f.B[:, perm], f.C[:, perm])
    assert residual_f(t, permuted) == pytest.approx(base, rel=1e-12, abs=1e-300)
    scaled = FactorSet(sigma * f.A, tau * f.B, f.C / (sigma * tau))
    assert residual_f(t, scaled) == pytest.approx(base, rel=1e-12, abs=1e-300)
