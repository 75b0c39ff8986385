import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from ralscp.accel import DegenerateInput, accel_step, matrix_aitken, scalar_aitken
from ralscp.exceptions import NumericalFailure
from ralscp.solvers import Problem, SolverConfig, rals_sweep, run
from ralscp.tensor_core import FactorSet, cp_reconstruct, random_cp_problem


def test_scalar_geometric():
    assert scalar_aitken(2.0, 1.5, 1.25) == 1.0


def test_scalar_degenerate():
    with pytest.raises(DegenerateInput):
        scalar_aitken(0.0, 1.0, 2.0)


def test_scalar_second_geometric():
    x = [3 + 2 * 0.9 ** n for n in range(3)]
    assert x[:2] == [5.0, 4.8]
    assert scalar_aitken(*x) == pytest.approx(3.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(0.05, 0.95))
def test_scalar_exact_on_geometric(c, a, q):
    x = [c + a * q ** n for n in range(3)]
    assert scalar_aitken(*x) == pytest.approx(c, abs=1e-8 * (1 + abs(c)) / (1 - q) ** 2)


def affine_sweep(c, rho, dims):
    cs = c.stacked

    def sweep(x):
        return FactorSet.from_stacked(cs + rho * (x.stacked - cs), dims)

    return sweep


def test_fixed_point_preserved():
    _, _, g = random_cp_problem((5, 4, 3), 2, "exact-rank", seed=0, return_generators=True)
    t = cp_reconstruct(g)
    step = accel_step(g, lambda y: rals_sweep(t, y, 1.0))
    assert np.max(np.abs(step.z)) <= 1e-10 * (1 + np.abs(g.stacked).max())
    np.testing.assert_allclose(step.x_out, g.stacked, atol=1e-12 * (1 + np.abs(g.stacked).max()))
    np.testing.assert_array_equal(step.x_out, step.x_in - step.z)


def test_zero_rhs_gives_zero_z():
    x = np.random.default_rng(0).standard_normal((6, 2))
    z, res, rhs, _ = matrix_aitken(x, x, x)
    assert not z.any() and res == 0.0 and rhs == 0.0


def test_affine_contraction_half():
    rng = np.random.default_rng(1)
    dims = (4, 3, 5)
    c = FactorSet(*(rng.standard_normal((n, 3)) for n in dims))
    x = FactorSet(*(rng.standard_normal((n, 3)) for n in dims))
    step = accel_step(x, affine_sweep(c, 0.5, dims))
    # D2 = (rho-1)^2 (X - c); the minimum-norm Z is X - c
    np.testing.assert_allclose(step.z, x.stacked - c.stacked, atol=1e-10)
    assert np.max(np.abs(step.x_out - c.stacked)) <= 1e-10
    assert not step.degenerate
    assert step.factors(dims).dims == dims


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.3, 0.5, 0.9, 0.99]))
def test_affine_exactness_property(seed, rho):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(2, 6, 3))
    r = int(rng.integers(1, 4))
    c = FactorSet(*(rng.standard_normal((n, r)) for n in dims))
    x = FactorSet(*(rng.standard_normal((n, r)) for n in dims))
    step = accel_step(x, affine_sweep(c, rho, dims))
    err = np.max(np.abs(step.x_out - c.stacked))
    assert err <= 1e-8 * (1 + np.abs(x.stacked - c.stacked).max())


def test_rank_deficient_second_difference_is_finite():
    x = np.zeros((5, 3))
    s1 = np.ones((5, 3))
    s2 = np.zeros((5, 3))
    s2[:, 0] = 1.5  # D2 has rank 1
    z, _, _, degenerate = matrix_aitken(x, s1, s2)
    assert degenerate
    assert np.all(np.isfinite(z))


def test_non_finite_input_raises():
    x = np.zeros((3, 2))
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NumericalFailure):
        matrix_aitken(x, bad, x)


def test_ls_residual_on_live_run():
    t, x0 = random_cp_problem((10, 10, 10), 10, "swamp", seed=0)
    p = Problem(t)
    tr = run(p, x0, SolverConfig("rals", max_iter=5000, keep_iterates=True))
    n = next(r.n for r in tr.records if r.err_sq < 1e-6)
    x = tr.iterates[n]
    step = accel_step(x, lambda y: p.sweep(y, 1.0)[0])
    delta = step.s1 - step.x_in
    d2 = step.s2 - 2 * step.s1 + step.x_in
    assert np.linalg.matrix_rank(d2) == d2.shape[1]
    R = delta @ delta.T
    # the stacked system is overdetermined, so the check is least-squares
    # optimality: the residual is orthogonal to the columns of D2 ...
    resid = step.z @ d2.T - R
    assert np.linalg.norm(resid @ d2) <= 1e-8 * step.rhs_norm * np.linalg.norm(d2)
    # ... and matches an independent solve of the transposed system D2 Z^T = R^T
    zt = scipy.linalg.lstsq(d2, R.T)[0]
    best = np.linalg.norm(zt.T @ d2.T - R)
    assert step.ls_residual == pytest.approx(best, rel=1e-6)
    assert step.ls_residual == pytest.approx(np.linalg.norm(resid), rel=1e-12)
