# coding: utf-8

# # CP decomposition basics
#
# A third-order tensor is stored as a numpy array. Unfoldings use first-index-fastest
# column ordering, which makes the factor-form identity `T_(1) = A (C ⊙ B)^T` hold
# with the Khatri-Rao product defined column by column as a Kronecker product.

# In[1]:

import numpy as np

from ralscp import FactorSet, cp_reconstruct, khatri_rao, matricize, random_cp_problem, residual_f

rng = np.random.default_rng(0)
A, B, C = rng.standard_normal((4, 2)), rng.standard_normal((3, 2)), rng.standard_normal((5, 2))
x = FactorSet(A, B, C)
t = cp_reconstruct(x)
print(t.dims)


# The mode-1 unfolding has one row per index of the first mode:

# In[2]:

T1 = matricize(t, 1)
print(T1.shape)
print(np.allclose(T1, A @ khatri_rao(C, B).T))


# # Fitting an exact-rank tensor
#
# `random_cp_problem` draws a tensor together with a random starting guess. We run
# the regularized ALS iteration with a constant proximal weight of 1 and watch the
# residual drop to roundoff.

# In[3]:

from ralscp import SolverConfig, run

t, x0 = random_cp_problem((6, 6, 6), 3, "exact-rank", seed=0)
trace = run(t, x0, SolverConfig("rals"))
print(trace.status, trace.n_iter)
print("f(x0) = %.3e, f(final) = %.3e" % (trace.f0, residual_f(t, trace.final_factors)))


# Every iteration is recorded, so the step sizes can be inspected directly.

# In[4]:

err = trace.err_sq
for n in (1, 10, 20, trace.n_iter):
    print(n, "%.3e" % err[n - 1])
