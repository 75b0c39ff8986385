# coding: utf-8

# # Predicting the local convergence rate
#
# Near a minimizer one RALS sweep acts like the linear map `I - M^{-1} H`, where `H`
# is the Hessian of the residual and `M` is `lam*I` plus the block lower triangle of
# `H`. Its spectral radius should match the slope of the log step sizes.

# In[1]:

import numpy as np

from ralscp import SolverConfig, random_cp_problem, run
from ralscp.diagnostics import estimate_rate, hessian_fd, predict_contraction

t, x0 = random_cp_problem((5, 5, 5), 2, "exact-rank", seed=1)
trace = run(t, x0, SolverConfig("rals"))
print(trace.status, trace.n_iter)


# The fitted rate comes from a straight-line fit of `log(err_sq)` over the second half
# of the run.

# In[2]:

est = estimate_rate(trace)
print("q_fit = %.4f  (r^2 = %.5f over iterations %s)" % (est.q_fit, est.r_squared, est.window))


# The Hessian at the limit has a null space from the scaling indeterminacy of each
# rank-one term (two free scalars per term), so the full spectral radius is exactly 1.
# The prediction therefore reports the radius on the complementary invariant subspace.

# In[3]:

H = hessian_fd(t, trace.final_factors)
print("smallest Hessian eigenvalues:", np.round(np.linalg.eigvalsh(H)[:6], 8))
pred = predict_contraction(t, trace.final_factors, 1.0)
print("rho = %.4f, rho_full = %.4f, null dimension %d" % (pred.rho, pred.rho_full, pred.null_dim))
print("relative gap |rho - q_fit| / rho = %.3f" % (abs(pred.rho - est.q_fit) / pred.rho))
