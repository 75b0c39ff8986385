# coding: utf-8

# # Swamps and acceleration
#
# When the columns of a factor matrix are nearly parallel, plain ALS can sit on a
# long plateau before the error starts to drop again. Here we build such a problem
# and compare all six solver variants from the same starting point.

# In[1]:

import numpy as np

from ralscp import ALGORITHMS, Problem, SolverConfig, random_cp_problem, run
from ralscp.diagnostics import detect_swamp

t, x0, gen = random_cp_problem((10, 10, 10), 10, "swamp", seed=1, return_generators=True)
A = gen.A / np.linalg.norm(gen.A, axis=0)
cos = np.abs(A.T @ A)[np.triu_indices(10, 1)]
print("smallest |cos| between generating columns of A: %.3f" % cos.min())


# The `Problem` wrapper caches the three unfoldings so that the runs below share them.

# In[2]:

p = Problem(t)
traces = {alg: run(p, x0, SolverConfig(alg)) for alg in ALGORITHMS}
for alg, tr in traces.items():
    plateaus = detect_swamp(tr)
    print("%-8s %6d iterations  %-10s plateaus %s" % (alg, tr.n_iter, tr.status, plateaus))


# # What an accelerated step looks like
#
# The accelerated variants take an Aitken-Steffensen step every 100 iterations once
# the squared step size has fallen below 1e-6. The step usually moves the iterate a
# long way, so the residual jumps up before the next plain sweeps bring it down.

# In[3]:

tr = traces["rals-a"]
f = tr.f_val
for rec in tr.records:
    if rec.accel_applied:
        print("n=%5d  f before %.2e  f after %.2e" % (rec.n, f[rec.n - 2], rec.f_val))
