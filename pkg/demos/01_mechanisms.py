"""
Heterogeneous privacy demands, one dataset
==========================================

Thirty people report a value in [0, 2]. The ten who report 0 demand full
privacy, the ten at 1 are fine with epsilon 1, the top ten with epsilon 2.
"""

# %%
import numpy as np

from ahdp import Dataset, OneMinusExp, QueryFunction, Rng, Scaled
from ahdp.mechanisms import linear_query_release, mean_estimate, mean_release, sum_estimate

data = Dataset({(0.0, 0.0): 10, (1.0, 1.0): 10, (2.0, 2.0): 10})
alpha = OneMinusExp()

# %% Weighted sum: each record counts with weight alpha(x, eps).
rel = linear_query_release(data, QueryFunction.identity(0, 2), alpha)
print("noiseless part", rel.center[0], "noise scale", rel.scale[0])
print("bias against the true sum", rel.center[0] - 30)

draws = sum_estimate(data, 0, 2, alpha, Rng(0), size=100_000).output
print("mean of 1e5 releases", draws.mean())

# %% The mean splits the budget between numerator and denominator.
half = Scaled(alpha, 0.5)
parts = mean_release(data, 0, 2, half, half)
print("numerator", parts.center[0], "denominator", parts.center[1])

out = mean_estimate(data, 0, 2, half, half, Rng(1), size=200_000).output
print("mean estimate: average", out.mean(), "median", np.median(out))
# the true mean is 1; users at 0 are invisible, so the estimate leans up
