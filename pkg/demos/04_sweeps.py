"""
Error against sample size on synthetic correlated data
======================================================

Reduced trial counts; raise ``TRIALS`` for smoother curves.
"""

# %%
from ahdp.experiments import (
    freq_sweep, gen_education_eps, gen_regression_eps, gen_weight_eps,
    housing_split, mean_sweep, regression_sweep, synthetic_housing,
)

TRIALS = 100
SIZES = [100, 200, 500, 1000, 2000]

# %% Mean weight: the heavier people ask for less privacy.
weights = gen_weight_eps(2200, seed=0)
mean = mean_sweep(weights, SIZES, trials=TRIALS, seed=1)
for m in mean.methods:
    print(f"{m:24s}", " ".join(f"{v:8.2f}" for v in mean.series(m)))

# %% Same marginals, dependence removed.
indep = mean_sweep(gen_weight_eps(2200, seed=0, independent=True), SIZES, trials=TRIALS, seed=1)
print("lq-eps-half, independent:", [round(v, 2) for v in indep.series("lq-eps-half")])

# %% Education level frequencies.
freq = freq_sweep(gen_education_eps(3000, seed=0), SIZES, trials=TRIALS, seed=2)
for m in freq.methods:
    print(f"{m:24s}", " ".join(f"{v:8.4f}" for v in freq.series(m)))

# %% Regression on a synthetic housing table.
X, y = synthetic_housing()
train, test = housing_split(X, y)
reg = regression_sweep(gen_regression_eps(train, 0), test, [1000, 5000, 18000], trials=20, seed=3)
for m in reg.methods:
    print(f"{m:24s}", " ".join(f"{v:8.4f}" for v in reg.series(m)))
