"""
Checking privacy claims against exact densities
===============================================
"""

# %%
from ahdp import Dataset, Epsilon, OneMinusExp, Ratio, Rng
from ahdp.audit import (
    density_ratio_audit, hdp_pitfall_demo, random_neighbor_pair, sample_mechanism_brute_force,
)
from ahdp.mechanisms import SumStage

# %% Random neighbor pairs, every preset.
worst = {}
for mech, kind in [("linear-query", "scalar"), ("mean-parts", "scalar"),
                   ("frequency-vector", "categorical"), ("regression-entries", "regression")]:
    for alpha in (Epsilon(), OneMinusExp(), Ratio()):
        for i in range(50):
            rng = Rng(0, (i,))
            d1, d2 = random_neighbor_pair(kind, rng.child(0))
            r = density_ratio_audit(mech, d1, d2, alpha, rng=rng.child(1), k=4)
            worst[mech] = min(worst.get(mech, 1.0), r.margin)
print("smallest margin per mechanism", worst)

# %% Sample mechanism, exact mixture over every subsample.
data = Dataset({(0.1, 0.2): 2, (0.5, 0.7): 2, (0.9, 3.0): 2})
for r in sample_mechanism_brute_force(data, Epsilon(), 1.0, SumStage(0, 1)):
    print(r.pair[1].size, "claimed", round(r.claimed, 4), "observed", round(r.observed, 4))

# %% Swap-model heterogeneous mechanisms can leak who is fully private.
for eps_large in (0.0, 1.0, 10.0, 1e6):
    print(eps_large, hdp_pitfall_demo(20, eps_large, 2000, Rng(1)))
