"""
How much can an adversary learn?
================================

Upper bounds on the success probability of a membership test, and
mechanisms whose exact power meets them.
"""

# %%
import math

from ahdp import CorrelationDomain, Dataset
from ahdp.power import (
    BAYES, ThreatModel, dataset_size_mechanism, exact_power,
    exponential_mechanism_descriptor, power_bound_addremove, power_bound_ahdp,
    power_bound_pair, randomized_response, truncated_power_trend,
)

observed = Dataset({(0, 1.0): 2})

# %% Swap model: randomized response over k candidate records.
for k in (2, 4, 8):
    model = ThreatModel.swap(observed, range(1, k + 1), 1.0)
    print(k, exact_power(randomized_response(model, 1.0), model).exact,
          1 / (1 + (k - 1) * math.exp(-1)))

# %% Add-remove with an unbounded number of extra records.
k, eps = 2, 1.0
bound = power_bound_addremove(k, eps, "inf")
domain = CorrelationDomain((x, eps) for x in range(1, k + 1))
trend = truncated_power_trend(
    lambda t: ThreatModel.append_up_to(Dataset(), domain, t, "exact"),
    "add-remove-da", range(1, 7))
print("bound", bound.upper, "floor", bound.lower)
print("truncated mechanism power", [round(p, 4) for p in trend])

# %% A heterogeneous domain. One record that demands nothing makes the
# infinite-horizon bound collapse.
w = CorrelationDomain([(1, 0.5), (2, 2.0)])
print(power_bound_ahdp(w, "1").as_dict())
print(power_bound_ahdp(CorrelationDomain([(1, 0.0), (2, 2.0)]), "inf").as_dict())

# %% Releasing the dataset size gives the game away entirely.
pair = ThreatModel.pair(observed, (1, 0.0))
print("size leak", exact_power(dataset_size_mechanism(), pair, BAYES).exact,
      "vs bound", power_bound_pair(0.0).upper)
mech = exponential_mechanism_descriptor(pair, "projected-d'")
print("projected mechanism", exact_power(mech, pair).exact)
