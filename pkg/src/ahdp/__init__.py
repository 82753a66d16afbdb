"""Add-remove heterogeneous differential privacy.

Datasets of ``(value, epsilon)`` records, privacy mappings, Laplace-based
mechanisms that honor every user's demand whatever the correlation between
data and demand, exact privacy audits, adversarial power bounds and the
experiment sweeps built on them.
"""

from ahdp.dataset import CorrelationDomain, Dataset, Multiset, Record, project_data, weighted_distance
from ahdp.mechanisms import (
    QueryFunction,
    count_estimate,
    frequency_estimate,
    linear_query,
    mean_estimate,
    regression,
    sample_mechanism,
    sum_estimate,
)
from ahdp.noise import Rng
from ahdp.privacy import (
    CappedEpsilon,
    Constant,
    Epsilon,
    OneMinusExp,
    PerValueMin,
    Ratio,
    Scaled,
    certify,
    compose,
    parse_mapping,
)

__version__ = "0.1.0"
