"""Bayesian structure learning for nonhierarchical loglinear models.

Binary configuration data (e.g. binned spike trains) are modelled as
``log p(x) = sum_c theta_c T_c(x)`` over a set of clusters.  Structures are
scored by a Laplace-approximated marginal likelihood and explored with an
MC3 Metropolis-Hastings chain.
"""

__version__ = "0.1.0"

from .inference import PriorSpec, StructureFit, laplace_log_marginal, newton_map
from .model import ConfigCounts, ParamVector, Structure, cluster, format_cluster
from .search import SearchConfig, mc3_run

__all__ = [
    "ConfigCounts",
    "ParamVector",
    "PriorSpec",
    "SearchConfig",
    "Structure",
    "StructureFit",
    "cluster",
    "format_cluster",
    "laplace_log_marginal",
    "mc3_run",
    "newton_map",
]
