"""
    Stability of bipartite matching models: facets, the NCond and SCond
    conditions, stable structures, matching policies and simulation.
"""

__version__ = "0.1.0"

from .model import (
    MatchingStructure,
    ArrivalMeasure,
    product_measure,
    uniform_measure,
    NN,
    NNN,
    NN_FDIAG,
    NN_FANTI,
)
from .model_file import Model, load_model, dump_model, load_fixture
from .facets import Facet, enumerate_facets, classify_facet, is_saturated
from .flow import check_ncond, check_ncond_leq, ncond_certificate, positive_flow
from .analysis import (
    pairing_digraph,
    is_stable_structure,
    construct_stable_measure,
    linear_drift,
    check_scond,
    drain_to_empty,
    apply_arrivals,
)
from .policies import (
    CommutativeState,
    WordState,
    PolicySpec,
    step_commutative,
    step_word,
    transition_distribution,
    expected_increment,
    flow_policy_table,
)
from .chains import (
    z_chain_params_nn,
    z_chain_stationary,
    nn_counterexample_drift,
    truncated_stationary,
    reach_set,
)
from .simulation import simulate, estimate_facet_drift
from .certificates import get_certificate
from .errors import MatchstabError

# re-export the public API.
__all__ = [
    "MatchingStructure",
    "ArrivalMeasure",
    "product_measure",
    "uniform_measure",
    "NN",
    "NNN",
    "NN_FDIAG",
    "NN_FANTI",
    "Model",
    "load_model",
    "dump_model",
    "load_fixture",
    "Facet",
    "enumerate_facets",
    "classify_facet",
    "is_saturated",
    "check_ncond",
    "check_ncond_leq",
    "ncond_certificate",
    "positive_flow",
    "pairing_digraph",
    "is_stable_structure",
    "construct_stable_measure",
    "linear_drift",
    "check_scond",
    "drain_to_empty",
    "apply_arrivals",
    "CommutativeState",
    "WordState",
    "PolicySpec",
    "step_commutative",
    "step_word",
    "transition_distribution",
    "expected_increment",
    "flow_policy_table",
    "z_chain_params_nn",
    "z_chain_stationary",
    "nn_counterexample_drift",
    "truncated_stationary",
    "reach_set",
    "simulate",
    "estimate_facet_drift",
    "get_certificate",
    "MatchstabError",
]
