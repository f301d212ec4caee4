"""Maximum-entropy finite-state controller synthesis for POMDPs.

The package synthesizes k-memory stochastic controllers that maximize the
entropy of the state process a POMDP induces, subject to a lower bound on
the expected total reward.  Synthesis runs a penalty convex-concave
procedure over the parametric Markov chain obtained by composing the POMDP
with a controller template whose memory update is a fixed deterministic
chain.  Exact linear-system evaluators certify every candidate, and
brute-force enumeration oracles provide independent references for testing.
"""

from .model import (
    ModelError,
    Pomdp,
    ValidationReport,
    builtin_example,
    parse_model,
    serialize_model,
    to_fully_observable,
    validate,
)
from .fsc import (
    Fsc,
    Instantiation,
    chain_delta,
    fsc_from_instantiation,
    instantiation_of,
    lift,
    parse_controller,
    serialize_controller,
)
from .product import AffineExpr, Mc, Pmc, build_pmc, instantiate, mc_to_dot
from .mc_analysis import (
    EvalResult,
    classify_states,
    entropy_fixed_point,
    evaluate_chain,
    expected_total_reward,
)
from .ccp_synthesis import CcpConfig, SynthesisProblem, SynthesisResult, synthesize

__all__ = [
    "AffineExpr",
    "CcpConfig",
    "EvalResult",
    "Fsc",
    "Instantiation",
    "Mc",
    "ModelError",
    "Pmc",
    "Pomdp",
    "SynthesisProblem",
    "SynthesisResult",
    "ValidationReport",
    "build_pmc",
    "builtin_example",
    "chain_delta",
    "classify_states",
    "entropy_fixed_point",
    "evaluate_chain",
    "expected_total_reward",
    "fsc_from_instantiation",
    "instantiate",
    "instantiation_of",
    "lift",
    "mc_to_dot",
    "parse_controller",
    "parse_model",
    "serialize_controller",
    "serialize_model",
    "synthesize",
    "to_fully_observable",
    "validate",
]
