"""Privacy-preserving resilient bipartite output containment on signed digraphs."""
from .graph import SignedDigraph, build_matrices, check_structural_balance, convexity_weights
from .privacy import FollowerMaskParams, LeaderMaskParams, MaskSet, verify_mask_conditions
from .protocol import AttackSignal, ProtocolConfig
from .scenario import bundled, load_scenario
from .sim import Scenario, SimTrace, hull_distance, run, step
from .synthesis import FollowerDynamics, LeaderDynamics, SynthesisResult, synthesize

__all__ = [
    "AttackSignal",
    "FollowerDynamics",
    "FollowerMaskParams",
    "LeaderDynamics",
    "LeaderMaskParams",
    "MaskSet",
    "ProtocolConfig",
    "Scenario",
    "SignedDigraph",
    "SimTrace",
    "SynthesisResult",
    "build_matrices",
    "bundled",
    "check_structural_balance",
    "convexity_weights",
    "hull_distance",
    "load_scenario",
    "run",
    "step",
    "synthesize",
    "verify_mask_conditions",
]
