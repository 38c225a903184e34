"""Reconstruct explicit chain workflows that imitate a black-box agent system.

The search runs MCTS over prefixes of agentic primitives and prunes with a
per-iteration Red-Black coloring of nodes by a quality/depth/width score.
"""
from .bounds import eta_lower, eta_upper, measure_tree, v_eff, v_full
from .execution import (
    ExecutionResult,
    InfrastructureError,
    SimExecutor,
    SimWorld,
    brute_force_optimum,
    random_world,
    sim_execute,
    stagnation_world,
)
from .mcts import (
    Color,
    RunRecord,
    SearchConfig,
    SearchNode,
    SearchTree,
    backup,
    recolor,
    rollout,
    run_search,
    run_search_unpruned,
    score,
    select_and_expand,
    ucb_select,
)
from .primitives import ObservationPair, Primitive, PrimitiveSpace, load_dataset, validate_workflow
from .similarity import MetricConfig, sfe, sim_jaccard, sim_ngram

__version__ = "0.1.0"
