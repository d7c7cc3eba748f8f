"""Group-intent modeling as a cooperative game.

Forward direction: a characteristic function (the group intent) is allocated
to players, the allocation weights a stochastic grammar, and the grammar
drives coordinated multi-target trajectories.  Inverse direction: tracked
trajectories are quantized, merged, parsed into derivation trees, and a graph
transformer infers the characteristic function back.
"""

from .game import (
    CharacteristicFunction,
    SensorSpec,
    excess_vector,
    fisher_charfn,
    is_in_core,
    is_modular,
    is_null_player,
    nucleolus,
    rule_probabilities,
    shapley,
)
from .grammar import (
    Grammar,
    GrammarClass,
    ProductionRule,
    Symbol,
    apply_noise,
    classify,
    derivation_trace,
    generate,
    triangle_grammar,
    validate,
)
from .gtnn import Model, ModelConfig, TrainConfig, TrainSample, evaluate, init_model, train
from .harness import ExperimentConfig, build_intent, default_config, generate_dataset, run_sweep
from .kinematics import (
    KalmanConfig,
    KinematicState,
    MultiTargetFrame,
    Observation,
    TrackEstimate,
    kalman_filter,
    observe,
    quantize_velocity,
    simulate_track,
)
from .metaparse import FeatureGraph, ParseTree, encode, merge_tracks, parse, tree_to_graph

__version__ = "0.1.0"
