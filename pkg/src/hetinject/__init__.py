"""Relation-wise node-injection attacks on heterogeneous graphs."""
from .attack import (
    AttackBudget,
    AttackResult,
    FakeNodeGenerator,
    PerturbedGraph,
    attack_loss,
    cw_loss,
    edge_gradient,
    kl_smooth_loss,
    reweight,
    run_attack,
    select_fake_edges,
    select_relation,
)
from .evaluate import (
    CompatibilityError,
    TargetConfig,
    TargetModel,
    adapt_to_new_graph,
    drop_relation_study,
    evaluate,
    theorem1_probe,
    train_targets,
    transfer_attack,
)
from .graph import BudgetViolation, GraphError, HeteroGraph, InjectionLedger, inject_node, materialize
from .io import load_graph, save_graph
from .surrogate import NumericFailure, SurrogateParams, TrainConfig, train_surrogate
from .synth import SyntheticSpec, standard_spec, synth_generate

__version__ = "0.1.0"

__all__ = [
    "AttackBudget",
    "AttackResult",
    "FakeNodeGenerator",
    "PerturbedGraph",
    "attack_loss",
    "cw_loss",
    "edge_gradient",
    "kl_smooth_loss",
    "reweight",
    "run_attack",
    "select_fake_edges",
    "select_relation",
    "CompatibilityError",
    "TargetConfig",
    "TargetModel",
    "adapt_to_new_graph",
    "drop_relation_study",
    "evaluate",
    "theorem1_probe",
    "train_targets",
    "transfer_attack",
    "BudgetViolation",
    "GraphError",
    "HeteroGraph",
    "InjectionLedger",
    "inject_node",
    "materialize",
    "load_graph",
    "save_graph",
    "NumericFailure",
    "SurrogateParams",
    "TrainConfig",
    "train_surrogate",
    "SyntheticSpec",
    "standard_spec",
    "synth_generate",
]
