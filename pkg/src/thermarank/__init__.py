"""Graph enumeration, optimal-control labeling, and GAT rank screening
for fluid-based thermal management architectures."""

from .architectures import (
    Architecture,
    FeatureGraph,
    FlatGraph,
    Scenario,
    canonical_key,
    enumerate_multi_split,
    enumerate_single_split,
    node_features,
    to_flat_graph,
)
from .endurance import Label, LabeledInstance, OlocConfig, label_population, optimize_endurance
from .gat import GatModel, TrainConfig, predict, train
from .metrics import j_sub, kendall_tau, n_ol, n_sub, regression_report
from .plant import ControlSchedule, PlantParams, SimResult, simulate

__all__ = [
    "Architecture", "FeatureGraph", "FlatGraph", "Scenario",
    "canonical_key", "enumerate_multi_split", "enumerate_single_split",
    "node_features", "to_flat_graph",
    "Label", "LabeledInstance", "OlocConfig", "label_population",
    "optimize_endurance",
    "GatModel", "TrainConfig", "predict", "train",
    "j_sub", "kendall_tau", "n_ol", "n_sub", "regression_report",
    "ControlSchedule", "PlantParams", "SimResult", "simulate",
]
