"""Adaptive dropout for sigmoid MLPs via Ising energy minimisation."""
from .core_math import AdamState, DimensionError, adam_step, matmul, sigmoid, softmax_cross_entropy
from .data import Batch, DataSet, batches, load_idx, shuffle_epoch, subsample
from .harness import (
    ExperimentConfig,
    MetricsReport,
    emit_masked_inputs,
    param_count,
    run_experiment,
    run_grid,
    total_dropout_rate,
)
from .ising import (
    AnnealSchedule,
    CostMapParams,
    IsingInstance,
    UnitIndexMap,
    anneal,
    brute_force_min,
    build_instance,
    energy,
    gaussian_cost,
)
from .network import MaskSet, NetworkSpec, WeightBank, backprop_step, forward, init_weights, merge_weights
from .training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
