"""Dual-memory learning from data streams.

Deep memory is an ensemble of small networks trained on a bounded sliding
storage with transfer-initialized weak learners; fast memory is a
multiplicative-kernel network over their hidden activations, trained per
instance by exact recursive least squares.
"""

from ._backend import BACKEND
from .deep_memory import EnsembleState, MethodKind, ensemble_predict, prune_ensemble
from .fast_memory import MhnModel, expand_kernels, mhn_predict, mhn_update
from .runner import Experiment, evaluate, run_experiment

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EnsembleState",
    "Experiment",
    "MethodKind",
    "MhnModel",
    "ensemble_predict",
    "evaluate",
    "expand_kernels",
    "mhn_predict",
    "mhn_update",
    "prune_ensemble",
    "run_experiment",
]
