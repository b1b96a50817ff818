"""Deep memory: a bounded FIFO storage plus the stream-learning orchestrators.

Each ``*_step`` function takes the current :class:`EnsembleState`, the newly
arrived examples and a :class:`DeepConfig`, and returns a new state. Models
are never mutated in place, so a state can be kept as a snapshot.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import LrSchedule, MlpModel, init_mlp, predict_proba, schedule_rate, train_epochs, transfer_init

__all__ = [
    "DeepConfig",
    "EnsembleState",
    "MethodKind",
    "StorageWindow",
    "batch_step",
    "ensemble_predict",
    "init_state",
    "mbs_gd_bootstrap",
    "mbs_gd_ensemble_step",
    "mbs_gd_step",
    "naive_step",
    "neural_prior_ensemble_step",
    "neural_prior_step",
    "prune_ensemble",
    "window_push",
]


class MethodKind(str, enum.Enum):
    NAIVE_ENSEMBLE = "naive-ensemble"
    MBS_GD = "mbs-gd"
    MBS_GD_ENSEMBLE = "mbs-gd-ensemble"
    NEURAL_PRIOR = "neural-prior"
    NEURAL_PRIOR_ENSEMBLE = "neural-prior-ensemble"
    BATCH = "batch"

    @property
    def slides(self) -> bool:
        return self in (MethodKind.MBS_GD, MethodKind.MBS_GD_ENSEMBLE)

    @property
    def is_ensemble(self) -> bool:
        return self in (MethodKind.NAIVE_ENSEMBLE, MethodKind.MBS_GD_ENSEMBLE, MethodKind.NEURAL_PRIOR_ENSEMBLE)


@dataclass
class DeepConfig:
    layer_dims: tuple[int, ...]
    n_subset: int
    n_new: int
    epochs: int = 20
    batch_size: int = 64
    momentum: float = 0.9
    step_decay: LrSchedule = field(default_factory=lambda: LrSchedule("step-decay", 0.01, 10.0, (15,)))
    inv_sqrt: LrSchedule = field(default_factory=lambda: LrSchedule("inv-sqrt", 0.1))
    bootstrap_epochs: int | None = None  # None -> epochs
    batch_epochs: int | None = None  # None -> epochs
    spawn_epochs: int | None = None  # weak networks spawned from C; None -> epochs

    def __post_init__(self):
        if self.n_subset < 1 or self.n_new < 1:
            raise ValueError("n_subset and n_new must be positive")
        if self.n_new > self.n_subset:
            raise ValueError("n_new cannot exceed n_subset")


@dataclass
class StorageWindow:
    """FIFO storage of at most ``capacity`` examples, oldest first."""

    capacity: int
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray

    @classmethod
    def empty(cls, capacity: int, feature_dim: int, dtype=np.float32) -> "StorageWindow":
        if capacity < 1:
            raise ValueError("capacity must be positive")
        return cls(capacity, np.empty((0, feature_dim), dtype=dtype), np.empty(0, np.int64), np.empty(0, np.int64))

    def __len__(self) -> int:
        return len(self.ids)


def window_push(window: StorageWindow, X: np.ndarray, y: np.ndarray, ids: np.ndarray) -> StorageWindow:
    """Append new examples and evict the oldest beyond capacity."""
    if len(ids) > window.capacity:
        raise ValueError(f"cannot push {len(ids)} examples into a window of capacity {window.capacity}")
    if not len(X) == len(y) == len(ids):
        raise ValueError("X, y and ids must have equal length")
    keep = max(0, len(window) + len(ids) - window.capacity)
    return StorageWindow(
        window.capacity,
        np.concatenate([window.X[keep:], np.asarray(X, dtype=window.X.dtype)]),
        np.concatenate([window.y[keep:], np.asarray(y, dtype=np.int64)]),
        np.concatenate([window.ids[keep:], np.asarray(ids, dtype=np.int64)]),
    )


def _push_tail(window: StorageWindow, X, y, ids) -> StorageWindow:
    # chunks larger than the storage keep only their newest examples
    c = window.capacity
    return window_push(window, X[-c:], y[-c:], ids[-c:])


@dataclass
class EnsembleState:
    method: MethodKind
    window: StorageWindow
    weak_models: list[MlpModel] = field(default_factory=list)
    general_model: MlpModel | None = None
    prev_spawn_id: int | None = None  # newest example id in the last weak spawn's training data
    since_spawn: int = 0  # examples pushed since the last weak spawn
    instances_seen: int = 0
    chunks_seen: int = 0


def init_state(method: MethodKind | str, cfg: DeepConfig) -> EnsembleState:
    method = MethodKind(method)
    return EnsembleState(method, StorageWindow.empty(cfg.n_subset, cfg.layer_dims[0]))


def _require(chunk_X: np.ndarray) -> None:
    if len(chunk_X) == 0:
        raise ValueError("empty chunk")


def _fit_fresh(cfg: DeepConfig, X, y, rng, epochs=None) -> MlpModel:
    model = init_mlp(cfg.layer_dims, rng)
    return train_epochs(model, X, y, cfg.step_decay, cfg.epochs if epochs is None else epochs,
                        cfg.batch_size, rng, cfg.momentum)


def _fit_from(source: MlpModel, cfg: DeepConfig, X, y, rng, epochs=None) -> MlpModel:
    model = transfer_init(source, rng)
    return train_epochs(model, X, y, cfg.step_decay, cfg.epochs if epochs is None else epochs,
                        cfg.batch_size, rng, cfg.momentum)


def _advance(state: EnsembleState, X, y, ids, **changes) -> EnsembleState:
    return replace(
        state,
        window=_push_tail(state.window, X, y, ids),
        instances_seen=state.instances_seen + len(ids),
        chunks_seen=state.chunks_seen + 1,
        **changes,
    )


def naive_step(state: EnsembleState, X, y, ids, cfg: DeepConfig, rng: np.random.Generator) -> EnsembleState:
    """Bagging baseline: a fresh network per chunk, no transfer."""
    _require(X)
    model = _fit_fresh(cfg, X, y, rng)
    return _advance(state, X, y, ids, weak_models=state.weak_models + [model])


def neural_prior_step(state: EnsembleState, X, y, ids, cfg: DeepConfig, rng: np.random.Generator) -> EnsembleState:
    """Fine-tune a transfer of the previous network on the chunk; keep only the newest."""
    _require(X)
    prev = state.weak_models[-1] if state.weak_models else None
    model = _fit_fresh(cfg, X, y, rng) if prev is None else _fit_from(prev, cfg, X, y, rng)
    return _advance(state, X, y, ids, weak_models=[model])


def neural_prior_ensemble_step(state: EnsembleState, X, y, ids, cfg: DeepConfig,
                               rng: np.random.Generator) -> EnsembleState:
    """As :func:`neural_prior_step`, but every fine-tuned network joins the ensemble."""
    _require(X)
    prev = state.weak_models[-1] if state.weak_models else None
    model = _fit_fresh(cfg, X, y, rng) if prev is None else _fit_from(prev, cfg, X, y, rng)
    return _advance(state, X, y, ids, weak_models=state.weak_models + [model])


def batch_step(state: EnsembleState, X, y, ids, cfg: DeepConfig, rng: np.random.Generator) -> EnsembleState:
    """Reference learner: one network trained on everything it is given."""
    _require(X)
    epochs = cfg.batch_epochs if cfg.batch_epochs is not None else cfg.epochs
    model = _fit_fresh(cfg, X, y, rng, epochs=epochs)
    return _advance(state, X, y, ids, weak_models=[model])


def _spawn(state: EnsembleState, cfg: DeepConfig, rng: np.random.Generator) -> EnsembleState:
    w = state.window
    epochs = cfg.spawn_epochs if cfg.spawn_epochs is not None else cfg.epochs
    model = _fit_from(state.general_model, cfg, w.X, w.y, rng, epochs=epochs)
    return replace(state, weak_models=state.weak_models + [model], since_spawn=0,
                   prev_spawn_id=int(w.ids[-1]))


def mbs_gd_bootstrap(state: EnsembleState, X, y, ids, cfg: DeepConfig, rng: np.random.Generator) -> EnsembleState:
    """Train the general network on the first ``n_subset`` examples.

    For mbs-gd-ensemble the first weak network is transferred from it right
    away, since no earlier weak network's data can overlap this window.
    """
    _require(X)
    if state.general_model is not None:
        raise ValueError("general model already bootstrapped")
    if len(ids) != cfg.n_subset:
        raise ValueError(f"bootstrap needs exactly n_subset={cfg.n_subset} examples, got {len(ids)}")
    epochs = cfg.bootstrap_epochs if cfg.bootstrap_epochs is not None else cfg.epochs
    general = _fit_fresh(cfg, X, y, rng, epochs=epochs)
    out = _advance(state, X, y, ids, general_model=general, since_spawn=len(ids))
    if out.method is MethodKind.MBS_GD_ENSEMBLE:
        out = _spawn(out, cfg, rng)
    return out


def inv_sqrt_progress(model: MlpModel, cfg: DeepConfig) -> float:
    return 1.0 + model.steps_seen / cfg.n_new


def mbs_gd_step(state: EnsembleState, X, y, ids, cfg: DeepConfig, rng: np.random.Generator) -> EnsembleState:
    """Slide the window by the new examples and train the general network one epoch on it.

    The rate is ``inv_sqrt.base_rate / sqrt(1 + steps_seen / n_new)``.
    """
    _require(X)
    if state.general_model is None:
        raise ValueError("mbs-gd step called before bootstrap")
    if len(ids) > cfg.n_new:
        raise ValueError(f"slide of {len(ids)} exceeds n_new={cfg.n_new}")
    window = window_push(state.window, X, y, ids)
    lr = schedule_rate(cfg.inv_sqrt, inv_sqrt_progress(state.general_model, cfg))
    general = train_epochs(state.general_model, window.X, window.y, lr, 1, cfg.batch_size, rng, cfg.momentum)
    return replace(
        state,
        window=window,
        general_model=general,
        since_spawn=state.since_spawn + len(ids),
        instances_seen=state.instances_seen + len(ids),
    )


def mbs_gd_ensemble_step(state: EnsembleState, X, y, ids, cfg: DeepConfig,
                         rng: np.random.Generator) -> EnsembleState:
    """:func:`mbs_gd_step`, then spawn a weak network once the window is disjoint from the last spawn's data.

    Under FIFO eviction the window shares nothing with the previous spawn's
    window exactly when ``n_subset`` examples have arrived since it.
    """
    out = mbs_gd_step(state, X, y, ids, cfg, rng)
    if out.since_spawn >= cfg.n_subset:
        out = _spawn(out, cfg, rng)
    return out


def _members(state: EnsembleState, method: MethodKind) -> list[MlpModel]:
    if method is MethodKind.MBS_GD:
        return [state.general_model] if state.general_model is not None else []
    if method.is_ensemble:
        return state.weak_models
    return state.weak_models[-1:]


def ensemble_predict(state: EnsembleState, X: np.ndarray, method: MethodKind | str | None = None) -> np.ndarray:
    """Class probabilities: the mean of member softmax outputs for ensembles."""
    method = state.method if method is None else MethodKind(method)
    members = _members(state, method)
    if not members:
        raise ValueError(f"no trained model available for {method.value}")
    probs = predict_proba(members[0], X).astype(np.float64)
    for m in members[1:]:
        probs += predict_proba(m, X)
    return probs / len(members)


def prune_ensemble(state: EnsembleState, keep: int) -> EnsembleState:
    """Keep only the ``keep`` most recently created weak networks."""
    if keep < 1:
        raise ValueError("keep must be at least 1")
    return replace(state, weak_models=state.weak_models[-keep:])
