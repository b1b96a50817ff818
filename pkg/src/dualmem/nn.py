"""Dense feed-forward classifier trained with momentum SGD.

Weights are stored as ``(fan_out, fan_in)`` matrices; hidden layers use a
rectifier and the output layer a softmax. Every public operation returns a
fresh model; the in-place helpers prefixed with an underscore are used by
:func:`train_epochs` to avoid copying on every mini-batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DivergenceError",
    "Gradients",
    "LrSchedule",
    "MlpModel",
    "forward",
    "hidden_features",
    "init_mlp",
    "loss_gradients",
    "schedule_rate",
    "sgd_step",
    "softmax",
    "train_epochs",
    "transfer_init",
]


class DivergenceError(FloatingPointError):
    """Raised when training produces non-finite gradients."""


@dataclass
class MlpModel:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    momentum_w: list[np.ndarray]
    momentum_b: list[np.ndarray]
    steps_seen: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            momentum_w=[m.copy() for m in self.momentum_w],
            momentum_b=[m.copy() for m in self.momentum_b],
            steps_seen=self.steps_seen,
        )

    def astype(self, dtype) -> "MlpModel":
        """Return a copy with every array cast to ``dtype`` (used for 64-bit gradient checks)."""
        return MlpModel(
            layer_dims=self.layer_dims,
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            momentum_w=[m.astype(dtype) for m in self.momentum_w],
            momentum_b=[m.astype(dtype) for m in self.momentum_b],
            steps_seen=self.steps_seen,
        )

    def equals(self, other: "MlpModel") -> bool:
        """Exact (bitwise) equality of architecture, parameters, buffers and counter."""
        if self.layer_dims != other.layer_dims or self.steps_seen != other.steps_seen:
            return False
        pairs = zip(
            self.weights + self.biases + self.momentum_w + self.momentum_b,
            other.weights + other.biases + other.momentum_w + other.momentum_b,
        )
        return all(a.dtype == b.dtype and np.array_equal(a, b) for a, b in pairs)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    batch_size: int
    loss: float = float("nan")

    def norm(self) -> float:
        sq = sum(float(np.sum(np.square(g, dtype=np.float64))) for g in self.weights + self.biases)
        return math.sqrt(sq)


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate schedule.

    ``inv-sqrt`` returns ``base_rate / sqrt(t)``; ``step-decay`` divides
    ``base_rate`` by ``decay_factor`` once per drop point already reached.
    """

    kind: str
    base_rate: float
    decay_factor: float = 10.0
    drop_points: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("inv-sqrt", "step-decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        object.__setattr__(self, "drop_points", tuple(int(p) for p in self.drop_points))
        if self.kind == "step-decay":
            if not self.decay_factor > 1:
                raise ValueError("decay_factor must be > 1 for step-decay")
            if list(self.drop_points) != sorted(self.drop_points):
                raise ValueError("drop_points must be sorted")


def schedule_rate(schedule: LrSchedule, progress: float) -> float:
    if schedule.kind == "inv-sqrt":
        if not progress > 0:
            raise ValueError(f"inv-sqrt progress must be positive, got {progress}")
        return schedule.base_rate / math.sqrt(progress)
    if progress < 0:
        raise ValueError(f"epoch must be nonnegative, got {progress}")
    drops = sum(1 for p in schedule.drop_points if p <= progress)
    return schedule.base_rate / schedule.decay_factor**drops


def _init_layer(fan_in: int, fan_out: int, rng: np.random.Generator, dtype) -> tuple[np.ndarray, np.ndarray]:
    scale = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-scale, scale, size=(fan_out, fan_in)).astype(dtype)
    return w, np.zeros(fan_out, dtype=dtype)


def init_mlp(layer_dims: Sequence[int], rng: np.random.Generator, dtype=np.float32) -> MlpModel:
    """Create a network with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValueError(f"need at least input and output dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"all layer dims must be positive, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w, b = _init_layer(fan_in, fan_out, rng, dtype)
        weights.append(w)
        biases.append(b)
    return MlpModel(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        momentum_w=[np.zeros_like(w) for w in weights],
        momentum_b=[np.zeros_like(b) for b in biases],
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != model.layer_dims[0]:
        raise ValueError(f"expected input of width {model.layer_dims[0]}, got shape {x.shape}")
    return xb.astype(model.dtype, copy=False), single


def _forward_batch(model: MlpModel, xb: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    acts = [xb]
    a = xb
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0)
        acts.append(a)
    logits = a @ model.weights[-1].T + model.biases[-1]
    return acts, logits


def forward(model: MlpModel, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Run the network on a vector or a row batch.

    Returns the activations of the input and every hidden layer (post
    rectifier) together with the class probabilities.
    """
    xb, single = _as_batch(model, x)
    acts, logits = _forward_batch(model, xb)
    probs = softmax(logits)
    if single:
        return [a[0] for a in acts], probs[0]
    return acts, probs


def predict_proba(model: MlpModel, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
    xb, single = _as_batch(model, x)
    out = np.empty((len(xb), model.layer_dims[-1]), dtype=model.dtype)
    for s in range(0, len(xb), chunk):
        _, logits = _forward_batch(model, xb[s : s + chunk])
        out[s : s + chunk] = softmax(logits)
    return out[0] if single else out


def hidden_features(model: MlpModel, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Penultimate-layer activations (the representation fed to fast memory)."""
    xb, single = _as_batch(model, x)
    out = np.empty((len(xb), model.layer_dims[-2]), dtype=model.dtype)
    for s in range(0, len(xb), chunk):
        acts, _ = _forward_batch(model, xb[s : s + chunk])
        out[s : s + chunk] = acts[-1]
    return out[0] if single else out


def loss_gradients(model: MlpModel, x: np.ndarray, y: np.ndarray) -> Gradients:
    """Gradients of the mean softmax cross-entropy over the batch."""
    xb, _ = _as_batch(model, x)
    y = np.atleast_1d(np.asarray(y))
    n = len(xb)
    if n == 0:
        raise ValueError("empty batch")
    if len(y) != n:
        raise ValueError(f"{n} inputs but {len(y)} labels")
    acts, logits = _forward_batch(model, xb)
    probs = softmax(logits)
    rows = np.arange(n)
    loss = float(-np.mean(np.log(np.maximum(probs[rows, y], np.finfo(probs.dtype).tiny))))
    delta = probs
    delta[rows, y] -= 1
    delta /= n
    gw = [None] * model.n_layers
    gb = [None] * model.n_layers
    for layer in range(model.n_layers - 1, -1, -1):
        gw[layer] = delta.T @ acts[layer]
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ model.weights[layer]) * (acts[layer] > 0)
    return Gradients(weights=gw, biases=gb, batch_size=n, loss=loss)


def _check_finite(grads: Gradients) -> None:
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient entries; training diverged")


def _sgd_step_inplace(model: MlpModel, grads: Gradients, lr: float, momentum: float) -> None:
    _check_finite(grads)
    for i in range(model.n_layers):
        for param, buf, g in (
            (model.weights[i], model.momentum_w[i], grads.weights[i]),
            (model.biases[i], model.momentum_b[i], grads.biases[i]),
        ):
            buf *= momentum
            buf -= lr * g
            param += buf
    model.steps_seen += grads.batch_size


def sgd_step(model: MlpModel, grads: Gradients, lr: float, momentum: float) -> MlpModel:
    """One momentum step: ``buf = momentum*buf - lr*grad``; ``param += buf``."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    for g, w in zip(grads.weights, model.weights):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weight {w.shape}")
    out = model.copy()
    _sgd_step_inplace(out, grads, lr, momentum)
    return out


def train_epochs(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    schedule: LrSchedule | float,
    epochs: int,
    batch_size: int,
    rng: np.random.Generator,
    momentum: float = 0.9,
) -> MlpModel:
    """Mini-batch training for a fixed epoch budget.

    A :class:`LrSchedule` is evaluated per epoch (epoch index as progress);
    a plain float is used as a constant rate. The data order is reshuffled
    with ``rng`` at the start of every epoch.
    """
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    out = model.copy()
    xs = np.asarray(x, dtype=model.dtype)
    ys = np.asarray(y)
    n = len(xs)
    for epoch in range(epochs):
        lr = schedule_rate(schedule, epoch) if isinstance(schedule, LrSchedule) else float(schedule)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grads = loss_gradients(out, xs[idx], ys[idx])
            _sgd_step_inplace(out, grads, lr, momentum)
    return out


def transfer_init(source: MlpModel, rng: np.random.Generator) -> MlpModel:
    """Copy every layer but the softmax layer from ``source``; re-draw the last one."""
    if source.n_layers < 1 or len(source.layer_dims) < 2:
        raise ValueError("source network is malformed")
    w_last, b_last = _init_layer(source.layer_dims[-2], source.layer_dims[-1], rng, source.dtype)
    weights = [w.copy() for w in source.weights[:-1]] + [w_last]
    biases = [b.copy() for b in source.biases[:-1]] + [b_last]
    return MlpModel(
        layer_dims=source.layer_dims,
        weights=weights,
        biases=biases,
        momentum_w=[np.zeros_like(w) for w in weights],
        momentum_b=[np.zeros_like(b) for b in biases],
    )
