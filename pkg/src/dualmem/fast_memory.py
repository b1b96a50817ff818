"""Multiplicative hypernetwork (mHN) fast memory.

Kernels are products of ``order`` hidden activations drawn from the
concatenated deep-memory representation, plus a constant bias column. Each
class has its own linear regression on 0/1 targets, updated per instance by
exact recursive least squares starting from ``P = I, B = 0`` (a unit ridge
penalty). All classes see the same kernel vector, so they share one ``P``;
only ``B`` and ``w`` carry a class axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import _backend

__all__ = [
    "FastMemoryConfig",
    "KernelBasis",
    "MhnModel",
    "RlsState",
    "eval_kernels",
    "eval_kernels_batch",
    "expand_kernels",
    "mhn_init",
    "mhn_predict",
    "mhn_update",
    "prune_kernels",
    "refit",
    "rls_init",
    "rls_update",
    "sample_kernels",
]


@dataclass
class FastMemoryConfig:
    kernels_per_block: int | None = None  # None -> 10x the block width
    keep_fraction: float = 0.75
    order: int = 2

    def kernels_for(self, width: int) -> int:
        return self.kernels_per_block if self.kernels_per_block is not None else 10 * width


@dataclass
class KernelBasis:
    kernels: np.ndarray  # (n_kernels, order) feature indices, sorted within a row
    order: int
    feature_dim: int
    feature_blocks: list[tuple[int, int, int]] = field(default_factory=list)  # (block id, start, stop)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.intp).reshape(-1, self.order)

    @property
    def n_kernels(self) -> int:
        return len(self.kernels)

    @property
    def dim(self) -> int:
        """Regression dimension: kernels plus the bias column."""
        return self.n_kernels + 1


@dataclass
class RlsState:
    P: np.ndarray  # (d, d)
    B: np.ndarray  # (d, k)
    w: np.ndarray  # (d, k)
    t: int = 0

    @property
    def dim(self) -> int:
        return self.P.shape[0]

    def copy(self) -> "RlsState":
        return RlsState(self.P.copy(), self.B.copy(), self.w.copy(), self.t)

    def update_(self, phi: np.ndarray, y) -> None:
        phi = np.ascontiguousarray(phi, dtype=np.float64)
        if phi.shape != (self.dim,):
            raise ValueError(f"kernel vector has shape {phi.shape}, expected ({self.dim},)")
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.B.shape[1],):
            y = np.ascontiguousarray(np.broadcast_to(y, (self.B.shape[1],)))
        self._absorb(phi, y)

    def _absorb(self, phi: np.ndarray, y: np.ndarray) -> None:
        # callers guarantee contiguous float64 of the right shapes
        if not math.isfinite(phi.sum()):
            raise ValueError("non-finite kernel activations")
        _backend.rls_rank1_update(self.P, self.B, self.w, phi, y)
        self.t += 1


def rls_init(dim: int, n_targets: int = 1) -> RlsState:
    if dim < 1:
        raise ValueError("RLS dimension must be at least 1")
    return RlsState(
        P=np.eye(dim),
        B=np.zeros((dim, n_targets)),
        w=np.zeros((dim, n_targets)),
    )


def rls_update(state: RlsState, phi: np.ndarray, y) -> RlsState:
    """Return the state after absorbing ``(phi, y)``; ``state`` is left untouched."""
    out = state.copy()
    out.update_(phi, y)
    return out


@dataclass
class MhnModel:
    basis: KernelBasis
    rls: RlsState
    class_count: int

    def copy(self) -> "MhnModel":
        return MhnModel(replace(self.basis, kernels=self.basis.kernels.copy(),
                                feature_blocks=list(self.basis.feature_blocks)),
                        self.rls.copy(), self.class_count)

    def class_state(self, c: int) -> RlsState:
        """Single-target view of class ``c``'s regression."""
        return RlsState(self.rls.P.copy(), self.rls.B[:, c : c + 1].copy(),
                        self.rls.w[:, c : c + 1].copy(), self.rls.t)

    def update_(self, v: np.ndarray, label: int) -> None:
        if not 0 <= label < self.class_count:
            raise ValueError(f"label {label} outside the {self.class_count} known classes")
        basis = self.basis
        v = np.asarray(v)
        if v.shape != (basis.feature_dim,):
            raise ValueError(f"feature vector has shape {v.shape}, expected ({basis.feature_dim},)")
        phi = np.empty(basis.dim)
        if basis.n_kernels:
            _backend.eval_products(v[None, :], basis.kernels, phi[None, :-1])
        phi[-1] = 1.0
        self.rls._absorb(phi, _one_hot(self.class_count, label))

    def scores(self, V: np.ndarray) -> np.ndarray:
        return eval_kernels_batch(self.basis, V) @ self.rls.w

    def predict(self, V: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(V), axis=1)


_ONE_HOT: dict[int, np.ndarray] = {}


def _one_hot(class_count: int, label: int) -> np.ndarray:
    eye = _ONE_HOT.get(class_count)
    if eye is None:
        eye = _ONE_HOT[class_count] = np.eye(class_count)
        eye.flags.writeable = False
    return eye[label]


def mhn_init(class_count: int, order: int = 2) -> MhnModel:
    """An mHN with no features yet: only the bias column is active."""
    basis = KernelBasis(np.empty((0, order), dtype=np.intp), order, 0, [])
    return MhnModel(basis, rls_init(1, class_count), class_count)


def sample_kernels(
    feature_dim: int,
    count: int,
    order: int,
    rng: np.random.Generator,
    restrict_to: tuple[int, int] | None = None,
    exclude: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``count`` distinct kernels of ``order`` distinct feature indices.

    With ``restrict_to=(start, stop)`` every kernel touches at least one
    index in that range. Rows listed in ``exclude`` are never returned.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if order < 1 or order > feature_dim:
        raise ValueError(f"order {order} impossible with {feature_dim} features")
    lo, hi = restrict_to if restrict_to is not None else (0, feature_dim)
    if not 0 <= lo < hi <= feature_dim:
        raise ValueError(f"restrict_to {restrict_to} outside [0, {feature_dim})")
    taken = {tuple(row) for row in np.asarray(exclude if exclude is not None else [], dtype=np.intp).reshape(-1, order)}
    n_taken_inside = sum(1 for k in taken if any(lo <= i < hi for i in k))
    available = math.comb(feature_dim, order) - math.comb(feature_dim - (hi - lo), order) - n_taken_inside
    if count > available:
        raise ValueError(f"only {available} admissible kernels remain, {count} requested")

    chosen: dict[tuple[int, ...], None] = {}
    while len(chosen) < count:
        need = count - len(chosen)
        for row in _draw_distinct(rng, 2 * need + 8, feature_dim, order):
            key = tuple(int(i) for i in row)
            if key in taken or key in chosen:
                continue
            if not any(lo <= i < hi for i in key):
                continue
            chosen[key] = None
            if len(chosen) == count:
                break
    return np.array(list(chosen), dtype=np.intp).reshape(count, order)


def _draw_distinct(rng: np.random.Generator, n: int, dim: int, order: int) -> np.ndarray:
    # iid draws with repeats rejected: uniform over index subsets
    rows = rng.integers(0, dim, size=(n, order))
    rows.sort(axis=1)
    ok = np.all(np.diff(rows, axis=1) > 0, axis=1) if order > 1 else np.ones(n, bool)
    return rows[ok]


def eval_kernels(basis: KernelBasis, v: np.ndarray) -> np.ndarray:
    """Kernel activations for one feature vector, bias last."""
    v = np.asarray(v)
    if v.shape != (basis.feature_dim,):
        raise ValueError(f"feature vector has shape {v.shape}, expected ({basis.feature_dim},)")
    return eval_kernels_batch(basis, v[None, :])[0]


def eval_kernels_batch(basis: KernelBasis, V: np.ndarray) -> np.ndarray:
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[1] != basis.feature_dim:
        raise ValueError(f"features have shape {V.shape}, expected (n, {basis.feature_dim})")
    out = np.empty((len(V), basis.dim), dtype=np.float64)
    if basis.n_kernels:
        _backend.eval_products(V, basis.kernels, out[:, :-1])
    out[:, -1] = 1.0
    return out


def mhn_update(model: MhnModel, v: np.ndarray, label: int) -> MhnModel:
    """One-vs-rest RLS step on one instance; returns a new model."""
    out = model.copy()
    out.update_(v, label)
    return out


def mhn_predict(model: MhnModel, v: np.ndarray) -> tuple[np.ndarray, int]:
    scores = eval_kernels(model.basis, v) @ model.rls.w
    return scores, int(np.argmax(scores))


def _gram(basis: KernelBasis, features: np.ndarray, labels: np.ndarray, class_count: int,
          chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    d = basis.dim
    G = np.eye(d)
    B = np.zeros((d, class_count))
    for s in range(0, len(features), chunk):
        phi = eval_kernels_batch(basis, features[s : s + chunk])
        G += phi.T @ phi
        B += phi.T @ np.eye(class_count)[labels[s : s + chunk]]
    return G, B


def refit(model: MhnModel, features: np.ndarray, labels: np.ndarray) -> MhnModel:
    """Batch ridge solve (unit penalty) over stored examples.

    Rebuilds ``P = (I + Phi'Phi)^-1``, ``B = Phi'Y`` and ``w = P B``, so that
    later :meth:`MhnModel.update_` calls continue exactly as if the stored
    examples had been streamed one by one.
    """
    if len(features) == 0:
        raise ValueError("cannot refit on empty storage")
    labels = np.asarray(labels, dtype=np.intp)
    G, B = _gram(model.basis, features, labels, model.class_count)
    factor = scipy.linalg.cho_factor(G, lower=False)
    P = scipy.linalg.cho_solve(factor, np.eye(len(G)))
    P = 0.5 * (P + P.T)
    w = P @ B
    return MhnModel(model.basis, RlsState(P, B, w, len(features)), model.class_count)


def prune_kernels(model: MhnModel, keep_fraction: float, features: np.ndarray,
                  labels: np.ndarray) -> MhnModel:
    """Drop the least relevant kernels and refit on storage.

    Relevance of kernel p is ``max_c |w[p, c]| * std(phi_p)`` over storage.
    The bias column is never a candidate.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    basis = model.basis
    n = basis.n_kernels
    keep_n = max(1, math.ceil(keep_fraction * n - 1e-9)) if n else 0
    if keep_n < n:
        std = _kernel_std(basis, features)
        relevance = np.abs(model.rls.w[:-1]).max(axis=1) * std
        # stable: ties resolved toward older kernels
        order = np.argsort(-relevance, kind="stable")
        kept = np.sort(order[:keep_n])
        basis = replace(basis, kernels=basis.kernels[kept], feature_blocks=list(basis.feature_blocks))
    return refit(MhnModel(basis, model.rls, model.class_count), features, labels)


def _kernel_std(basis: KernelBasis, features: np.ndarray, chunk: int = 4096) -> np.ndarray:
    n = len(features)
    s1 = np.zeros(basis.n_kernels)
    s2 = np.zeros(basis.n_kernels)
    for s in range(0, n, chunk):
        phi = eval_kernels_batch(basis, features[s : s + chunk])[:, :-1]
        s1 += phi.sum(axis=0)
        s2 += np.square(phi).sum(axis=0)
    mean = s1 / n
    return np.sqrt(np.maximum(s2 / n - mean**2, 0.0))


def expand_kernels(
    model: MhnModel,
    new_block: tuple[int, int],
    features: np.ndarray,
    labels: np.ndarray,
    cfg: FastMemoryConfig,
    rng: np.random.Generator,
) -> MhnModel:
    """Grow the feature space by one block and add kernels that touch it.

    ``features`` are the stored examples' representations in the enlarged
    space. After merging, all class regressions are refit on storage and
    :func:`prune_kernels` is applied.
    """
    block_id, width = new_block
    if width < 1:
        raise ValueError("new block must have positive width")
    if len(features) == 0:
        raise ValueError("cannot expand kernels without stored examples")
    old = model.basis
    new_dim = old.feature_dim + width
    features = np.asarray(features)
    if features.shape[1] != new_dim:
        raise ValueError(f"storage features have width {features.shape[1]}, expected {new_dim}")
    if cfg.order > new_dim:
        raise ValueError(f"kernel order {cfg.order} exceeds feature dimension {new_dim}")
    fresh = sample_kernels(new_dim, cfg.kernels_for(width), cfg.order, rng,
                           restrict_to=(old.feature_dim, new_dim), exclude=old.kernels)
    basis = KernelBasis(
        kernels=np.concatenate([old.kernels, fresh]),
        order=cfg.order,
        feature_dim=new_dim,
        feature_blocks=list(old.feature_blocks) + [(block_id, old.feature_dim, new_dim)],
    )
    merged = refit(MhnModel(basis, model.rls, model.class_count), features, labels)
    return prune_kernels(merged, cfg.keep_fraction, features, labels)
