"""Prequential experiment loop over a chunked stream.

Chunks arrive in order; the selected deep-memory method consumes them
(sliding methods in ``n_new`` slices), and after every chunk the current
predictor is scored on the held-out test set, which never trains anything.
With fast memory on, every arriving training instance is first absorbed
by the mHN using the current ensemble's features; whenever a weak network
joins the ensemble the kernel basis is expanded and refit on storage.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _backend
from .checkpoint import save_checkpoint
from .config import ConfigError, ExperimentConfig, config_to_dict
from .deep_memory import (
    EnsembleState,
    MethodKind,
    batch_step,
    ensemble_predict,
    init_state,
    mbs_gd_bootstrap,
    mbs_gd_ensemble_step,
    mbs_gd_step,
    naive_step,
    neural_prior_ensemble_step,
    neural_prior_step,
)
from .fast_memory import MhnModel, expand_kernels, mhn_init
from .metrics import MetricsRecord, MetricsWriter
from .nn import hidden_features
from .streams import Dataset, load_idx, make_chunks, synth_gaussian

log = logging.getLogger(__name__)

__all__ = ["EvalResult", "Experiment", "evaluate", "feature_concat", "load_datasets", "run_experiment"]

_CHUNK_STEPS = {
    MethodKind.NAIVE_ENSEMBLE: naive_step,
    MethodKind.NEURAL_PRIOR: neural_prior_step,
    MethodKind.NEURAL_PRIOR_ENSEMBLE: neural_prior_ensemble_step,
}


@dataclass
class EvalResult:
    acc: float
    per_class_acc: list[float | None]
    support: list[int]


def evaluate(predictor: Callable[[np.ndarray], np.ndarray], test: Dataset) -> EvalResult:
    """Argmax accuracy of ``predictor`` (rows of class scores) on ``test``.

    Ties go to the lowest class id. Classes absent from ``test`` get
    ``None`` as their per-class accuracy.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    scores = np.asarray(predictor(test.X))
    if scores.shape != (len(test), test.class_count):
        raise ValueError(f"predictor returned shape {scores.shape}, expected {(len(test), test.class_count)}")
    correct = np.argmax(scores, axis=1) == test.y
    support = np.bincount(test.y, minlength=test.class_count)
    hits = np.bincount(test.y, weights=correct, minlength=test.class_count)
    per_class = [float(h / s) if s else None for h, s in zip(hits, support)]
    return EvalResult(float(correct.mean()), per_class, support.tolist())


def feature_concat(state: EnsembleState, X: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Hidden features of every weak network, concatenated in creation order.

    Returns the (n, total_width) float64 matrix and the ``(model index,
    start, stop)`` block of each network.
    """
    if not state.weak_models:
        raise ValueError("ensemble has no weak networks")
    X = np.atleast_2d(X)
    parts, blocks, start = [], [], 0
    for i, model in enumerate(state.weak_models):
        h = hidden_features(model, X)
        parts.append(h)
        blocks.append((i, start, start + h.shape[1]))
        start += h.shape[1]
    return np.concatenate(parts, axis=1).astype(np.float64), blocks


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.source == "mnist":
        root = Path(ds.path)
        names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
        missing = [n for n in names if not (root / n).is_file()]
        if missing:
            raise ConfigError(f"MNIST files missing under {root}: {', '.join(missing)}")
        train = load_idx(root / names[0], root / names[1], "train")
        test = load_idx(root / names[2], root / names[3], "test")
    else:
        s = ds.synthetic
        rng = np.random.default_rng([cfg.seed, 7])
        train = synth_gaussian(s.class_count, s.dim, s.n_train_per_class, s.separation, rng)
        test = synth_gaussian(s.class_count, s.dim, s.n_test_per_class, s.separation, rng,
                              centers=train.centers, split="test")
    if ds.train_limit:
        train = train.subset(np.arange(min(ds.train_limit, len(train))))
    if ds.test_limit:
        test = test.subset(np.arange(min(ds.test_limit, len(test))))
    return train, test


class Experiment:
    """One configured run. ``run()`` returns deep records followed by fast-memory records."""

    def __init__(self, cfg: ExperimentConfig, train: Dataset | None = None, test: Dataset | None = None):
        self.cfg = cfg.validate()
        if train is None or test is None:
            train, test = load_datasets(cfg)
        self.train, self.test = train, test
        self.method = cfg.method_kind
        self.deep_cfg = cfg.deep_config(train.feature_dim, train.class_count)
        self.fast_cfg = cfg.fast_config()
        self.out = Path(cfg.output_dir)
        self.rng = np.random.default_rng(cfg.seed)
        self.state = init_state(self.method, self.deep_cfg)
        self.mhn: MhnModel | None = None
        self.records: list[MetricsRecord] = []
        self.fast_records: list[MetricsRecord] = []
        self.seen: list[np.ndarray] = []
        self.update_ns: list[np.ndarray] = []
        self.update_segment: list[np.ndarray] = []
        self.weak_train: list[dict] = []
        self._segment = 0

    # -- fast memory -----------------------------------------------------

    @property
    def fast_on(self) -> bool:
        return self.cfg.fast_memory.enabled

    def _absorb(self, ids: np.ndarray) -> None:
        """Per-instance mHN updates for newly arrived examples."""
        if not self.fast_on or self.mhn is None or len(ids) == 0:
            return
        feats, _ = feature_concat(self.state, self.train.X[ids])
        labels = self.train.y[ids]
        times = np.empty(len(ids), dtype=np.int64)
        mhn = self.mhn
        clock = time.perf_counter_ns
        trace = self.cfg.fast_memory.trace_every
        for i in range(len(ids)):
            t0 = clock()
            mhn.update_(feats[i], int(labels[i]))
            times[i] = clock() - t0
            if trace and (self._fast_seen + i + 1) % trace == 0:
                self._trace(self._fast_seen + i + 1)
        self._fast_seen += len(ids)
        self.update_ns.append(times)
        self.update_segment.append(np.full(len(ids), self._segment))

    def _trace(self, step: int) -> None:
        n = self.cfg.fast_memory.trace_test_size
        sub = self.test.subset(np.arange(min(n, len(self.test))))
        res = evaluate(self._fast_scores, sub)
        with (self.out / "fast_trace.jsonl").open("a") as fh:
            fh.write(json.dumps({"step": step, "acc": res.acc, "kernel_count": self.mhn.basis.n_kernels}) + "\n")

    def _fast_scores(self, X: np.ndarray) -> np.ndarray:
        feats, _ = feature_concat(self.state, X)
        return self.mhn.scores(feats)

    def _expand(self, n_before: int) -> None:
        """Grow the mHN for weak networks created since ``n_before``."""
        if not self.fast_on:
            return
        n_after = len(self.state.weak_models)
        if n_after <= n_before:
            return
        if self.cfg.fast_memory.refit_storage == "seen":
            storage = np.concatenate(self.seen)
        else:
            storage = self.state.window.ids
        if self.mhn is None:
            self.mhn = mhn_init(self.train.class_count, self.fast_cfg.order)
        feats, blocks = feature_concat(self.state, self.train.X[storage])
        labels = self.train.y[storage]
        for i in range(n_before, n_after):
            block_id, start, stop = blocks[i]
            self.mhn = expand_kernels(self.mhn, (block_id, stop - start), feats[:, :stop], labels,
                                      self.fast_cfg, self.rng)
        self._segment += 1

    # -- deep memory -----------------------------------------------------

    def _data(self, ids: np.ndarray):
        return self.train.X[ids], self.train.y[ids], ids

    def _timed(self, fn, ids, kind: str):
        n_before = len(self.state.weak_models)
        t0 = time.perf_counter()
        self.state = fn(self.state, *self._data(ids), self.deep_cfg, self.rng)
        elapsed = time.perf_counter() - t0
        self.seen.append(ids)
        spawned = len(self.state.weak_models) > n_before or (
            self.method in (MethodKind.NEURAL_PRIOR, MethodKind.BATCH))
        if spawned:
            self.weak_train.append({"kind": kind, "seconds": elapsed, "n_examples": int(len(ids)),
                                    "instances_seen": self.state.instances_seen})
        self._expand(n_before)
        return elapsed

    def _run_chunks(self, chunks: list[np.ndarray]) -> None:
        step = _CHUNK_STEPS[self.method]
        for chunk in chunks:
            self._absorb(chunk)
            elapsed = self._timed(step, chunk, "chunk")
            self._record(elapsed)

    def _run_batch(self, chunks: list[np.ndarray]) -> None:
        everything = np.concatenate(chunks)
        elapsed = self._timed(batch_step, everything, "batch")
        self._record(elapsed)

    def _run_sliding(self, chunks: list[np.ndarray]) -> None:
        cfg = self.deep_cfg
        step = mbs_gd_ensemble_step if self.method is MethodKind.MBS_GD_ENSEMBLE else mbs_gd_step
        carry = np.empty(0, dtype=np.int64)
        for ci, chunk in enumerate(chunks):
            buf = np.concatenate([carry, chunk])
            elapsed = 0.0
            if self.state.general_model is None and len(buf) >= cfg.n_subset:
                first, buf = buf[: cfg.n_subset], buf[cfg.n_subset :]
                elapsed += self._timed(mbs_gd_bootstrap, first, "bootstrap")
            if self.state.general_model is not None:
                last = ci == len(chunks) - 1
                while len(buf) >= cfg.n_new or (last and len(buf)):
                    piece, buf = buf[: cfg.n_new], buf[cfg.n_new :]
                    self._absorb(piece)
                    elapsed += self._timed(step, piece, "slide")
            carry = buf
            if self.state.general_model is not None:
                self._record(elapsed)
        if self.state.general_model is None:
            raise ValueError(f"stream of {sum(map(len, chunks))} examples never filled n_subset={cfg.n_subset}")

    # -- bookkeeping -----------------------------------------------------

    def _record(self, elapsed: float) -> None:
        step = self.state.instances_seen
        res = evaluate(lambda X: ensemble_predict(self.state, X), self.test)
        rec = MetricsRecord(step, self.method.value, res.acc, res.per_class_acc, elapsed * 1e3,
                            len(self.state.weak_models), self.mhn.basis.n_kernels if self.mhn else None)
        self.records.append(rec)
        self._writer.write(rec)
        log.info("%s step=%d acc=%.4f members=%d", self.method.value, step, res.acc, rec.ensemble_size)
        if self.fast_on and self.mhn is not None:
            fres = evaluate(self._fast_scores, self.test)
            frec = MetricsRecord(step, f"{self.method.value}+mhn", fres.acc, fres.per_class_acc, None,
                                 len(self.state.weak_models), self.mhn.basis.n_kernels)
            self.fast_records.append(frec)
            self._fast_writer.write(frec)
            log.info("  +mhn acc=%.4f kernels=%d", fres.acc, self.mhn.basis.n_kernels)

    def _write_manifest(self, chunks: list[np.ndarray]) -> None:
        manifest = {
            "config": config_to_dict(self.cfg),
            "seed": self.cfg.seed,
            "chunk_sizes": [int(len(c)) for c in chunks],
            "train_size": len(self.train),
            "test_size": len(self.test),
            "class_count": self.train.class_count,
            "layer_dims": list(self.deep_cfg.layer_dims),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def _write_timing(self) -> None:
        if self.update_ns:
            np.savez(self.out / "mhn_updates.npz", update_ns=np.concatenate(self.update_ns),
                     segment=np.concatenate(self.update_segment))
        info = {"backend": _backend.BACKEND, "weak_train": self.weak_train}
        (self.out / "train_timing.json").write_text(json.dumps(info, indent=2) + "\n")

    def run(self) -> list[MetricsRecord]:
        self.out.mkdir(parents=True, exist_ok=True)
        for stale in ("fast_trace.jsonl", "fast_metrics.jsonl", "fast_timing.jsonl", "mhn_updates.npz"):
            (self.out / stale).unlink(missing_ok=True)
        chunks = make_chunks(self.train, self.cfg.stream_schedule())
        self._write_manifest(chunks)
        self._writer = MetricsWriter(self.out / "metrics.jsonl")
        if self.fast_on:
            self._fast_writer = MetricsWriter(self.out / "fast_metrics.jsonl")
        self._fast_seen = 0
        if self.method is MethodKind.BATCH:
            self._run_batch(chunks)
        elif self.method.slides:
            self._run_sliding(chunks)
        else:
            self._run_chunks(chunks)
        self._write_timing()
        if self.cfg.checkpoint:
            extra = {"final_acc": self.records[-1].acc,
                     "final_fast_acc": self.fast_records[-1].acc if self.fast_records else None}
            save_checkpoint(self.out / "checkpoint.npz", self.state, self.mhn, extra)
        if self.cfg.dataset.source == "synthetic":
            np.savez(self.out / "test.npz", X=self.test.X, y=self.test.y, class_count=self.test.class_count)
        return self.records + self.fast_records


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRecord]:
    return Experiment(cfg).run()
