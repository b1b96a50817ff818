"""Acceptance criteria 1-8, each at its stated tolerance.

Every test appends one ``CRITERION n: PASS|FAIL ...`` line that the
terminal summary prints, and also prints it directly (visible with -s).
The MNIST runs are shared across criteria through module fixtures.
"""

import time
from collections import deque
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, MNIST_DIR, mnist_available
from dualmem.checkpoint import load_checkpoint, save_checkpoint
from dualmem.config import config_from_dict, load_config
from dualmem.deep_memory import StorageWindow, ensemble_predict, prune_ensemble, window_push
from dualmem.fast_memory import rls_init
from dualmem.metrics import read_metrics
from dualmem.nn import init_mlp, transfer_init
from dualmem.runner import Experiment, evaluate, load_datasets
from dualmem.streams import builtin_nonstationary_schedule, make_chunks
from test_nn import finite_difference_check, nudge_off_kinks

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
needs_mnist = pytest.mark.skipif(not mnist_available(), reason=f"MNIST IDX files not found in {MNIST_DIR}")


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def mnist_cfg(name: str, tmp: Path, fast: bool | None = None, **changes):
    cfg = load_config(CONFIGS / name)
    if fast is not None:
        cfg.fast_memory.enabled = fast
    cfg.dataset.path = str(MNIST_DIR)
    cfg.output_dir = str(tmp)
    cfg.checkpoint = False
    for k, v in changes.items():
        setattr(cfg, k, v)
    return cfg.validate()


# ---------------------------------------------------------------- 1: RLS


def test_criterion_1_rls_exactness():
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    worst_fit = worst_perm = 0.0
    for _ in range(100):
        d = int(r.integers(1, 21))
        n = int(r.integers(1, 201))
        k = int(r.integers(1, 4))
        Phi = r.standard_normal((n, d)) * r.uniform(0.1, 3)
        Y = r.standard_normal((n, k))
        s = rls_init(d, k)
        for phi, y in zip(Phi, Y):
            s.update_(phi, y)
        closed = np.linalg.solve(np.eye(d) + Phi.T @ Phi, Phi.T @ Y)
        worst_fit = max(worst_fit, np.linalg.norm(s.w - closed) / np.linalg.norm(closed))
        p = rls_init(d, k)
        for i in r.permutation(n):
            p.update_(Phi[i], Y[i])
        worst_perm = max(worst_perm, np.abs(p.w - s.w).max())
    elapsed = time.perf_counter() - t0
    ok = worst_fit <= 1e-8 and worst_perm <= 1e-8 and elapsed < 5
    report(1, ok, f"max rel err {worst_fit:.2e} (<=1e-8), permutation change {worst_perm:.2e} (<=1e-8), "
                  f"{elapsed:.2f}s (<5s)")


# ----------------------------------------------------------- 2: gradients


def test_criterion_2_gradient_correctness():
    t0 = time.perf_counter()
    r = np.random.default_rng(77)
    worst = 0.0
    trials = 60
    for _ in range(trials):
        depth = int(r.integers(1, 4))
        dims = [int(r.integers(2, 7))] + [int(r.integers(2, 7)) for _ in range(depth)] + [int(r.integers(2, 6))]
        m = init_mlp(dims, r)
        X = r.standard_normal((int(r.integers(1, 5)), dims[0])).astype(np.float32)
        y = r.integers(0, dims[-1], len(X))
        nudge_off_kinks(m, X)
        worst = max(worst, finite_difference_check(m, X, y))
    elapsed = time.perf_counter() - t0
    report(2, worst <= 1e-4 and elapsed < 10,
           f"{trials} nets, max rel err {worst:.2e} (<=1e-4), {elapsed:.2f}s (<10s)")


# ------------------------------------------------------ 3 and 5: 10-split


FIG3_METHODS = ("naive-ensemble", "mbs-gd", "mbs-gd-ensemble", "neural-prior-ensemble", "batch")


@pytest.fixture(scope="module")
def fig3_runs(tmp_path_factory):
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    root = tmp_path_factory.mktemp("fig3")
    base = mnist_cfg("fig3_mnist_10split.yaml", root)
    train, test = load_datasets(base)
    t0 = time.perf_counter()
    runs = {}
    for m in FIG3_METHODS:
        exp = Experiment(mnist_cfg("fig3_mnist_10split.yaml", root / m, method=m), train, test)
        exp.run()
        runs[m] = exp
    return runs, test, time.perf_counter() - t0


@pytest.mark.slow
@needs_mnist
def test_criterion_3_ten_split_trend(fig3_runs):
    runs, _, elapsed = fig3_runs
    acc = {m: runs[m].records[-1].acc for m in FIG3_METHODS}
    naive, mbs, mbse, npe, batch = (acc[m] for m in FIG3_METHODS)
    order = naive < mbs <= min(mbse, npe) and max(mbse, npe) <= batch
    gap_a = mbs - naive
    gap_b = batch - npe
    ok = order and gap_a >= 0.02 and gap_b <= 0.03 and elapsed <= 15 * 60
    detail = ", ".join(f"{m}={a:.4f}" for m, a in acc.items())
    report(3, ok, f"{detail}; ordering {'holds' if order else 'violated'}; mbs-naive {100 * gap_a:.2f}pt (>=2), "
                  f"batch-npE {100 * gap_b:.2f}pt (<=3), {elapsed:.0f}s (<=900s)")


@pytest.mark.slow
@needs_mnist
def test_criterion_5_pruning(fig3_runs):
    runs, test, _ = fig3_runs
    state = runs["neural-prior-ensemble"].state
    full = evaluate(lambda X: ensemble_predict(state, X), test).acc
    pruned_state = prune_ensemble(state, 3)
    pruned = evaluate(lambda X: ensemble_predict(pruned_state, X), test).acc
    drop = full - pruned
    report(5, len(state.weak_models) == 10 and drop <= 0.02,
           f"10 members {full:.4f}, last 3 {pruned:.4f}, drop {100 * drop:.2f}pt (<=2)")


# ------------------------------------------------- 4 and 6: class drift


@pytest.fixture(scope="module")
def fig5_runs(tmp_path_factory):
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR}")
    root = tmp_path_factory.mktemp("fig5")
    base = mnist_cfg("fig5_mnist_nonstationary.yaml", root)
    train, test = load_datasets(base)
    t0 = time.perf_counter()
    runs = {"neural-prior-ensemble": Experiment(base, train, test)}
    for m in ("neural-prior", "mbs-gd"):
        runs[m] = Experiment(mnist_cfg("fig5_mnist_nonstationary.yaml", root / m, fast=False, method=m), train, test)
    for exp in runs.values():
        exp.run()
    return runs, time.perf_counter() - t0


def max_chunk_coverage() -> float:
    mix = builtin_nonstationary_schedule().class_mix
    return max(len([c for c, f in m.items() if f > 0]) for m in mix) / 10


@pytest.mark.slow
@needs_mnist
def test_criterion_4_class_drift_trend(fig5_runs):
    runs, elapsed = fig5_runs
    cap = max_chunk_coverage() + 0.05
    peaks = {m: max(r.acc for r in runs[m].records) for m in ("neural-prior", "mbs-gd")}
    finals = {m: runs[m].records[-1].acc for m in ("neural-prior", "mbs-gd")}
    npe = runs["neural-prior-ensemble"].records[-1].acc
    mhn = runs["neural-prior-ensemble"].fast_records[-1].acc
    a = all(p <= cap for p in peaks.values())
    b = npe - max(finals.values()) >= 0.05
    c = mhn - npe >= 0.03
    ok = a and b and c and elapsed <= 20 * 60
    report(4, ok,
           f"(a) peak over all chunk boundaries: neural-prior {peaks['neural-prior']:.4f}, "
           f"mbs-gd {peaks['mbs-gd']:.4f} (<= {cap:.2f}; finals {finals['neural-prior']:.4f}/{finals['mbs-gd']:.4f}) "
           f"{'ok' if a else 'violated'}; (b) npE {npe:.4f} vs best single {max(finals.values()):.4f} "
           f"{'ok' if b else 'violated'} (>=5pt); (c) mHN {mhn:.4f} vs npE {npe:.4f} {'ok' if c else 'violated'} "
           f"(>=3pt); {elapsed:.0f}s (<=1200s)")


@pytest.mark.slow
@needs_mnist
def test_criterion_6_fast_vs_deep_speed(fig5_runs):
    runs, _ = fig5_runs
    exp = runs["neural-prior-ensemble"]
    update_ns = np.concatenate(exp.update_ns)
    segments = np.concatenate(exp.update_segment)
    per_update = update_ns.mean() / 1e9
    per_instance_train = np.mean([w["seconds"] / w["n_examples"] for w in exp.weak_train])
    ratio = per_instance_train / per_update
    # flatness: within each fixed-basis segment, late updates are no slower than early ones.
    # Background load on a shared CPU only adds time, in bursts that can cover
    # thousands of updates, so the quarters are compared at their 10th percentile.
    growth, growth_median = [], []
    for s in np.unique(segments):
        t = update_ns[segments == s]
        q = len(t) // 4
        if q >= 250:
            growth.append(np.percentile(t[-q:], 10) / np.percentile(t[:q], 10))
            growth_median.append(np.median(t[-q:]) / np.median(t[:q]))
    flat = max(growth) <= 1.25
    report(6, ratio >= 10 and flat,
           f"mean mHN update {per_update * 1e6:.1f}us vs weak training {per_instance_train * 1e6:.1f}us per instance: "
           f"{ratio:.1f}x (>=10x); worst late/early 10th-percentile update time within a fixed basis {max(growth):.2f} "
           f"(<=1.25; median {max(growth_median):.2f}) over {len(growth)} segments")


# ------------------------------------------------------ 7: structure


def synthetic_cfg(out: Path):
    return config_from_dict(dict(
        method="neural-prior-ensemble", seed=5, output_dir=str(out),
        dataset=dict(source="synthetic", synthetic=dict(class_count=4, dim=12, n_train_per_class=100,
                                                         n_test_per_class=40, separation=4.0)),
        schedule=dict(kind="stationary-k-split", k=4),
        network=dict(hidden=[8], epochs=3, batch_size=16),
        memory=dict(n_subset=100, n_new=20),
        fast_memory=dict(enabled=True, kernels_per_block=16),
    ))


def test_criterion_7_structural_properties(tmp_path):
    failures = []

    r = np.random.default_rng(7)
    for _ in range(1000):
        cap = int(r.integers(1, 30))
        w = StorageWindow.empty(cap, 1)
        ref = deque(maxlen=cap)
        nxt = 0
        for _ in range(int(r.integers(1, 15))):
            n = int(r.integers(0, cap + 1))
            ids = np.arange(nxt, nxt + n)
            nxt += n
            w = window_push(w, ids[:, None].astype(np.float32), ids % 5, ids)
            ref.extend(ids.tolist())
            if len(w) > cap or w.ids.tolist() != list(ref):
                failures.append("window")
                break

    src = init_mlp([9, 7, 5, 3], r)
    dst = transfer_init(src, r)
    if not all(a.tobytes() == b.tobytes() for a, b in zip(src.weights[:-1] + src.biases[:-1],
                                                          dst.weights[:-1] + dst.biases[:-1])):
        failures.append("transfer_init")

    a = Experiment(synthetic_cfg(tmp_path / "a"))
    a.run()
    b = Experiment(synthetic_cfg(tmp_path / "b"))
    b.run()
    for name in ("metrics.jsonl", "fast_metrics.jsonl"):
        if (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes():
            failures.append(f"replay {name}")

    if read_metrics(tmp_path / "a" / "metrics.jsonl") != a.records:
        failures.append("metrics round trip")

    state, mhn, _ = load_checkpoint(save_checkpoint(tmp_path / "c.npz", a.state, a.mhn))
    arrays = lambda s: [x.tobytes() for m in s.weak_models for x in m.weights + m.biases + m.momentum_w + m.momentum_b]
    if arrays(state) != arrays(a.state) or state.window.ids.tobytes() != a.state.window.ids.tobytes():
        failures.append("checkpoint deep state")
    if any(x.tobytes() != y.tobytes() for x, y in ((mhn.rls.P, a.mhn.rls.P), (mhn.rls.B, a.mhn.rls.B),
                                                   (mhn.rls.w, a.mhn.rls.w), (mhn.basis.kernels, a.mhn.basis.kernels))):
        failures.append("checkpoint mhn")

    report(7, not failures, "window vs reference queue (1000 cases), transfer_init exactness, metrics and "
                            "checkpoint round trips, replay determinism" + (f"; broken: {failures}" if failures else ""))


# ------------------------------------------------------ 8: stream protocol


def test_criterion_8_builtin_schedule():
    mix = builtin_nonstationary_schedule().class_mix
    # zero-based ids: paper classes 1/2/3 are 0/1/2, classes 2-6 are 1-5
    first = mix[0] == {0: 0.4, 1: 0.4, 2: 0.2}
    fourth = mix[3] == {c: 0.2 for c in range(1, 6)}
    totals = {c: sum(m.get(c, 0.0) for m in mix) for c in range(10)}
    sums = all(abs(t - 1) <= 1e-9 for t in totals.values())

    from dualmem.streams import Dataset

    y = np.repeat(np.arange(10), 5000)
    data = Dataset(np.zeros((len(y), 1), np.float32), y, 10)
    chunks = make_chunks(data, builtin_nonstationary_schedule())
    realized = [np.bincount(y[c], minlength=10) for c in chunks]
    exact = realized[0].tolist() == [2000, 2000, 1000] + [0] * 7 and \
        realized[3].tolist() == [0] + [1000] * 5 + [0] * 4 and \
        np.sum(realized, axis=0).tolist() == [5000] * 10
    report(8, first and fourth and sums and exact and len(mix) == 10,
           f"chunk 1 {mix[0]}, chunk 4 {mix[3]}, per-class totals {min(totals.values()):.6f}..{max(totals.values()):.6f}, "
           f"realized counts {'exact' if exact else 'off'}")
