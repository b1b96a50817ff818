from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualmem.deep_memory import (
    DeepConfig,
    MethodKind,
    StorageWindow,
    ensemble_predict,
    init_state,
    mbs_gd_bootstrap,
    mbs_gd_ensemble_step,
    mbs_gd_step,
    naive_step,
    neural_prior_ensemble_step,
    neural_prior_step,
    prune_ensemble,
    window_push,
)
from dualmem.nn import LrSchedule, forward, init_mlp, predict_proba


def items(ids, dim=2):
    ids = np.asarray(ids, dtype=np.int64)
    return np.repeat(ids[:, None], dim, axis=1).astype(np.float32), ids % 3, ids


def push(w, ids):
    return window_push(w, *items(ids))


def tiny_cfg(n_subset=40, n_new=10, epochs=2, dims=(10, 6, 4)):
    return DeepConfig(dims, n_subset, n_new, epochs=epochs, batch_size=16,
                      step_decay=LrSchedule("step-decay", 0.05), inv_sqrt=LrSchedule("inv-sqrt", 0.05))


# ---------------------------------------------------------------- window


def test_window_fifo():
    w = push(StorageWindow.empty(3, 2), [0, 1, 2])
    assert push(w, [3]).ids.tolist() == [1, 2, 3]


def test_window_partial_fill():
    assert push(StorageWindow.empty(5, 2), [7, 8]).ids.tolist() == [7, 8]


def test_window_slides_like_paper():
    w = push(StorageWindow.empty(10000, 2), np.arange(1, 10001))
    for k in range(20):
        w = push(w, np.arange(10001 + 500 * k, 10501 + 500 * k))
    assert w.ids.tolist() == list(range(10001, 20001))
    np.testing.assert_array_equal(w.X[:, 0], w.ids)


def test_window_rejects_oversized_push():
    with pytest.raises(ValueError):
        push(StorageWindow.empty(2, 2), [1, 2, 3])


def test_window_rejects_zero_capacity():
    with pytest.raises(ValueError):
        StorageWindow.empty(0, 2)


@settings(max_examples=1000, deadline=None)
@given(capacity=st.integers(1, 12), sizes=st.lists(st.integers(0, 12), max_size=15))
def test_window_matches_reference_queue(capacity, sizes):
    w = StorageWindow.empty(capacity, 2)
    ref = deque(maxlen=capacity)
    nxt = 0
    for n in sizes:
        n = min(n, capacity)
        ids = list(range(nxt, nxt + n))
        nxt += n
        w = push(w, ids)
        ref.extend(ids)
        assert len(w) <= capacity
        assert w.ids.tolist() == list(ref)
        assert w.y.tolist() == [i % 3 for i in ref]


# ---------------------------------------------------------------- methods


def chunks_of(data, k):
    idx = np.array_split(np.arange(len(data)), k)
    return [(data.X[i], data.y[i], i) for i in idx]


def test_naive_one_model_per_chunk(blobs):
    train, _ = blobs
    cfg = tiny_cfg()
    rng = np.random.default_rng(0)
    state = init_state("naive-ensemble", cfg)
    for k, (X, y, ids) in enumerate(chunks_of(train, 10), start=1):
        state = naive_step(state, X, y, ids, cfg, rng)
        assert len(state.weak_models) == k
    assert state.instances_seen == len(train)
    assert all(m.steps_seen == cfg.epochs * 60 for m in state.weak_models)


def test_empty_chunk_rejected(blobs):
    cfg = tiny_cfg()
    with pytest.raises(ValueError):
        naive_step(init_state("naive-ensemble", cfg), np.empty((0, 10)), np.empty(0), np.empty(0), cfg,
                   np.random.default_rng(0))


def test_neural_prior_chain(blobs):
    train, _ = blobs
    cfg = tiny_cfg()
    rng = np.random.default_rng(0)
    single = init_state("neural-prior", cfg)
    chain = init_state("neural-prior-ensemble", cfg)
    for X, y, ids in chunks_of(train, 10):
        single = neural_prior_step(single, X, y, ids, cfg, np.random.default_rng(1))
        chain = neural_prior_ensemble_step(chain, X, y, ids, cfg, rng)
    assert len(single.weak_models) == 1
    assert len(chain.weak_models) == 10
    assert all(m.steps_seen == cfg.epochs * 60 for m in chain.weak_models)
    # consecutive members are linked by transfer: far closer than independent inits
    a, b = chain.weak_models[3], chain.weak_models[4]
    fresh = init_mlp(cfg.layer_dims, np.random.default_rng(5))
    assert np.abs(a.weights[0] - b.weights[0]).mean() < 0.5 * np.abs(a.weights[0] - fresh.weights[0]).mean()


def test_single_chunk_neural_prior_equals_naive(blobs):
    train, _ = blobs
    cfg = tiny_cfg()
    X, y, ids = chunks_of(train, 10)[0]
    a = naive_step(init_state("naive-ensemble", cfg), X, y, ids, cfg, np.random.default_rng(3))
    b = neural_prior_ensemble_step(init_state("neural-prior-ensemble", cfg), X, y, ids, cfg,
                                   np.random.default_rng(3))
    assert a.weak_models[0].equals(b.weak_models[0])


def stream_mbs(method, train, cfg, rng):
    state = init_state(method, cfg)
    state = mbs_gd_bootstrap(state, train.X[: cfg.n_subset], train.y[: cfg.n_subset],
                             np.arange(cfg.n_subset), cfg, rng)
    step = mbs_gd_ensemble_step if method == "mbs-gd-ensemble" else mbs_gd_step
    for s in range(cfg.n_subset, len(train), cfg.n_new):
        ids = np.arange(s, min(s + cfg.n_new, len(train)))
        state = step(state, train.X[ids], train.y[ids], ids, cfg, rng)
    return state


def test_mbs_second_update_window():
    # paper example scaled by 1/50: n_subset 10000 -> 200, n_new 500 -> 10
    cfg = tiny_cfg(n_subset=200, n_new=10, dims=(2, 3, 3))
    rng = np.random.default_rng(0)
    X, y, ids = items(np.arange(1, 221))
    state = mbs_gd_bootstrap(init_state("mbs-gd", cfg), X[:200], y[:200], ids[:200], cfg, rng)
    state = mbs_gd_step(state, X[200:210], y[200:210], ids[200:210], cfg, rng)
    assert state.window.ids.tolist() == list(range(11, 211))
    before = state.general_model.steps_seen
    state = mbs_gd_step(state, X[210:], y[210:], ids[210:], cfg, rng)
    assert state.window.ids.tolist() == list(range(21, 221))
    assert state.general_model.steps_seen - before == 200  # one epoch over the window


def test_mbs_rules(blobs):
    train, _ = blobs
    cfg = tiny_cfg()
    rng = np.random.default_rng(0)
    state = init_state("mbs-gd", cfg)
    with pytest.raises(ValueError):
        mbs_gd_step(state, train.X[:10], train.y[:10], np.arange(10), cfg, rng)
    with pytest.raises(ValueError):
        mbs_gd_bootstrap(state, train.X[:39], train.y[:39], np.arange(39), cfg, rng)
    state = mbs_gd_bootstrap(state, train.X[:40], train.y[:40], np.arange(40), cfg, rng)
    with pytest.raises(ValueError):
        mbs_gd_step(state, train.X[40:51], train.y[40:51], np.arange(40, 51), cfg, rng)


def test_mbs_one_epoch_per_slide(blobs):
    train, _ = blobs
    cfg = tiny_cfg()
    rng = np.random.default_rng(0)
    state = stream_mbs("mbs-gd", train, cfg, rng)
    assert state.general_model.steps_seen == cfg.epochs * 40 + 40 * ((len(train) - 40) // 10)


@pytest.mark.parametrize("total,n_subset,n_new", [(600, 40, 10), (580, 40, 20), (2000, 200, 10)])
def test_mbs_ensemble_spawn_count(total, n_subset, n_new):
    r = np.random.default_rng(1)
    from dualmem.streams import synth_gaussian

    data = synth_gaussian(4, 10, total // 4, 4.0, r)
    cfg = tiny_cfg(n_subset=n_subset, n_new=n_new, epochs=1)
    state = stream_mbs("mbs-gd-ensemble", data, cfg, r)
    assert len(state.weak_models) == (total - n_subset) // n_subset + 1


def test_mbs_ensemble_paper_count():
    # 100k examples, n_subset 10000, n_new 500, scaled by 1/100
    r = np.random.default_rng(2)
    from dualmem.streams import synth_gaussian

    data = synth_gaussian(4, 10, 250, 4.0, r)
    state = stream_mbs("mbs-gd-ensemble", data, tiny_cfg(n_subset=100, n_new=5, epochs=1), r)
    assert len(state.weak_models) == 10


def test_mbs_ensemble_spawns_on_disjoint_windows(blobs):
    train, _ = blobs
    cfg = tiny_cfg()
    state = init_state("mbs-gd-ensemble", cfg)
    rng = np.random.default_rng(0)
    state = mbs_gd_bootstrap(state, train.X[:40], train.y[:40], np.arange(40), cfg, rng)
    spawns = [state.prev_spawn_id]
    for s in range(40, 200, 10):
        ids = np.arange(s, s + 10)
        state = mbs_gd_ensemble_step(state, train.X[ids], train.y[ids], ids, cfg, rng)
        if state.prev_spawn_id != spawns[-1]:
            spawns.append(state.prev_spawn_id)
    assert spawns == [39, 79, 119, 159, 199]


# ---------------------------------------------------------------- predict / prune


def test_predict_single_member(blobs, rng):
    train, test = blobs
    cfg = tiny_cfg()
    state = naive_step(init_state("naive-ensemble", cfg), train.X[:60], train.y[:60], np.arange(60), cfg, rng)
    np.testing.assert_allclose(ensemble_predict(state, test.X), predict_proba(state.weak_models[0], test.X),
                               rtol=1e-6)


def test_predict_is_mean(blobs, rng):
    train, test = blobs
    cfg = tiny_cfg()
    state = init_state("naive-ensemble", cfg)
    for X, y, ids in chunks_of(train, 2):
        state = naive_step(state, X, y, ids, cfg, rng)
    _, p = forward(state.weak_models[0], test.X)
    _, q = forward(state.weak_models[1], test.X)
    np.testing.assert_allclose(ensemble_predict(state, test.X), (p.astype(np.float64) + q) / 2, atol=1e-7)


def test_predict_needs_model():
    with pytest.raises(ValueError):
        ensemble_predict(init_state("naive-ensemble", tiny_cfg()), np.zeros((1, 10)))


def test_neural_prior_uses_latest_only(blobs, rng):
    train, test = blobs
    cfg = tiny_cfg()
    state = init_state("neural-prior-ensemble", cfg)
    for X, y, ids in chunks_of(train, 3):
        state = neural_prior_ensemble_step(state, X, y, ids, cfg, rng)
    np.testing.assert_allclose(ensemble_predict(state, test.X, MethodKind.NEURAL_PRIOR),
                               predict_proba(state.weak_models[-1], test.X), rtol=1e-6)


def test_prune_keeps_most_recent(blobs, rng):
    train, test = blobs
    cfg = tiny_cfg(epochs=1)
    state = init_state("naive-ensemble", cfg)
    for X, y, ids in chunks_of(train, 10):
        state = naive_step(state, X, y, ids, cfg, rng)
    pruned = prune_ensemble(state, 3)
    assert pruned.weak_models == state.weak_models[7:]
    assert prune_ensemble(state, 12).weak_models == state.weak_models
    last = prune_ensemble(state, 1)
    np.testing.assert_allclose(ensemble_predict(last, test.X), predict_proba(state.weak_models[-1], test.X),
                               rtol=1e-6)
    with pytest.raises(ValueError):
        prune_ensemble(state, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        DeepConfig((4, 2), 10, 20)
    with pytest.raises(ValueError):
        DeepConfig((4, 2), 0, 1)
