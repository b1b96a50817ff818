"""Versioned ``.npz`` checkpoints for deep-memory state and the mHN.

Layout: a ``meta`` entry holding UTF-8 JSON (format name, version,
counters, model list, window capacity and digest, optional mHN shape info)
plus one array entry per parameter, e.g. ``weak/3/W0`` or ``mhn/P``.
Arrays are stored raw, so loading reproduces every bit.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .deep_memory import EnsembleState, MethodKind, StorageWindow
from .fast_memory import KernelBasis, MhnModel, RlsState
from .nn import MlpModel

FORMAT = "dualmem-checkpoint"
VERSION = 1

__all__ = ["CheckpointError", "load_checkpoint", "save_checkpoint", "window_digest"]


class CheckpointError(ValueError):
    pass


def window_digest(window: StorageWindow) -> str:
    h = hashlib.sha256()
    for arr in (window.X, window.y, window.ids):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _put_model(arrays: dict, prefix: str, model: MlpModel) -> dict:
    for i in range(model.n_layers):
        arrays[f"{prefix}/W{i}"] = model.weights[i]
        arrays[f"{prefix}/b{i}"] = model.biases[i]
        arrays[f"{prefix}/mW{i}"] = model.momentum_w[i]
        arrays[f"{prefix}/mb{i}"] = model.momentum_b[i]
    return {"prefix": prefix, "layer_dims": list(model.layer_dims), "steps_seen": model.steps_seen}


def _get_model(npz, info: dict) -> MlpModel:
    p = info["prefix"]
    n = len(info["layer_dims"]) - 1
    return MlpModel(
        layer_dims=tuple(info["layer_dims"]),
        weights=[npz[f"{p}/W{i}"] for i in range(n)],
        biases=[npz[f"{p}/b{i}"] for i in range(n)],
        momentum_w=[npz[f"{p}/mW{i}"] for i in range(n)],
        momentum_b=[npz[f"{p}/mb{i}"] for i in range(n)],
        steps_seen=info["steps_seen"],
    )


def save_checkpoint(path, state: EnsembleState, mhn: MhnModel | None = None, extra: dict | None = None,
                    include_window: bool = True) -> Path:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "method": state.method.value,
        "instances_seen": state.instances_seen,
        "chunks_seen": state.chunks_seen,
        "since_spawn": state.since_spawn,
        "prev_spawn_id": state.prev_spawn_id,
        "weak_models": [_put_model(arrays, f"weak/{i}", m) for i, m in enumerate(state.weak_models)],
        "general_model": _put_model(arrays, "general", state.general_model) if state.general_model else None,
        "window": {
            "capacity": state.window.capacity,
            "size": len(state.window),
            "feature_dim": state.window.X.shape[1],
            "digest": window_digest(state.window),
            "stored": include_window,
        },
        "mhn": None,
        "extra": extra or {},
    }
    if include_window:
        arrays["window/X"] = state.window.X
        arrays["window/y"] = state.window.y
        arrays["window/ids"] = state.window.ids
    if mhn is not None:
        arrays["mhn/kernels"] = mhn.basis.kernels
        arrays["mhn/P"] = mhn.rls.P
        arrays["mhn/B"] = mhn.rls.B
        arrays["mhn/w"] = mhn.rls.w
        meta["mhn"] = {
            "order": mhn.basis.order,
            "feature_dim": mhn.basis.feature_dim,
            "feature_blocks": [list(b) for b in mhn.basis.feature_blocks],
            "class_count": mhn.class_count,
            "t": mhn.rls.t,
        }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[EnsembleState, MhnModel | None, dict]:
    """Return ``(state, mhn, meta)``; ``mhn`` is None when none was saved."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        npz = np.load(path, allow_pickle=False)
        meta = json.loads(bytes(npz["meta"]).decode())
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: not a {FORMAT} file ({exc})") from exc
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    with npz:
        w = meta["window"]
        if w["stored"]:
            window = StorageWindow(w["capacity"], npz["window/X"], npz["window/y"], npz["window/ids"])
        else:
            window = StorageWindow.empty(w["capacity"], w["feature_dim"])
        state = EnsembleState(
            method=MethodKind(meta["method"]),
            window=window,
            weak_models=[_get_model(npz, info) for info in meta["weak_models"]],
            general_model=_get_model(npz, meta["general_model"]) if meta["general_model"] else None,
            prev_spawn_id=meta["prev_spawn_id"],
            since_spawn=meta["since_spawn"],
            instances_seen=meta["instances_seen"],
            chunks_seen=meta["chunks_seen"],
        )
        mhn = None
        if meta["mhn"] is not None:
            m = meta["mhn"]
            basis = KernelBasis(npz["mhn/kernels"], m["order"], m["feature_dim"],
                                [tuple(b) for b in m["feature_blocks"]])
            mhn = MhnModel(basis, RlsState(npz["mhn/P"], npz["mhn/B"], npz["mhn/w"], m["t"]), m["class_count"])
    return state, mhn, meta
