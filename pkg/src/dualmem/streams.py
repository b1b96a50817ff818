"""Datasets and the protocols that turn them into ordered online chunks.

A chunk is an integer array of row indices into its :class:`Dataset`; the
row index doubles as the example's stream identifier.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

__all__ = [
    "Dataset",
    "IdxFormatError",
    "StreamSchedule",
    "builtin_nonstationary_schedule",
    "load_idx",
    "make_chunks",
    "read_manifests",
    "schedule_classes",
    "split_stationary",
    "split_two",
    "synth_gaussian",
    "write_idx",
    "write_manifests",
]


class IdxFormatError(ValueError):
    """Malformed or inconsistent IDX file."""


@dataclass
class Dataset:
    X: np.ndarray  # (n, feature_dim) float32
    y: np.ndarray  # (n,) int64
    class_count: int
    split: str = "train"
    centers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be (n, d) with one label per row")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.class_count, self.split)


def _read_header(path: Path, magic: int, ndims: int) -> tuple[bytes, tuple[int, ...]]:
    raw = path.read_bytes()
    header_len = 4 * (1 + ndims)
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated header")
    found, *dims = struct.unpack(">" + "I" * (1 + ndims), raw[:header_len])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    expected = math.prod(dims)
    payload = raw[header_len:]
    if len(payload) != expected:
        raise IdxFormatError(f"{path}: payload holds {len(payload)} bytes, header promises {expected}")
    return payload, tuple(dims)


def load_idx(images_path, labels_path, split: str = "train", class_count: int = 10) -> Dataset:
    """Read an MNIST-style IDX image/label pair; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    pixels, (n_img, rows, cols) = _read_header(images_path, IMAGE_MAGIC, 3)
    labels, (n_lab,) = _read_header(labels_path, LABEL_MAGIC, 1)
    if n_img != n_lab:
        raise IdxFormatError(f"{images_path} holds {n_img} images but {labels_path} holds {n_lab} labels")
    X = np.frombuffer(pixels, dtype=np.uint8).reshape(n_img, rows * cols).astype(np.float32) / np.float32(255)
    y = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    return Dataset(X, y, class_count, split)


def write_idx(data: Dataset, images_path, labels_path, shape: tuple[int, int] = (28, 28)) -> None:
    """Inverse of :func:`load_idx` for datasets whose pixels are multiples of 1/255."""
    rows, cols = shape
    if rows * cols != data.feature_dim:
        raise ValueError(f"shape {shape} does not match feature_dim {data.feature_dim}")
    pixels = np.rint(data.X * 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, len(data), rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(data)) + data.y.astype(np.uint8).tobytes())


def _separated_centers(class_count: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    centers = rng.standard_normal((class_count, dim))
    if class_count < 2:
        return centers * 0
    diffs = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))
    closest = dist[np.triu_indices(class_count, 1)].min()
    return centers * (separation / closest)


def synth_gaussian(
    class_count: int,
    dim: int,
    n_per_class: int,
    separation: float,
    rng: np.random.Generator,
    centers: np.ndarray | None = None,
    split: str = "train",
) -> Dataset:
    """Isotropic unit-variance Gaussian classes.

    Centers are random and rescaled so the closest pair sits exactly
    ``separation`` standard deviations apart. Pass ``centers`` from a
    training set to draw a matching test set.
    """
    if class_count < 1 or dim < 1 or n_per_class < 1:
        raise ValueError("class_count, dim and n_per_class must be positive")
    if separation < 0:
        raise ValueError("separation must be nonnegative")
    if centers is None:
        centers = _separated_centers(class_count, dim, separation, rng)
    y = np.repeat(np.arange(class_count), n_per_class)
    X = centers[y] + rng.standard_normal((len(y), dim))
    order = rng.permutation(len(y))
    return Dataset(X[order].astype(np.float32), y[order], class_count, split, centers=centers)


def split_stationary(data: Dataset, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random permutation cut into ``k`` contiguous, near-equal chunks."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(data):
        raise ValueError(f"cannot split {len(data)} examples into {k} chunks")
    return np.array_split(rng.permutation(len(data)), k)


def split_two(data: Dataset, proportion: float, rng: np.random.Generator) -> list[np.ndarray]:
    if not 0 < proportion < 1:
        raise ValueError("proportion must lie strictly between 0 and 1")
    perm = rng.permutation(len(data))
    cut = int(round(proportion * len(data)))
    if cut == 0 or cut == len(data):
        raise ValueError(f"proportion {proportion} leaves an empty chunk")
    return [perm[:cut], perm[cut:]]


def schedule_classes(data: Dataset, mix: Sequence[dict[int, float]], rng: np.random.Generator) -> list[np.ndarray]:
    """Distribute each class over chunks by the requested fractions.

    Chunk ``i`` receives ``floor(mix[i][c] * count_c)`` examples of class
    ``c``. Examples a class has left after rounding go to the last chunk
    that uses the class. Every chunk is shuffled.
    """
    totals: dict[int, float] = {}
    for chunk_mix in mix:
        for c, f in chunk_mix.items():
            if f < 0:
                raise ValueError(f"negative fraction for class {c}")
            if not 0 <= c < data.class_count:
                raise ValueError(f"class {c} outside [0, {data.class_count})")
            totals[c] = totals.get(c, 0.0) + f
    for c, total in totals.items():
        if total > 1 + 1e-9:
            raise ValueError(f"class {c} over-allocated: fractions sum to {total:.6f}")

    pools = {c: rng.permutation(np.flatnonzero(data.y == c)) for c in totals}
    cursor = {c: 0 for c in totals}
    last_use = {c: max(i for i, m in enumerate(mix) if m.get(c, 0) > 0) for c in totals if totals[c] > 0}
    chunks = []
    for i, chunk_mix in enumerate(mix):
        parts = []
        for c, f in sorted(chunk_mix.items()):
            pool = pools[c]
            take = math.floor(f * len(pool) + 1e-9)
            if last_use.get(c) == i:
                # rounding leftovers of this class land here
                take = min(len(pool), math.floor(totals[c] * len(pool) + 1e-9)) - cursor[c]
            parts.append(pool[cursor[c] : cursor[c] + take])
            cursor[c] += take
        chunk = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        chunks.append(rng.permutation(chunk))
    return chunks


@dataclass
class StreamSchedule:
    kind: str  # stationary-k-split | two-split | class-schedule
    k: int = 10
    proportion: float = 0.5
    class_mix: list[dict[int, float]] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("stationary-k-split", "two-split", "class-schedule"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "class-schedule":
            if not self.class_mix:
                raise ValueError("class-schedule needs class_mix")
            self.class_mix = [{int(c): float(f) for c, f in m.items()} for m in self.class_mix]
            totals: dict[int, float] = {}
            for m in self.class_mix:
                for c, f in m.items():
                    if f < 0:
                        raise ValueError("class fractions must be nonnegative")
                    totals[c] = totals.get(c, 0.0) + f
            over = {c: t for c, t in totals.items() if t > 1 + 1e-9}
            if over:
                raise ValueError(f"classes over-allocated across chunks: {over}")

    def class_totals(self) -> dict[int, float]:
        totals: dict[int, float] = {}
        for m in self.class_mix or []:
            for c, f in m.items():
                totals[c] = totals.get(c, 0.0) + f
        return totals


def builtin_nonstationary_schedule(class_count: int = 10, seed: int = 0) -> StreamSchedule:
    """The 10-chunk class-drift schedule; class ids are zero-based.

    Chunks 1-3: {0: .4, 1: .4, 2: .2}, {0: .4, 1..4: .2}, {0..4: .2}.
    Chunks 4-9 slide a five-class window one class per chunk (classes
    ``k-3 .. k+1`` for chunk ``k``), each at 0.2 but capped at what the
    class has left, so exhausted classes drop out. Chunk 10 takes every
    remaining fraction.
    """
    if class_count != 10:
        raise ValueError("the builtin schedule is defined for 10 classes")
    mix: list[dict[int, float]] = [
        {0: 0.4, 1: 0.4, 2: 0.2},
        {0: 0.4, 1: 0.2, 2: 0.2, 3: 0.2, 4: 0.2},
        {c: 0.2 for c in range(5)},
    ]
    left = {c: 1.0 for c in range(class_count)}
    for chunk in mix:
        for c, f in chunk.items():
            left[c] -= f
    for k in range(4, 10):
        chunk = {}
        for c in range(k - 3, min(k + 2, class_count)):
            f = min(0.2, left[c])
            if f > 1e-12:
                chunk[c] = round(f, 12)
                left[c] -= f
        mix.append(chunk)
    mix.append({c: round(f, 12) for c, f in left.items() if f > 1e-12})
    return StreamSchedule("class-schedule", k=len(mix), class_mix=mix, seed=seed)


def make_chunks(data: Dataset, schedule: StreamSchedule) -> list[np.ndarray]:
    rng = np.random.default_rng(schedule.seed)
    if schedule.kind == "stationary-k-split":
        return split_stationary(data, schedule.k, rng)
    if schedule.kind == "two-split":
        return split_two(data, schedule.proportion, rng)
    return schedule_classes(data, schedule.class_mix, rng)


def write_manifests(chunks: Sequence[np.ndarray], data: Dataset, out_dir) -> list[Path]:
    """One line-delimited JSON file per chunk: ``{"chunk", "index", "class"}`` per example."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, chunk in enumerate(chunks):
        path = out_dir / f"chunk_{i:03d}.jsonl"
        with path.open("w") as fh:
            for idx in chunk:
                fh.write(json.dumps({"chunk": i, "index": int(idx), "class": int(data.y[idx])}) + "\n")
        paths.append(path)
    return paths


def read_manifests(out_dir) -> list[np.ndarray]:
    chunks = []
    for path in sorted(Path(out_dir).glob("chunk_*.jsonl")):
        with path.open() as fh:
            chunks.append(np.array([json.loads(line)["index"] for line in fh], dtype=np.int64))
    return chunks
