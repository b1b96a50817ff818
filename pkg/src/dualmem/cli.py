"""Command-line entry point: ``dualmem run|eval|gen-stream``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .deep_memory import ensemble_predict
from .runner import Experiment, evaluate, feature_concat, load_datasets
from .streams import Dataset, IdxFormatError, load_idx, make_chunks, write_manifests


def _load_test(path: Path) -> Dataset:
    if path.is_dir():
        return load_idx(path / "t10k-images-idx3-ubyte", path / "t10k-labels-idx1-ubyte", "test")
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as z:
            return Dataset(z["X"], z["y"], int(z["class_count"]), "test")
    raise FileNotFoundError(f"test set not found (expected an IDX directory or .npz): {path}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    records = Experiment(cfg).run()
    last = {}
    for rec in records:
        last[rec.method] = rec.acc
    print(json.dumps({"output_dir": cfg.output_dir, "final_acc": last}))
    return 0


def cmd_eval(args) -> int:
    state, mhn, meta = load_checkpoint(args.checkpoint)
    test = _load_test(Path(args.test))
    out = {"method": state.method.value, "acc": evaluate(lambda X: ensemble_predict(state, X), test).acc}
    if mhn is not None:
        out["fast_acc"] = evaluate(lambda X: mhn.scores(feature_concat(state, X)[0]), test).acc
    print(json.dumps(out))
    return 0


def cmd_gen_stream(args) -> int:
    cfg = load_config(args.config)
    train, _ = load_datasets(cfg)
    chunks = make_chunks(train, cfg.stream_schedule())
    paths = write_manifests(chunks, train, args.out)
    print(json.dumps({"manifests": [str(p) for p in paths]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualmem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", help="override output_dir from the config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score a saved checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True, help="MNIST IDX directory or .npz written by a synthetic run")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-stream", help="write per-chunk manifests for a config's stream")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, IdxFormatError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"dualmem {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
