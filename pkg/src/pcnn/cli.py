"""Command-line entry point: train / eval / export / bench / analyze-memory / histogram.

Failures print one line ``error: <category>: <message>`` to stderr and exit
nonzero. Categories and codes: usage 2, dataset_missing 3, format 4,
diverged 5, io 6, runtime 1.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import bitpack as B
from . import tensor as T
from .data import DataFormatError, default_mnist_root, load_dataset
from .layers import named_modules
from .models import build_model
from .trainer import (TrainConfig, Trainer, TrainingDivergedError, emit_histogram, evaluate, history_json,
                      write_histogram_csv)

EXIT_CODES = {"usage": 2, "dataset_missing": 3, "format": 4, "diverged": 5, "io": 6, "runtime": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _thread_limit(deterministic: bool):
    if deterministic:
        return threadpool_limits(1)
    n = os.environ.get("PCNN_THREADS")
    if n:
        try:
            return threadpool_limits(max(1, int(n)))
        except ValueError:
            raise CliError("usage", f"PCNN_THREADS must be an integer, got {n!r}")
    return contextlib.nullcontext()


def _config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if getattr(args, "config", None) else TrainConfig()
    changes = {}
    for flag, key in (("seed", "seed"), ("arch", "arch"), ("J", "J"), ("lam", "lam"), ("epochs", "epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            changes[key] = v
    return cfg.replace(**changes) if changes else cfg


def _load_data(name: str, root, split: str):
    if root is None and name == "mnist":
        root = default_mnist_root()
    if root is None or not Path(root).exists():
        raise CliError("dataset_missing", f"{name} data not found at {root!r}; pass --data")
    try:
        return load_dataset(name, root, split)
    except FileNotFoundError as e:
        raise CliError("dataset_missing", str(e))


def _load_inference(path, engine="float") -> B.InferenceModel:
    return B.import_model(path, engine)


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    cfg = _config(args)
    train_set = _load_data(cfg.dataset, args.data, "train")
    test_set = _load_data(cfg.dataset, args.data, "test")
    if cfg.train_subset:
        train_set = train_set.subset(cfg.train_subset)
    if cfg.test_subset:
        test_set = test_set.subset(cfg.test_subset)
    out = Path(args.out)
    trainer = Trainer(cfg, image_shape=train_set.images.shape[1:])
    trainer.fit(train_set, test_set, out)
    B.export_model(trainer.model, out / "model.pcnn")
    (out / "history.json").write_text(history_json(trainer.state.history))
    last = trainer.state.history[-1]
    print(f"final test_acc={last['test_acc']:.4f} band_fraction={last['band_fraction']:.4f} out={out}")
    return 0


def cmd_eval(args) -> int:
    model = _load_inference(args.model, args.engine)
    data = _load_data(args.dataset, args.data, "test")
    acc = float(np.mean(model.predict(data.images) == data.labels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(f"model,engine,n,test_acc\n{args.model},{args.engine},{len(data)},{acc!r}\n")
    print(f"test_acc={acc:.4f} n={len(data)}")
    return 0


def cmd_export(args) -> int:
    trainer = B.load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = B.export_model(trainer.model, out / "model.pcnn")
    print(f"wrote {out / 'model.pcnn'} ({n} bytes)")
    return 0


def _layer_inputs(model: B.InferenceModel, shape) -> list[tuple[str, B.PackedProjConv, np.ndarray]]:
    """Run one forward pass and record the input every packed layer sees."""
    seen = []
    for name, m in named_modules(model.root):
        if isinstance(m, B.PackedProjConv) and m.binarize_input:
            orig = m.forward

            def spy(x, train=False, _m=m, _name=name, _orig=orig):
                seen.append((_name, _m, x))
                return _orig(x, train)
            m.forward = spy
    model.forward(np.random.default_rng(0).standard_normal((1,) + shape).astype(T.DTYPE))
    for _, m, _ in seen:
        del m.forward
    return seen


def _time(fn, repeats: int) -> float:
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_rows(model: B.InferenceModel | None, shape=(1, 28, 28), batch: int = 8, repeats: int = 5) -> list[dict]:
    rng = np.random.default_rng(0)
    if model is None:
        ch = 64
        w = np.where(rng.random((ch, ch, 3, 3)) < 0.5, -1, 1).astype(T.DTYPE)
        layers = [("synthetic", B.PackedProjConv(B.pack(w), 1, 1, 1, True), np.zeros((1, ch, 16, 16), T.DTYPE))]
    else:
        layers = _layer_inputs(model, tuple(shape))
    rows = []
    for name, layer, x in layers:
        xb = np.where(rng.random((batch,) + x.shape[1:]) < 0.5, -1, 1).astype(T.DTYPE)
        o, c, k, _ = layer.packed.dims
        _, _, ho, wo = T.conv_output_shape((batch, layer.in_ch, *x.shape[2:]), (o // layer.J, c, k, k),
                                           layer.stride, layer.pad)
        ops = 2 * batch * o * ho * wo * c * k * k
        for engine in ("float", "xnor"):
            layer.engine = engine
            sec = _time(lambda: layer.forward(xb), repeats)
            rows.append({"layer": name, "engine": engine, "seconds": sec, "ops_per_sec": ops / sec})
        layer.engine = "float"
    return rows


def cmd_bench(args) -> int:
    model = _load_inference(args.model) if args.model else None
    shape = tuple(int(s) for s in args.input_shape.split(","))
    rows = bench_rows(model, shape, args.batch, args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as f:
        w = csv.DictWriter(f, ["layer", "engine", "seconds", "ops_per_sec"])
        w.writeheader()
        w.writerows(rows)
    w = csv.DictWriter(sys.stdout, ["layer", "engine", "seconds", "ops_per_sec"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return 0


def cmd_analyze_memory(args) -> int:
    if args.arch in B.ARCH_LAYERS:
        specs = B.ARCH_LAYERS[args.arch]()
        rep = B.memory_report(specs, J=args.J)
    else:
        model = build_model(args.arch, J=args.J, i=args.i)
        rep = B.memory_report(B.model_layers(model))
    print(rep.table())
    print(f"full_bits={rep.full_bits} compressed_bits={rep.compressed_bits} ratio={rep.ratio:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "memory.csv", "w", newline="") as f:
            w = csv.DictWriter(f, ["layer", "params", "binary", "full_bits", "compressed_bits"])
            w.writeheader()
            w.writerows(rep.rows)
    return 0


def cmd_histogram(args) -> int:
    trainer = B.load_checkpoint(args.checkpoint)
    rec = emit_histogram(trainer.model, args.layer, bins=args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_histogram_csv(out / "histogram.csv", [(trainer.state.epoch - 1, rec)])
    print(f"layer={rec['layer']} a={rec['a']!r} band_fraction={rec['band_fraction']:.4f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcnn", description="Projection CNN training and binary inference")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="."):
        sp.add_argument("--out", default=out_default, help="output directory (created if absent)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--deterministic", action="store_true", help="single thread, fixed seed")

    sp = sub.add_parser("train", help="train a network")
    common(sp, "run")
    sp.add_argument("--config")
    sp.add_argument("--data", help="dataset directory (MNIST IDX files or CIFAR-10 batches)")
    sp.add_argument("--arch")
    sp.add_argument("--J", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="test accuracy of an exported model")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data")
    sp.add_argument("--dataset", default="mnist")
    sp.add_argument("--engine", choices=("float", "xnor"), default="float")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export", help="write the inference form of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("bench", help="packed vs float convolution throughput")
    common(sp)
    sp.add_argument("--model")
    sp.add_argument("--input-shape", default="1,28,28")
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--repeats", type=int, default=5)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("analyze-memory", help="storage of full-precision vs binarized weights")
    sp.add_argument("--arch", default="resnet18-like")
    sp.add_argument("--J", type=int, default=1)
    sp.add_argument("--i", type=int, default=16)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_analyze_memory)

    sp = sub.add_parser("histogram", help="kernel histogram of a projection layer")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--layer")
    sp.add_argument("--bins", type=int, default=60)
    sp.set_defaults(func=cmd_histogram)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        with _thread_limit(getattr(args, "deterministic", False)):
            return args.func(args)
    except CliError as e:
        category, msg = e.category, str(e)
    except (B.FormatError, DataFormatError) as e:
        category, msg = "format", str(e)
    except TrainingDivergedError as e:
        category, msg = "diverged", str(e)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        category, msg = "io", str(e)
    except (ValueError, KeyError) as e:
        category, msg = "usage", str(e)
    print(f"error: {category}: {msg}".replace("\n", " "), file=sys.stderr)
    return EXIT_CODES[category]


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
