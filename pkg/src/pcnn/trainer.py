"""Training loop for projection networks.

One iteration runs the forward pass (quantize kernels, binarize activations,
convolve), backpropagates the task loss to get the gradient at every quantized
kernel, then walks the layers from last to first computing the kernel and
projection-matrix gradients and applying the SGD updates.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from .data import Dataset, augment
from .layers import Module, Param, named_modules, named_params
from .models import build_model, proj_layers
from .proj_conv import ProjConv
from .projection import band_fraction

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "iter", "loss_s", "loss_p", "loss_total", "train_acc", "test_acc", "lr1", "lr2"]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = 1e-4
    eta1: float = 0.1
    eta2: float = 0.01
    J: int = 1
    epochs: int = 20
    batch_size: int = 100
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 20
    seed: int = 0
    dataset: str = "mnist"
    arch: str = "small-cnn"
    i: int = 16  # first-stage width of wrn-22
    width: int = 16  # channel width of small-cnn
    binarize_activations: bool = True
    first_last_full_precision: bool = True
    # None: use the current kernel learning rate inside the projection loss
    eta_loss: float | None = None
    omega_norm: str = "mean"
    projection_loss: bool = True
    freeze_projections: bool = False
    w_init: str = "uniform"
    augment: bool = False
    train_subset: int = 0
    test_subset: int = 0
    hist_bins: int = 60

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("learning rates must be > 0")
        if self.J < 1:
            raise ValueError("J must be >= 1")

    # the config file uses the key "lambda"
    _FILE_KEYS = {"lam": "lambda"}

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            key = self._FILE_KEYS.get(f.name, f.name)
            lines.append(f"{key}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        inverse = {v: k for k, v in cls._FILE_KEYS.items()}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            name = inverse.get(key, key)
            if name not in fields or name.startswith("_"):
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kwargs[name] = _parse_value(value, fields[name].type)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _parse_value(value: str, typ):
    typ = str(typ)
    if value in ("None", "none", ""):
        return None
    if "bool" in typ:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if "int" in typ:
        return int(value)
    if "float" in typ:
        return float(value)
    return value


@dataclass
class TrainState:
    k: int = 0
    epoch: int = 0
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict | None = None
    history: list[dict] = field(default_factory=list)


def lr_at(lr0: float, epoch: int, factor: float = 0.1, every: int = 20) -> float:
    return lr0 * factor ** (epoch // every)


def make_model(config: TrainConfig, image_shape: tuple[int, int, int] | None = None) -> Module:
    c, h = (image_shape[0], image_shape[1]) if image_shape else (None, None)
    return build_model(config.arch, J=config.J, seed=config.seed, width=config.width, i=config.i,
                       first_last_full_precision=config.first_last_full_precision,
                       omega_norm=config.omega_norm, w_init=config.w_init,
                       freeze_w=config.freeze_projections, binarize_activations=config.binarize_activations,
                       in_ch=c, image=h)


def first_binary_layer(model: Module) -> tuple[str, ProjConv]:
    for name, m in named_modules(model):
        if isinstance(m, ProjConv) and m.binarize_input:
            return name, m
    for name, m in named_modules(model):
        if isinstance(m, ProjConv):
            return name, m
    raise ValueError("model has no projection layers")


def find_layer(model: Module, name: str) -> Module:
    for n, m in named_modules(model):
        if n == name:
            return m
    raise KeyError(f"unknown layer {name!r}; known: {[n for n, _ in named_modules(model) if n]}")


def emit_histogram(model: Module, layer: str | None = None, bins: int = 60, value_range=None) -> dict:
    """Fixed-width histogram of a projection layer's full-precision kernels."""
    if layer is None:
        layer, mod = first_binary_layer(model)
    else:
        mod = find_layer(model, layer)
    if not isinstance(mod, ProjConv):
        raise KeyError(f"layer {layer!r} is not a projection layer")
    c = mod.C.value.astype(np.float64).ravel()
    counts, edges = np.histogram(c, bins=bins, range=value_range)
    omega = mod.omega()
    return {"layer": layer, "counts": counts, "edges": edges, "a": omega.scale,
            "band_fraction": band_fraction(c, omega)}


def write_histogram_csv(path, records: list[tuple[int, dict]], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(["epoch", "layer", "bin_lo", "bin_hi", "count", "a"])
        for epoch, rec in records:
            for lo, hi, n in zip(rec["edges"][:-1], rec["edges"][1:], rec["counts"]):
                w.writerow([epoch, rec["layer"], repr(float(lo)), repr(float(hi)), int(n), repr(rec["a"])])


def evaluate(model: Module, data: Dataset, batch_size: int = 500) -> float:
    correct = 0
    for s in range(0, len(data), batch_size):
        logits = model.forward(data.images[s:s + batch_size], train=False)
        correct += int(np.sum(logits.argmax(axis=1) == data.labels[s:s + batch_size]))
    return correct / max(len(data), 1)


class Trainer:
    def __init__(self, config: TrainConfig, model: Module | None = None, image_shape=None,
                 hooks: Callable[[str, str], None] | None = None):
        self.config = config
        self.image_shape = tuple(image_shape) if image_shape is not None else None
        self.model = model if model is not None else make_model(config, image_shape)
        self.state = TrainState()
        self.rng = np.random.default_rng(config.seed)
        self.hooks = hooks
        self.params = dict(named_params(self.model))
        self._param_names = {id(p): n for n, p in self.params.items()}
        # update order: last layer first
        self._update_order = [(n, m) for n, m in named_modules(self.model) if m.params()][::-1]
        self.proj = proj_layers(self.model)

    def _hook(self, event: str, layer: str) -> None:
        if self.hooks is not None:
            self.hooks(event, layer)

    def lrs(self, epoch: int | None = None) -> tuple[float, float]:
        e = self.state.epoch if epoch is None else epoch
        c = self.config
        return (lr_at(c.eta1, e, c.lr_decay_factor, c.lr_decay_every),
                lr_at(c.eta2, e, c.lr_decay_factor, c.lr_decay_every))

    def _apply(self, name: str, p: Param, grad: np.ndarray, lr: float) -> None:
        c = self.config
        p.value, buf = L.sgd_update(p.value, grad, self.state.momentum.get(name), lr, c.momentum,
                                    c.weight_decay if p.decay else 0.0)
        if buf is not None:
            self.state.momentum[name] = buf

    def step(self, x: np.ndarray, y: np.ndarray) -> tuple[L.LossBreakdown, int]:
        """One iteration; returns the loss breakdown and the number of correct predictions."""
        c = self.config
        lr1, lr2 = self.lrs()
        logits = self.model.forward(x, train=True)
        l_s, g = L.cross_entropy(logits, y)
        if not math.isfinite(l_s):
            raise TrainingDivergedError(self._divergence_report(l_s, 0.0))
        self.model.backward(g)
        for layer in self.proj:
            self._hook("d_chat", layer.name)
        eta = c.eta_loss if c.eta_loss is not None else lr1
        l_p = L.projection_loss(self.proj, eta, c.lam) if c.projection_loss else 0.0
        if not (math.isfinite(l_s) and math.isfinite(l_p)):
            raise TrainingDivergedError(self._divergence_report(l_s, l_p))

        for path, mod in self._update_order:
            if isinstance(mod, ProjConv):
                cache = mod.cache
                d_C = L.grad_C(mod, cache, cache.d_chat, eta, c.lam, c.projection_loss)
                self._hook("d_C", mod.name)
                d_W = L.grad_W(mod, cache, cache.d_chat, eta, c.lam, c.projection_loss)
                self._hook("d_W", mod.name)
                self._apply(f"{path}.C", mod.C, d_C, lr1)
                if mod.W.trainable:
                    self._apply(f"{path}.W", mod.W, d_W, lr2)
                self._hook("update", mod.name)
            else:
                for pname, p in mod.params().items():
                    if p.trainable and p.grad is not None:
                        self._apply(f"{path}.{pname}", p, p.grad, lr1)
        self.state.k += 1
        correct = int(np.sum(logits.argmax(axis=1) == y))
        return L.LossBreakdown(l_s, l_p, c.lam), correct

    def _divergence_report(self, l_s, l_p) -> str:
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.value)):
                return f"non-finite parameter in layer {name} at iteration {self.state.k}"
        for layer in self.proj:
            d = layer.cache.d_chat if layer.cache is not None else None
            if d is not None and not np.all(np.isfinite(d)):
                return f"non-finite gradient in layer {layer.name} at iteration {self.state.k}"
        return f"non-finite loss (l_s={l_s}, l_p={l_p}) at iteration {self.state.k}"

    def train_epoch(self, data: Dataset) -> dict:
        c = self.config
        order = self.rng.permutation(len(data))
        sums = np.zeros(3)
        correct = seen = batches = 0
        for s in range(0, len(data), c.batch_size):
            idx = order[s:s + c.batch_size]
            x = data.images[idx]
            if c.augment:
                x = augment(x, self.rng, pad=4)
            loss, ok = self.step(x, data.labels[idx])
            sums += (loss.l_s, loss.l_p, loss.total)
            correct += ok
            seen += len(idx)
            batches += 1
        lr1, lr2 = self.lrs()
        sums /= max(batches, 1)
        return {"epoch": self.state.epoch, "iter": self.state.k, "loss_s": sums[0], "loss_p": sums[1],
                "loss_total": sums[2], "train_acc": correct / max(seen, 1), "lr1": lr1, "lr2": lr2}

    def fit(self, train: Dataset, test: Dataset | None = None, out_dir=None,
            on_epoch: Callable[["Trainer", dict], None] | None = None) -> list[dict]:
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.cfg").write_text(self.config.to_text())
        while self.state.epoch < self.config.epochs:
            t0 = time.perf_counter()
            row = self.train_epoch(train)
            row["test_acc"] = evaluate(self.model, test) if test is not None else float("nan")
            hist = emit_histogram(self.model, bins=self.config.hist_bins)
            row["band_fraction"] = hist["band_fraction"]
            row["a"] = hist["a"]
            self.state.history.append(row)
            log.info("epoch %d  loss_s %.4f  loss_p %.3g  train %.4f  test %.4f  band %.3f  (%.1fs)",
                     row["epoch"], row["loss_s"], row["loss_p"], row["train_acc"], row["test_acc"],
                     row["band_fraction"], time.perf_counter() - t0)
            self.state.epoch += 1
            if out is not None:
                self._write_artifacts(out, row, hist)
            if on_epoch is not None:
                on_epoch(self, row)
        return self.state.history

    def _write_artifacts(self, out: Path, row: dict, hist: dict) -> None:
        from .bitpack import save_checkpoint
        metrics = out / "metrics.csv"
        new = not metrics.exists() or row["epoch"] == 0
        with open(metrics, "w" if new else "a", newline="") as f:
            w = csv.writer(f)
            if new:
                w.writerow(METRICS_HEADER)
            w.writerow([row["epoch"], row["iter"]] + [repr(float(row[k])) for k in METRICS_HEADER[2:]])
        write_histogram_csv(out / "histograms.csv", [(row["epoch"], hist)], append=row["epoch"] > 0)
        save_checkpoint(out / f"checkpoint_epoch{row['epoch']:03d}.pcnn", self)


def train(config: TrainConfig, train_set: Dataset, test_set: Dataset | None = None, out_dir=None,
          hooks=None) -> tuple[Module, list[dict]]:
    """Build a model for ``config`` and run the full training loop."""
    if config.train_subset:
        train_set = train_set.subset(config.train_subset)
    if test_set is not None and config.test_subset:
        test_set = test_set.subset(config.test_subset)
    trainer = Trainer(config, image_shape=train_set.images.shape[1:], hooks=hooks)
    history = trainer.fit(train_set, test_set, out_dir)
    return trainer.model, history


def history_json(history: list[dict]) -> str:
    return json.dumps(history, default=float)
