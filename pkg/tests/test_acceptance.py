"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The two MNIST runs (criteria 6-8) need the official IDX files; see README.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from pcnn.bitpack import export_bytes, import_bytes, memory_report, pack, resnet18_layers, unpack
from pcnn.data import default_mnist_root, load_mnist
from pcnn.models import build_model, param_count, proj_layers
from pcnn.trainer import TrainConfig, Trainer

import checks

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "mnist_desk.cfg"


def _mnist():
    root = default_mnist_root()
    if root is None:
        pytest.fail("MNIST IDX files not found (set PCNN_MNIST or place them in data/mnist)")
    return load_mnist(root, "train"), load_mnist(root, "test")


def _run(config, train, test):
    with threadpool_limits(1):
        t0 = time.perf_counter()
        tr = Trainer(config, image_shape=train.images.shape[1:])
        tr.fit(train, test)
        return tr, time.perf_counter() - t0


@pytest.fixture(scope="module")
def mnist():
    return _mnist()


@pytest.fixture(scope="module")
def desk_runs(mnist):
    train, test = mnist
    cfg = TrainConfig.load(DESK_CONFIG)
    with_lam, secs = _run(cfg, train, test)
    without, _ = _run(cfg.replace(lam=0.0), train, test)
    return with_lam, secs, without


def test_criterion_1_projection_gradients(record):
    t0 = time.perf_counter()
    res = checks.projection_grad_instances(n=100, seed=0, tol=1e-5)
    secs = time.perf_counter() - t0
    ok = res["ok"] and res["instances"] >= 100 and secs < 60
    assert record(1, ok, f"{res['detail']}, {secs:.1f}s"), res["detail"]


def test_criterion_2_convolution_oracle(record):
    t0 = time.perf_counter()
    res = checks.conv_instances(n=100, seed=1, atol=1e-5, rtol=1e-4)
    secs = time.perf_counter() - t0
    assert record(2, res["ok"] and secs < 120, f"{res['detail']}, {secs:.1f}s"), res["detail"]


def test_criterion_3_xnor_exact(record):
    t0 = time.perf_counter()
    res = checks.xnor_instances(n=1000, seed=2)
    secs = time.perf_counter() - t0
    assert record(3, res["ok"] and secs < 60, f"{res['detail']}, {secs:.1f}s"), res["detail"]


def test_criterion_4_memory_arithmetic(record):
    rep = memory_report(resnet18_layers(), J=1)
    full, comp = rep.full_bits / 1e6, rep.compressed_bits / 1e6
    errs = [abs(full - 374.1) / 374.1, abs(comp - 33.7) / 33.7, abs(rep.ratio - 11.10) / 11.10]
    detail = f"full {full:.2f} Mbit, compressed {comp:.2f} Mbit, saving {rep.ratio:.2f}x, max dev {max(errs):.2%}"
    assert record(4, max(errs) <= 0.01, detail), detail


def test_criterion_5_parameter_scaling(record):
    targets = {1: 0.27e6, 2: 0.54e6, 4: 1.07e6}
    counts = {J: param_count(build_model("wrn-22", J=J, i=16)) for J in targets}
    devs = {J: abs(counts[J] - t) / t for J, t in targets.items()}
    detail = ", ".join(f"J={J}: {counts[J]} ({devs[J]:.2%})" for J in targets)
    assert record(5, max(devs.values()) <= 0.02, detail), detail


def test_criterion_6_desk_training(desk_runs, record):
    tr, secs, _ = desk_runs
    cfg = tr.config
    accs = [r["test_acc"] for r in tr.state.history]
    desk = (cfg.J == 1 and cfg.binarize_activations and cfg.first_last_full_precision and cfg.lam == 1e-4
            and cfg.arch == "small-cnn")
    ok = desk and cfg.epochs <= 20 and max(accs) >= 0.97 and secs < 1800
    best = int(np.argmax(accs))
    detail = (f"best test acc {accs[best]:.4f} at epoch {best + 1}, final {accs[-1]:.4f}, "
              f"{cfg.epochs} epochs in {secs / 60:.1f} min, single thread")
    assert record(6, ok, detail), detail


def test_criterion_7_lambda_direction(desk_runs, record):
    tr, _, tr0 = desk_runs
    frac = [r["band_fraction"] for r in tr.state.history]
    frac0 = tr0.state.history[-1]["band_fraction"]
    # epochs are counted from 1 here: "epoch 2" is history index 1
    larger = frac[-1] > frac0
    nondecreasing = frac[-1] >= frac[1]
    detail = (f"band fraction lambda=1e-4 {frac[-1]:.4f} vs lambda=0 {frac0:.4f}; "
              f"lambda=1e-4 epoch 2 {frac[1]:.4f} -> final {frac[-1]:.4f}")
    assert record(7, larger and nondecreasing, detail), detail


def test_criterion_8_determinism_and_roundtrips(desk_runs, mnist, record):
    train, test = mnist
    cfg = TrainConfig.load(DESK_CONFIG).replace(epochs=1, train_subset=0)
    small_train, small_test = train.subset(3000), test.subset(1000)
    a, _ = _run(cfg, small_train, small_test)
    b, _ = _run(cfg, small_train, small_test)
    same_history = a.state.history == b.state.history
    same_bytes = export_bytes(a.model) == export_bytes(b.model)

    model = desk_runs[0].model
    x = test.images[:500]
    net = import_bytes(export_bytes(model))
    exact = np.array_equal(net.forward(x), model.forward(x, train=False))

    lossless = True
    for layer in proj_layers(model):
        _, _, _, chat = layer.quantize()
        flat = chat.reshape(-1, *chat.shape[2:])
        lossless &= np.array_equal(unpack(pack(flat)), flat)
    rng = np.random.default_rng(8)
    for _ in range(100):
        k = (np.float32(rng.uniform(0.01, 2)) * rng.choice([-1, 1], size=(3, 5, 3, 3))).astype(np.float32)
        lossless &= np.array_equal(unpack(pack(k)), k)
    detail = (f"reproducible history {same_history}, identical export {same_bytes}, "
              f"import forward bit-exact {exact}, pack lossless {lossless}")
    assert record(8, same_history and same_bytes and exact and lossless, detail), detail


def test_criterion_9_reduction(mnist, record):
    train, test = mnist
    base = TrainConfig.load(DESK_CONFIG).replace(lam=0.0, J=1, w_init="ones", freeze_projections=True, epochs=2)
    a, _ = _run(base, train.subset(3000), test.subset(1000))
    b, _ = _run(base.replace(projection_loss=False), train.subset(3000), test.subset(1000))
    same = a.state.history == b.state.history
    frozen = all(np.all(l.W.value == 1) for l in proj_layers(a.model))
    detail = f"{len(a.state.history)} epochs, metric history identical {same}, projections stayed at ones {frozen}"
    assert record(9, same and frozen, detail), detail
