import math

import numpy as np
import pytest

from pcnn.data import Dataset, default_mnist_root, load_mnist
from pcnn.models import UnknownArchError, build_model, param_count, proj_layers
from pcnn.trainer import (METRICS_HEADER, TrainConfig, Trainer, TrainingDivergedError, emit_histogram, lr_at,
                          train, write_histogram_csv)


def _toy_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 10, n)
    x = rng.standard_normal((n, 1, 28, 28)).astype(np.float32) * 0.3
    # class-dependent bright square so the task is learnable
    for k in range(n):
        r, c = divmod(int(y[k]), 5)
        x[k, 0, 4 + 10 * r:10 + 10 * r, 2 + 5 * c:6 + 5 * c] += 2.0
    return Dataset(x, y)


def test_small_cnn_param_count_hand_sum():
    w, J = 16, 1
    expected = 1 * w * 9 + 2 * w + 2 * (w * w * 9 + 2 * w) + w * 49 * 10 + 10
    assert param_count(build_model("small-cnn", J=J, width=w)) == expected
    w2 = build_model("small-cnn", J=2, width=8)
    assert param_count(w2) == 1 * 16 * 9 + 32 + 2 * (2 * 8 * 8 * 9 + 32) + 16 * 49 * 10 + 10


@pytest.mark.parametrize("J,target", [(1, 0.27e6), (2, 0.54e6), (4, 1.07e6)])
def test_wrn_param_counts(J, target):
    n = param_count(build_model("wrn-22", J=J, i=16))
    assert abs(n - target) / target <= 0.02


def test_unknown_arch():
    with pytest.raises(UnknownArchError):
        build_model("vgg", J=1)


def test_lr_schedule():
    assert lr_at(0.1, 0) == 0.1 and lr_at(0.1, 19) == 0.1
    assert math.isclose(lr_at(0.1, 20), 0.01) and math.isclose(lr_at(0.1, 45), 0.001)


def test_config_text_roundtrip():
    cfg = TrainConfig(lam=0.0, J=2, eta_loss=0.05, augment=True, dataset="cifar10")
    text = cfg.to_text()
    assert "lambda=0.0" in text
    assert TrainConfig.from_text(text) == cfg
    assert TrainConfig.from_text("# comment\nlambda = 1e-3\nJ=4\n").lam == 1e-3
    with pytest.raises(ValueError, match="unknown key"):
        TrainConfig.from_text("nope=1")
    with pytest.raises(ValueError):
        TrainConfig.from_text("lambda=-1")


def test_iteration_order():
    events = []
    cfg = TrainConfig(width=4, batch_size=8)
    tr = Trainer(cfg, image_shape=(1, 28, 28), hooks=lambda e, layer: events.append((e, layer)))
    d = _toy_data(8)
    tr.step(d.images, d.labels)
    # all task gradients at the quantized kernels exist before any kernel gradient
    first_dc = events.index(("d_C", "conv3"))
    assert {e for e, _ in events[:first_dc]} == {"d_chat"}
    # layers are processed last to first, and within a layer dC -> dW -> update
    tail = [e for e in events[first_dc:]]
    assert tail == [("d_C", "conv3"), ("d_W", "conv3"), ("update", "conv3"),
                    ("d_C", "conv2"), ("d_W", "conv2"), ("update", "conv2")]


def test_projection_loss_uses_current_lr():
    cfg = TrainConfig(width=4, batch_size=8, eta1=0.05)
    tr = Trainer(cfg, image_shape=(1, 28, 28))
    d = _toy_data(8)
    from pcnn.losses import projection_loss
    loss, _ = tr.step(d.images, d.labels)
    assert loss.l_p > 0


def test_training_learns_toy_task_and_is_deterministic():
    d = _toy_data(200)
    cfg = TrainConfig(width=4, epochs=3, batch_size=20, eta1=0.05)
    _, h1 = train(cfg, d, d)
    _, h2 = train(cfg, d, d)
    assert h1 == h2
    assert h1[-1]["loss_s"] < h1[0]["loss_s"]
    assert h1[-1]["train_acc"] > 0.3


def test_divergence_names_layer_and_iteration():
    cfg = TrainConfig(width=4, batch_size=8)
    tr = Trainer(cfg, image_shape=(1, 28, 28))
    tr.model.layers[-1].weight.value[0, 0] = np.inf
    d = _toy_data(8)
    with pytest.raises(TrainingDivergedError, match=r"fc\.weight.*iteration 0"):
        tr.step(d.images, d.labels)


def test_artifacts_written(tmp_path):
    d = _toy_data(40)
    cfg = TrainConfig(width=4, epochs=2, batch_size=20)
    tr = Trainer(cfg, image_shape=(1, 28, 28))
    tr.fit(d, d, tmp_path / "run")
    lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
    assert lines[0].split(",") == METRICS_HEADER and len(lines) == 3
    assert (tmp_path / "run" / "checkpoint_epoch001.pcnn").exists()
    hist = (tmp_path / "run" / "histograms.csv").read_text().splitlines()
    assert len(hist) == 1 + 2 * cfg.hist_bins


def test_histogram_properties(tmp_path):
    model = build_model("small-cnn", width=4)
    layer = proj_layers(model)[0]
    layer.C.value[:] = 0.3
    rec = emit_histogram(model, bins=10)
    assert np.count_nonzero(rec["counts"]) == 1 and rec["band_fraction"] == 1.0
    rng = np.random.default_rng(0)
    half = rng.standard_normal(layer.C.value.size // 2)
    layer.C.value[:] = np.concatenate([half, -half]).reshape(layer.C.value.shape)
    lim = float(np.abs(layer.C.value).max())
    rec = emit_histogram(model, bins=10, value_range=(-lim, lim))
    assert rec["counts"].tolist() == rec["counts"][::-1].tolist()
    with pytest.raises(KeyError):
        emit_histogram(model, "nope")
    write_histogram_csv(tmp_path / "h.csv", [(0, rec)])
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 11


def test_bnn_reduction_smoke_on_mnist():
    root = default_mnist_root()
    if root is None:
        pytest.skip("MNIST files not available")
    d = load_mnist(root, "train").subset(1000)
    cfg = TrainConfig(lam=0.0, w_init="ones", freeze_projections=True, epochs=3, batch_size=50, width=8)
    _, hist = train(cfg, d)
    losses = [r["loss_s"] for r in hist]
    assert losses[2] < losses[1] < losses[0]
