import numpy as np
import pytest

from gopforge.errors import ShapeError, TrainingError, ValidationError
from gopforge.layers import init_gop_layer, init_linear_layer
from gopforge.memory import fit_pca
from gopforge.numkernel import RngStream
from gopforge.operators import OperatorSet
from gopforge.training import (
    TrainConfig, apply_max_norm, finetune_network, loss_backward, loss_forward, sgd_train, train_shln,
    write_curve_csv,
)

from netfactory import make_net


def blobs(n=120, d=4, C=3, seed=0):
    g = np.random.default_rng(seed)
    y = np.arange(n) % C
    X = g.normal(size=(n, d)) * 0.5 + np.eye(C, d)[y] * 2
    return X, np.eye(C)[y], y


def test_default_config_values():
    c = TrainConfig()
    assert (c.epochs, c.lr_initial, c.lr_drop_every, c.batch_size, c.dropout_rate) == (300, 0.01, 100, 32, 0.5)
    assert c.regularizer == "weight_decay" and c.reg_value == 1e-4 and c.loss == "mse"


def test_lr_schedules():
    m = TrainConfig(lr_initial=0.01, lr_drop_every=100, lr_drop_factor=0.1)
    assert [m.lr_at(e) for e in (0, 99, 100, 199, 200)] == pytest.approx([0.01, 0.01, 0.001, 0.001, 0.0001])
    s = TrainConfig(lr_initial=0.01, lr_drop_every=100, lr_drop_factor=0.01, lr_schedule="subtractive", lr_min=1e-5)
    assert [s.lr_at(e) for e in (0, 100, 250)] == pytest.approx([0.01, 1e-5, 1e-5])


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(lr_initial=0.0), dict(dropout_rate=1.0),
                                 dict(regularizer="l1"), dict(loss="hinge"), dict(batch_size=0),
                                 dict(lr_schedule="cosine"), dict(momentum=1.0)])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        TrainConfig(**bad)


@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_loss_gradient_matches_finite_differences(loss):
    g = np.random.default_rng(1)
    T = np.eye(3)[g.integers(0, 3, 5)]
    if loss == "mse":
        P = g.normal(size=(5, 3))
        grad = loss_backward(loss, P, T)
        num = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            e = np.zeros_like(P)
            e[idx] = 1e-6
            num[idx] = (loss_forward(loss, P + e, T) - loss_forward(loss, P - e, T)) / 2e-6
        assert np.allclose(grad, num, atol=1e-8)
    else:
        # fused gradient is with respect to the logits
        Z = g.normal(size=(5, 3))
        sm = lambda z: np.exp(z - z.max(1, keepdims=True)) / np.exp(z - z.max(1, keepdims=True)).sum(1, keepdims=True)
        grad = loss_backward(loss, sm(Z), T)
        num = np.zeros_like(Z)
        for idx in np.ndindex(Z.shape):
            e = np.zeros_like(Z)
            e[idx] = 1e-6
            num[idx] = (loss_forward(loss, sm(Z + e), T) - loss_forward(loss, sm(Z - e), T)) / 2e-6
        assert np.allclose(grad, num, atol=1e-8)
    with pytest.raises(ShapeError):
        loss_forward(loss, np.ones((2, 3)), np.ones((3, 3)))


def _shln(X, C, opset=0, seed=0, act="softmax"):
    rng = RngStream(seed)
    return init_gop_layer(X.shape[1], 6, OperatorSet.from_index(opset), rng), init_linear_layer(6, C, act, rng)


@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_training_reduces_loss(loss):
    X, T, y = blobs()
    h, o = _shln(X, 3, opset=OperatorSet.from_names("multiplication", "summation", "tanh").index)
    cfg = TrainConfig(epochs=40, lr_initial=0.5, lr_drop_every=40, dropout_rate=0.0, loss=loss)
    before = loss_forward(loss, make_pred(h, o, X), T)
    res = train_shln(h, o, None, (X, T), cfg, RngStream(0))
    assert res.final_loss < 0.5 * before
    assert len(res.loss_curve) == 40 and res.epochs_run == 40
    assert np.mean(res.trained_params.predict(X, raw=False) == y) > 0.9


def make_pred(h, o, X):
    from gopforge.model import Block, NetworkModel
    return NetworkModel("popfast", [Block(h.copy())], o.copy()).forward(X)[0]


def test_train_shln_does_not_modify_inputs_and_is_deterministic():
    X, T, _ = blobs()
    h, o = _shln(X, 3)
    w0 = h.weights.copy()
    cfg = TrainConfig(epochs=5, lr_initial=0.2, lr_drop_every=5)
    a = train_shln(h, o, None, (X, T), cfg, RngStream(4, 2))
    b = train_shln(h, o, None, (X, T), cfg, RngStream(4, 2))
    assert np.array_equal(h.weights, w0)
    assert a.final_loss == b.final_loss
    assert np.array_equal(a.trained_params.blocks[0].gop.weights, b.trained_params.blocks[0].gop.weights)


def test_zero_learning_rate_leaves_parameters_unchanged():
    X, T, _ = blobs()
    h, o = _shln(X, 3)
    cfg = TrainConfig(epochs=3, lr_initial=1e-3, lr_drop_every=1, lr_drop_factor=0.0)
    res = train_shln(h, o, None, (X, T), cfg, RngStream(0))
    # only epoch 0 trains; compare with a single-epoch run
    one = train_shln(h, o, None, (X, T), TrainConfig(epochs=1, lr_initial=1e-3), RngStream(0))
    assert np.array_equal(res.trained_params.output.weights, one.trained_params.output.weights)


def test_weight_decay_excludes_biases():
    # with zero data gradient (zero upstream via identical targets) decay shrinks weights only
    X = np.zeros((4, 3))
    h = init_gop_layer(3, 3, OperatorSet.from_names("multiplication", "summation", "relu"), RngStream(0))
    h.bias[:] = -1.0  # relu dead: no data gradient reaches the hidden layer
    o = init_linear_layer(3, 2, "identity", RngStream(1))
    o.bias[:] = [0.25, 0.5]
    T = np.tile([0.25, 0.5], (4, 1))
    cfg = TrainConfig(epochs=1, batch_size=4, lr_initial=0.1, dropout_rate=0.0, reg_value=0.5)
    res = train_shln(h, o, None, (X, T), cfg, RngStream(0))
    net = res.trained_params
    assert np.allclose(net.blocks[0].gop.weights, h.weights * (1 - 0.1 * 0.5))
    assert np.array_equal(net.blocks[0].gop.bias, h.bias)
    assert np.array_equal(net.output.bias, o.bias)


def test_max_norm_caps_columns():
    w = np.array([[3.0, 0.1], [4.0, 0.1]])
    apply_max_norm(w, 2.0)
    assert np.linalg.norm(w[:, 0]) == pytest.approx(2.0)
    assert np.allclose(w[:, 1], [0.1, 0.1])
    X, T, _ = blobs()
    h, o = _shln(X, 3)
    cfg = TrainConfig(epochs=5, lr_initial=2.0, regularizer="max_norm", reg_value=0.5, dropout_rate=0.0)
    net = train_shln(h, o, None, (X, T), cfg, RngStream(0)).trained_params
    for p in net.trainable_layers():
        assert np.all(np.linalg.norm(p.weights, axis=0) <= 0.5 + 1e-12)


def test_memory_projection_never_updated():
    X, T, _ = blobs()
    mem = fit_pca(X)
    basis, mean = mem.basis.copy(), mem.mean.copy()
    rng = RngStream(0)
    h = init_gop_layer(4, 6, OperatorSet.from_index(3), rng)
    o = init_linear_layer(6 + mem.out_dim, 3, "softmax", rng)
    res = train_shln(h, o, mem, (X, T), TrainConfig(epochs=5, lr_initial=0.3), RngStream(0))
    assert res.update_counts["memory_updates"] == 0
    assert res.update_counts["gop_updates"] == res.update_counts["steps"] > 0
    assert np.array_equal(res.trained_params.blocks[0].memory.basis, basis)
    assert np.array_equal(mem.mean, mean)


def test_divergence_raises_training_error():
    X, T, _ = blobs()
    X = X * 1e3
    h, o = _shln(X, 3, opset=OperatorSet.from_names("multiplication", "summation", "relu").index, act="identity")
    cfg = TrainConfig(epochs=20, lr_initial=1e3, dropout_rate=0.0, regularizer="none")
    with pytest.raises(TrainingError) as info:
        train_shln(h, o, None, (X, T), cfg, RngStream(0))
    assert info.value.epoch is not None


def test_cross_entropy_requires_softmax_output():
    X, T, _ = blobs()
    h, o = _shln(X, 3, act="identity")
    with pytest.raises(ValidationError):
        train_shln(h, o, None, (X, T), TrainConfig(epochs=1, loss="cross_entropy"), RngStream(0))


@pytest.mark.parametrize("variant", ["popfast", "popmem_h", "popmem_o"])
def test_finetune_trains_copy_and_keeps_memory(variant, tmp_path):
    net = make_net(variant, seed=2)
    g = np.random.default_rng(0)
    X = g.normal(size=(60, 5))
    T = np.eye(3)[g.integers(0, 3, 60)]
    before = [b.gop.weights.copy() for b in net.blocks]
    res = finetune_network(net, (X, T), TrainConfig(epochs=3, lr_initial=0.1), RngStream(1), val=(X, T.argmax(1)))
    assert all(np.array_equal(a, b.gop.weights) for a, b in zip(before, net.blocks))
    tuned = res.trained_params
    for a, b in zip(net.blocks, tuned.blocks):
        assert a.gop.opset == b.gop.opset
        if a.memory is not None:
            assert np.array_equal(a.memory.basis, b.memory.basis)
    assert res.update_counts["memory_updates"] == 0
    write_curve_csv(tmp_path / "c.csv", res.curve)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "epoch,lr,train_loss,train_acc,val_acc" and len(rows) == 4
