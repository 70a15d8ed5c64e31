import numpy as np
import pytest

from gopforge.errors import ContractError, ShapeError
from gopforge.layers import MemoryProjection
from gopforge.model import (
    MODEL_MAGIC, Block, ModelFileError, NetworkModel, load_model, model_from_bytes, model_to_bytes,
    read_manifest, save_model,
)
from gopforge.operators import enumerate_library

from netfactory import make_net

VARIANT_ARGS = [("pop", {"gop_output": 10}), ("popfast", {}), ("popmem_h", {}), ("popmem_o", {}),
                ("popfast", {"activation": "identity"})]


def _all_params(net):
    arrs = []
    for p in net.trainable_layers():
        arrs += [p.weights, p.bias]
    return arrs


@pytest.mark.parametrize("variant,kw", VARIANT_ARGS)
def test_network_backward_matches_finite_differences(variant, kw):
    net = make_net(variant, seed=3, **kw)
    g = np.random.default_rng(9)
    X = g.normal(size=(4, 5)) * 0.7
    probe = g.normal(size=(4, 3))
    out, caches = net.forward(X)
    grads, gx = net.backward(caches, probe)
    h = 1e-6

    def f():
        return float(np.sum(net.forward(X)[0] * probe))

    for arr, grad in zip(_all_params(net), [a for pair in grads for a in pair]):
        for idx in list(np.ndindex(arr.shape))[:12]:
            old = arr[idx]
            arr[idx] = old + h
            up = f()
            arr[idx] = old - h
            dn = f()
            arr[idx] = old
            assert grad[idx] == pytest.approx((up - dn) / (2 * h), rel=1e-5, abs=1e-7)
    for idx in np.ndindex(X.shape):
        old = X[idx]
        X[idx] = old + h
        up = f()
        X[idx] = old - h
        dn = f()
        X[idx] = old
        assert gx[idx] == pytest.approx((up - dn) / (2 * h), rel=1e-5, abs=1e-7)


def test_dropout_masks_only_gop_outputs_and_is_inverted():
    net = make_net("popmem_o", seed=1)
    X = np.random.default_rng(0).normal(size=(2000, 5))
    from gopforge.numkernel import RngStream
    _, caches = net.forward(X, 0.5, RngStream(0))
    for gc, mask, _ in caches[:-1]:
        assert mask.shape == gc.x.shape
        assert set(np.unique(mask)) <= {0.0, 2.0}
        assert abs(mask.mean() - 1.0) < 0.05


def test_memory_o_block_width_and_wiring_errors():
    net = make_net("popmem_o")
    assert [net.block_output_width(k) for k in range(3)] == [4 + 2, 3 + 3, 4 + 1]
    assert net.output.fan_in == 5
    b = net.blocks
    with pytest.raises(ShapeError):
        NetworkModel("popmem_o", [b[0], Block(b[0].gop, b[0].memory)], net.output)
    with pytest.raises(ContractError):
        NetworkModel("popfast", net.blocks, net.output)


def test_memory_h_wiring():
    net = make_net("popmem_h")
    assert net.blocks[0].memory is None
    assert net.blocks[1].gop.fan_in == net.blocks[0].gop.fan_out + net.blocks[1].memory.out_dim
    assert net.blocks[1].memory.in_dim == net.blocks[0].gop.fan_in
    bad = MemoryProjection("pca", np.zeros(5), np.zeros((5, 1)))
    with pytest.raises(ContractError):
        NetworkModel("popmem_h", [Block(net.blocks[0].gop, bad)] + net.blocks[1:], net.output)


def test_parameter_count_excludes_memory():
    net = make_net("popmem_o")
    expected = sum(b.gop.weights.size + b.gop.bias.size for b in net.blocks)
    expected += net.output.weights.size + net.output.bias.size
    assert net.parameter_count() == expected


@pytest.mark.parametrize("variant,kw", VARIANT_ARGS)
def test_round_trip_is_bitwise(tmp_path, variant, kw):
    net = make_net(variant, seed=4, **kw)
    net.input_mean = np.arange(5.0)
    net.input_scale = np.linspace(1, 2, 5)
    net.info = {"note": "x", "values": [1, 2]}
    path = save_model(net, tmp_path / "m.gopm-model")
    back = load_model(path)
    X = np.random.default_rng(0).normal(size=(7, 5))
    assert np.array_equal(net.predict_proba(X), back.predict_proba(X))
    assert model_to_bytes(back) == model_to_bytes(net)
    assert back.info == net.info


def test_manifest_contents():
    net = make_net("popmem_o")
    data = model_to_bytes(net)
    assert data[:8] == MODEL_MAGIC
    manifest, _ = read_manifest(data)
    names = {s.names for s in enumerate_library()}
    for blk in manifest["blocks"]:
        assert tuple(blk["opset"]) in names
        assert blk["memory"]["frozen"] is True
    assert manifest["trainable_parameters"] == net.parameter_count()


def test_corruption_detected():
    data = model_to_bytes(make_net("popfast"))
    with pytest.raises(ModelFileError, match="truncated"):
        model_from_bytes(data[:-3])
    with pytest.raises(ModelFileError, match="truncated"):
        model_from_bytes(data[:30])
    flipped = bytearray(data)
    flipped[-1] ^= 0xFF
    with pytest.raises(ModelFileError, match="checksum"):
        model_from_bytes(bytes(flipped))
    with pytest.raises(ModelFileError, match="magic"):
        model_from_bytes(b"NOTAMODEL" + data[9:])


def test_copy_is_deep():
    net = make_net("popfast")
    c = net.copy()
    c.blocks[0].gop.weights[0, 0] += 1
    assert c.blocks[0].gop.weights[0, 0] != net.blocks[0].gop.weights[0, 0]
