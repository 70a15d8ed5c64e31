import numpy as np
import pytest

from gopforge.data import make_synthetic, split_dataset, standardize
from gopforge.errors import ProgressionError, ValidationError
from gopforge.progressive import (
    NetworkTemplate, ProgressionData, ProgressiveConfig, StoppingRule, progress, run_popfast,
    should_stop, template_from_model,
)
from gopforge.training import TrainConfig

FAST = TrainConfig(epochs=2, lr_initial=0.2, lr_drop_every=2, dropout_rate=0.0)


@pytest.fixture(scope="module")
def small():
    ds = standardize(split_dataset(make_synthetic("blobs", n_samples=90, num_classes=3, dim=4, seed=1), seed=1))
    Xtr, ytr = ds.part("train")
    Xva, yva = ds.part("val")
    return ProgressionData(Xtr, ytr, 3, Xva, yva)


def never_stop():
    # no loss gets below this, so the progression uses the whole template
    return StoppingRule(mode="absolute_loss", threshold=1e-300)


TEMPLATE = NetworkTemplate(4, (3, 4, 3), 3)


def run(algo, data, memory_kind=None, **kw):
    pc = ProgressiveConfig(train=FAST, finetune=kw.pop("finetune", None), stopping=kw.pop("stopping", never_stop()), **kw)
    return progress(algo, data, TEMPLATE, pc, memory_kind)


def test_should_stop_relative_rule():
    r = StoppingRule()
    assert should_stop([0.5], r) is False
    assert should_stop([0.5, 0.6], r) is False
    assert should_stop([0.6, 0.60005], r) is True
    assert should_stop([0.6, 0.55], r) is True
    assert should_stop([0.0, 0.1], r) is False
    assert should_stop([0.0, 0.0], r) is True


def test_should_stop_absolute_rule():
    r = StoppingRule(mode="absolute_loss", threshold=0.01)
    assert should_stop([0.5, 0.005], r) is True
    assert should_stop([0.5], r) is False
    with pytest.raises(ValidationError):
        should_stop([], r)


def test_template_parse():
    t = NetworkTemplate.parse([20, 40, 40, 4])
    assert t.hidden_sizes == (40, 40) and t.as_list() == [20, 40, 40, 4]
    with pytest.raises(ValidationError):
        NetworkTemplate.parse([20, 4])
    with pytest.raises(ValidationError):
        NetworkTemplate.parse([20, 2, 4])


@pytest.mark.parametrize("algo,kind", [("popfast", None), ("popmemh", "pca"), ("popmemo", "lda")])
def test_seventy_two_candidates_per_layer(small, algo, kind):
    res = run(algo, small, kind)
    assert len(res.history) == 3
    assert all(r.candidates == 72 for r in res.history)
    assert res.candidate_count == 72 * 3
    assert [len(s.outcomes) for _, _, s in res.sweeps] == [72, 72, 72]


def test_pop_runs_288_candidates_per_layer(small):
    pc = ProgressiveConfig(train=FAST, finetune=None, stopping=never_stop())
    res = progress("pop", small, NetworkTemplate(4, (3,), 3), pc)
    assert res.history[0].candidates == 288 and res.candidate_count == 288
    assert [phase for _, phase, _ in res.sweeps] == [1, 2, 3, 4]
    assert res.model.output.opset.names == res.history[0].output_opset
    again = progress("pop", small, NetworkTemplate(4, (3,), 3), pc)
    assert again.history[0].manifest() == res.history[0].manifest()


def test_history_never_exceeds_template(small):
    res = run("popfast", small)
    assert len(res.history) <= len(TEMPLATE.hidden_sizes)
    assert [r.step for r in res.history] == [1, 2, 3]


def test_stopping_step_ends_progression(small):
    res = run("popfast", small, stopping=StoppingRule(threshold=10.0))  # any step after the first stops
    assert len(res.history) == 2 and res.history[-1].stopped and not res.history[0].stopped
    assert len(res.model.blocks) == 2


def test_memory_h_wiring_recorded(small):
    res = run("popmemh", small, "pca")
    h = TEMPLATE.hidden_sizes
    assert res.history[0].input_width == 4 and res.history[0].memory_dim == 0
    for k in range(1, 3):
        rec = res.history[k]
        assert rec.input_width == h[k - 1] + rec.memory_dim
        assert rec.memory_dim == res.model.blocks[k].memory.out_dim > 0
        assert res.model.blocks[k].memory.in_dim == res.history[k - 1].input_width
    assert res.model.output.fan_in == h[-1]


def test_memory_o_wiring_recorded(small):
    res = run("popmemo", small, "lda")
    for k, rec in enumerate(res.history):
        assert rec.memory_dim == 2  # C - 1
        assert rec.output_fan_in == TEMPLATE.hidden_sizes[k] + rec.memory_dim
        if k:
            assert rec.input_width == res.history[k - 1].output_fan_in
    assert res.model.output.fan_in == res.history[-1].output_fan_in


@pytest.mark.parametrize("algo", ["popmemh", "popmemo"])
def test_zero_dim_memory_degrades_to_popfast(small, algo):
    fast = run("popfast", small)
    mem = run(algo, small, "pca", memory_max_dim=0)
    assert [r.opset for r in mem.history] == [r.opset for r in fast.history]
    for a, b in zip(fast.model.blocks, mem.model.blocks):
        assert np.array_equal(a.gop.weights, b.gop.weights) and np.array_equal(a.gop.bias, b.gop.bias)
    assert np.array_equal(fast.model.output.weights, mem.model.output.weights)


def test_assembled_model_reproduces_last_shln(small):
    res = run("popfast", small)
    last = res.sweeps[-1][2].winner.result.trained_params
    X = small.X_train
    # the SHLN saw the frozen features of the earlier blocks
    feats = X
    for b in res.model.blocks[:-1]:
        from gopforge.layers import gop_forward
        feats = gop_forward(b.gop, feats)[0]
    assert np.max(np.abs(res.model.forward(X)[0] - last.forward(feats)[0])) <= 1e-12


def test_blocks_frozen_until_finetune(small):
    res = run("popmemo", small, "pca")
    for k, (_, _, sw) in enumerate(res.sweeps):
        won = sw.winner.result.trained_params.blocks[0].gop
        assert np.array_equal(won.weights, res.model.blocks[k].gop.weights)


def test_finetune_changes_weights_but_not_structure(small):
    base = run("popmemo", small, "pca")
    tuned = run("popmemo", small, "pca", finetune=TrainConfig(epochs=2, lr_initial=0.05))
    assert len(tuned.finetune_curve) == 2
    for a, b in zip(base.model.blocks, tuned.model.blocks):
        assert a.gop.opset == b.gop.opset
        assert np.array_equal(a.memory.basis, b.memory.basis)
        assert not np.array_equal(a.gop.weights, b.gop.weights)


def test_parameter_count_memory_o(small):
    m = run("popmemo", small, "pca").model
    expected = sum(b.gop.fan_in * b.gop.fan_out + b.gop.fan_out for b in m.blocks)
    expected += m.output.fan_in * m.output.fan_out + m.output.fan_out
    assert m.parameter_count() == expected


def test_template_from_model_counts_memory(small):
    m = run("popmemo", small, "pca").model
    t = template_from_model(m)
    assert t.hidden_sizes == tuple(b.gop.fan_out + b.memory.out_dim for b in m.blocks)


def test_validation_errors(small):
    pc = ProgressiveConfig(train=FAST, finetune=None)
    with pytest.raises(ValidationError, match="memory_kind"):
        progress("popmemo", small, TEMPLATE, pc)
    with pytest.raises(ValidationError, match="input_dim"):
        progress("popfast", small, NetworkTemplate(5, (3,), 3), pc)
    with pytest.raises(ValidationError):
        progress("pop", small, TEMPLATE, ProgressiveConfig(train=TrainConfig(loss="cross_entropy")))
    with pytest.raises(ValidationError):
        progress("nope", small, TEMPLATE, pc)


def test_lda_on_missing_class_is_progression_error():
    X = np.random.default_rng(0).normal(size=(30, 4))
    y = np.zeros(30, int)
    y[:10] = 1
    data = ProgressionData(X, y, 3)
    with pytest.raises(ProgressionError):
        progress("popmemo", data, TEMPLATE, ProgressiveConfig(train=FAST, finetune=None), "lda")


def test_run_wrapper_returns_model(small):
    m = run_popfast(small, NetworkTemplate(4, (3,), 3), ProgressiveConfig(train=FAST, finetune=None))
    assert m.variant == "popfast" and len(m.blocks) == 1
