import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_tess_updates
from tess.core import OpCounter
from tess.errors import ConfigError, NumericError, ShapeError
from tess.learning import LayerOptimizer
from tess.network import (
    LayerSpec,
    Network,
    NetworkState,
    forward_sequence,
    infer_shapes,
    parse_layers,
    preset_specs,
    train_sequence,
)
from tess.traces import TraceParams


def dense_net(sizes=(6, 8, 2), seed=0, **kw):
    specs = [LayerSpec("dense", out_features=n) for n in sizes[1:]]
    return Network((sizes[0],), specs, sizes[-1], seed=seed, **kw)


def onehot(labels, classes):
    return np.eye(classes)[labels]


def test_zero_input_is_silent_with_uniform_scores():
    net = dense_net()
    out = forward_sequence(net, np.zeros((3, 5, 6)), record=True)
    assert all(not c.any() for c in out.spike_counts)
    np.testing.assert_allclose(out.class_scores, 5 * 0.5)


def test_strong_identity_drive_spikes_every_step():
    net = Network((2,), [LayerSpec("dense", out_features=2)], 2)
    net.set_weights([np.eye(2) * 5.0])
    out = forward_sequence(net, np.ones((1, 4, 2)), record=True)
    np.testing.assert_array_equal(out.spike_record[0][:, 0], np.ones((4, 2)))


def test_head_must_be_dense_with_class_units():
    with pytest.raises(ConfigError):
        Network((4,), [LayerSpec("dense", out_features=3)], 2)
    with pytest.raises(ConfigError):
        Network((1, 4, 4), [LayerSpec("conv", out_channels=2)], 2)


def test_parse_layers_and_describe():
    specs = parse_layers("conv:8:3:2:1, avgpool:2, dense:10")
    assert [s.describe() for s in specs] == ["conv:8:3:2:1", "avgpool:2", "dense:10"]
    assert parse_layers("conv:4")[0].describe() == "conv:4:3:1:1"
    for bad in ("dense", "conv:a", "pool:2", "dense:1:2"):
        with pytest.raises(ConfigError):
            parse_layers(bad)


def test_toy_conv_shapes():
    shapes = infer_shapes((1, 16, 16), preset_specs("toy-conv", 4))
    assert [s.out_shape for s in shapes] == [(8, 16, 16), (16, 8, 8), (16, 4, 4), (4,)]
    assert shapes[1].connections == 16 * 8 * 8 * 8 * 9
    with pytest.raises(ConfigError):
        preset_specs("resnet", 10)


def test_vgg_reconstruction_shapes():
    shapes = [s for s in infer_shapes((3, 32, 32), preset_specs("vgg9-paper", 10)) if s.weighted]
    assert len(shapes) == 9
    assert [s.out_shape[0] for s in shapes] == [64, 128, 256, 256, 512, 512, 512, 512, 10]
    assert shapes[-1].n_in == 512


@pytest.mark.parametrize("alpha_post", [-1.0, 0.0, 1.0])
@pytest.mark.parametrize("t_l", [0, 2])
def test_dense_updates_match_brute_force(alpha_post, t_l):
    rng = np.random.default_rng(int(alpha_post + 1) * 10 + t_l)
    net = dense_net((5, 6, 4, 2), seed=3, trace=TraceParams(alpha_post=alpha_post), t_l=t_l)
    net.set_weights([w * 2.5 for w in net.weights])
    x = (rng.random((1, 6, 5)) < 0.5).astype(float)
    y = onehot([1], 2)
    got = train_sequence(net, x, y).updates
    ref = dense_tess_updates(net.weights, [l.rule.basis.b for l in net.weighted], x[0], y[0],
                             alpha_post=alpha_post, t_l=t_l)
    for g, r in zip(got, ref):
        np.testing.assert_allclose(g, r, rtol=1e-9, atol=1e-12)


def test_batch_update_is_sum_of_single_updates(rng):
    net = dense_net(seed=5)
    x = (rng.random((4, 5, 6)) < 0.6).astype(float)
    y = onehot([0, 1, 1, 0], 2)
    batched = train_sequence(net, x, y).updates
    singles = [train_sequence(net, x[i:i + 1], y[i:i + 1]).updates for i in range(4)]
    for layer, total in enumerate(batched):
        np.testing.assert_allclose(total, sum(s[layer] for s in singles), atol=1e-12)


def test_single_sweep_step_counter(rng):
    net = Network((1, 8, 8), preset_specs("toy-conv", 2), 2, seed=1)
    counter = OpCounter()
    x = rng.random((3, 4, 1, 8, 8))
    train_sequence(net, x, onehot([0, 1, 0], 2), counter=counter)
    assert dict(counter.lif_steps) == {i: 3 * 4 for i in range(3)}


def test_per_step_and_per_sequence_totals_agree_without_optimizer(rng):
    net = dense_net(seed=2)
    x = (rng.random((2, 6, 6)) < 0.5).astype(float)
    y = onehot([0, 1], 2)
    a = train_sequence(net, x, y, update_mode="per-sequence").updates
    b = train_sequence(net, x, y, update_mode="per-step").updates
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, atol=1e-12)
    with pytest.raises(ConfigError):
        train_sequence(net, x, y, update_mode="sometimes")


def test_each_weight_touched_once_per_sequence(rng):
    net = dense_net(seed=4)
    opt = LayerOptimizer([w.shape for w in net.weights])
    x = (rng.random((2, 5, 6)) < 0.5).astype(float)
    train_sequence(net, x, onehot([0, 1], 2), optimizer=opt)
    assert [s.step for s in opt.states] == [1, 1]
    opt2 = LayerOptimizer([w.shape for w in net.weights])
    train_sequence(net, x, onehot([0, 1], 2), optimizer=opt2, update_mode="per-step")
    assert [s.step for s in opt2.states] == [5, 5]


def test_divergence_is_reported(rng):
    net = dense_net(seed=4)
    opt = LayerOptimizer([w.shape for w in net.weights], name="sgd")
    opt.lr = float("inf")
    x = np.ones((1, 5, 6))
    with pytest.raises(NumericError):
        train_sequence(net, x, onehot([0], 2), optimizer=opt)


def test_input_shape_checks():
    net = dense_net()
    with pytest.raises(ShapeError):
        forward_sequence(net, np.zeros((2, 3, 7)))
    with pytest.raises(ShapeError):
        train_sequence(net, np.zeros((2, 3, 6)), np.zeros((3, 2)))


def test_trace_allocation_matches_accounting():
    net = Network((1, 8, 8), preset_specs("toy-conv", 2), 2)
    state = NetworkState.zeros(net, 1)
    assert state.trace_scalars() == net.trace_scalars()
    net0 = Network((1, 8, 8), preset_specs("toy-conv", 2), 2, trace=TraceParams(alpha_post=0.0))
    assert NetworkState.zeros(net0, 1).trace_scalars() == net0.trace_scalars()
    assert all(t.h is None for t in NetworkState.zeros(net0, 1).traces)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_seeded_init_is_deterministic(seed):
    a, b = dense_net(seed=seed), dense_net(seed=seed)
    for u, v in zip(a.weights, b.weights):
        np.testing.assert_array_equal(u, v)


def test_training_reduces_loss():
    from tess.data import synth_pattern_task

    ds = synth_pattern_task(2, 64, 6, 0.05, seed=3, samples=96)
    net = dense_net((64, 128, 2), seed=0)
    opt = LayerOptimizer([w.shape for w in net.weights])
    y = onehot(ds.labels, 2)
    before = train_sequence(net, ds.inputs, y).loss
    for _ in range(5):
        for start in range(0, 96, 16):
            train_sequence(net, ds.inputs[start:start + 16], y[start:start + 16], optimizer=opt)
    after = train_sequence(net, ds.inputs, y).loss
    assert after < before
