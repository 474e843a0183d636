import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import adam_scalar
from tess.core import LifLayerState, LifParams, OpCounter
from tess.errors import ConfigError
from tess.learning import (
    AdamHyper,
    AdamState,
    LayerOptimizer,
    LayerRule,
    LayerUpdateAccumulator,
    PlateauScheduler,
    adam_step,
    apply_update,
    plateau_scheduler,
    tess_layer_step,
    warn_if_empty_window,
    weight_update,
)
from tess.lsg import build_basis
from tess.traces import TraceParams, TraceState

LIF = LifParams()


def test_single_synapse_update():
    m, p, q = np.array([[0.2]]), np.array([[0.3]]), np.array([[1.5]])
    np.testing.assert_allclose(weight_update(m * 1.0 * p, q, None), [[0.09]])


def test_closed_gates_give_zero_update():
    m = np.array([[5.0, -3.0]])
    assert not weight_update(m * np.zeros((1, 2)), np.ones((1, 3)), None).any()


def test_apply_update():
    w = np.array([[0.5]])
    np.testing.assert_array_equal(apply_update(w, np.zeros((1, 1)), 1e-3), w)
    np.testing.assert_allclose(apply_update(w, np.array([[0.09]]), 1e-3), [[0.5 - 0.00009]])
    np.testing.assert_allclose(apply_update(w, np.array([[0.09]]), 1e-3, "as-written"), [[0.5 + 0.00009]])
    with pytest.raises(ConfigError):
        apply_update(w, w, 1e-3, "sideways")


def _rule(n_out, classes=2, t_l=0, alpha_post=1.0):
    kind = "identity" if n_out == classes else "square-wave"
    return LayerRule(LIF, TraceParams(alpha_post=alpha_post), build_basis(classes, n_out, kind), t_l=t_l)


def test_layer_step_order_and_window(rng):
    w = rng.normal(size=(4, 3))
    rule = _rule(4, t_l=1)
    lif = LifLayerState.zeros((1, 4))
    traces = TraceState.zeros((1, 3), (1, 4), rule.trace)
    acc = LayerUpdateAccumulator.zeros(w.shape, 1)
    x = np.ones((1, 3))
    y = np.array([[1.0, 0.0]])
    counter = OpCounter()
    lif, traces, acc, _ = tess_layer_step(w, lif, traces, acc, x, y, 1, rule, counter)
    assert acc.step_count == 0 and not acc.delta_w.any()
    assert counter.lsg_macs == 0
    np.testing.assert_allclose(traces.h, 0.12)  # psi(u[0] = 0) = 0.3 * (1 - 0.6)
    u1 = lif.u.copy()
    lif, traces, acc, _ = tess_layer_step(w, lif, traces, acc, x, y, 2, rule, counter)
    assert acc.step_count == 1
    assert counter.lsg_macs == 2 * 2 * 4
    np.testing.assert_allclose(traces.h, 0.2 * 0.12 + 0.3 * np.maximum(1 - np.abs(u1 - 0.6), 0))
    np.testing.assert_allclose(traces.q, 1.5 * np.ones((1, 3)))
    assert counter.lif_steps[0] == 2
    with pytest.raises(ConfigError):
        tess_layer_step(w, lif, traces, acc, x, y, 0, rule)


def test_empty_window_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        warn_if_empty_window(5, 5)
    assert any(issubclass(c.category, RuntimeWarning) for c in caught)


def test_adam_first_step_scalar():
    state, delta = adam_step(AdamState.zeros(()), np.array(0.5), AdamHyper())
    # bias-corrected first moment / sqrt second moment == sign(g)
    assert float(delta) == pytest.approx(-1e-3 * 0.5 / (0.5 + 1e-8))
    assert state.step == 1


def test_adam_zero_gradient_forever():
    state = AdamState.zeros((2,))
    for _ in range(10):
        state, delta = adam_step(state, np.zeros(2), AdamHyper())
        assert not delta.any()


@settings(max_examples=20)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_adam_matches_scalar_oracle(grads):
    state = AdamState.zeros(())
    expected = adam_scalar(grads)
    for g, e in zip(grads, expected):
        state, delta = adam_step(state, np.array(g), AdamHyper())
        assert float(delta) == pytest.approx(e, rel=1e-10, abs=1e-15)


def test_adam_matches_torch(rng):
    torch = pytest.importorskip("torch")
    w0 = rng.normal(size=(3, 4))
    grads = [rng.normal(size=(3, 4)) for _ in range(25)]
    param = torch.nn.Parameter(torch.tensor(w0, dtype=torch.float64))
    opt = torch.optim.Adam([param], lr=1e-3, betas=(0.9, 0.999), eps=1e-8)
    ours = LayerOptimizer([w0.shape])
    w = [w0.copy()]
    for g in grads:
        opt.zero_grad()
        param.grad = torch.tensor(g, dtype=torch.float64)
        opt.step()
        w = ours.step(w, [g])
    np.testing.assert_allclose(w[0], param.detach().numpy(), rtol=1e-10, atol=1e-12)


def test_optimizer_directions(rng):
    w = [np.zeros(2)]
    g = [np.array([1.0, -1.0])]
    down = LayerOptimizer([(2,)], name="sgd").step(w, g)
    up = LayerOptimizer([(2,)], name="sgd", direction="as-written").step(w, g)
    np.testing.assert_allclose(down[0], -up[0])
    a_down = LayerOptimizer([(2,)]).step(w, g)
    a_up = LayerOptimizer([(2,)], direction="as-written").step(w, g)
    np.testing.assert_allclose(a_down[0], -a_up[0])
    assert a_down[0][0] < 0
    with pytest.raises(ConfigError):
        LayerOptimizer([(2,)], name="rmsprop")


def test_scheduler_improving_keeps_lr():
    s = PlateauScheduler(1e-3)
    for metric in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7):
        assert s.step(metric) == 1e-3


def test_scheduler_halves_after_five_flat_epochs():
    s = PlateauScheduler(1e-3)
    s.step(0.5)
    lrs = [plateau_scheduler(s, 0.5) for _ in range(5)]
    assert lrs[:4] == [1e-3] * 4
    assert lrs[4] == pytest.approx(5e-4)


def test_scheduler_counter_resets_on_improvement():
    s = PlateauScheduler(1e-3)
    s.step(0.5)
    for _ in range(4):
        s.step(0.5)
    s.step(0.6)
    lrs = [s.step(0.6) for _ in range(5)]
    assert lrs == [1e-3] * 4 + [pytest.approx(5e-4)]
