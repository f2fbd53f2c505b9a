import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linpath import datasets, nn, optim
from linpath.nn import LayerSelector, ModelSpec, ParamState
from linpath.optim import GroupOverride, OptimConfig, OptimState, TrainConfig


def scalar_state(theta):
    spec = ModelSpec(1, (1,), 1)
    zero = {k: np.zeros(s) for k, s in spec.shapes().items()}
    zero[(0, "weight")] = np.array([[theta]])
    return ParamState(spec, zero)


def scalar_grad(params, g):
    return params.map(lambda k, a: np.full(a.shape, g if k == (0, "weight") else 0.0))


def tiny_data(n_train=40, seed=0):
    return datasets.spiral(n_train, 20, seed=seed)


def test_sgd_hand_example():
    p = scalar_state(1.0)
    st0 = OptimState.zeros(p, "sgd")
    p1, s1 = optim.sgd_momentum_step(p, scalar_grad(p, 0.5), st0, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert p1.weight(0)[0, 0] == pytest.approx(0.95, abs=1e-15)
    assert s1.buffers["v"][(0, "weight")][0, 0] == 0.5
    # the input state is untouched
    assert st0.buffers["v"][(0, "weight")][0, 0] == 0.0


def test_sgd_second_step_uses_momentum():
    p = scalar_state(1.0)
    s = OptimState.zeros(p, "sgd")
    p, s = optim.sgd_momentum_step(p, scalar_grad(p, 0.5), s, 0.1, 0.9, 0.0)
    p, s = optim.sgd_momentum_step(p, scalar_grad(p, 0.5), s, 0.1, 0.9, 0.0)
    # v = 0.9*0.5 + 0.5 = 0.95 ; theta = 0.95 - 0.095
    assert s.buffers["v"][(0, "weight")][0, 0] == pytest.approx(0.95, abs=1e-15)
    assert p.weight(0)[0, 0] == pytest.approx(0.855, abs=1e-15)


def test_sgd_coupled_weight_decay():
    p = scalar_state(2.0)
    p1, s1 = optim.sgd_momentum_step(p, scalar_grad(p, 0.5), OptimState.zeros(p, "sgd"), 0.1, 0.9, 0.1)
    # g = 0.5 + 0.1*2 = 0.7
    assert s1.buffers["v"][(0, "weight")][0, 0] == pytest.approx(0.7, abs=1e-15)
    assert p1.weight(0)[0, 0] == pytest.approx(2.0 - 0.07, abs=1e-15)


def test_sgd_zero_lr_updates_buffer_only():
    p = scalar_state(1.0)
    p1, s1 = optim.sgd_momentum_step(p, scalar_grad(p, 0.5), OptimState.zeros(p, "sgd"), 0.0, 0.9, 0.0)
    assert p1.equal(p)
    assert s1.buffers["v"][(0, "weight")][0, 0] == 0.5


def test_adam_hand_example():
    p = scalar_state(1.0)
    p1, s1 = optim.adam_step(p, scalar_grad(p, 1.0), OptimState.zeros(p, "adam"), lr=0.001)
    # step 1: m_hat = g, v_hat = g^2  ->  theta - lr * 1/(1+eps)
    assert p1.weight(0)[0, 0] == pytest.approx(1.0 - 0.001 / (1.0 + 1e-8), abs=1e-15)
    assert s1.step == 1


def test_adam_second_step_by_hand():
    p = scalar_state(1.0)
    s = OptimState.zeros(p, "adam")
    p, s = optim.adam_step(p, scalar_grad(p, 1.0), s, lr=0.001)
    p, s = optim.adam_step(p, scalar_grad(p, 0.5), s, lr=0.001)
    m = 0.9 * 0.1 + 0.1 * 0.5
    v = 0.999 * 0.001 + 0.001 * 0.25
    m_hat = m / (1 - 0.9 ** 2)
    v_hat = v / (1 - 0.999 ** 2)
    expected = (1.0 - 0.001 / (1.0 + 1e-8)) - 0.001 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p.weight(0)[0, 0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_is_fixed_point(kind):
    p = nn.init_params(ModelSpec(2, (4,), 1), 0)
    g = nn.zeros_like(p)
    s = OptimState.zeros(p, kind)
    for _ in range(3):
        if kind == "sgd":
            p2, s = optim.sgd_momentum_step(p, g, s, 0.1, 0.9, 0.0)
        else:
            p2, s = optim.adam_step(p, g, s, 0.1)
        assert p2.equal(p)


def test_identical_histories_identical_updates():
    spec = ModelSpec(1, (2,), 1)
    p = ParamState(spec, {(0, "weight"): [[0.3], [0.3]], (0, "bias"): [0.0, 0.0],
                          (1, "weight"): [[1.0, -1.0]], (1, "bias"): [0.0]})
    g = p.map(lambda k, a: np.full(a.shape, 0.2))
    s = OptimState.zeros(p, "adam")
    for _ in range(4):
        p, s = optim.adam_step(p, g, s, 0.01)
    w = p.weight(0)
    assert w[0, 0] == w[1, 0]


def test_nonfinite_gradient_aborts():
    p = scalar_state(1.0)
    with pytest.raises(optim.DivergenceError, match="layer 0 weight"):
        optim.adam_step(p, scalar_grad(p, float("nan")), OptimState.zeros(p, "adam"), 0.1)


def test_lr_at_examples():
    sched = [(33, 0.1), (66, 0.1)]
    assert optim.lr_at(sched, 0.1, 10) == 0.1
    assert optim.lr_at(sched, 0.1, 40) == pytest.approx(0.01, rel=1e-15)
    assert optim.lr_at(sched, 0.1, 80) == pytest.approx(0.001, rel=1e-15)
    assert all(optim.lr_at([], 0.3, e) == 0.3 for e in range(100))


def test_optim_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(schedule=((5, 0.1), (5, 0.1)))
    with pytest.raises(ValueError):
        OptimConfig(schedule=((5, 0.0),))
    with pytest.raises(ValueError):
        OptimConfig(kind="rmsprop")
    with pytest.raises(ValueError):
        OptimConfig(momentum=1.0)


def test_overlapping_overrides_rejected():
    spec = ModelSpec(2, (3, 3), 1)
    cfg = OptimConfig(group_overrides=(GroupOverride(LayerSelector.layers([0, 1]), lr=0.1),
                                       GroupOverride(LayerSelector.layers([1]), lr=0.2)))
    with pytest.raises(ValueError, match="both select layer 1"):
        optim.group_hyperparams(spec, cfg)


def test_group_hyperparams_table():
    spec = ModelSpec(2, (3, 3), 1)
    cfg = OptimConfig(lr=1.0, weight_decay=0.5,
                      group_overrides=(GroupOverride(LayerSelector.layers([1]), lr=0.1),
                                       GroupOverride(LayerSelector.groups(["2.bias"]), weight_decay=0.0)))
    table = optim.group_hyperparams(spec, cfg)
    assert table[(1, "weight")] == (0.1, 0.5) and table[(1, "bias")] == (0.1, 0.5)
    assert table[(2, "bias")] == (1.0, 0.0)
    assert table[(0, "weight")] == (1.0, 0.5)


def run(spec, data, ocfg, tc, seed=0):
    return optim.train(spec, nn.init_params(spec, seed), data, ocfg, tc)


def test_epochs_zero_returns_init():
    spec = ModelSpec(2, (8,), 1)
    rec = run(spec, tiny_data(), OptimConfig(), TrainConfig(epochs=0, batch_size=10))
    assert rec.final.equal(rec.init)
    assert len(rec.history) == 1 and rec.history[0]["epoch"] == 0


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_lr_leaves_params_bitwise(kind):
    spec = ModelSpec(2, (8,), 1)
    rec = run(spec, tiny_data(), OptimConfig(kind=kind, lr=0.0), TrainConfig(epochs=5, batch_size=10))
    assert rec.final.equal(rec.init)


def test_train_is_deterministic():
    spec = ModelSpec(2, (8, 8), 1)
    tc = TrainConfig(epochs=4, batch_size=8, shuffle_seed=3, checkpoint_epochs=(2,))
    a = run(spec, tiny_data(), OptimConfig(lr=0.01), tc)
    b = run(spec, tiny_data(), OptimConfig(lr=0.01), tc)
    assert a.final.digest() == b.final.digest()
    assert a.history == b.history
    assert a.checkpoints[2].equal(b.checkpoints[2])


def test_train_records_checkpoints_and_history():
    spec = ModelSpec(2, (8,), 1)
    tc = TrainConfig(epochs=6, batch_size=10, eval_every=3, checkpoint_epochs=(0, 3))
    rec = run(spec, tiny_data(), OptimConfig(lr=0.01), tc)
    assert [r["epoch"] for r in rec.history] == list(range(7))
    assert "train_loss" in rec.history[3] and "train_loss" not in rec.history[2]
    assert rec.checkpoints[0].equal(rec.init)
    assert set(rec.checkpoints) == {0, 3}
    assert rec.epochs_run == 6


def test_schedule_is_applied_per_epoch():
    spec = ModelSpec(2, (4,), 1)
    ocfg = OptimConfig(kind="sgd", lr=0.1, schedule=((2, 0.1),))
    rec = run(spec, tiny_data(), ocfg, TrainConfig(epochs=4, batch_size=40))
    assert [r["lr"] for r in rec.history[1:]] == pytest.approx([0.1, 0.1, 0.01, 0.01], rel=1e-15)


def test_single_full_batch_epoch_matches_manual_step():
    spec = ModelSpec(2, (5,), 1)
    data = tiny_data()
    init = nn.init_params(spec, 1)
    rec = optim.train(spec, init, data, OptimConfig(kind="sgd", lr=0.05, weight_decay=0.01),
                      TrainConfig(epochs=1, batch_size=data.n_train))
    order = optim.epoch_rng(0, 1).permutation(data.n_train)
    g = nn.backward(init, data.x_train[order], data.y_train[order])
    manual, _ = optim.sgd_momentum_step(init, g, OptimState.zeros(init, "sgd"), 0.05, 0.9, 0.01)
    for k in init.keys():
        np.testing.assert_allclose(rec.final[k], manual[k], rtol=0, atol=1e-15)


def test_override_equal_to_base_is_bitwise_noop():
    spec = ModelSpec(2, (6, 6), 1)
    tc = TrainConfig(epochs=3, batch_size=10)
    plain = run(spec, tiny_data(), OptimConfig(lr=0.01), tc)
    same = run(spec, tiny_data(), OptimConfig(lr=0.01, group_overrides=(
        GroupOverride(LayerSelector.layers([1]), lr=0.01),)), tc)
    assert plain.final.digest() == same.final.digest()


def test_override_leaves_unselected_first_step_bitwise():
    # after one step the unselected entries see different gradients (layers are coupled
    # through the loss), so exactness is checked for the first update only
    spec = ModelSpec(2, (6, 6), 1)
    data = tiny_data()
    tc = TrainConfig(epochs=1, batch_size=data.n_train)
    plain = run(spec, data, OptimConfig(lr=0.01), tc)
    over = run(spec, data, OptimConfig(lr=0.01, group_overrides=(
        GroupOverride(LayerSelector.layers([1]), lr=0.001),)), tc)
    for k in spec.shapes():
        if k[0] == 1:
            assert not np.array_equal(plain.final[k], over.final[k])
        else:
            assert np.array_equal(plain.final[k], over.final[k])


def test_frozen_group_stays_put():
    spec = ModelSpec(2, (6, 6), 1)
    rec = run(spec, tiny_data(), OptimConfig(lr=0.01, group_overrides=(
        GroupOverride(LayerSelector.layers([0]), lr=0.0),)), TrainConfig(epochs=3, batch_size=10))
    assert np.array_equal(rec.final[(0, "weight")], rec.init[(0, "weight")])
    assert not np.array_equal(rec.final[(1, "weight")], rec.init[(1, "weight")])


def test_divergence_is_recorded():
    spec = ModelSpec(2, (8,), 1)
    rec = run(spec, tiny_data(), OptimConfig(kind="sgd", lr=1e30, momentum=0.0),
              TrainConfig(epochs=5, batch_size=10, checkpoint_epochs=(0,)))
    assert rec.status == "diverged"
    assert rec.message
    assert rec.final.equal(rec.init)


def test_batch_larger_than_data_rejected():
    spec = ModelSpec(2, (4,), 1)
    with pytest.raises(ValueError, match="batch_size"):
        run(spec, tiny_data(), OptimConfig(), TrainConfig(epochs=1, batch_size=1000))


def test_shuffle_independent_of_model_seed():
    a = optim.epoch_rng(5, 3).permutation(100)
    b = optim.epoch_rng(5, 3).permutation(100)
    c = optim.epoch_rng(5, 4).permutation(100)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(-10, 10), g=st.floats(-10, 10), lr=st.floats(0, 1), mu=st.floats(0, 0.99),
       wd=st.floats(0, 1))
def test_sgd_step_matches_recurrence(theta, g, lr, mu, wd):
    p = scalar_state(theta)
    p1, s1 = optim.sgd_momentum_step(p, scalar_grad(p, g), OptimState.zeros(p, "sgd"), lr, mu, wd)
    v = g + wd * theta
    assert s1.buffers["v"][(0, "weight")][0, 0] == v
    assert p1.weight(0)[0, 0] == theta - lr * v
