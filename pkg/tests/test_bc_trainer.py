import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rot.approximator import Mlp
from rot.bc_trainer import bc_gradients, bc_loss, make_actor, pretrain
from rot.envs import DemoEpisode, DemoSet

from gradcheck import probe, probe_indices


def identity_net(d):
    return Mlp((d, d), params=np.concatenate([np.eye(d).ravel(), np.zeros(d)]))


def fixed_output(values):
    """Policy whose output is the constant ``values`` (zero weights, bias = values)."""
    values = np.asarray(values, dtype=float)
    return Mlp((1, len(values)), params=np.concatenate([np.zeros(len(values)), values]))


def test_loss_examples():
    trunk = identity_net(1)
    assert bc_loss(fixed_output([0.0, 0.0]), trunk, [[0.0]], [[1.0, 0.0]]) == 1.0
    # squared errors 1 and 3 -> mean 2
    assert bc_loss(fixed_output([0.0, 0.0]), trunk, [[0.0], [0.0]],
                   [[1.0, 0.0], [1.0, np.sqrt(2.0)]]) == pytest.approx(2.0)
    assert bc_loss(fixed_output([0.3, -0.2]), trunk, [[5.0]], [[0.3, -0.2]]) == 0.0


def test_loss_rejects_empty_batch():
    with pytest.raises(ValueError):
        bc_loss(fixed_output([0.0]), identity_net(1), np.zeros((0, 1)), np.zeros((0, 1)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.floats(-1, 1)),
       arrays(np.float64, (5, 2), elements=st.floats(-1, 1)))
def test_loss_nonnegative_and_zero_only_on_exact_fit(states, actions):
    actor = make_actor(2, 2, 1.0, hidden_dim=8, rng=0)
    trunk = identity_net(2)
    loss = bc_loss(actor, trunk, states, actions)
    assert loss >= 0
    fitted = actor.forward(trunk.forward(states))
    assert bc_loss(actor, trunk, states, fitted) == 0.0


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    actor = make_actor(6, 2, 1.0, hidden_dim=16, rng=rng)
    trunk = Mlp((3, 6), output="tanh", rng=rng)
    s, a = rng.normal(size=(10, 3)), rng.uniform(-1, 1, size=(10, 2))
    ga, gt, _ = bc_gradients(actor, trunk, s, a)
    loss = lambda: bc_loss(actor, trunk, s, a)  # noqa: E731
    assert probe(loss, actor.params, ga, probe_indices(rng, actor.params.size, 100)) < 1e-4
    assert probe(loss, trunk.params, gt, probe_indices(rng, trunk.params.size, 24)) < 1e-4


def linear_demo(seed=0, n=40, noise=0.05):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(3, 2))
    s = rng.uniform(-1, 1, size=(n, 3))
    a = s @ W + noise * rng.normal(size=(n, 2))
    return s, a


def test_linear_policy_reaches_least_squares_optimum():
    s, a = linear_demo()
    X = np.hstack([s, np.ones((len(s), 1))])
    coef, *_ = np.linalg.lstsq(X, a, rcond=None)
    optimum = float(np.mean(np.sum((X @ coef - a) ** 2, axis=1)))
    res = pretrain((s, a), steps=4000, batch_size=40, seed=0, learning_rate=1e-2,
                   actor=Mlp((3, 2), rng=1), trunk=identity_net(3))
    assert res.final_loss <= res.initial_loss
    assert res.final_loss - optimum < 1e-3
    assert res.final_loss >= optimum - 1e-12


def test_zero_steps_leave_parameters_unchanged():
    s, a = linear_demo()
    actor, trunk = Mlp((3, 2), rng=1), identity_net(3)
    before = actor.params.copy(), trunk.params.copy()
    res = pretrain((s, a), steps=0, actor=actor, trunk=trunk)
    assert np.array_equal(res.actor.params, before[0])
    assert np.array_equal(res.trunk.params, before[1])
    assert res.losses == [] and res.final_loss == res.initial_loss


def test_seeded_pretraining_is_bitwise_reproducible():
    ep = DemoEpisode(np.random.default_rng(0).uniform(size=(12, 2)),
                     np.random.default_rng(1).uniform(-1, 1, size=(12, 2)), "maze2d", 0)
    runs = [pretrain(DemoSet([ep]), steps=50, seed=3) for _ in range(2)]
    assert np.array_equal(runs[0].actor.params, runs[1].actor.params)
    assert np.array_equal(runs[0].trunk.params, runs[1].trunk.params)
    assert runs[0].losses == runs[1].losses
    other = pretrain(DemoSet([ep]), steps=50, seed=4)
    assert not np.array_equal(other.actor.params, runs[0].actor.params)


def test_rejects_empty_demos():
    with pytest.raises(ValueError):
        pretrain((np.zeros((0, 2)), np.zeros((0, 2))), steps=1)
