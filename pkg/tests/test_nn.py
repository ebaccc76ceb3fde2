import numpy as np
import pytest

from smc.nn import (
    AdamState,
    GradientTape,
    Layer,
    Mlp,
    adam_step,
    backward,
    forward,
    identity_mlp,
    init_mlp,
    load_mlp,
    mlp_from_json,
    mlp_to_json,
    save_mlp,
)

from oracles import central_difference


def test_layer_chaining_validated():
    with pytest.raises(ValueError, match="expects"):
        Mlp([Layer(np.zeros((2, 3)), np.zeros(3)), Layer(np.zeros((4, 1)), np.zeros(1))])


def test_softmax_only_last():
    with pytest.raises(ValueError, match="final"):
        Mlp([Layer(np.zeros((2, 2)), np.zeros(2), "softmax"), Layer(np.zeros((2, 1)), np.zeros(1))])


def test_identity_network():
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(forward(identity_mlp(3), x), x)


def test_single_vector_forward(rng):
    net = init_mlp([3, 5, 2], rng)
    x = rng.normal(size=3)
    np.testing.assert_allclose(forward(net, x), forward(net, x[None])[0])


def test_init_ranges(rng):
    net = init_mlp([100, 50, 10], rng, output="softmax", bias_init="uniform")
    assert np.abs(net.layers[0].weight).max() <= np.sqrt(6 / 100)
    assert np.abs(net.layers[1].weight).max() <= np.sqrt(6 / 60)
    assert np.any(net.layers[0].bias != 0)
    assert np.all(net.layers[1].bias == 0)


@pytest.mark.parametrize("output", ["identity", "softmax"])
def test_backward_matches_finite_differences(rng, output):
    net = init_mlp([4, 6, 5, 3], rng, output=output)
    x = rng.normal(size=(7, 4))
    up = rng.normal(size=(7, 3))

    def f():
        return float(np.sum(forward(net, x) * up))

    tape = GradientTape()
    forward(net, x, tape)
    grads, gx = backward(net, tape, up)
    for g, n in zip(grads, central_difference(f, net.params())):
        np.testing.assert_allclose(g, n, rtol=1e-6, atol=1e-8)
    xp = x.copy()
    num_x = central_difference(lambda: float(np.sum(forward(net, xp) * up)), [xp])[0]
    np.testing.assert_allclose(gx, num_x, rtol=1e-6, atol=1e-8)


def test_backward_rejects_foreign_tape(rng):
    with pytest.raises(ValueError):
        backward(init_mlp([2, 2], rng), GradientTape(), np.zeros((1, 2)))


def test_adam_matches_reference():
    p = np.array([1.0, -2.0])
    state = AdamState.zeros_like([p])
    m = v = np.zeros(2)
    ref = p.copy()
    for t in range(1, 4):
        g = np.array([0.5, -1.5]) * t
        adam_step([p], [g.copy()], state, lr=0.1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-14)


def test_adam_minimises_quadratic():
    p = np.array([5.0, -3.0])
    state = AdamState.zeros_like([p])
    for _ in range(2000):
        adam_step([p], [2 * p], state, lr=0.05)
    assert np.abs(p).max() < 1e-2


def test_adam_shape_check():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]))


def test_checkpoint_round_trip(tmp_path, rng):
    net = init_mlp([3, 4, 2], rng, output="softmax")
    save_mlp(tmp_path / "n.json", net)
    back = load_mlp(tmp_path / "n.json")
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(forward(back, x), forward(net, x))
    with pytest.raises(ValueError, match="checkpoint"):
        mlp_from_json({**mlp_to_json(net), "format": "other"})


def test_copy_is_independent(rng):
    net = init_mlp([2, 2], rng)
    c = net.copy()
    c.layers[0].weight[0, 0] += 1
    assert net.layers[0].weight[0, 0] != c.layers[0].weight[0, 0]
    assert net.n_params() == 6
