import numpy as np
import pytest

from rlsnet.baseline_optimizers import AdamOptimizer, AdamState, SgdOptimizer, adam_step, sgd_step
from rlsnet.errors import ConfigurationError, StateError
from rlsnet.layers import AugmentedParams, LayerKind
from rlsnet.network import build_fnn


def scalar(value):
    return AugmentedParams(theta=np.array([[value]], dtype=np.float64), kind=LayerKind.FC)


def test_sgd_step():
    assert sgd_step(scalar(1.0), np.array([[2.0]]), 0.1).theta[0, 0] == pytest.approx(0.8)
    assert sgd_step(scalar(1.0), np.array([[0.0]]), 0.1).theta[0, 0] == 1.0
    with pytest.raises(ConfigurationError):
        sgd_step(scalar(1.0), np.array([[0.0]]), 0.0)


def test_adam_zero_gradient_keeps_parameters():
    # When
    theta, state = adam_step(scalar(1.5), np.zeros((1, 1)), AdamState.zeros((1, 1)))

    # Then
    assert theta.theta[0, 0] == 1.5
    assert state.step_count == 1


def test_adam_first_step_magnitude():
    # Given
    g = np.array([[-4.0, 1e-3]])
    state = AdamState.zeros(g.shape, lr=0.01)
    theta = AugmentedParams(theta=np.zeros(g.shape), kind=LayerKind.FC)

    # When
    new_theta, _ = adam_step(theta, g, state)

    # Then
    np.testing.assert_allclose(new_theta.theta, 0.01 * -np.sign(g) * np.abs(g) / (np.abs(g) + 1e-8))


def test_adam_converges_on_quadratic():
    # Given J = theta^2 / 2
    theta, state = scalar(5.0), AdamState.zeros((1, 1), lr=0.1)

    # When
    for _ in range(100):
        theta, state = adam_step(theta, theta.theta.copy(), state)

    # Then
    assert abs(theta.theta[0, 0]) < 0.5
    assert state.step_count == 100


def test_optimizers_update_in_place():
    # Given
    net = build_fnn(np.random.default_rng(0), (2, 3))
    slot = net.slots()[0]
    before = slot.params.theta.copy()
    grad = np.ones_like(before)

    # When
    SgdOptimizer([slot], lr=0.5).step(slot, grad)

    # Then
    np.testing.assert_allclose(slot.params.theta, before - 0.5)

    adam = AdamOptimizer([slot], lr=0.01)
    adam.step(slot, grad)
    np.testing.assert_allclose(slot.params.theta, before - 0.5 - 0.01, atol=1e-7)
    assert adam.states[slot.name].step_count == 1


def test_optimizers_reject_foreign_slot():
    net = build_fnn(np.random.default_rng(0), (2, 3, 2))
    out, fc1 = net.slots()
    with pytest.raises(StateError):
        SgdOptimizer([out]).step(fc1, np.zeros_like(fc1.params.theta))
    with pytest.raises(StateError):
        AdamOptimizer([out]).step(fc1, np.zeros_like(fc1.params.theta))
