import numpy as np
import pytest

from rlsnet.baseline_optimizers import sgd_step
from rlsnet.errors import ConfigurationError, StateError
from rlsnet.experiment_manager import ExperimentManager
from rlsnet.layers import AugmentedParams, LayerKind
from rlsnet.losses import LossKind
from rlsnet.network import build_cnn, build_fnn, build_rnn
from rlsnet.optimizer_manager import hybrid_assign
from rlsnet.rls_optimizer import (RlsHyperparams, RlsOptimizer, average_input, init_state, mean_augmented_input,
                                  rls_step, rls_step_improved)


@pytest.fixture()
def rng():
    return np.random.default_rng(13)


def fc_params(theta):
    return AugmentedParams(theta=np.asarray(theta, dtype=np.float64), kind=LayerKind.FC)


def test_hyperparams_validation():
    for bad in ({'lam': 0.0}, {'lam': 1.1}, {'k': 0.0}, {'eta': -1.0}, {'gamma': -1e-5}, {'alpha': 1.0}):
        with pytest.raises(ConfigurationError):
            RlsHyperparams(**bad)


def test_init_state():
    state = init_state((785, 512))
    np.testing.assert_array_equal(state.p, np.eye(785))
    assert state.count_factor == 1.0
    assert not state.omega.any()
    with pytest.raises(ConfigurationError):
        init_state((3, 2), count_factor=0.5)


def test_count_factors_of_sequence_classifier(rng):
    net = build_rnn(rng, 3, (4,), 2, seq_len=20, cell='recur')
    optimizer = RlsOptimizer(net.slots(), RlsHyperparams())
    assert {name: s.count_factor for name, s in optimizer.states.items()} == \
        {'out': 1.0, 'recur1.w': 20.0, 'recur1.v': 20.0}


def test_mean_augmented_input():
    # FC rows
    np.testing.assert_array_equal(mean_augmented_input(np.array([[1.0, 2.0, 1.0], [3.0, 4.0, 1.0]])),
                                  [2.0, 3.0, 1.0])

    # CONV fields e1..e4 at the four positions of a 2x2 map
    fields = np.zeros((1, 5, 2, 2))
    for i, (u, v) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        fields[0, i, u, v] = 1.0
    fields[:, -1] = 1.0
    np.testing.assert_array_equal(mean_augmented_input(fields), [0.25, 0.25, 0.25, 0.25, 1.0])

    # sequence rows and times
    np.testing.assert_array_equal(mean_augmented_input([np.array([[0.0, 1.0]]), np.array([[2.0, 1.0]])]), [1.0, 1.0])


def test_average_input_of_classifier_output_is_last_time(rng):
    # Given
    net = build_rnn(rng, 3, (4,), 2, seq_len=5)
    _, cache = net.forward(rng.standard_normal((6, 5, 3)))

    # Then
    last = cache.layers['lstm1']['trace'].y[-1]
    np.testing.assert_allclose(average_input(cache, 'out'), np.append(last.mean(axis=0), 1.0))
    with pytest.raises(StateError):
        average_input(cache, 'missing')


def test_augmentation_column_averages_to_one(rng):
    net = build_cnn(rng, (2, 4, 4), 3, blocks=((3,), (4,)), fc_hidden=5)
    _, cache = net.forward(rng.standard_normal((3, 2, 4, 4)))
    for slot in net.slots():
        assert average_input(cache, slot.name)[-1] == 1.0


def test_rls_step_zero_gradient_still_updates_p(rng):
    # Given
    theta = fc_params(rng.standard_normal((3, 2)))
    state = init_state(theta.theta.shape)

    # When
    new_theta, new_state, trace = rls_step(theta, state, np.zeros((3, 2)), np.array([1.0, 2.0, 1.0]), RlsHyperparams())

    # Then
    np.testing.assert_array_equal(new_theta.theta, theta.theta)
    assert not np.allclose(new_state.p, np.eye(3))
    assert trace.h == pytest.approx(1.6)


def test_rls_step_example(rng):
    # Given x_bar^T x_bar = 10 so that h = 1 + 0.1 * 10 = 2
    theta = fc_params(rng.standard_normal((3, 2)))
    grad = rng.standard_normal((3, 2))
    x_bar = np.array([3.0, 0.0, 1.0])

    # When
    new_theta, _, trace = rls_step(theta, init_state((3, 2)), grad, x_bar, RlsHyperparams(eta=1.0))

    # Then
    assert trace.h == 2.0
    np.testing.assert_allclose(new_theta.theta, theta.theta - 0.5 * grad)


def test_rls_step_reduces_to_sgd(rng):
    # Given P = I and x_bar = 0 so that h = lambda = 1 and P stays I
    theta = fc_params(rng.standard_normal((4, 3)))
    grad = rng.standard_normal((4, 3))

    # When
    new_theta, state, trace = rls_step(theta, init_state((4, 3)), grad, np.zeros(4), RlsHyperparams(eta=0.3))

    # Then
    assert trace.h == 1.0
    np.testing.assert_array_equal(state.p, np.eye(4))
    np.testing.assert_array_equal(new_theta.theta, sgd_step(theta, grad, 0.3).theta)


def test_improved_step_without_momentum_or_l1_is_plain_step(rng):
    hp = RlsHyperparams(lam=0.99, k=0.1, eta=0.7, alpha=0.0, gamma=0.0)
    for _ in range(100):
        theta = fc_params(rng.standard_normal((5, 3)))
        a = rng.standard_normal((5, 5))
        state = init_state((5, 3))
        state.p = a @ a.T + np.eye(5)
        grad = rng.standard_normal((5, 3))
        x_bar = np.append(rng.standard_normal(4), 1.0)

        plain, plain_state, _ = rls_step(theta, state, grad, x_bar, hp)
        improved, improved_state, _ = rls_step_improved(theta, state, grad, x_bar, hp)

        np.testing.assert_array_equal(improved.theta, plain.theta)
        np.testing.assert_array_equal(improved_state.p, plain_state.p)


def test_momentum_unrolling(rng):
    # Given frozen P = I and h = 1
    theta = fc_params(np.zeros((2, 2)))
    grad = rng.standard_normal((2, 2))
    hp = RlsHyperparams(lam=1.0, eta=1.0, alpha=0.5, gamma=0.0)
    state = init_state((2, 2))

    # When
    theta, state, _ = rls_step_improved(theta, state, grad, np.zeros(2), hp)
    np.testing.assert_allclose(state.omega, -grad)
    theta, state, _ = rls_step_improved(theta, state, grad, np.zeros(2), hp)

    # Then
    np.testing.assert_allclose(state.omega, -1.5 * grad)
    np.testing.assert_allclose(theta.theta, -2.5 * grad)


def test_l1_term_shrinks_weights(rng):
    # Given
    theta = fc_params(rng.standard_normal((3, 2)))
    x_bar = np.array([0.5, -0.5, 1.0])
    hp = RlsHyperparams(gamma=1e-2)

    # When
    new_theta, state, _ = rls_step_improved(theta, init_state((3, 2)), np.zeros((3, 2)), x_bar, hp)

    # Then
    np.testing.assert_allclose(new_theta.theta, theta.theta - 1e-2 * state.p @ np.sign(theta.theta))


def test_displacement_is_descent_direction(rng):
    for _ in range(50):
        theta = fc_params(rng.standard_normal((4, 3)))
        a = rng.standard_normal((4, 4))
        state = init_state((4, 3))
        state.p = a @ a.T + 1e-3 * np.eye(4)
        grad = rng.standard_normal((4, 3))
        new_theta, _, trace = rls_step(theta, state, grad, np.append(rng.standard_normal(3), 1.0),
                                       RlsHyperparams(lam=0.9))

        displacement = new_theta.theta - theta.theta
        np.testing.assert_allclose(displacement, -(1.0 / trace.h) * state.p @ grad, atol=1e-12)
        assert np.sum(displacement * grad) <= 0.0


def test_h_guard_skips_parameter_step(rng):
    # Given
    theta = fc_params(rng.standard_normal((2, 1)))

    # When
    new_theta, state, trace = rls_step(theta, init_state((2, 1)), np.ones((2, 1)), np.zeros(2),
                                       RlsHyperparams(), h_floor=2.0)

    # Then
    assert trace.skipped
    np.testing.assert_array_equal(new_theta.theta, theta.theta)


def test_p_is_independent_of_targets(rng):
    # Given
    xs = [rng.standard_normal((8, 3)) for _ in range(20)]
    states = []
    for target_seed in (1, 2):
        target_rng = np.random.default_rng(target_seed)
        net = build_fnn(np.random.default_rng(0), (3, 5, 2), 'tanh')
        plan = hybrid_assign(net, {'*': 'rls'})

        # When
        for x in xs:
            ExperimentManager.train_step(net, plan, x, target_rng.standard_normal((8, 2)),
                                         LossKind.MSE_LINEAR, clip_norm=1e9)
        states.append(plan.optimizers['rls'].states)

    # Then the first layer saw the same inputs under both targets
    np.testing.assert_array_equal(states[0]['fc1'].p, states[1]['fc1'].p)


def test_classic_rls_reduction():
    # Given a scalar linear model z = w x + b with target 2x, fed one sample per step
    rng = np.random.default_rng(17)
    net = build_fnn(np.random.default_rng(0), (1, 1))
    plan = hybrid_assign(net, {'*': 'rls'}, RlsHyperparams(lam=1.0, k=1.0, eta=1.0))
    theta = net.output_layer.params.theta[:, 0].copy()
    p = np.eye(2)

    for _ in range(500):
        x = 4.0 * rng.standard_normal()
        d = 2.0 * x

        # When
        ExperimentManager.train_step(net, plan, np.array([[x]]), np.array([[d]]), LossKind.MSE_LINEAR,
                                     clip_norm=1e9)

        # Then it matches the per-sample recursion
        phi = np.array([x, 1.0])
        gain = p @ phi / (1.0 + phi @ p @ phi)
        theta = theta + gain * (d - phi @ theta)
        p = p - np.outer(gain, phi @ p)
        np.testing.assert_allclose(net.output_layer.params.theta[:, 0], theta, rtol=0, atol=1e-10)

    assert net.output_layer.params.theta[0, 0] == pytest.approx(2.0, abs=1e-3)


def test_conv_gradient_is_spatially_normalised(rng):
    # Given
    net = build_cnn(rng, (1, 4, 4), 2, blocks=((2,),), fc_hidden=0, pool=False)
    slot = [s for s in net.slots() if s.name == 'conv1'][0]
    assert slot.spatial_area == 16
    _, cache = net.forward(rng.standard_normal((2, 1, 4, 4)))
    grad = rng.standard_normal(slot.params.theta.shape)
    before = slot.params.theta.copy()

    # When
    RlsOptimizer([slot], RlsHyperparams(eta=0.5)).step(slot, grad, cache)

    # Then
    x_bar = average_input(cache, 'conv1')
    expected, _, _ = rls_step(AugmentedParams(before, LayerKind.CONV), init_state(before.shape), grad / 16.0,
                              x_bar, RlsHyperparams(eta=0.5))
    np.testing.assert_allclose(slot.params.theta, expected.theta)


def test_eta_resolution(rng):
    net = build_fnn(rng, (3, 4, 4, 2))
    optimizer = RlsOptimizer(net.slots(), RlsHyperparams(eta=0.1), eta_layers={'fc2': 3.0})
    assert optimizer.hps['out'].eta == 1.0
    assert optimizer.hps['fc2'].eta == 3.0
    assert optimizer.hps['fc1'].eta == 0.1

    optimizer = RlsOptimizer(net.slots(), RlsHyperparams(eta=0.1), eta_layers={'out': 0.5})
    assert optimizer.hps['out'].eta == 0.5


def test_step_rejects_foreign_slot(rng):
    net = build_fnn(rng, (3, 4, 2))
    optimizer = RlsOptimizer(net.slots()[:1], RlsHyperparams())
    _, cache = net.forward(rng.standard_normal((2, 3)))
    with pytest.raises(StateError):
        optimizer.step(net.slots()[1], np.zeros((4, 4)), cache)
