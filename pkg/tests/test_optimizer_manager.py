import numpy as np
import pytest

from rlsnet.baseline_optimizers import AdamOptimizer, SgdOptimizer
from rlsnet.errors import ConfigurationError
from rlsnet.losses import LossKind
from rlsnet.network import backward, build_fnn
from rlsnet.optimizer_manager import OPTIMIZER_CHOICES, hybrid_assign, optimizer_map_for
from rlsnet.rls_optimizer import RlsHyperparams, RlsOptimizer, RlsStepTrace


@pytest.fixture()
def net():
    return build_fnn(np.random.default_rng(0), (4, 6, 5, 3))


def test_optimizer_map_for():
    assert optimizer_map_for('hybrid') == {'hidden': 'rls', 'output': 'adam'}
    assert optimizer_map_for('rls+m') == {'*': 'rls+m'}
    with pytest.raises(ConfigurationError):
        optimizer_map_for('lbfgs')


def test_hybrid_routes(net):
    # When
    plan = hybrid_assign(net, optimizer_map_for('hybrid'), RlsHyperparams())

    # Then
    assert plan.routes == {'out': 'adam', 'fc2': 'rls', 'fc1': 'rls'}
    assert isinstance(plan.optimizers['adam'], AdamOptimizer)
    assert set(plan.optimizers['rls'].states) == {'fc1', 'fc2'}


def test_resolution_order(net):
    plan = hybrid_assign(net, {'*': 'sgd', 'hidden': 'adam', 'fc1': 'rls+r'})
    assert plan.routes == {'out': 'sgd', 'fc2': 'adam', 'fc1': 'rls+r'}
    assert isinstance(plan.optimizers['sgd'], SgdOptimizer)


def test_variants_use_their_hyperparameters(net):
    hp = RlsHyperparams(alpha=0.5, gamma=1e-5)
    for kind, alpha, gamma, improved in (('rls', 0.0, 0.0, False), ('rls+m', 0.5, 0.0, True),
                                         ('rls+r', 0.0, 1e-5, True), ('rls+mr', 0.5, 1e-5, True)):
        optimizer = hybrid_assign(net, {'*': kind}, hp).optimizers[kind]
        assert isinstance(optimizer, RlsOptimizer)
        assert optimizer.improved == improved
        assert (optimizer.hps['fc1'].alpha, optimizer.hps['fc1'].gamma) == (alpha, gamma)


def test_assignment_errors(net):
    with pytest.raises(ConfigurationError):
        hybrid_assign(net, {'hidden': 'rls'})
    with pytest.raises(ConfigurationError):
        hybrid_assign(net, {'*': 'rls', 'fc9': 'sgd'})
    with pytest.raises(ConfigurationError):
        hybrid_assign(net, {'*': 'momentum'})


def test_apply_updates_every_slot_and_times_it(net):
    # Given
    rng = np.random.default_rng(1)
    plan = hybrid_assign(net, optimizer_map_for('hybrid'))
    before = {name: p.theta.copy() for name, p in net.parameters().items()}
    x, labels = rng.standard_normal((8, 4)), rng.integers(0, 3, size=8)
    _, cache = net.forward(x)
    grads = backward(net, cache, labels, LossKind.CROSS_ENTROPY)
    timings = {}

    # When
    traces = plan.apply(grads, cache, timings)

    # Then
    assert set(traces) == {'fc1', 'fc2'}
    assert all(isinstance(t, RlsStepTrace) for t in traces.values())
    assert set(timings) == {'out', 'fc1', 'fc2'}
    for name, p in net.parameters().items():
        assert not np.array_equal(p.theta, before[name])


def test_every_choice_builds_a_plan(net):
    for choice in OPTIMIZER_CHOICES:
        plan = hybrid_assign(net, optimizer_map_for(choice))
        assert set(plan.routes) == {'out', 'fc1', 'fc2'}
