import numpy as np
import pytest

from rlsnet.errors import ConfigurationError
from rlsnet.gradcheck_manager import GradcheckManager, relative_error
from rlsnet.losses import LossKind


@pytest.fixture()
def gm():
    return GradcheckManager()


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == 1.0


def test_toy_problem_targets(gm):
    net, x, target = gm.toy_problem('lstm', seed=0, loss=LossKind.MSE_LINEAR)
    assert x.shape == (3, 4, 3)
    assert len(target) == 3
    _, _, labels = gm.toy_problem('conv', seed=0, loss=LossKind.CROSS_ENTROPY)
    assert labels.shape == (3,)


def test_max_error_by_model_name(gm):
    assert gm.max_error('rnn', seed=1, seeds=2) <= 1e-5


def test_unknown_family(gm):
    with pytest.raises(ConfigurationError):
        gm.toy_problem('gru', seed=0)
