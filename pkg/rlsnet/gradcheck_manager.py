from typing import Dict, Tuple

import numpy as np

from rlsnet.errors import ConfigurationError
from rlsnet.log_manager import LogManager
from rlsnet.losses import GradientSet, LossKind
from rlsnet.network import Network, backward, build_cnn, build_fnn, build_rnn, finite_difference_gradient

FAMILIES = ('fc', 'conv', 'recur', 'lstm')
MODEL_FAMILIES = {'fnn': 'fc', 'cnn': 'conv', 'rnn': 'recur', 'lstm': 'lstm'}


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    '''
    ||a - b|| / (||a|| + ||b||), 0 when both vanish.
    '''
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / denom) if denom > 0.0 else 0.0


class GradcheckManager(object):
    '''
    Backward against central finite differences on toy networks in double precision.
    '''

    def __init__(self):
        self.logger = LogManager.get_logger('GradcheckManager')

    @staticmethod
    def toy_problem(family: str, seed: int, loss: LossKind = LossKind.MSE_LINEAR, batch: int = 3,
                    seq_len: int = 4) -> Tuple[Network, np.ndarray, object]:
        '''
        :param family: fc, conv, recur or lstm
        :return: (network, input, target)
        '''
        rng = np.random.default_rng(seed)
        n_out = 3
        activation = 'softmax' if loss == LossKind.CROSS_ENTROPY else 'identity'
        if family == 'fc':
            net = build_fnn(rng, (5, 7, 6, n_out), 'tanh', activation)
            x = rng.standard_normal((batch, 5))
        elif family == 'conv':
            net = build_cnn(rng, (2, 4, 4), n_out, blocks=((3,),), fc_hidden=5, output_activation=activation,
                            hidden_activation='tanh')
            x = rng.standard_normal((batch, 2, 4, 4))
        elif family in ('recur', 'lstm'):
            net = build_rnn(rng, 3, (4, 4), n_out, seq_len, first_time=2, cell=family, output_activation=activation)
            x = rng.standard_normal((batch, seq_len, 3))
        else:
            raise ConfigurationError(f'unknown family {family}, expected one of {FAMILIES}')

        times = int(net.output_layer.count_factor)
        if loss == LossKind.CROSS_ENTROPY:
            labels = rng.integers(0, n_out, size=batch)
            target = [labels] * times if net.sequential else labels
        else:
            target = [rng.standard_normal((batch, n_out)) for _ in range(times)] if net.sequential \
                else rng.standard_normal((batch, n_out))
        return net, x, target

    def check(self, family: str, seed: int = 0, eps: float = 1e-5,
              loss: LossKind = LossKind.MSE_LINEAR) -> Dict[str, float]:
        '''
        :return: relative error per parameter slot
        '''
        net, x, target = self.toy_problem(family, seed, loss)
        _, cache = net.forward(x)
        analytic: GradientSet = backward(net, cache, target, loss)
        numeric = finite_difference_gradient(net, x, target, eps, loss)
        errors = {name: relative_error(analytic[name], numeric[name]) for name in numeric}
        self.logger.info(f'{family} seed {seed}: max relative error {max(errors.values()):.3e}')
        return errors

    def max_error(self, model: str = 'fnn', seed: int = 0, seeds: int = 1, eps: float = 1e-5) -> float:
        '''
        Largest relative error over seeds seed..seed+seeds-1 and both losses.

        :param model: fnn, cnn, rnn, lstm or a family name
        '''
        family = MODEL_FAMILIES.get(model, model)
        worst = 0.0
        for s in range(seed, seed + seeds):
            for loss in (LossKind.MSE_LINEAR, LossKind.CROSS_ENTROPY):
                worst = max(worst, max(self.check(family, s, eps, loss).values()))
        return worst
