import time
from typing import Dict, List

import numpy as np

from rlsnet.baseline_optimizers import SgdOptimizer
from rlsnet.errors import ConfigurationError
from rlsnet.layers import ConvLayer, ConvSpec, FcLayer, FlattenLayer
from rlsnet.log_manager import LogManager
from rlsnet.network import Network, build_fnn, build_rnn
from rlsnet.rls_optimizer import RlsHyperparams, RlsOptimizer

LAYERS = ('fc', 'conv', 'recur', 'lstm')


class ComplexityManager(object):
    '''
    Analytic RLS / SGD cost ratios per layer kind. Sizes exclude the augmentation column.
    '''

    @staticmethod
    def fc_time_ratio(n_in: int, batch_size: int, seq_len: int = 1) -> float:
        '''
        1 + N_{l-1} / (M T); T = 1 outside recurrent networks.
        '''
        return 1.0 + n_in / (batch_size * seq_len)

    @staticmethod
    def conv_time_ratio(field_size: int, batch_size: int, u: int, v: int) -> float:
        '''
        1 + C H W / (M U V) with U x V the output map.
        '''
        return 1.0 + field_size / (batch_size * u * v)

    @staticmethod
    def recurrent_time_ratio(n_in: int, n_out: int, batch_size: int, seq_len: int) -> float:
        return 1.0 + (n_in ** 2 + n_out ** 2) / ((n_in + n_out) * batch_size * seq_len)

    @staticmethod
    def space_ratio(layer: str, n_in: int, n_out: int, field_size: int = None) -> float:
        '''
        Parameters plus inverse autocorrelation matrices over parameters alone.

        :param layer: fc, conv, recur or lstm
        :param n_in: input units (input channels for conv)
        :param n_out: output units (output channels for conv)
        :param field_size: C H W of a conv receptive field
        '''
        if layer == 'fc':
            return 1.0 + n_in / n_out
        if layer == 'conv':
            return 1.0 + (field_size or n_in * 9) / n_out
        squares, total = n_in ** 2 + n_out ** 2, n_in + n_out
        if layer == 'recur':
            return 1.0 + squares / (total * n_out)
        if layer == 'lstm':
            return 1.0 + squares / (4 * total * n_out)
        raise ConfigurationError(f'unknown layer {layer}, expected one of {LAYERS}')


class BenchManager(object):
    def __init__(self):
        self.logger = LogManager.get_logger('BenchManager')

    def _problem(self, layer, rng, n_in, n_out, batch_size, seq_len, image_size):
        if layer == 'fc':
            net = build_fnn(rng, (n_in, n_out))
            x = rng.standard_normal((batch_size, n_in))
            return net, x, ['out']
        if layer == 'conv':
            spec = ConvSpec(n_in, n_out, 3, 3, stride=1, padding=1)
            net = Network([ConvLayer(rng, spec, (image_size, image_size), 'relu', name='conv1'),
                           FlattenLayer(),
                           FcLayer(rng, n_out * image_size * image_size, 2, 'identity', name='out')])
            x = rng.standard_normal((batch_size, n_in, image_size, image_size))
            return net, x, ['conv1']
        if layer in ('recur', 'lstm'):
            net = build_rnn(rng, n_in, (n_out,), 2, seq_len, cell=layer)
            x = rng.standard_normal((batch_size, seq_len, n_in))
            return net, x, [f'{layer}1.w', f'{layer}1.v']
        raise ConfigurationError(f'unknown layer {layer}, expected one of {LAYERS}')

    def _time(self, net, cache, grad_out, optimizer, slots, repeats: int) -> float:
        samples: List[float] = []
        for _ in range(repeats):
            start = time.perf_counter()
            grads = net.backward(cache, grad_out)
            for slot in slots:
                optimizer.step(slot, grads[slot.name], cache)
            samples.append((time.perf_counter() - start) * 1000.0)
        return float(np.median(samples))

    def bench(self,
              layer: str = 'fc',
              n_in: int = 512,
              n_out: int = 512,
              batch_size: int = 128,
              seq_len: int = 8,
              image_size: int = 8,
              repeats: int = 5,
              seed: int = 0) -> Dict[str, float]:
        '''
        Median wall time of one gradient + update of a single layer under SGD and RLS.

        :param layer: fc, conv, recur or lstm
        :param n_in: input units, or input channels for conv
        :param n_out: output units, or output channels for conv
        :param repeats: timed repetitions per optimizer
        :return: measured and analytic ratios with both timings in milliseconds
        '''
        if repeats < 1 or batch_size < 1:
            raise ConfigurationError(f'repeats and batch size must be >= 1, got {repeats} / {batch_size}')
        rng = np.random.default_rng(seed)
        net, x, names = self._problem(layer, rng, n_in, n_out, batch_size, seq_len, image_size)
        slots = [s for s in net.slots() if s.name in names]

        z, cache = net.forward(x)
        grad_out = [rng.standard_normal(z_t.shape) / batch_size for z_t in z] if isinstance(z, list) \
            else rng.standard_normal(z.shape) / batch_size

        sgd_ms = self._time(net, cache, grad_out, SgdOptimizer(slots), slots, repeats)
        rls_ms = self._time(net, cache, grad_out, RlsOptimizer(slots, RlsHyperparams()), slots, repeats)

        if layer == 'fc':
            analytic = ComplexityManager.fc_time_ratio(n_in, batch_size)
        elif layer == 'conv':
            analytic = ComplexityManager.conv_time_ratio(n_in * 9, batch_size, image_size, image_size)
        else:
            analytic = ComplexityManager.recurrent_time_ratio(n_in, n_out, batch_size, seq_len)

        result = {
            'layer': layer,
            'sgd_ms': sgd_ms,
            'rls_ms': rls_ms,
            'ratio': rls_ms / sgd_ms if sgd_ms > 0.0 else float('inf'),
            'analytic_ratio': analytic,
            'space_ratio': ComplexityManager.space_ratio(layer, n_in, n_out),
        }
        self.logger.info(f'{layer}: RLS/SGD step time {result["ratio"]:.2f} '
                         f'(analytic {analytic:.2f}), sgd {sgd_ms:.3f} ms, rls {rls_ms:.3f} ms')
        return result
