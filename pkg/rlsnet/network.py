from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from rlsnet.errors import ConfigurationError, StateError
from rlsnet.layers import (AugmentedParams, ConvLayer, ConvSpec, FcLayer, FlattenLayer, Layer, LstmLayer,
                           PoolLayer, RecurLayer)
from rlsnet.log_manager import LogManager
from rlsnet.losses import (GradientSet, LossKind, LossReport, cross_entropy_grad, cross_entropy_loss,
                           mse_linear_grad, mse_linear_loss, one_hot)


@dataclass(frozen=True)
class ParamSlot(object):
    name: str
    layer_name: str
    params: AugmentedParams
    count_factor: float
    is_output: bool
    # output positions U_l * V_l of a CONV slot, 1 elsewhere
    spatial_area: int = 1


@dataclass
class ForwardCache(object):
    '''
    Everything one forward pass leaves behind: per-layer caches, the augmented
    input of every parameter slot and the output layer's linear output.
    '''
    layers: Dict[str, dict] = field(default_factory=dict)
    inputs: Dict[str, object] = field(default_factory=dict)
    output: object = None


class Network(object):

    def __init__(self, layers: Sequence[Layer], sequential: bool = False):
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ConfigurationError(f'layer names must be unique: {names}')
        if not layers or not isinstance(layers[-1], FcLayer):
            raise ConfigurationError('the last layer must be a fully connected output layer')
        self.layers = list(layers)
        self.sequential = sequential
        self.logger = LogManager.get_logger('Network')

    @property
    def output_layer(self) -> FcLayer:
        return self.layers[-1]

    @property
    def output_activation(self) -> str:
        return self.output_layer.activation

    def slots(self) -> List[ParamSlot]:
        '''
        Parameter matrices ordered from the output layer down to the first layer.
        '''
        out = []
        for layer in reversed(self.layers):
            for name, params, count_factor in layer.slots():
                out.append(ParamSlot(name=name,
                                     layer_name=layer.name,
                                     params=params,
                                     count_factor=count_factor,
                                     is_output=layer is self.output_layer,
                                     spatial_area=layer.spatial_area))
        return out

    def parameters(self) -> Dict[str, AugmentedParams]:
        return {s.name: s.params for s in self.slots()}

    def prepare_input(self, x):
        if self.sequential and isinstance(x, np.ndarray):
            if x.ndim != 3:
                raise ConfigurationError(f'sequence input must be M x T x D, got shape {x.shape}')
            return [x[:, t, :] for t in range(x.shape[1])]
        return x

    def forward(self, x) -> Tuple[object, ForwardCache]:
        '''
        :param x: minibatch (M x N, M x C x U x V, or M x T x D for sequence models)
        :return: (output layer linear output, ForwardCache)
        '''
        cache = ForwardCache()
        h = self.prepare_input(x)
        for layer in self.layers:
            h, layer_cache = layer.forward(h)
            cache.layers[layer.name] = layer_cache
            cache.inputs.update(layer.slot_inputs(layer_cache))
        cache.output = cache.layers[self.output_layer.name]['z']
        return cache.output, cache

    def backward(self, cache: Optional[ForwardCache], grad_output) -> GradientSet:
        '''
        :param cache: this step's forward cache
        :param grad_output: loss gradient w.r.t. the output layer's linear output
        :return: GradientSet over every slot
        '''
        if cache is None or not cache.layers:
            raise StateError('backward needs the forward cache of this step')
        grads = GradientSet()
        g, slot_grads = self.output_layer.backward_z(grad_output, cache.layers[self.output_layer.name])
        grads.grads.update(slot_grads)
        for layer in reversed(self.layers[:-1]):
            g, slot_grads = layer.backward(g, cache.layers[layer.name])
            grads.grads.update(slot_grads)
        return grads

    def predict(self, x) -> np.ndarray:
        '''
        Linear output at the last output time.
        '''
        z, _ = self.forward(x)
        return z[-1] if isinstance(z, list) else z

    def make_target(self, labels: np.ndarray, n_classes: int, loss: LossKind):
        '''
        Desired output for classification labels: one-hot linear outputs for MSE, labels for cross-entropy.
        '''
        if loss == LossKind.CROSS_ENTROPY:
            return labels
        target = one_hot(labels, n_classes)
        if self.sequential:
            return [target] * int(self.output_layer.count_factor)
        return target

    def save(self, path: str):
        np.savez(path, **{name: p.theta for name, p in self.parameters().items()})
        self.logger.info(f'parameters saved to {path}')


def compute_loss(z, target, loss: LossKind) -> LossReport:
    if loss == LossKind.CROSS_ENTROPY:
        return cross_entropy_loss(z, target)
    return mse_linear_loss(z, target)


def loss_gradient(z, target, loss: LossKind):
    if loss == LossKind.CROSS_ENTROPY:
        return cross_entropy_grad(z, target)
    return mse_linear_grad(z, target)


def backward(net: Network, cache: Optional[ForwardCache], target, loss: LossKind = LossKind.MSE_LINEAR) -> GradientSet:
    '''
    Per-slot average gradients X^T grad_Z, summed over time and spatial positions.

    :param net: network that produced the cache
    :param cache: forward cache of this step
    :param target: Z* for MSE, class labels for cross-entropy
    :param loss: loss kind
    :return: GradientSet
    '''
    if cache is None or cache.output is None:
        raise StateError('backward needs the forward cache of this step')
    return net.backward(cache, loss_gradient(cache.output, target, loss))


def finite_difference_gradient(net: Network, x, target, eps: float = 1e-5,
                               loss: LossKind = LossKind.MSE_LINEAR) -> GradientSet:
    '''
    Central differences (J(theta + eps) - J(theta - eps)) / (2 eps), one scalar parameter at a time.
    '''
    grads = GradientSet()
    for slot in net.slots():
        theta = slot.params.theta
        grad = np.zeros_like(theta)
        for idx in np.ndindex(*theta.shape):
            orig = theta[idx]
            theta[idx] = orig + eps
            plus = compute_loss(net.forward(x)[0], target, loss).value
            theta[idx] = orig - eps
            minus = compute_loss(net.forward(x)[0], target, loss).value
            theta[idx] = orig
            grad[idx] = (plus - minus) / (2.0 * eps)
        grads[slot.name] = grad
    return grads


def build_fnn(rng: np.random.Generator,
              sizes: Sequence[int],
              hidden_activation: str = 'relu',
              output_activation: str = 'identity') -> Network:
    '''
    :param sizes: layer widths including input and output, e.g. (784, 512, 10)
    '''
    if len(sizes) < 2:
        raise ConfigurationError(f'an FNN needs at least input and output sizes, got {sizes}')
    layers = [FcLayer(rng, n_in, n_out, hidden_activation, name=f'fc{i + 1}')
              for i, (n_in, n_out) in enumerate(zip(sizes[:-2], sizes[1:-1]))]
    layers.append(FcLayer(rng, sizes[-2], sizes[-1], output_activation, name='out'))
    return Network(layers)


VGG_BLOCKS = ((64, 64), (128, 128), (256,))


def build_cnn(rng: np.random.Generator,
              input_shape: Sequence[int],
              n_out: int,
              blocks: Sequence[Sequence[int]] = VGG_BLOCKS,
              fc_hidden: int = 1024,
              output_activation: str = 'identity',
              hidden_activation: str = 'relu',
              pool: bool = True) -> Network:
    '''
    Mini VGG: 3x3 padding-1 CONV blocks, 2x2 max pooling after each block, one FC hidden layer.

    :param input_shape: (C, U, V)
    :param blocks: output channels of every CONV layer, grouped by block
    :param fc_hidden: width of the FC hidden layer, 0 for none
    '''
    c, u, v = input_shape
    layers, idx = [], 0
    for b, block in enumerate(blocks, start=1):
        for channels in block:
            idx += 1
            spec = ConvSpec(c, channels, 3, 3, stride=1, padding=1)
            layers.append(ConvLayer(rng, spec, (u, v), hidden_activation, name=f'conv{idx}'))
            u, v = layers[-1].output_size
            c = channels
        if pool:
            if u % 2 or v % 2:
                raise ConfigurationError(f'block {b} output {u}x{v} cannot be pooled 2x2')
            layers.append(PoolLayer(2, name=f'pool{b}'))
            u, v = u // 2, v // 2
    layers.append(FlattenLayer())
    n_in = c * u * v
    if fc_hidden:
        layers.append(FcLayer(rng, n_in, fc_hidden, hidden_activation, name='fc1'))
        n_in = fc_hidden
    layers.append(FcLayer(rng, n_in, n_out, output_activation, name='out'))
    return Network(layers)


def build_rnn(rng: np.random.Generator,
              n_in: int,
              hidden: Sequence[int],
              n_out: int,
              seq_len: int,
              first_time: Optional[int] = None,
              cell: str = 'lstm',
              output_activation: str = 'identity') -> Network:
    '''
    Stacked RECUR or LSTM layers and an FC output layer over times first_time..seq_len.

    :param first_time: 1 for sequence prediction, seq_len (default) for sequence classification
    :param cell: 'recur' or 'lstm'
    '''
    if cell not in ('recur', 'lstm'):
        raise ConfigurationError(f'unknown recurrent cell {cell}')
    first_time = seq_len if first_time is None else first_time
    if not 1 <= first_time <= seq_len:
        raise ConfigurationError(f'first output time {first_time} outside 1..{seq_len}')
    layers = []
    for i, width in enumerate(hidden):
        if cell == 'lstm':
            layers.append(LstmLayer(rng, n_in, width, seq_len, name=f'lstm{i + 1}'))
        else:
            layers.append(RecurLayer(rng, n_in, width, seq_len, name=f'recur{i + 1}'))
        n_in = width
    layers.append(FcLayer(rng, n_in, n_out, output_activation, name='out', first_time=first_time, seq_len=seq_len))
    return Network(layers, sequential=True)


def build_lstm(rng: np.random.Generator, n_in: int, hidden: Sequence[int], n_out: int, seq_len: int,
               first_time: Optional[int] = None, output_activation: str = 'identity') -> Network:
    return build_rnn(rng, n_in, hidden, n_out, seq_len, first_time, 'lstm', output_activation)
