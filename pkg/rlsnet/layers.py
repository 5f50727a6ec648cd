from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from rlsnet.errors import ConfigurationError, DimensionError


class LayerKind(Enum):
    FC = 'fc'
    CONV = 'conv'
    RECUR_W = 'recur_w'
    RECUR_V = 'recur_v'
    LSTM_W = 'lstm_w'
    LSTM_V = 'lstm_v'


@dataclass
class AugmentedParams(object):
    '''
    Parameter matrix [W^T, b]^T: the last row is the bias.
    '''
    theta: np.ndarray
    kind: LayerKind

    @property
    def rows(self) -> int:
        return self.theta.shape[0]

    @property
    def cols(self) -> int:
        return self.theta.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self.theta[:-1]

    @property
    def bias(self) -> np.ndarray:
        return self.theta[-1]


@dataclass(frozen=True)
class ConvSpec(object):
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for name in ('in_channels', 'out_channels', 'kernel_h', 'kernel_w', 'stride'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f'ConvSpec.{name} must be a positive integer')
        if int(self.padding) < 0:
            raise ConfigurationError('ConvSpec.padding must be >= 0')

    @property
    def field_size(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    def output_size(self, u: int, v: int) -> Tuple[int, int]:
        '''
        Output height and width. Inexact strides are rejected rather than truncated.

        :param u: input height
        :param v: input width
        :return: (U_l, V_l)
        '''
        out = []
        for size, kernel in ((u, self.kernel_h), (v, self.kernel_w)):
            span = size + 2 * self.padding - kernel
            if span < 0 or span % self.stride:
                raise ConfigurationError(
                    f'input {size} with kernel {kernel}, stride {self.stride}, padding {self.padding} '
                    f'does not give an integer output size')
            out.append(span // self.stride + 1)
        return out[0], out[1]


@dataclass
class SequenceTrace(object):
    '''
    Per-time values of a RECUR or LSTM layer. For LSTM layers ``gates`` holds the
    activated [I, G, F, O] blocks and ``c`` the cell states, ``c[0]`` being C_0.
    '''
    x_w: List[np.ndarray] = field(default_factory=list)
    x_v: List[np.ndarray] = field(default_factory=list)
    z_w: List[np.ndarray] = field(default_factory=list)
    z_v: List[np.ndarray] = field(default_factory=list)
    y: List[np.ndarray] = field(default_factory=list)
    gates: List[np.ndarray] = field(default_factory=list)
    c: List[np.ndarray] = field(default_factory=list)


class Activation(object):
    NAMES = ('identity', 'relu', 'sigmoid', 'tanh', 'softmax')

    @staticmethod
    def check(name: str) -> str:
        if name not in Activation.NAMES:
            raise ConfigurationError(f'unknown activation {name}, expected one of {Activation.NAMES}')
        return name

    @staticmethod
    def forward(name: str, z: np.ndarray) -> np.ndarray:
        if name == 'identity':
            return z
        if name == 'relu':
            return np.maximum(z, 0.0)
        if name == 'sigmoid':
            return 0.5 * (1.0 + np.tanh(0.5 * z))
        if name == 'tanh':
            return np.tanh(z)
        if name == 'softmax':
            e = np.exp(z - z.max(axis=-1, keepdims=True))
            return e / e.sum(axis=-1, keepdims=True)
        raise ConfigurationError(f'unknown activation {name}')

    @staticmethod
    def backward(name: str, z: np.ndarray, y: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
        '''
        Gradient w.r.t. the preactivation. ReLU uses 0 as its subgradient at 0.
        '''
        if name == 'identity':
            return grad_y
        if name == 'relu':
            return grad_y * (z > 0.0)
        if name == 'sigmoid':
            return grad_y * y * (1.0 - y)
        if name == 'tanh':
            return grad_y * (1.0 - y * y)
        if name == 'softmax':
            return y * (grad_y - (grad_y * y).sum(axis=-1, keepdims=True))
        raise ConfigurationError(f'unknown activation {name}')


def augment(x: np.ndarray, axis: int = -1) -> np.ndarray:
    '''
    Append the constant-1 augmentation slice along ``axis``.
    '''
    shape = list(x.shape)
    shape[axis] = 1
    return np.concatenate([x, np.ones(shape, dtype=x.dtype)], axis=axis)


def init_params(rng: np.random.Generator, fan_in: int, cols: int, kind: LayerKind) -> AugmentedParams:
    '''
    Uniform in +-1/sqrt(fan_in) for weights and bias alike.
    '''
    bound = 1.0 / np.sqrt(fan_in)
    return AugmentedParams(theta=rng.uniform(-bound, bound, size=(fan_in + 1, cols)), kind=kind)


def _check_augmented(x_aug: np.ndarray, rows: int):
    if x_aug.ndim != 2 or x_aug.shape[1] != rows:
        raise DimensionError(f'augmented input of shape {x_aug.shape} does not match {rows} parameter rows')
    if not np.all(x_aug[:, -1] == 1.0):
        raise DimensionError('augmentation column must be all ones')


def fc_forward(x_aug: np.ndarray, params: AugmentedParams, activation: str = 'identity') -> Tuple[np.ndarray, np.ndarray]:
    '''
    z = X theta, y = f(z).

    :param x_aug: M x (N+1) augmented input
    :param params: (N+1) x N_l parameters
    :param activation: activation name
    :return: (z, y)
    '''
    _check_augmented(x_aug, params.rows)
    z = x_aug @ params.theta
    return z, Activation.forward(activation, z)


def extract_receptive_fields(y_prev: np.ndarray, spec: ConvSpec) -> np.ndarray:
    '''
    Flatten every receptive field into a column, zero padded.

    :param y_prev: M x C x U x V input
    :param spec: convolution geometry
    :return: M x (C*H*W) x U_l x V_l fields, ordered (channel, kernel row, kernel column)
    '''
    if y_prev.ndim != 4 or y_prev.shape[1] != spec.in_channels:
        raise DimensionError(f'input of shape {y_prev.shape} does not match {spec.in_channels} channels')
    m, c, u, v = y_prev.shape
    out_u, out_v = spec.output_size(u, v)
    d, p = spec.stride, spec.padding

    padded = np.pad(y_prev, [(0, 0), (0, 0), (p, p), (p, p)], 'constant')
    cols = np.empty((m, c, spec.kernel_h, spec.kernel_w, out_u, out_v), dtype=y_prev.dtype)
    for h in range(spec.kernel_h):
        h_max = h + d * out_u
        for w in range(spec.kernel_w):
            w_max = w + d * out_v
            cols[:, :, h, w, :, :] = padded[:, :, h:h_max:d, w:w_max:d]
    return cols.reshape(m, spec.field_size, out_u, out_v)


def fold_receptive_fields(cols: np.ndarray, input_shape: Sequence[int], spec: ConvSpec) -> np.ndarray:
    '''
    Adjoint of extract_receptive_fields: scatter-add field columns back onto the input grid.
    '''
    m, c, u, v = input_shape
    out_u, out_v = cols.shape[2], cols.shape[3]
    d, p = spec.stride, spec.padding

    cols = cols.reshape(m, c, spec.kernel_h, spec.kernel_w, out_u, out_v)
    padded = np.zeros((m, c, u + 2 * p, v + 2 * p), dtype=cols.dtype)
    for h in range(spec.kernel_h):
        h_max = h + d * out_u
        for w in range(spec.kernel_w):
            w_max = w + d * out_v
            padded[:, :, h:h_max:d, w:w_max:d] += cols[:, :, h, w, :, :]
    return padded[:, :, p:p + u, p:p + v]


def conv_forward(y_prev: np.ndarray,
                 params: AugmentedParams,
                 spec: ConvSpec,
                 activation: str = 'relu') -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    '''
    Convolution as one matrix product per output position.

    :return: (z, y, x_fields) with x_fields the augmented M x (C*H*W+1) x U_l x V_l fields
    '''
    if params.theta.shape != (spec.field_size + 1, spec.out_channels):
        raise DimensionError(f'parameters of shape {params.theta.shape} do not match '
                             f'{(spec.field_size + 1, spec.out_channels)}')
    x_fields = augment(extract_receptive_fields(y_prev, spec), axis=1)
    z = np.ascontiguousarray(np.tensordot(x_fields, params.theta, axes=([1], [0])).transpose(0, 3, 1, 2))
    return z, Activation.forward(activation, z), x_fields


def recur_forward(y_seq: Sequence[np.ndarray],
                  w: AugmentedParams,
                  v: AugmentedParams,
                  activation: str = 'tanh') -> SequenceTrace:
    '''
    y_t = f([y_t^prev, 1] theta_w + [y_{t-1}, 1] theta_v) with y_0 = 0.
    '''
    if len(y_seq) == 0:
        raise DimensionError('recurrent layer needs a non-empty sequence')
    n = w.cols
    if v.theta.shape != (n + 1, n):
        raise DimensionError(f'recurrent parameters of shape {v.theta.shape} do not match {n} units')

    trace = SequenceTrace()
    y_prev = np.zeros((y_seq[0].shape[0], n))
    for x in y_seq:
        x_w, x_v = augment(x), augment(y_prev)
        _check_augmented(x_w, w.rows)
        z_w, z_v = x_w @ w.theta, x_v @ v.theta
        y_prev = Activation.forward(activation, z_w + z_v)
        trace.x_w.append(x_w)
        trace.x_v.append(x_v)
        trace.z_w.append(z_w)
        trace.z_v.append(z_v)
        trace.y.append(y_prev)
    return trace


def lstm_forward(y_seq: Sequence[np.ndarray], w: AugmentedParams, v: AugmentedParams) -> SequenceTrace:
    '''
    Concatenated-gate LSTM. Column blocks of both matrices are ordered I, G, F, O.
    C_0 and Y_0 are zero.
    '''
    if len(y_seq) == 0:
        raise DimensionError('LSTM layer needs a non-empty sequence')
    if w.cols % 4 or v.cols != w.cols:
        raise ConfigurationError(f'LSTM parameter columns {w.cols}/{v.cols} must match and divide by 4')
    n = w.cols // 4
    if v.rows != n + 1:
        raise DimensionError(f'LSTM recurrent parameters have {v.rows} rows, expected {n + 1}')

    trace = SequenceTrace()
    m = y_seq[0].shape[0]
    y_prev, c_prev = np.zeros((m, n)), np.zeros((m, n))
    trace.c.append(c_prev)
    for x in y_seq:
        x_w, x_v = augment(x), augment(y_prev)
        _check_augmented(x_w, w.rows)
        z_w, z_v = x_w @ w.theta, x_v @ v.theta
        a = z_w + z_v
        gates = np.empty_like(a)
        gates[:, :n] = Activation.forward('sigmoid', a[:, :n])
        gates[:, n:2 * n] = Activation.forward('tanh', a[:, n:2 * n])
        gates[:, 2 * n:] = Activation.forward('sigmoid', a[:, 2 * n:])
        c_prev = gates[:, :n] * gates[:, n:2 * n] + gates[:, 2 * n:3 * n] * c_prev
        y_prev = gates[:, 3 * n:] * np.tanh(c_prev)
        trace.x_w.append(x_w)
        trace.x_v.append(x_v)
        trace.z_w.append(z_w)
        trace.z_v.append(z_v)
        trace.gates.append(gates)
        trace.c.append(c_prev)
        trace.y.append(y_prev)
    return trace


def maxpool_forward(x: np.ndarray, size: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    '''
    Non-overlapping max pooling. Ties go to the first window entry in row-major order.

    :return: (pooled, argmax index inside each window)
    '''
    m, c, u, v = x.shape
    if u % size or v % size:
        raise ConfigurationError(f'pooling {size}x{size} does not tile a {u}x{v} input')
    windows = x.reshape(m, c, u // size, size, v // size, size) \
        .transpose(0, 1, 2, 4, 3, 5) \
        .reshape(m, c, u // size, v // size, size * size)
    idx = windows.argmax(axis=-1)
    return np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0], idx


def maxpool_backward(grad_y: np.ndarray, idx: np.ndarray, input_shape: Sequence[int], size: int = 2) -> np.ndarray:
    m, c, u, v = input_shape
    windows = np.zeros((m, c, u // size, v // size, size * size), dtype=grad_y.dtype)
    np.put_along_axis(windows, idx[..., None], grad_y[..., None], axis=-1)
    return windows.reshape(m, c, u // size, v // size, size, size) \
        .transpose(0, 1, 2, 4, 3, 5) \
        .reshape(m, c, u, v)


class Layer(object):
    '''
    A network stage. ``forward`` returns (output, cache); ``backward`` consumes the
    gradient w.r.t. the output and returns (gradient w.r.t. the input, {slot: grad}).
    '''
    name = 'layer'
    activation = 'identity'
    spatial_area = 1

    def slots(self) -> List[Tuple[str, AugmentedParams, float]]:
        '''
        :return: (slot name, parameters, count factor) for every parameter matrix
        '''
        return []

    def slot_inputs(self, cache: dict) -> Dict[str, object]:
        return {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_y, cache: dict):
        raise NotImplementedError


class FcLayer(Layer):
    '''
    Fully connected layer. Given a sequence it runs on times first_time..T only
    (the output layer of a sequence model).
    '''

    def __init__(self,
                 rng: np.random.Generator,
                 n_in: int,
                 n_out: int,
                 activation: str = 'relu',
                 name: str = 'fc',
                 first_time: int = 1,
                 seq_len: Optional[int] = None):
        self.name = name
        self.activation = Activation.check(activation)
        self.first_time = first_time
        self.seq_len = seq_len
        self.params = init_params(rng, n_in, n_out, LayerKind.FC)

    @property
    def count_factor(self) -> float:
        return float(self.seq_len - self.first_time + 1) if self.seq_len else 1.0

    def slots(self):
        return [(self.name, self.params, self.count_factor)]

    def slot_inputs(self, cache):
        return {self.name: cache['x']}

    def forward(self, x):
        if isinstance(x, (list, tuple)):
            if not 1 <= self.first_time <= len(x):
                raise DimensionError(f'first time {self.first_time} outside a sequence of length {len(x)}')
            xs = [augment(x_t) for x_t in x[self.first_time - 1:]]
            zs, ys = zip(*[fc_forward(x_t, self.params, self.activation) for x_t in xs])
            return list(ys), {'x': xs, 'z': list(zs), 'y': list(ys), 'seq_len': len(x)}
        x_aug = augment(x)
        z, y = fc_forward(x_aug, self.params, self.activation)
        return y, {'x': x_aug, 'z': z, 'y': y}

    def backward(self, grad_y, cache):
        if isinstance(grad_y, list):
            grad_z = [Activation.backward(self.activation, z, y, g)
                      for z, y, g in zip(cache['z'], cache['y'], grad_y)]
        else:
            grad_z = Activation.backward(self.activation, cache['z'], cache['y'], grad_y)
        return self.backward_z(grad_z, cache)

    def backward_z(self, grad_z, cache):
        weights = self.params.weights
        if isinstance(grad_z, list):
            grad = sum(x_t.T @ g_t for x_t, g_t in zip(cache['x'], grad_z))
            # times before first_time receive no gradient from this layer
            pad = [None] * (self.first_time - 1)
            return pad + [g_t @ weights.T for g_t in grad_z], {self.name: grad}
        return grad_z @ weights.T, {self.name: cache['x'].T @ grad_z}


class ConvLayer(Layer):
    '''
    CONV layer on a fixed U x V input, so the output map U_l x V_l is known up front.
    '''

    def __init__(self,
                 rng: np.random.Generator,
                 spec: ConvSpec,
                 input_size: Tuple[int, int],
                 activation: str = 'relu',
                 name: str = 'conv'):
        self.name = name
        self.spec = spec
        self.input_size = (int(input_size[0]), int(input_size[1]))
        self.output_size = spec.output_size(*self.input_size)
        self.spatial_area = self.output_size[0] * self.output_size[1]
        self.activation = Activation.check(activation)
        self.params = init_params(rng, spec.field_size, spec.out_channels, LayerKind.CONV)

    def slots(self):
        return [(self.name, self.params, 1.0)]

    def slot_inputs(self, cache):
        return {self.name: cache['x']}

    def forward(self, x):
        if tuple(x.shape[2:]) != self.input_size:
            raise DimensionError(f'{self.name} expects {self.input_size[0]}x{self.input_size[1]} inputs, got {x.shape}')
        z, y, x_fields = conv_forward(x, self.params, self.spec, self.activation)
        return y, {'x': x_fields, 'z': z, 'y': y, 'input_shape': x.shape}

    def backward(self, grad_y, cache):
        return self.backward_z(Activation.backward(self.activation, cache['z'], cache['y'], grad_y), cache)

    def backward_z(self, grad_z, cache):
        grad = np.tensordot(cache['x'], grad_z, axes=([0, 2, 3], [0, 2, 3]))
        grad_fields = np.tensordot(grad_z, self.params.weights, axes=([1], [1])).transpose(0, 3, 1, 2)
        return fold_receptive_fields(grad_fields, cache['input_shape'], self.spec), {self.name: grad}


class PoolLayer(Layer):

    def __init__(self, size: int = 2, name: str = 'pool'):
        self.name = name
        self.size = size

    def forward(self, x):
        y, idx = maxpool_forward(x, self.size)
        return y, {'idx': idx, 'input_shape': x.shape}

    def backward(self, grad_y, cache):
        return maxpool_backward(grad_y, cache['idx'], cache['input_shape'], self.size), {}


class FlattenLayer(Layer):

    def __init__(self, name: str = 'flatten'):
        self.name = name

    def forward(self, x):
        return x.reshape(x.shape[0], -1), {'input_shape': x.shape}

    def backward(self, grad_y, cache):
        return grad_y.reshape(cache['input_shape']), {}


class RecurLayer(Layer):

    def __init__(self,
                 rng: np.random.Generator,
                 n_in: int,
                 n_out: int,
                 seq_len: int,
                 activation: str = 'tanh',
                 name: str = 'recur'):
        self.name = name
        self.seq_len = seq_len
        self.activation = Activation.check(activation)
        self.w = init_params(rng, n_in, n_out, LayerKind.RECUR_W)
        self.v = init_params(rng, n_out, n_out, LayerKind.RECUR_V)

    def slots(self):
        return [(f'{self.name}.w', self.w, float(self.seq_len)),
                (f'{self.name}.v', self.v, float(self.seq_len))]

    def slot_inputs(self, cache):
        trace = cache['trace']
        return {f'{self.name}.w': trace.x_w, f'{self.name}.v': trace.x_v}

    def forward(self, x):
        trace = recur_forward(x, self.w, self.v, self.activation)
        return list(trace.y), {'trace': trace}

    def backward(self, grad_y, cache):
        trace = cache['trace']
        grad_w, grad_v = np.zeros_like(self.w.theta), np.zeros_like(self.v.theta)
        grad_x = [None] * len(trace.y)
        carry = np.zeros_like(trace.y[0])
        for t in reversed(range(len(trace.y))):
            g_y = carry if grad_y[t] is None else grad_y[t] + carry
            g_z = Activation.backward(self.activation, trace.z_w[t] + trace.z_v[t], trace.y[t], g_y)
            grad_w += trace.x_w[t].T @ g_z
            grad_v += trace.x_v[t].T @ g_z
            carry = g_z @ self.v.weights.T
            grad_x[t] = g_z @ self.w.weights.T
        return grad_x, {f'{self.name}.w': grad_w, f'{self.name}.v': grad_v}


class LstmLayer(Layer):

    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, seq_len: int, name: str = 'lstm'):
        self.name = name
        self.seq_len = seq_len
        self.activation = 'tanh'
        self.w = init_params(rng, n_in, 4 * n_out, LayerKind.LSTM_W)
        self.v = init_params(rng, n_out, 4 * n_out, LayerKind.LSTM_V)

    def slots(self):
        return [(f'{self.name}.w', self.w, float(self.seq_len)),
                (f'{self.name}.v', self.v, float(self.seq_len))]

    def slot_inputs(self, cache):
        trace = cache['trace']
        return {f'{self.name}.w': trace.x_w, f'{self.name}.v': trace.x_v}

    def forward(self, x):
        trace = lstm_forward(x, self.w, self.v)
        return list(trace.y), {'trace': trace}

    def backward(self, grad_y, cache):
        trace = cache['trace']
        n = self.w.cols // 4
        grad_w, grad_v = np.zeros_like(self.w.theta), np.zeros_like(self.v.theta)
        grad_x = [None] * len(trace.y)
        carry_y = np.zeros_like(trace.y[0])
        carry_c = np.zeros_like(trace.y[0])
        for t in reversed(range(len(trace.y))):
            gates, c, c_prev = trace.gates[t], trace.c[t + 1], trace.c[t]
            i, g, f, o = gates[:, :n], gates[:, n:2 * n], gates[:, 2 * n:3 * n], gates[:, 3 * n:]
            tanh_c = np.tanh(c)

            g_y = carry_y if grad_y[t] is None else grad_y[t] + carry_y
            g_c = g_y * o * (1.0 - tanh_c * tanh_c) + carry_c
            g_a = np.empty_like(gates)
            g_a[:, :n] = g_c * g * i * (1.0 - i)
            g_a[:, n:2 * n] = g_c * i * (1.0 - g * g)
            g_a[:, 2 * n:3 * n] = g_c * c_prev * f * (1.0 - f)
            g_a[:, 3 * n:] = g_y * tanh_c * o * (1.0 - o)

            grad_w += trace.x_w[t].T @ g_a
            grad_v += trace.x_v[t].T @ g_a
            carry_c = g_c * f
            carry_y = g_a @ self.v.weights.T
            grad_x[t] = g_a @ self.w.weights.T
        return grad_x, {f'{self.name}.w': grad_w, f'{self.name}.v': grad_v}
