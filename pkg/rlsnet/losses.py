from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from rlsnet.errors import DimensionError, InputError, NumericalError

Output = Union[np.ndarray, Sequence[np.ndarray]]


class LossKind(Enum):
    MSE_LINEAR = 'mse'
    CROSS_ENTROPY = 'xent'


@dataclass(frozen=True)
class LossReport(object):
    value: float
    kind: LossKind


class GradientSet(object):
    '''
    Average gradients of the minibatch loss, one matrix per parameter slot.
    '''

    def __init__(self, grads: Dict[str, np.ndarray] = None):
        self.grads = dict(grads or {})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __setitem__(self, name: str, grad: np.ndarray):
        self.grads[name] = grad

    def __contains__(self, name: str) -> bool:
        return name in self.grads

    def __iter__(self) -> Iterator[str]:
        return iter(self.grads)

    def __len__(self) -> int:
        return len(self.grads)

    def items(self):
        return self.grads.items()

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads.values())


def _as_list(x: Output) -> List[np.ndarray]:
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _pairs(z: Output, z_star: Output) -> List[Tuple[np.ndarray, np.ndarray]]:
    zs, targets = _as_list(z), _as_list(z_star)
    if len(zs) != len(targets):
        raise DimensionError(f'{len(zs)} output times against {len(targets)} target times')
    for a, b in zip(zs, targets):
        if np.shape(a) != np.shape(b):
            raise DimensionError(f'output of shape {np.shape(a)} against target of shape {np.shape(b)}')
    return list(zip(zs, targets))


def mse_linear_loss(z: Output, z_star: Output) -> LossReport:
    '''
    (1 / 2M) sum_t ||Z_t - Z*_t||_F^2 over the linear outputs.

    :param z: M x N_L output, or the list of outputs for times t0..T
    :param z_star: desired linear output, same layout
    :return: LossReport
    '''
    pairs = _pairs(z, z_star)
    m = pairs[0][0].shape[0]
    value = sum(float(np.sum((a - b) ** 2)) for a, b in pairs) / (2.0 * m)
    return LossReport(value=value, kind=LossKind.MSE_LINEAR)


def mse_linear_grad(z: Output, z_star: Output) -> Output:
    '''
    Gradient (Z - Z*) / M w.r.t. each linear output.
    '''
    pairs = _pairs(z, z_star)
    m = pairs[0][0].shape[0]
    grads = [(a - b) / m for a, b in pairs]
    return grads if isinstance(z, (list, tuple)) else grads[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _label_pairs(logits: Output, labels) -> List[Tuple[np.ndarray, np.ndarray]]:
    times = _as_list(logits)
    label_times = list(labels) if isinstance(labels, (list, tuple)) else [labels] * len(times)
    if len(label_times) != len(times):
        raise DimensionError(f'{len(times)} output times against {len(label_times)} label times')
    pairs = []
    for z, y in zip(times, label_times):
        y = np.asarray(y)
        if y.shape != (z.shape[0],):
            raise DimensionError(f'labels of shape {y.shape} against logits of shape {z.shape}')
        if not np.issubdtype(y.dtype, np.integer) or np.any(y < 0) or np.any(y >= z.shape[1]):
            raise InputError(f'labels must be integers in [0, {z.shape[1]})')
        pairs.append((z, y))
    return pairs


def cross_entropy_loss(logits: Output, labels) -> LossReport:
    '''
    Softmax cross-entropy averaged over the minibatch (summed over output times).

    :param logits: M x N_L output preactivation, or a list over times
    :param labels: integer labels of length M, or a list over times
    :return: LossReport
    '''
    value = 0.0
    for z, y in _label_pairs(logits, labels):
        value -= float(_log_softmax(z)[np.arange(z.shape[0]), y].sum()) / z.shape[0]
    return LossReport(value=value, kind=LossKind.CROSS_ENTROPY)


def cross_entropy_grad(logits: Output, labels) -> Output:
    '''
    (softmax(Z) - onehot) / M w.r.t. the output preactivation; each row sums to 0.
    '''
    grads = []
    for z, y in _label_pairs(logits, labels):
        g = np.exp(_log_softmax(z))
        g[np.arange(z.shape[0]), y] -= 1.0
        grads.append(g / z.shape[0])
    return grads if isinstance(logits, (list, tuple)) else grads[0]


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def clip_gradients(grads: GradientSet, max_norm: float) -> GradientSet:
    '''
    Rescale every matrix by max_norm / norm when the global L2 norm exceeds max_norm.

    :param grads: gradients to clip
    :param max_norm: positive threshold
    :return: a new GradientSet
    '''
    if not grads.is_finite():
        raise NumericalError('gradient contains NaN or Inf')
    norm = grads.global_norm()
    if norm <= max_norm:
        return GradientSet(grads.grads)
    scale = max_norm / norm
    return GradientSet({name: g * scale for name, g in grads.items()})
