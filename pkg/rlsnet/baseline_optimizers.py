from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from rlsnet.errors import ConfigurationError, StateError
from rlsnet.layers import AugmentedParams


def sgd_step(theta: AugmentedParams, grad: np.ndarray, lr: float) -> AugmentedParams:
    '''
    theta' = theta - lr * grad
    '''
    if not lr > 0.0:
        raise ConfigurationError(f'learning rate must be positive, got {lr}')
    return AugmentedParams(theta=theta.theta - lr * grad, kind=theta.kind)


@dataclass
class AdamState(object):
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, **kwargs) -> 'AdamState':
        return cls(m=np.zeros(shape), v=np.zeros(shape), **kwargs)


def adam_step(theta: AugmentedParams, grad: np.ndarray, state: AdamState) -> Tuple[AugmentedParams, AdamState]:
    '''
    Bias-corrected Adam step.

    :param theta: parameters
    :param grad: gradient
    :param state: moments and hyperparameters
    :return: (new parameters, new state)
    '''
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_theta = theta.theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AugmentedParams(theta=new_theta, kind=theta.kind), replace(state, m=m, v=v, step_count=t)


class SgdOptimizer(object):

    def __init__(self, slots: List, lr: float = 0.01):
        if not lr > 0.0:
            raise ConfigurationError(f'learning rate must be positive, got {lr}')
        self.lr = lr
        self.names = {s.name for s in slots}

    def step(self, slot, grad: np.ndarray, cache=None):
        if slot.name not in self.names:
            raise StateError(f'{slot.name} is not trained by this optimizer')
        slot.params.theta[...] = sgd_step(slot.params, grad, self.lr).theta


class AdamOptimizer(object):

    def __init__(self, slots: List, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.states = {s.name: AdamState.zeros(s.params.theta.shape, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
                       for s in slots}

    def step(self, slot, grad: np.ndarray, cache=None):
        if slot.name not in self.states:
            raise StateError(f'{slot.name} is not trained by this optimizer')
        params, self.states[slot.name] = adam_step(slot.params, grad, self.states[slot.name])
        slot.params.theta[...] = params.theta
