from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from rlsnet.errors import ConfigurationError, DimensionError, StateError
from rlsnet.layers import AugmentedParams
from rlsnet.linalg_manager import LinalgManager
from rlsnet.log_manager import LogManager

# parameter steps are skipped below this h
H_FLOOR = 1e-12


@dataclass(frozen=True)
class RlsHyperparams(object):
    '''
    :param lam: forgetting factor in (0, 1]
    :param k: ratio factor of the average approximation, > 0
    :param eta: gradient scaling factor, > 0
    :param gamma: L1 regularization factor, >= 0
    :param alpha: momentum factor in [0, 1)
    '''
    lam: float = 1.0
    k: float = 0.1
    eta: float = 1.0
    gamma: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ConfigurationError(f'lambda must lie in (0, 1], got {self.lam}')
        if not self.k > 0.0:
            raise ConfigurationError(f'k must be positive, got {self.k}')
        if not self.eta > 0.0:
            raise ConfigurationError(f'eta must be positive, got {self.eta}')
        if not self.gamma >= 0.0:
            raise ConfigurationError(f'gamma must be non-negative, got {self.gamma}')
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError(f'alpha must lie in [0, 1), got {self.alpha}')


@dataclass
class RlsLayerState(object):
    p: np.ndarray
    omega: np.ndarray
    count_factor: float = 1.0


@dataclass(frozen=True)
class RlsStepTrace(object):
    x_bar: np.ndarray
    u: np.ndarray
    h: float
    skipped: bool = False


def init_state(theta_shape: Sequence[int], count_factor: float = 1.0) -> RlsLayerState:
    '''
    P = I over the augmented input, zero velocity.

    :param theta_shape: shape of the parameter matrix, (N+1) x N_l
    :param count_factor: 1 for FC/CONV, T_L for the sequence output layer, T for RECUR/LSTM matrices
    '''
    if count_factor < 1.0:
        raise ConfigurationError(f'count factor must be >= 1, got {count_factor}')
    return RlsLayerState(p=np.eye(theta_shape[0]), omega=np.zeros(theta_shape), count_factor=float(count_factor))


def mean_augmented_input(x) -> np.ndarray:
    '''
    Average augmented input: over rows for FC, over (m, u, v) for CONV fields,
    over rows and times for sequence inputs.
    '''
    if isinstance(x, (list, tuple)):
        if not x:
            raise DimensionError('cannot average an empty sequence')
        return LinalgManager.mean_rows(np.concatenate(x, axis=0))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return LinalgManager.mean_rows(x)
    if x.ndim == 4:
        return x.mean(axis=(0, 2, 3))
    raise DimensionError(f'cannot average an input of shape {x.shape}')


def average_input(cache, slot_name: str) -> np.ndarray:
    '''
    :param cache: ForwardCache of this step
    :param slot_name: parameter slot
    :return: x_bar for that slot
    '''
    if cache is None or slot_name not in cache.inputs:
        raise StateError(f'no cached input for {slot_name}')
    return mean_augmented_input(cache.inputs[slot_name])


def _check_shapes(theta: AugmentedParams, state: RlsLayerState, grad: np.ndarray, x_bar: np.ndarray):
    if grad.shape != theta.theta.shape:
        raise DimensionError(f'gradient of shape {grad.shape} against parameters of shape {theta.theta.shape}')
    if state.p.shape != (theta.rows, theta.rows) or x_bar.shape != (theta.rows,):
        raise DimensionError(f'P of shape {state.p.shape} / x_bar of shape {x_bar.shape} '
                             f'against {theta.rows} parameter rows')


def rls_step(theta: AugmentedParams,
             state: RlsLayerState,
             grad: np.ndarray,
             x_bar: np.ndarray,
             hp: RlsHyperparams,
             h_floor: float = H_FLOOR) -> Tuple[AugmentedParams, RlsLayerState, RlsStepTrace]:
    '''
    theta' = theta - (eta / h) P_{s-1} grad, then the rank-1 update of P.

    :param theta: parameters Theta_{s-1}
    :param state: RLS state holding P_{s-1}
    :param grad: clipped average gradient, same shape as theta
    :param x_bar: average augmented input
    :param hp: hyperparameters
    :param h_floor: parameter steps are skipped when h falls below it
    :return: (new parameters, new state, trace)
    '''
    _check_shapes(theta, state, grad, x_bar)
    res = LinalgManager.rank1_inverse_update(state.p, x_bar, hp.lam, hp.k * state.count_factor)

    if res.h < h_floor:
        new_theta, skipped = theta.theta.copy(), True
    else:
        new_theta, skipped = theta.theta - (hp.eta / res.h) * (state.p @ grad), False

    return (AugmentedParams(theta=new_theta, kind=theta.kind),
            replace(state, p=res.p_next),
            RlsStepTrace(x_bar=x_bar, u=res.u, h=res.h, skipped=skipped))


def rls_step_improved(theta: AugmentedParams,
                      state: RlsLayerState,
                      grad: np.ndarray,
                      x_bar: np.ndarray,
                      hp: RlsHyperparams,
                      h_floor: float = H_FLOOR) -> Tuple[AugmentedParams, RlsLayerState, RlsStepTrace]:
    '''
    Momentum and L1 variant:
    Omega_s = alpha Omega_{s-1} - (eta / h) P_{s-1} grad,
    theta' = theta + Omega_s - gamma P_s sgn(theta), with P_s the updated inverse autocorrelation.
    '''
    _check_shapes(theta, state, grad, x_bar)
    res = LinalgManager.rank1_inverse_update(state.p, x_bar, hp.lam, hp.k * state.count_factor)

    skipped = res.h < h_floor
    if skipped:
        omega = state.omega.copy()
        new_theta = theta.theta.copy()
    else:
        omega = hp.alpha * state.omega - (hp.eta / res.h) * (state.p @ grad)
        new_theta = theta.theta + omega
    if hp.gamma:
        new_theta = new_theta - hp.gamma * (res.p_next @ np.sign(theta.theta))

    return (AugmentedParams(theta=new_theta, kind=theta.kind),
            replace(state, p=res.p_next, omega=omega),
            RlsStepTrace(x_bar=x_bar, u=res.u, h=res.h, skipped=skipped))


class RlsOptimizer(object):
    '''
    Owns one RlsLayerState per parameter slot and applies the RLS step in place.
    '''

    def __init__(self,
                 slots: List,
                 hp: RlsHyperparams,
                 eta_layers: Optional[Dict[str, float]] = None,
                 improved: bool = False,
                 conv_spatial_mean: bool = True,
                 h_floor: float = H_FLOOR):
        '''
        :param slots: ParamSlot list this optimizer trains
        :param hp: global hyperparameters
        :param eta_layers: eta per slot or layer name; the output layer defaults to 1
        :param improved: use the momentum / L1 step
        :param conv_spatial_mean: divide CONV gradients by U_l * V_l
        :param h_floor: h guard threshold
        '''
        self.logger = LogManager.get_logger('RlsOptimizer')
        self.improved = improved
        self.conv_spatial_mean = conv_spatial_mean
        self.h_floor = h_floor
        self.eta_layers = dict(eta_layers or {})
        self.hps, self.states = {}, {}
        for slot in slots:
            self.hps[slot.name] = replace(hp, eta=self._eta_for(slot, hp.eta))
            self.states[slot.name] = init_state(slot.params.theta.shape, slot.count_factor)
            self.logger.info(f'{slot.name}: P {self.states[slot.name].p.shape}, '
                             f'count factor {slot.count_factor:g}, eta {self.hps[slot.name].eta:g}')

    def _eta_for(self, slot, eta: float) -> float:
        for key in (slot.name, slot.layer_name):
            if key in self.eta_layers:
                return float(self.eta_layers[key])
        return 1.0 if slot.is_output else eta

    def step(self, slot, grad: np.ndarray, cache) -> RlsStepTrace:
        '''
        :param slot: ParamSlot to update in place
        :param grad: its clipped gradient
        :param cache: ForwardCache of this step
        :return: trace of x_bar, u and h
        '''
        if slot.name not in self.states:
            raise StateError(f'{slot.name} is not trained by this optimizer')
        x_bar = average_input(cache, slot.name)
        if self.conv_spatial_mean and slot.spatial_area != 1:
            grad = grad / slot.spatial_area

        fn = rls_step_improved if self.improved else rls_step
        params, state, trace = fn(slot.params, self.states[slot.name], grad, x_bar, self.hps[slot.name], self.h_floor)
        slot.params.theta[...] = params.theta
        self.states[slot.name] = state
        if trace.skipped:
            self.logger.warning(f'{slot.name}: h={trace.h:.3e} below {self.h_floor:.0e}, parameter step skipped')
        return trace
