import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

from rlsnet.baseline_optimizers import AdamOptimizer, SgdOptimizer
from rlsnet.errors import ConfigurationError
from rlsnet.log_manager import LogManager
from rlsnet.losses import GradientSet
from rlsnet.rls_optimizer import RlsHyperparams, RlsOptimizer

RLS_VARIANTS = ('rls', 'rls+m', 'rls+r', 'rls+mr')
OPTIMIZER_KINDS = RLS_VARIANTS + ('sgd', 'adam')
OPTIMIZER_CHOICES = OPTIMIZER_KINDS + ('hybrid',)


@dataclass
class TrainingPlan(object):
    '''
    Routing of every parameter slot to exactly one optimizer.
    '''
    slots: List
    routes: Dict[str, str]
    optimizers: Dict[str, object] = field(default_factory=dict)

    def apply(self, grads: GradientSet, cache, timings: Optional[Dict[str, float]] = None) -> Dict[str, object]:
        '''
        Update every slot from the output layer down.

        :param grads: clipped gradients
        :param cache: forward cache of this step, read by the RLS optimizers
        :param timings: when given, accumulates milliseconds spent per slot
        :return: RLS traces per slot
        '''
        traces = {}
        for slot in self.slots:
            start = time.perf_counter()
            trace = self.optimizers[self.routes[slot.name]].step(slot, grads[slot.name], cache)
            if timings is not None:
                timings[slot.name] = timings.get(slot.name, 0.0) + (time.perf_counter() - start) * 1000.0
            if trace is not None:
                traces[slot.name] = trace
        return traces


def optimizer_map_for(choice: str) -> Dict[str, str]:
    '''
    :param choice: one of OPTIMIZER_CHOICES
    :return: optimizer map for hybrid_assign
    '''
    if choice not in OPTIMIZER_CHOICES:
        raise ConfigurationError(f'unknown optimizer {choice}, expected one of {OPTIMIZER_CHOICES}')
    if choice == 'hybrid':
        return {'hidden': 'rls', 'output': 'adam'}
    return {'*': choice}


def hybrid_assign(net,
                  optimizer_map: Dict[str, str],
                  hp: RlsHyperparams = None,
                  eta_layers: Optional[Dict[str, float]] = None,
                  sgd_lr: float = 0.01,
                  adam_lr: float = 1e-3) -> TrainingPlan:
    '''
    Build a training plan from an optimizer map.

    Keys are resolved per slot in the order: slot name, layer name, 'output' / 'hidden', '*'.

    :param net: Network to train
    :param optimizer_map: key -> one of OPTIMIZER_KINDS
    :param hp: RLS hyperparameters; alpha is used by +m variants and gamma by +r variants
    :param eta_layers: per slot or layer eta for RLS
    :param sgd_lr: SGD learning rate
    :param adam_lr: Adam learning rate
    :return: TrainingPlan
    '''
    logger = LogManager.get_logger('OptimizerManager')
    hp = hp or RlsHyperparams()
    slots = net.slots()
    names = {s.name for s in slots} | {s.layer_name for s in slots} | {'output', 'hidden', '*'}
    for key, kind in optimizer_map.items():
        if key not in names:
            raise ConfigurationError(f'optimizer map names unknown parameter {key}')
        if kind not in OPTIMIZER_KINDS:
            raise ConfigurationError(f'unknown optimizer {kind} for {key}')

    routes = {}
    for slot in slots:
        group = 'output' if slot.is_output else 'hidden'
        for key in (slot.name, slot.layer_name, group, '*'):
            if key in optimizer_map:
                routes[slot.name] = optimizer_map[key]
                break
        else:
            raise ConfigurationError(f'no optimizer assigned to {slot.name}')

    plan = TrainingPlan(slots=slots, routes=routes)
    for kind in sorted(set(routes.values())):
        members = [s for s in slots if routes[s.name] == kind]
        if kind == 'sgd':
            plan.optimizers[kind] = SgdOptimizer(members, lr=sgd_lr)
        elif kind == 'adam':
            plan.optimizers[kind] = AdamOptimizer(members, lr=adam_lr)
        else:
            variant_hp = replace(hp,
                                 alpha=hp.alpha if kind in ('rls+m', 'rls+mr') else 0.0,
                                 gamma=hp.gamma if kind in ('rls+r', 'rls+mr') else 0.0)
            plan.optimizers[kind] = RlsOptimizer(members, variant_hp, eta_layers=eta_layers, improved=kind != 'rls')
        logger.info(f'{kind}: {", ".join(s.name for s in members)}')
    return plan
