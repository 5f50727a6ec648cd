import math
import time
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from rlsnet.conf_manager import ConfManager
from rlsnet.dataset_manager import Dataset, DatasetManager
from rlsnet.errors import ConfigurationError, NumericalError
from rlsnet.log_manager import LogManager
from rlsnet.losses import LossKind, LossReport, clip_gradients
from rlsnet.metrics_manager import MetricsManager, MetricsRecord
from rlsnet.network import Network, backward, build_cnn, build_fnn, build_lstm, compute_loss, VGG_BLOCKS
from rlsnet.optimizer_manager import OPTIMIZER_CHOICES, TrainingPlan, hybrid_assign, optimizer_map_for
from rlsnet.rls_optimizer import RlsHyperparams

MODELS = ('fnn', 'cnn', 'lstm')
DATASETS = ('mnist', 'cifar10', 'synth-seq', 'synth-image', 'tokenized-file')
SEQUENCE_DATASETS = ('synth-seq', 'tokenized-file')
LOSSES = ('mse', 'xent')


def _parse_bool(value) -> bool:
    if isinstance(value, str):
        if value.strip().lower() in ('1', 'true', 'yes', 'on'):
            return True
        if value.strip().lower() in ('0', 'false', 'no', 'off', ''):
            return False
        raise ConfigurationError(f'not a boolean: {value!r}')
    return bool(value)


def _parse_int_list(value) -> List[int]:
    if isinstance(value, str):
        value = [v for v in value.replace(' ', '').split(',') if v]
    elif not isinstance(value, (list, tuple)):
        value = [value]
    return [int(v) for v in value]


def _parse_eta_layers(value) -> Dict[str, float]:
    '''
    NAME=F[,NAME=F...] or a mapping.
    '''
    if isinstance(value, dict):
        return {str(k): float(v) for k, v in value.items()}
    items = value if isinstance(value, (list, tuple)) else str(value).split(',')
    out = {}
    for item in items:
        item = str(item).strip()
        if not item:
            continue
        if '=' not in item:
            raise ConfigurationError(f'eta layer entries take NAME=F, got {item!r}')
        name, eta = item.split('=', 1)
        out[name.strip()] = float(eta)
    return out


@dataclass
class ExperimentConfig(object):
    model: str = 'fnn'
    dataset: Optional[str] = None
    optimizer: str = 'rls'
    loss: Optional[str] = None
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    lam: float = 1.0
    k: float = 0.1
    eta: float = 1.0
    eta_layers: Dict[str, float] = field(default_factory=dict)
    alpha: float = 0.5
    gamma: Optional[float] = None
    clip_norm: Optional[float] = None
    subset_size: Optional[int] = None
    test_size: Optional[int] = None
    full_data: bool = False
    data_dir: str = 'data'
    data_file: Optional[str] = None
    hidden: Optional[List[int]] = None
    width: float = 1.0
    image_size: int = 8
    seq_len: int = 20
    vocab: int = 16
    embed_dim: int = 16
    sgd_lr: float = 0.01
    adam_lr: float = 1e-3
    per_step: bool = False
    wall_clock: bool = True
    progress: bool = False
    out: Optional[str] = None
    params_out: Optional[str] = None

    @property
    def loss_kind(self) -> LossKind:
        return LossKind.CROSS_ENTROPY if self.loss == 'xent' else LossKind.MSE_LINEAR

    @property
    def output_activation(self) -> str:
        return 'softmax' if self.loss == 'xent' else 'identity'

    @classmethod
    def coerce(cls, conf: dict) -> dict:
        '''
        Convert raw config values (strings from key=value files, fire-parsed values) to field types.
        '''
        conf = ConfManager.normalize_keys(conf)
        if 'no_wall_clock' in conf:
            conf['wall_clock'] = not _parse_bool(conf.pop('no_wall_clock'))
        if 'eta_layer' in conf:
            conf['eta_layers'] = conf.pop('eta_layer')
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(conf) - known)
        if unknown:
            raise ConfigurationError(f'unknown config keys: {unknown}')

        out = {}
        for key, value in conf.items():
            if value is None:
                out[key] = None
            elif key == 'eta_layers':
                out[key] = _parse_eta_layers(value)
            elif key == 'hidden':
                out[key] = _parse_int_list(value)
            elif key in ('full_data', 'per_step', 'wall_clock', 'progress'):
                out[key] = _parse_bool(value)
            elif key in ('batch_size', 'epochs', 'seed', 'subset_size', 'test_size', 'image_size', 'seq_len',
                         'vocab', 'embed_dim'):
                out[key] = int(value)
            elif key in ('lam', 'k', 'eta', 'alpha', 'gamma', 'clip_norm', 'width', 'sgd_lr', 'adam_lr'):
                out[key] = float(value)
            else:
                out[key] = str(value)
        return out

    @classmethod
    def from_sources(cls, config_path: Optional[str] = None, overrides: Optional[dict] = None) -> 'ExperimentConfig':
        '''
        Field defaults < model defaults < config file < overrides.

        :param config_path: optional .json, .toml or key=value file
        :param overrides: CLI flags
        :return: validated ExperimentConfig
        '''
        conf = {}
        if config_path:
            conf.update(cls.coerce(ConfManager.load_config_file(config_path)))
        conf.update(cls.coerce(dict(overrides or {})))
        # model defaults fill whatever is still unset
        return cls(**conf).validate()

    def validate(self) -> 'ExperimentConfig':
        '''
        Fill model-dependent defaults and enforce the config invariants.
        '''
        if self.model not in MODELS:
            raise ConfigurationError(f'unknown model {self.model}, expected one of {MODELS}')
        defaults = ConfManager.model_defaults(self.model)
        self.dataset = self.dataset or defaults['dataset']
        self.gamma = defaults['gamma'] if self.gamma is None else self.gamma
        self.clip_norm = defaults['clip_norm'] if self.clip_norm is None else self.clip_norm
        self.hidden = list(defaults['hidden']) if self.hidden is None else list(self.hidden)
        if self.loss is None:
            self.loss = 'xent' if self.optimizer == 'hybrid' else 'mse'

        if self.dataset not in DATASETS:
            raise ConfigurationError(f'unknown dataset {self.dataset}, expected one of {DATASETS}')
        if self.optimizer not in OPTIMIZER_CHOICES:
            raise ConfigurationError(f'unknown optimizer {self.optimizer}, expected one of {OPTIMIZER_CHOICES}')
        if self.loss not in LOSSES:
            raise ConfigurationError(f'unknown loss {self.loss}, expected one of {LOSSES}')
        if self.optimizer == 'hybrid' and self.loss != 'xent':
            raise ConfigurationError('hybrid training pairs an Adam output layer with the cross-entropy loss')
        if (self.model == 'lstm') != (self.dataset in SEQUENCE_DATASETS):
            raise ConfigurationError(f'model {self.model} cannot train on dataset {self.dataset}')
        if self.dataset == 'tokenized-file' and not self.data_file:
            raise ConfigurationError('tokenized-file needs data_file')
        if self.batch_size < 1:
            raise ConfigurationError(f'batch size must be >= 1, got {self.batch_size}')
        if self.epochs < 0:
            raise ConfigurationError(f'epochs must be >= 0, got {self.epochs}')
        if not self.clip_norm > 0.0:
            raise ConfigurationError(f'clip norm must be positive, got {self.clip_norm}')
        if not self.width > 0.0:
            raise ConfigurationError(f'width must be positive, got {self.width}')
        self.rls_hyperparams()
        return self

    def rls_hyperparams(self) -> RlsHyperparams:
        return RlsHyperparams(lam=self.lam, k=self.k, eta=self.eta, gamma=self.gamma, alpha=self.alpha)


class ExperimentManager(object):
    def __init__(self):
        self.logger = LogManager.get_logger('ExperimentManager')
        self.dm = DatasetManager()
        self.mm = MetricsManager()

    def load_dataset(self, cfg: ExperimentConfig) -> Dataset:
        '''
        Load the configured dataset, capped to its desk-scale subset unless full_data is set.
        '''
        cap_train, cap_test = (None, None) if cfg.full_data else ConfManager.subset_defaults(cfg.dataset)
        n_train = cfg.subset_size or cap_train
        n_test = cfg.test_size or cap_test

        if cfg.dataset == 'mnist':
            ds = self.dm.load_mnist(cfg.data_dir, flatten=cfg.model == 'fnn')
        elif cfg.dataset == 'cifar10':
            ds = self.dm.load_cifar10(cfg.data_dir)
        elif cfg.dataset == 'synth-seq':
            ds = self.dm.synth_sequence_dataset(cfg.seed, n_train or 4000, cfg.seq_len, cfg.vocab, cfg.embed_dim,
                                                n_test=n_test or 1000)
        elif cfg.dataset == 'synth-image':
            ds = self.dm.synth_image_dataset(cfg.seed, n_train or 4000, (3, cfg.image_size, cfg.image_size),
                                             n_test=n_test or 1000)
        else:
            ds = self.dm.load_tokenized_file(cfg.data_file, cfg.seed, cfg.seq_len, cfg.vocab, cfg.embed_dim)

        ds = ds.subset(n_train, n_test)
        if cfg.model == 'fnn' and ds.x_train.ndim > 2:
            ds.x_train = ds.x_train.reshape(ds.x_train.shape[0], -1)
            ds.x_test = ds.x_test.reshape(ds.x_test.shape[0], -1)
        return ds

    @staticmethod
    def build_model(cfg: ExperimentConfig, ds: Dataset, rng: np.random.Generator) -> Network:
        '''
        Network matching the dataset's input shape; shape errors surface here, before any training step.
        '''
        if cfg.model == 'fnn':
            if ds.x_train.ndim != 2:
                raise ConfigurationError(f'fnn needs flat inputs, got shape {ds.x_train.shape}')
            return build_fnn(rng, [ds.x_train.shape[1]] + list(cfg.hidden) + [ds.n_classes],
                             'relu', cfg.output_activation)
        if cfg.model == 'cnn':
            if ds.x_train.ndim != 4:
                raise ConfigurationError(f'cnn needs M x C x U x V inputs, got shape {ds.x_train.shape}')
            blocks = [[max(1, int(round(c * cfg.width))) for c in block] for block in VGG_BLOCKS]
            return build_cnn(rng, ds.x_train.shape[1:], ds.n_classes, blocks,
                             fc_hidden=cfg.hidden[0] if cfg.hidden else 0,
                             output_activation=cfg.output_activation)
        if ds.x_train.ndim != 3:
            raise ConfigurationError(f'lstm needs M x T x D inputs, got shape {ds.x_train.shape}')
        return build_lstm(rng, ds.x_train.shape[2], cfg.hidden, ds.n_classes, ds.x_train.shape[1],
                          output_activation=cfg.output_activation)

    @staticmethod
    def train_step(net: Network, plan: TrainingPlan, x, target, loss: LossKind, clip_norm: float,
                   timings: Optional[Dict[str, float]] = None) -> LossReport:
        '''
        One minibatch: forward, loss, backward, clipping, then per-slot updates from output to input.
        '''
        z, cache = net.forward(x)
        report = compute_loss(z, target, loss)
        if not math.isfinite(report.value):
            raise NumericalError(f'loss became {report.value}')
        grads = clip_gradients(backward(net, cache, target, loss), clip_norm)
        plan.apply(grads, cache, timings)
        return report

    @staticmethod
    def evaluate(net: Network, x: np.ndarray, labels: np.ndarray, batch_size: int = 1000) -> float:
        '''
        Classification accuracy of argmax over the output at the last output time.
        '''
        if len(labels) == 0:
            return 0.0
        correct = 0
        for start in range(0, len(labels), batch_size):
            z = net.predict(x[start:start + batch_size])
            correct += int(np.sum(z.argmax(axis=1) == labels[start:start + batch_size]))
        return correct / len(labels)

    def run_experiment(self, cfg: ExperimentConfig) -> Tuple[List[MetricsRecord], dict]:
        '''
        Train and evaluate per the config. Deterministic given (cfg, seed) when wall_clock is off.

        :param cfg: experiment config
        :return: (metrics records, summary)
        '''
        cfg.validate()
        self.logger.info(f'experiment: {cfg}')
        init_rng = np.random.default_rng(cfg.seed)
        sample_rng = np.random.default_rng([cfg.seed, 1])

        ds = self.load_dataset(cfg)
        net = self.build_model(cfg, ds, init_rng)
        plan = hybrid_assign(net, optimizer_map_for(cfg.optimizer), cfg.rls_hyperparams(), cfg.eta_layers,
                             sgd_lr=cfg.sgd_lr, adam_lr=cfg.adam_lr)
        loss = cfg.loss_kind

        records, timing_rows = [], []
        # per-step rows carry the latest test accuracy, starting from the untrained model
        last_acc = self.evaluate(net, ds.x_test, ds.y_test) if cfg.per_step else 0.0
        step, start = 0, time.perf_counter()
        for epoch in range(1, cfg.epochs + 1):
            timings = {} if cfg.wall_clock else None
            loss_sum, seen = 0.0, 0
            batches = DatasetManager.minibatches(len(ds.y_train), cfg.batch_size, sample_rng)
            for idx in tqdm(batches, disable=not cfg.progress, desc=f'epoch {epoch}'):
                target = net.make_target(ds.y_train[idx], ds.n_classes, loss)
                report = self.train_step(net, plan, ds.x_train[idx], target, loss, cfg.clip_norm, timings)
                for slot in plan.slots:
                    if not np.all(np.isfinite(slot.params.theta)):
                        raise NumericalError(f'{slot.name} parameters became non-finite at step {step + 1}')
                step += 1
                loss_sum += report.value * len(idx)
                seen += len(idx)
                if cfg.per_step:
                    records.append(MetricsRecord(epoch, step, report.value, last_acc,
                                                 self._wall_ms(cfg, start), per_step=True))

            acc = self.evaluate(net, ds.x_test, ds.y_test)
            last_acc = acc
            train_loss = loss_sum / seen if seen else 0.0
            records.append(MetricsRecord(epoch, step, train_loss, acc, self._wall_ms(cfg, start)))
            self.logger.info(f'epoch {epoch}: step {step}, train_loss {train_loss:.6f}, test_acc {acc:.4f}')
            if timings is not None:
                n_batches = max(1, math.ceil(len(ds.y_train) / cfg.batch_size))
                timing_rows += [{'epoch': epoch, 'slot': name, 'optimizer': plan.routes[name],
                                 'step_ms': ms / n_batches} for name, ms in timings.items()]

        if cfg.out:
            self.mm.emit_metrics(records, cfg.out, per_step=cfg.per_step)
            if cfg.wall_clock:
                self.mm.emit_layer_timings(timing_rows, MetricsManager.timing_path(cfg.out))
        if cfg.params_out:
            net.save(cfg.params_out)

        epoch_records = [r for r in records if not r.per_step]
        summary = {
            'model': cfg.model,
            'dataset': cfg.dataset,
            'optimizer': cfg.optimizer,
            'epochs': cfg.epochs,
            'steps': step,
            'final_train_loss': epoch_records[-1].train_loss if epoch_records else None,
            'final_test_accuracy': epoch_records[-1].test_accuracy if epoch_records else None,
        }
        return records, summary

    @staticmethod
    def _wall_ms(cfg: ExperimentConfig, start: float) -> float:
        return (time.perf_counter() - start) * 1000.0 if cfg.wall_clock else 0.0
