import csv
import os
from dataclasses import dataclass
from typing import Dict, List, Sequence

from rlsnet.errors import RlsnetError
from rlsnet.log_manager import LogManager

METRICS_HEADER = ('epoch', 'step', 'train_loss', 'test_acc', 'wall_ms')
TIMING_HEADER = ('epoch', 'slot', 'optimizer', 'step_ms')


@dataclass(frozen=True)
class MetricsRecord(object):
    epoch: int
    step: int
    train_loss: float
    test_accuracy: float
    wall_ms: float
    per_step: bool = False


def _fmt(value: float) -> str:
    return '%.9g' % value


class MetricsManager(object):
    def __init__(self):
        self.logger = LogManager.get_logger('MetricsManager')

    def emit_metrics(self, records: Sequence[MetricsRecord], path: str, per_step: bool = False) -> str:
        '''
        Write the metrics CSV. Floats carry 9 significant digits.

        :param records: records in (epoch, step) order
        :param path: output path
        :param per_step: also write per-step rows
        :return: path
        '''
        try:
            with open(path, 'w', newline='') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(METRICS_HEADER)
                for r in records:
                    if r.per_step and not per_step:
                        continue
                    writer.writerow((r.epoch, r.step, _fmt(r.train_loss), _fmt(r.test_accuracy), _fmt(r.wall_ms)))
        except OSError as e:
            raise RlsnetError(f'cannot write metrics to {path}: {e}')
        self.logger.info(f'metrics written to {path}')
        return path

    @staticmethod
    def load_metrics(path: str) -> List[MetricsRecord]:
        '''
        Parse a metrics CSV written by emit_metrics. The last row of each epoch is its
        epoch row; any earlier rows of that epoch are per-step rows.
        '''
        with open(path, newline='') as f:
            rows = list(csv.DictReader(f))
        last_row = {int(r['epoch']): i for i, r in enumerate(rows)}
        return [MetricsRecord(epoch=int(r['epoch']),
                              step=int(r['step']),
                              train_loss=float(r['train_loss']),
                              test_accuracy=float(r['test_acc']),
                              wall_ms=float(r['wall_ms']),
                              per_step=last_row[int(r['epoch'])] != i)
                for i, r in enumerate(rows)]

    def emit_layer_timings(self, timings: Sequence[Dict], path: str) -> str:
        '''
        Per-slot optimizer step time, one row per (epoch, slot).

        :param timings: dicts with epoch, slot, optimizer and step_ms
        :param path: output path
        :return: path
        '''
        try:
            with open(path, 'w', newline='') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(TIMING_HEADER)
                for t in timings:
                    writer.writerow((t['epoch'], t['slot'], t['optimizer'], _fmt(t['step_ms'])))
        except OSError as e:
            raise RlsnetError(f'cannot write timings to {path}: {e}')
        self.logger.info(f'layer timings written to {path}')
        return path

    @staticmethod
    def timing_path(metrics_path: str) -> str:
        stem, _ = os.path.splitext(metrics_path)
        return f'{stem}_layer_timing.csv'
