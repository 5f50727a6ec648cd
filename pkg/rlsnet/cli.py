import sys
from typing import List, Sequence

import fire

from rlsnet.bench_manager import BenchManager
from rlsnet.errors import ConfigurationError, RlsnetError
from rlsnet.experiment_manager import ExperimentConfig, ExperimentManager
from rlsnet.gradcheck_manager import GradcheckManager
from rlsnet.log_manager import LogManager

# flags that may repeat; their values are joined with commas
LIST_FLAGS = ('eta-layer',)


class RlsnetCli(object):
    '''
    rlsnet train | gradcheck | bench
    '''

    def __init__(self):
        self.logger = LogManager.get_logger('RlsnetCli')

    def train(self, config: str = None, **flags) -> dict:
        '''
        Train one model per the config file and flags, e.g.
        rlsnet train --model fnn --dataset mnist --optimizer rls --loss mse --epochs 10 --out run.csv

        :param config: optional .json, .toml or key=value config file
        :return: run summary
        '''
        cfg = ExperimentConfig.from_sources(config, flags)
        _, summary = ExperimentManager().run_experiment(cfg)
        return summary

    def gradcheck(self, model: str = 'fnn', seed: int = 0, seeds: int = 1, eps: float = 1e-5) -> float:
        '''
        Max relative error of backward against central finite differences.
        '''
        worst = GradcheckManager().max_error(model, seed, seeds, eps)
        print(f'max relative error: {worst:.3e}')
        return worst

    def bench(self, layer: str = 'fc', n_in: int = 512, n_out: int = 512, batch_size: int = 128,
              seq_len: int = 8, image_size: int = 8, repeats: int = 5, seed: int = 0) -> dict:
        return BenchManager().bench(layer, n_in, n_out, batch_size, seq_len, image_size, repeats, seed)


def merge_repeated_flags(argv: Sequence[str], list_flags: Sequence[str] = LIST_FLAGS) -> List[str]:
    '''
    Fold repeated list flags such as --eta-layer a=1 --eta-layer b=2 into one
    comma separated flag. Any other repeated flag is an error.

    :param argv: command line without the program name
    :return: argv fire can parse without dropping values
    '''
    out, seen, positions, values = [], set(), {}, {}
    args = iter(argv)
    for token in args:
        if token == '--':
            out += [token, *args]
            break
        if not token.startswith('--'):
            out.append(token)
            continue
        name, has_value, value = token[2:].partition('=')
        name = name.replace('_', '-')
        if name not in list_flags:
            if name in seen:
                raise ConfigurationError(f'--{name} given more than once')
            seen.add(name)
            out.append(token)
            continue
        if not has_value:
            value = next(args, None)
            if value is None or value.startswith('--'):
                raise ConfigurationError(f'--{name} needs a NAME=F value')
        if name not in positions:
            positions[name] = len(out)
            out.append(None)
        values.setdefault(name, []).append(value)
    for name, position in positions.items():
        out[position] = f'--{name}=' + ','.join(values[name])
    return out


def main():
    try:
        fire.Fire(RlsnetCli, command=merge_repeated_flags(sys.argv[1:]))
    except RlsnetError as e:
        LogManager.get_logger('RlsnetCli').error(f'{type(e).__name__}: {e}')
        sys.exit(e.exit_code)


if __name__ == '__main__':
    main()
