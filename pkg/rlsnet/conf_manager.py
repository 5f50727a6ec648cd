import os

import toml
import ujson as json

from rlsnet.errors import ConfigurationError
from rlsnet.log_manager import LogManager

CONF_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'conf')

# CLI spellings that differ from ExperimentConfig field names
KEY_ALIASES = {'lambda': 'lam', 'clip': 'clip_norm', 'subset': 'subset_size'}


class ConfManager(object):

    @staticmethod
    def load_json_to_dict(filename: str) -> dict:
        """

        :param filename: json file name under the package conf directory, or a path
        :return: dict
        """

        logger = LogManager.get_logger('ConfManager')

        path = filename if os.path.exists(filename) else os.path.join(CONF_DIR, filename)
        try:
            with open(path) as f:
                return json.load(f)
        except (OSError, ValueError) as e:
            logger.info(f'error {e}')
            raise ConfigurationError(f'cannot load {path}: {e}')

    @staticmethod
    def load_toml_to_dict(path: str) -> dict:
        """

        :param path: toml file path
        :return: dict
        """
        try:
            return toml.load(path)
        except (OSError, toml.TomlDecodeError) as e:
            raise ConfigurationError(f'cannot load {path}: {e}')

    @staticmethod
    def load_key_value_to_dict(path: str) -> dict:
        """
        Flat key=value file. Blank lines and lines starting with # are ignored.

        :param path: file path
        :return: dict of raw string values
        """
        conf = {}
        try:
            with open(path) as f:
                lines = f.readlines()
        except OSError as e:
            raise ConfigurationError(f'cannot load {path}: {e}')
        for no, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise ConfigurationError(f'{path}:{no}: expected key=value, got {line!r}')
            key, value = line.split('=', 1)
            conf[key.strip()] = value.strip()
        return conf

    @staticmethod
    def load_config_file(path: str) -> dict:
        """
        Load an experiment config from .json, .toml or a flat key=value file.

        :param path: config file path
        :return: dict with normalized keys
        """
        ext = os.path.splitext(path)[1].lower()
        if ext == '.json':
            conf = ConfManager.load_json_to_dict(path)
        elif ext == '.toml':
            conf = ConfManager.load_toml_to_dict(path)
        else:
            conf = ConfManager.load_key_value_to_dict(path)
        LogManager.get_logger('ConfManager').info(f'config loaded from {path}')
        return ConfManager.normalize_keys(conf)

    @staticmethod
    def normalize_keys(conf: dict) -> dict:
        """
        CLI spelling to field names: '-' becomes '_' and aliases such as lambda -> lam apply.
        """
        out = {}
        for key, value in conf.items():
            key = str(key).strip().lstrip('-').replace('-', '_')
            out[KEY_ALIASES.get(key, key)] = value
        return out

    @staticmethod
    def model_defaults(model: str) -> dict:
        """

        :param model: fnn, cnn or lstm
        :return: per-model defaults
        """
        defaults = ConfManager.load_json_to_dict('model_defaults.json')
        if model not in defaults:
            raise ConfigurationError(f'unknown model {model}')
        return dict(defaults[model])

    @staticmethod
    def subset_defaults(dataset: str) -> tuple:
        """

        :param dataset: dataset name
        :return: (train cap, test cap)
        """
        caps = ConfManager.load_json_to_dict('model_defaults.json')['subset']
        return tuple(caps.get(dataset, (None, None)))
