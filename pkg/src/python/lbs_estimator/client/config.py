import json
import os.path

from typing import Any, Optional, Tuple

from lbs_estimator.types.common import LbsMode

Box = Tuple[float, float, float, float]

SUPPORTED_SCHEMA_VERSION = 1


class OracleConfig:
    """
    Interface limits of the simulated location based service: the top-k restriction, whether locations are
    returned, an optional maximum radius on returned results and an optional query budget.

    .. seealso:: :func:`load_oracle_config`: utility function to load configs from local files
    """
    def __init__(self, config: Any, config_path: str = '<inline>'):
        """
        Builds an oracle configuration from a parsed JSON object.

        :param config: a parsed JSON object with keys schemaVersion, k, mode and optionally maxRadius,
            budget and region (a list [xmin, ymin, xmax, ymax])
        :param config_path: for error messages -- the path from which the JSON was loaded
        """
        schema_version = OracleConfig._validate_config_json(config, config_path)

        self.schema_version = schema_version
        self.k = int(config['k'])
        self.mode = LbsMode[config['mode'].upper()]
        self.max_radius = _optional_float(config.get('maxRadius'))
        self.budget = None if config.get('budget') is None else int(config['budget'])
        self.region = None if config.get('region') is None else tuple(float(v) for v in config['region'])

        if self.k < 1:
            raise ValueError(f'{config_path}: k must be >= 1; got {self.k}')
        if self.max_radius is not None and not self.max_radius > 0.0:
            raise ValueError(f'{config_path}: maxRadius must be > 0; got {self.max_radius}')
        if self.budget is not None and self.budget < 0:
            raise ValueError(f'{config_path}: budget must be >= 0; got {self.budget}')
        if self.region is not None:
            if len(self.region) != 4 or not (self.region[2] > self.region[0] and self.region[3] > self.region[1]):
                raise ValueError(f'{config_path}: region must be [xmin, ymin, xmax, ymax]; got {self.region}')

    @staticmethod
    def create(k: int, mode: LbsMode = LbsMode.LR, max_radius: Optional[float] = None,
               budget: Optional[int] = None, region: Optional[Box] = None) -> 'OracleConfig':
        """
        Builds a validated configuration directly from values rather than a JSON document.
        """
        config = {'schemaVersion': SUPPORTED_SCHEMA_VERSION, 'k': k, 'mode': mode.value}
        if max_radius is not None:
            config['maxRadius'] = max_radius
        if budget is not None:
            config['budget'] = budget
        if region is not None:
            config['region'] = list(region)
        return OracleConfig(config)

    def to_json(self) -> Any:
        config = {'schemaVersion': self.schema_version, 'k': self.k, 'mode': self.mode.value}
        if self.max_radius is not None:
            config['maxRadius'] = self.max_radius
        if self.budget is not None:
            config['budget'] = self.budget
        if self.region is not None:
            config['region'] = list(self.region)
        return config

    @staticmethod
    def _validate_config_json(config: Any, config_path: str) -> int:
        """
        Validates an oracle config JSON and ensures it matches the schema

        :param config: raw config JSON object
        :param config_path: file path from which the JSON was loaded; for error messages
        :return: the schema version loaded (currently only 1)
        """
        required_keys = ['schemaVersion', 'k', 'mode']
        if not all(key in config for key in required_keys):
            raise ValueError(f'{config_path} invalid. Required keys: {required_keys}; got: {list(config.keys())}')
        schema_version = config['schemaVersion']
        if schema_version != SUPPORTED_SCHEMA_VERSION:
            raise ValueError(f'At this time only schemaVersion == {SUPPORTED_SCHEMA_VERSION} is supported; '
                             f'{config_path} is version {schema_version}')
        if str(config['mode']).upper() not in LbsMode.__members__:
            raise ValueError(f'{config_path}: mode must be one of {list(LbsMode.__members__)}; got {config["mode"]}')
        return schema_version


def load_oracle_config(config_id: str, config_dir: str = None) -> OracleConfig:
    """
    Helper function that reads a JSON oracle config file from `$HOME/.lbs/${config_id}.json`.

    :param config_id: short name of a configuration to load from `$HOME/.lbs`
    :param config_dir: optional override to load from a directory other than `$HOME/.lbs`
    :return: a populated, validated `OracleConfig` object to use with `KnnOracle`
    """
    if not config_dir:
        home_dir = os.path.expanduser('~')
        config_dir = os.path.join(home_dir, '.lbs')
    config_path = os.path.join(config_dir, f'{config_id}.json')

    with open(config_path) as config_file:
        config = json.load(config_file)

    return OracleConfig(config, config_path)


def _optional_float(value: Any) -> Optional[float]:
    return None if value is None else float(value)
