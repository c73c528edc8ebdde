import copy
import json
import os.path

from typing import Any, Dict, Optional

import humps

from lbs_estimator.client.config import OracleConfig
from lbs_estimator.types.cells import LrCellOptions, VarianceReductionPolicy
from lbs_estimator.types.common import (AggregateKind, AggregateSpec, AttributeCondition, Condition,
                                        LocationCondition, Operator)
from lbs_estimator.types.estimates import DensityGrid, EstimatorOptions
from lbs_estimator.types.geometry import Point2

SUPPORTED_SCHEMA_VERSION = 1
SAMPLERS = ('uniform', 'weighted')


class RunConfig:
    """
    Everything one command-line run needs: the dataset, the service limits, the aggregate, the sampler and
    the knobs of the cell computations. Loaded from a JSON document with camelCase keys, for example::

        {
            "schemaVersion": 1,
            "dataset": "points.csv",
            "oracle": {"schemaVersion": 1, "k": 3, "mode": "LR", "budget": 20000},
            "aggregate": {"kind": "SUM", "attr": "weight"},
            "sampler": "uniform",
            "policy": {"fastInit": true, "history": true, "adaptiveH": true, "monteCarlo": true},
            "seed": 7,
            "repetitions": 1
        }

    .. seealso:: :func:`load_run_config`: loads a run configuration from a file, with overrides
    """
    def __init__(self, config: Any, config_path: str = '<inline>', base_dir: Optional[str] = None):
        """
        :param config: parsed JSON object, camelCase keys
        :param config_path: for error messages -- the path from which the JSON was loaded
        :param base_dir: directory relative file paths are resolved against
        """
        RunConfig._validate_config_json(config, config_path)
        base_dir = base_dir if base_dir is not None else os.getcwd()
        cfg = humps.decamelize(config)

        self.schema_version = cfg['schema_version']
        self.dataset_path = _resolve(cfg['dataset'], base_dir, config_path)
        self.oracle = OracleConfig(config['oracle'], config_path)
        self.aggregate = _parse_aggregate(cfg['aggregate'], config_path)
        self.sampler = cfg.get('sampler', 'uniform')
        self.density_path = _resolve(cfg['density'], base_dir, config_path) if cfg.get('density') else None
        self.seed = int(cfg.get('seed', 0))
        self.repetitions = int(cfg.get('repetitions', 1))
        self.max_samples = None if cfg.get('max_samples') is None else int(cfg['max_samples'])
        self.workers = int(cfg.get('workers', 1))

        policy = cfg.get('policy', {}) or {}
        self.fast_init = bool(policy.get('fast_init', True))
        self.fast_init_halfwidth = _optional_float(policy.get('fast_init_halfwidth'))
        self.use_history = bool(policy.get('history', True))
        self.monte_carlo = bool(policy.get('monte_carlo', True))
        self.mc_gamma = float(policy.get('mc_gamma', 0.1))
        self.adaptive_h = bool(policy.get('adaptive_h', True))
        self.lambda0 = _optional_float(policy.get('lambda0'))
        self.fixed_h = None if policy.get('fixed_h') is None else int(policy['fixed_h'])
        self.epsilon = _optional_float(policy.get('epsilon'))
        self.per_sample_cap = int(policy.get('per_sample_cap', 500))

        if self.sampler not in SAMPLERS:
            raise ValueError(f'{config_path}: sampler must be one of {list(SAMPLERS)}; got {self.sampler}')
        if self.repetitions < 1:
            raise ValueError(f'{config_path}: repetitions must be >= 1; got {self.repetitions}')
        if self.per_sample_cap < 1:
            raise ValueError(f'{config_path}: perSampleCap must be >= 1; got {self.per_sample_cap}')
        if self.lambda0 is not None and not self.lambda0 > 0.0:
            raise ValueError(f'{config_path}: lambda0 must be > 0; got {self.lambda0}')
        if self.epsilon is not None and not self.epsilon > 0.0:
            raise ValueError(f'{config_path}: epsilon must be > 0; got {self.epsilon}')
        if self.fixed_h is not None and not 1 <= self.fixed_h <= self.oracle.k:
            raise ValueError(f'{config_path}: fixedH must be in [1, {self.oracle.k}]; got {self.fixed_h}')

        self._raw = copy.deepcopy(config)

    def lr_options(self) -> LrCellOptions:
        return LrCellOptions(use_history=self.use_history, fast_init=self.fast_init,
                             fast_init_halfwidth=self.fast_init_halfwidth, monte_carlo=self.monte_carlo,
                             mc_gamma=self.mc_gamma)

    def policy(self) -> VarianceReductionPolicy:
        return VarianceReductionPolicy(self.lambda0, self.adaptive_h)

    def estimator_options(self, density: Optional[DensityGrid] = None, repetition: int = 0) -> EstimatorOptions:
        """
        Builds the estimator knobs of one repetition; repetitions differ only in their seed.
        """
        return EstimatorOptions(seed=self.seed + repetition, max_samples=self.max_samples,
                                per_sample_cap=self.per_sample_cap, workers=self.workers,
                                lr_options=self.lr_options(), policy=self.policy(), fixed_h=self.fixed_h,
                                epsilon=self.epsilon, density=density)

    def to_json(self) -> Any:
        return copy.deepcopy(self._raw)

    @staticmethod
    def _validate_config_json(config: Any, config_path: str):
        required_keys = ['schemaVersion', 'dataset', 'oracle', 'aggregate']
        if not isinstance(config, dict) or not all(key in config for key in required_keys):
            got = list(config.keys()) if isinstance(config, dict) else type(config).__name__
            raise ValueError(f'{config_path} invalid. Required keys: {required_keys}; got: {got}')
        if config['schemaVersion'] != SUPPORTED_SCHEMA_VERSION:
            raise ValueError(f'At this time only schemaVersion == {SUPPORTED_SCHEMA_VERSION} is supported; '
                             f'{config_path} is version {config["schemaVersion"]}')


def load_run_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Helper function that reads a JSON run configuration, applies command-line overrides and validates it.
    Relative paths inside the file are resolved against the file's directory.

    :param path: path to the JSON file
    :param overrides: values replacing those in the file; keys may be camelCase or snake_case and use dots
        for nested keys, e.g. `oracle.k` or `policy.fast_init`
    :return: the validated configuration
    """
    with open(path) as config_file:
        config = json.load(config_file)
    for key, value in (overrides or {}).items():
        apply_override(config, key, value)
    return RunConfig(config, path, os.path.dirname(os.path.abspath(path)))


def apply_override(config: Dict[str, Any], key: str, value: Any):
    """
    Sets a possibly nested key of a camelCase config document, creating intermediate objects as needed.
    """
    parts = [humps.camelize(part) for part in key.split('.')]
    node = config
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _parse_aggregate(agg: Dict[str, Any], config_path: str) -> AggregateSpec:
    kind = str(agg.get('kind', '')).upper()
    if kind not in AggregateKind.__members__:
        raise ValueError(f'{config_path}: aggregate kind must be one of {list(AggregateKind.__members__)}; '
                         f'got {agg.get("kind")}')
    condition = _parse_condition(agg['condition'], config_path) if agg.get('condition') else None
    return AggregateSpec(AggregateKind[kind], agg.get('attr'), condition)


def _parse_condition(condition: Dict[str, Any], config_path: str) -> Condition:
    if 'feature' in condition:
        feature = tuple(Point2(float(x), float(y)) for x, y in condition['feature'])
        return LocationCondition(feature, float(condition['max_distance']))
    op = str(condition.get('op', '')).upper()
    if op not in Operator.__members__:
        raise ValueError(f'{config_path}: condition op must be one of {list(Operator.__members__)}; got {op}')
    return AttributeCondition(condition['attr'], Operator[op], condition['value'],
                              bool(condition.get('pass_through', True)))


def _resolve(path: str, base_dir: str, config_path: str) -> str:
    resolved = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(resolved):
        raise ValueError(f'{config_path}: file not found: {path}')
    return resolved


def _optional_float(value: Any) -> Optional[float]:
    return None if value is None else float(value)
