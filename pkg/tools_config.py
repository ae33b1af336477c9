import dataclasses
import logging
import typing
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import yaml

from tools_calculate import RESIDUAL_MODES
from tools_explain import parse_target

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = 'config_resolved.yaml'


class ConfigError(ValueError):
    """Invalid run configuration.

    Attributes:
        key (str): Dotted name of the offending key, e.g. 'ocsvm.nu'.
    """

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class DatasetConfig:
    path: str
    format: str = 'csv'


@dataclass(frozen=True)
class AutoencoderConfig:
    hidden_dim: int = 32
    latent_dim: int = 16
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_grad_norm: Optional[float] = None


@dataclass(frozen=True)
class OcsvmSection:
    nu: float = 0.05
    gamma: Optional[float] = None
    tolerance: float = 1e-4
    max_iterations: int = 1_000_000


@dataclass(frozen=True)
class ExplainConfig:
    n_baselines: int = 100
    n_samples: int = 200
    target: str = 'surrogate'


@dataclass(frozen=True)
class GridSearchConfig:
    candidate_sizes: Tuple[int, ...] = (4, 8, 16, 32)
    validation_fraction: float = 0.2
    n_jobs: int = 1


@dataclass(frozen=True)
class RunConfig:
    """
    Fully resolved settings of one run. Only dataset.path is required in the YAML file.
    """
    dataset: DatasetConfig
    window_size: int = 8
    train_fraction: float = 0.8
    residual_mode: str = 'aggregated'
    seed: int = 0
    output_dir: str = 'output'
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    ocsvm: OcsvmSection = field(default_factory=OcsvmSection)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    gridsearch: GridSearchConfig = field(default_factory=GridSearchConfig)


def _coerce(key: str, value, hint):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        if value is None:
            return None
        inner = next(arg for arg in typing.get_args(hint) if arg is not type(None))
        return _coerce(key, value, inner)
    if origin is tuple:
        if not isinstance(value, list) or not value:
            raise ConfigError(key, "expected a non-empty list")
        return tuple(_coerce(key, item, int) for item in value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot, such as 1e-3, as strings
            try:
                number = float(value)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {value!r}") from None
        elif isinstance(value, (int, float)):
            number = float(value)
        else:
            raise ConfigError(key, f"expected a number, got {value!r}")
        if not np.isfinite(number):
            raise ConfigError(key, f"expected a finite number, got {value!r}")
        return number
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config type {hint!r}")


def _build(cls, data, prefix: str = ''):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip('.'), "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{prefix}{key}", "unknown key")

    values = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(hints[f.name]):
            if f.name in data or f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                values[f.name] = _build(hints[f.name], data.get(f.name), f"{key}.")
            continue
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(key, "missing required key")
            continue
        values[f.name] = _coerce(key, data[f.name], hints[f.name])
    return cls(**values)


def _require(condition: bool, key: str, message: str):
    if not condition:
        raise ConfigError(key, message)


def validate_config(config: RunConfig) -> RunConfig:
    """Range checks; raises ConfigError naming the first offending key."""
    _require(config.dataset.format in ('csv', 'arff'), 'dataset.format', "must be 'csv' or 'arff'")
    _require(bool(config.dataset.path), 'dataset.path', "must not be empty")
    _require(config.window_size >= 1, 'window_size', "must be >= 1")
    _require(0 < config.train_fraction < 1, 'train_fraction', "must lie in (0, 1)")
    _require(config.residual_mode in RESIDUAL_MODES, 'residual_mode', f"must be one of {RESIDUAL_MODES}")
    _require(config.seed >= 0, 'seed', "must be >= 0")

    ae = config.autoencoder
    _require(ae.hidden_dim >= 1, 'autoencoder.hidden_dim', "must be >= 1")
    _require(ae.latent_dim >= 1, 'autoencoder.latent_dim', "must be >= 1")
    _require(ae.epochs >= 0, 'autoencoder.epochs', "must be >= 0")
    _require(ae.learning_rate > 0, 'autoencoder.learning_rate', "must be > 0")
    _require(ae.batch_size >= 1, 'autoencoder.batch_size', "must be >= 1")
    _require(ae.max_grad_norm is None or ae.max_grad_norm > 0, 'autoencoder.max_grad_norm', "must be > 0")

    svm = config.ocsvm
    _require(0 < svm.nu <= 1, 'ocsvm.nu', "must lie in (0, 1]")
    _require(svm.gamma is None or svm.gamma > 0, 'ocsvm.gamma', "must be > 0")
    _require(svm.tolerance > 0, 'ocsvm.tolerance', "must be > 0")
    _require(svm.max_iterations >= 1, 'ocsvm.max_iterations', "must be >= 1")

    _require(config.explain.n_baselines >= 1, 'explain.n_baselines', "must be >= 1")
    _require(config.explain.n_samples >= 1, 'explain.n_samples', "must be >= 1")
    try:
        parse_target(config.explain.target)
    except ValueError as e:
        raise ConfigError('explain.target', str(e)) from None

    grid = config.gridsearch
    _require(all(size >= 1 for size in grid.candidate_sizes), 'gridsearch.candidate_sizes', "sizes must be >= 1")
    _require(0 < grid.validation_fraction < 1, 'gridsearch.validation_fraction', "must lie in (0, 1)")
    _require(grid.n_jobs != 0, 'gridsearch.n_jobs', "must not be 0")
    return config


def parse_config(data) -> RunConfig:
    """Build and validate a RunConfig from an already-parsed YAML document."""
    return validate_config(_build(RunConfig, data))


def load_config(path: str) -> RunConfig:
    """
    Strictly parse a YAML run configuration.

    Args:
        path (str): Path to the YAML file.

    Returns:
        RunConfig: Configuration with documented defaults filled in.

    Raises:
        ConfigError: Unreadable file, unknown key, wrong type, out-of-range value or missing dataset.path.
    """
    try:
        with open(path) as file:
            data = yaml.safe_load(file)
    except OSError as e:
        raise ConfigError('', f"cannot read config file {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError('', f"invalid YAML in {path}: {e}") from None
    config = parse_config(data)
    logger.info("Loaded configuration from %s", path)
    return config


def config_to_dict(config: RunConfig) -> dict:
    def plain(value):
        if isinstance(value, dict):
            return {key: plain(item) for key, item in value.items()}
        if isinstance(value, tuple):
            return [plain(item) for item in value]
        return value
    return plain(dataclasses.asdict(config))


def dump_config(config: RunConfig, output_file: str):
    """Echo the resolved configuration; load_config(output_file) gives back an equal RunConfig."""
    with open(output_file, 'w') as file:
        yaml.safe_dump(config_to_dict(config), file, sort_keys=False)
    logger.info("Resolved configuration saved to %s", output_file)


def with_overrides(config: RunConfig, seed: int = None, window_size: int = None, output_dir: str = None,
                   format_tag: str = None) -> RunConfig:
    """Apply command-line overrides and re-validate."""
    updates = {}
    if seed is not None:
        updates['seed'] = seed
    if window_size is not None:
        updates['window_size'] = window_size
    if output_dir is not None:
        updates['output_dir'] = output_dir
    if format_tag is not None:
        updates['dataset'] = dataclasses.replace(config.dataset, format=format_tag)
    return validate_config(dataclasses.replace(config, **updates))
