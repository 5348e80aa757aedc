import hashlib
import json
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Sequence

import numpy as np
import yaml
from yaml.parser import ParserError
from yaml.scanner import ScannerError

from dfc2bp.babbling import BabblingConfig
from dfc2bp.dynamics import RobotParams
from dfc2bp.errors import ConfigurationError
from dfc2bp.imi import IMIConfig
from dfc2bp.irm import IRMHyper
from dfc2bp.nnmf import NNMFConfig
from dfc2bp.sensory import SensorConfig

# Spawn keys of the independent random streams derived from the run seed
SEED_STREAMS = {"tactile": 0, "babbling": 1, "irm": 2, "nnmf": 3}


class SimConfig(NamedTuple):
    duration: float = 30.0
    dt: float = 0.001
    robot: RobotParams = RobotParams()

    @property
    def rate(self) -> float:
        return 1.0 / self.dt

    @property
    def n_frames(self) -> int:
        return int(round(self.duration / self.dt))

    def validate(self):
        if self.duration <= 0 or self.dt <= 0:
            raise ConfigurationError("sim.duration and sim.dt must be positive")
        self.robot.validate()
        return self


class RunConfig(NamedTuple):
    seed: int = 0
    sim: SimConfig = SimConfig()
    sensors: SensorConfig = SensorConfig()
    babbling: BabblingConfig = BabblingConfig()
    imi: IMIConfig = IMIConfig()
    irm: IRMHyper = IRMHyper()
    nnmf: NNMFConfig = NNMFConfig()
    output_dir: str = "run"
    workers: int = 1

    def validate(self):
        for section in ("sim", "sensors", "babbling", "imi", "irm", "nnmf"):
            try:
                getattr(self, section).validate()
            except ConfigurationError:
                raise
            except ValueError as e:
                raise ConfigurationError(f"{section}: {e}") from e
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")
        ratio = self.sim.rate / self.imi.analysis_rate
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigurationError(
                f"the simulation rate {self.sim.rate:g} Hz is not a multiple of "
                f"imi.analysis_rate {self.imi.analysis_rate:g} Hz"
            )
        return self

    def stage_seed(self, stream: str) -> int:
        """Seed of one independent random stream; explicit section seeds win."""
        explicit = getattr(getattr(self, stream, None), "seed", None)
        if explicit is not None:
            return int(explicit)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=(SEED_STREAMS[stream],))
        return int(sequence.generate_state(1, dtype=np.uint32)[0])


def _is_namedtuple(value) -> bool:
    return isinstance(value, tuple) and hasattr(value, "_fields")


def _coerce(default, value, key: str):
    if _is_namedtuple(default):
        if not isinstance(value, dict):
            raise ConfigurationError(f"{key} must be a mapping")
        return _build(type(default), value, key, default)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{key} must be a list")
        if default and _is_namedtuple(default[0]):
            return tuple(
                _coerce(default[min(index, len(default) - 1)], item, f"{key}.{index}")
                for index, item in enumerate(value)
            )
        return tuple(
            tuple(item) if isinstance(item, list) else item for item in value
        )
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key} must be true or false")
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, int) and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(default, str) and isinstance(value, str):
        return value
    if default is None:
        return tuple(value) if isinstance(value, list) else value
    raise ConfigurationError(f"{key} has an invalid value {value!r}")


def _build(cls, data: Dict[str, Any], prefix: str = "", base=None):
    base = base if base is not None else cls()
    values = {}
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else str(key)
        if key not in cls._fields:
            raise ConfigurationError(f"unknown configuration key {dotted}")
        values[key] = _coerce(getattr(base, key), value, dotted)
    return base._replace(**values)


def config_from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("the configuration file must contain a mapping")
    return _build(RunConfig, data)


def to_dict(value) -> Any:
    if _is_namedtuple(value):
        return {field: to_dict(getattr(value, field)) for field in value._fields}
    if isinstance(value, (list, tuple)):
        return [to_dict(item) for item in value]
    return value


def load_config(
    path: Optional[Path] = None,
    seed: Optional[int] = None,
    output_dir: Optional[Path] = None,
) -> RunConfig:
    data = None
    if path is not None:
        try:
            with open(path) as config_file:
                data = yaml.safe_load(config_file)
        except FileNotFoundError:
            raise ConfigurationError(f"configuration file {path} does not exist")
        except (ParserError, ScannerError) as e:
            raise ConfigurationError(f"configuration file {path} is not valid YAML: {e}")
    config = config_from_dict(data)
    if seed is not None:
        config = config._replace(seed=seed)
    if output_dir is not None:
        config = config._replace(output_dir=str(output_dir))
    return config.validate()


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False, default_flow_style=None)


def config_hash(config: RunConfig, sections: Optional[Sequence[str]] = None) -> str:
    """sha1 of the canonical JSON of the whole configuration or of some sections."""
    data = to_dict(config)
    if sections is not None:
        data = {section: data[section] for section in sections}
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha1(canonical.encode()).hexdigest()
