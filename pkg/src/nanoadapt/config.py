"""Strict JSON run configuration shared by all CLI subcommands."""

import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .exceptions import ConfigError
from .frontend import FrontendConfig
from .nta import NtaConfig
from .training import ToyTaskConfig


@dataclass
class PathsConfig:
    out_dir: str = "."


@dataclass
class RunConfig:
    seed: int = 0
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    nta: NtaConfig = field(default_factory=NtaConfig)
    toy: ToyTaskConfig = field(default_factory=ToyTaskConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.frontend.validate()
        self.nta.validate()
        expected = self.frontend.embed_dim * self.frontend.shuffle_rate ** 2
        if self.nta.dim_d != expected:
            raise ConfigError(f"nta.dim_d={self.nta.dim_d} must equal embed_dim * r^2 = {expected}")
        grid = self.frontend.vit_region_h // self.frontend.patch_size // self.frontend.shuffle_rate
        grid_w = self.frontend.vit_region_w // self.frontend.patch_size // self.frontend.shuffle_rate
        if grid % 2 or grid_w % 2:
            raise ConfigError(f"compressed grid {grid}x{grid_w} must be even for the adaptor")
        if self.nta.pooled_count >= grid * grid_w:
            raise ConfigError("pooled query count must be below the per-slice token count")
        return self


def from_dict(cls, obj, where="config"):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in obj.items():
        typ = hints[name]
        if dataclasses.is_dataclass(typ):
            kwargs[name] = from_dict(typ, value, f"{where}.{name}")
        elif typ is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{name}: expected a boolean")
            kwargs[name] = value
        elif typ in (int, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or (typ is int and not isinstance(value, int)):
                raise ConfigError(f"{where}.{name}: expected {typ.__name__}")
            kwargs[name] = typ(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path=None):
    if path is None:
        return RunConfig().validate()
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(RunConfig, obj).validate()


def to_dict(config):
    return dataclasses.asdict(config)
