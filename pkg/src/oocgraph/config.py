"""Run configuration with file < environment < flag precedence."""
from __future__ import annotations

import configparser
import json
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from .runtime import EngineConfig

ENV_PREFIX = "OOCGRAPH_"

_SIZE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([kmgt]?)(i?b?)\s*$", re.I)


class ConfigError(ValueError):
    pass


def parse_size(text) -> int:
    """``"32M"``, ``"32MiB"``, ``"1.5g"`` or a plain byte count (binary units)."""
    if isinstance(text, int):
        return text
    m = _SIZE.match(str(text))
    if not m:
        raise ConfigError(f"cannot parse size {text!r}")
    mult = {"": 1, "k": 1 << 10, "m": 1 << 20, "g": 1 << 30, "t": 1 << 40}[m.group(2).lower()]
    return int(float(m.group(1)) * mult)


# Engine keys that may come from a config file, the environment, or flags.
ENGINE_KEYS = {
    "memory_budget_bytes": parse_size,
    "threads": int,
    "dispatch_cost_factor": float,
    "filter_skip_ratio": float,
    "gamma": int,
    "checkpoints_keep": int,
    "pipeline_queue_depth": int,
}


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper()


def load_engine_settings(path: Optional[str] = None, env: Optional[Mapping[str, str]] = None,
                         flags: Optional[Mapping[str, object]] = None) -> Dict[str, object]:
    """Merge engine settings; later sources win (file, then env, then flags)."""
    out: Dict[str, object] = {}
    if path:
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        if cp.has_section("engine"):
            for k, v in cp.items("engine"):
                if k not in ENGINE_KEYS:
                    raise ConfigError(f"{path}: unknown engine key {k!r}")
                out[k] = _convert(k, v)
    env = os.environ if env is None else env
    for k in ENGINE_KEYS:
        if env_name(k) in env:
            out[k] = _convert(k, env[env_name(k)])
    for k, v in (flags or {}).items():
        if v is not None:
            if k not in ENGINE_KEYS:
                raise ConfigError(f"unknown engine key {k!r}")
            out[k] = _convert(k, v)
    return out


def _convert(key, value):
    try:
        return ENGINE_KEYS[key](value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {value!r}") from e


TEST_ONLY = ("force_dispatch", "force_filter", "fault", "inject_oversend")


@dataclass
class RunConfig:
    graph: str
    steps: List[Tuple[str, dict]]
    work_dir: str
    output_dir: str
    local_nodes: Optional[int] = None
    hostfile: Optional[str] = None
    rank: Optional[int] = None
    engine: EngineConfig = field(default_factory=EngineConfig)
    metrics: Optional[str] = None
    recover: bool = False
    testing: bool = False
    connect_timeout: float = 30.0

    def validate(self):
        if not self.steps:
            raise ConfigError("no algorithm given")
        if (self.local_nodes is None) == (self.hostfile is None):
            raise ConfigError("give exactly one of --local-nodes or --hostfile")
        if self.local_nodes is not None and self.local_nodes < 1:
            raise ConfigError("--local-nodes must be >= 1")
        if not self.testing:
            for k in TEST_ONLY:
                default = getattr(EngineConfig, k, None)
                if getattr(self.engine, k) not in (None, False, default):
                    raise ConfigError(f"{k} is a test override; pass --testing to enable it")
        return self

    def output_names(self) -> List[str]:
        names = [n for n, _ in self.steps]
        return [n if names.count(n) == 1 else f"{n}_{k}" for k, n in enumerate(names)]

    def to_json(self) -> dict:
        d = asdict(self)
        d["steps"] = [[n, p] for n, p in self.steps]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["engine"] = EngineConfig(**d["engine"])
        d["steps"] = [(n, p) for n, p in d["steps"]]
        return cls(**d)

    def save(self, path: str):
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(self.to_json(), f, indent=1)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path) as f:
            return cls.from_json(json.load(f))
