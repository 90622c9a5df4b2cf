"""Run configuration: defaults, validation and loading from YAML/JSON files."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from gift.backend import BackendSpec
from gift.records import PAIRING_MODES
from gift.sandbox import SandboxLimits

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


@dataclass
class RunConfig:
    backend: BackendSpec = field(default_factory=BackendSpec)
    # defaults to the generation backend when absent (distillation can point it elsewhere)
    scoring_backend: Optional[BackendSpec] = None
    n_rounds: int = 20
    per_step_width: int = 3
    K: int = 8
    T: float = 2.0
    generation_temperature: float = 1.0
    max_tokens: int = 512
    rd_rewrites: int = 5
    rd_codes_per_description: int = 10
    rd_rewrites_from: str = "prompt"
    sandbox: SandboxLimits = field(default_factory=SandboxLimits)
    sandbox_concurrency: int = 4
    chain_parallelism: int = 4
    include_rft_pool: bool = False
    pairing_mode: str = "seed_only"
    extra_descriptions: int = 8
    selection: str = "ppl"
    random_seed: int = 1234
    seed_dataset: Optional[str] = None
    summary_pool: Optional[str] = None
    output_dir: str = "runs"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {"backend": BackendSpec, "scoring_backend": BackendSpec, "sandbox": SandboxLimits}
_PATH_FIELDS = ("seed_dataset", "summary_pool", "output_dir")


def _build(cls, data: dict, prefix: str, errors: list[str]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            log.warning("unknown config field %s%s ignored", prefix, key)
            continue
        if key in _NESTED and cls is RunConfig:
            if value is None:
                kwargs[key] = None
            elif not isinstance(value, dict):
                errors.append(f"{prefix}{key}: expected a mapping")
            else:
                kwargs[key] = _build(_NESTED[key], value, f"{prefix}{key}.", errors)
            continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        errors.append(f"{prefix.rstrip('.') or 'config'}: {e}")
        return None


def _num(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def check(cfg: RunConfig) -> list[str]:
    errors = []

    def need(cond, msg):
        if not cond:
            errors.append(msg)

    need(isinstance(cfg.n_rounds, int) and cfg.n_rounds >= 1, "n_rounds must be ≥ 1")
    need(isinstance(cfg.per_step_width, int) and cfg.per_step_width >= 1, "per_step_width must be ≥ 1")
    need(isinstance(cfg.K, int) and cfg.K >= 1, "K must be ≥ 1")
    need(_num(cfg.T) and cfg.T != 0, "T must be a nonzero number")
    need(_num(cfg.generation_temperature) and cfg.generation_temperature > 0,
         "generation_temperature must be > 0")
    need(isinstance(cfg.max_tokens, int) and cfg.max_tokens >= 1, "max_tokens must be ≥ 1")
    need(isinstance(cfg.rd_rewrites, int) and cfg.rd_rewrites >= 0, "rd_rewrites must be ≥ 0")
    need(isinstance(cfg.rd_codes_per_description, int) and cfg.rd_codes_per_description >= 1,
         "rd_codes_per_description must be ≥ 1")
    need(cfg.rd_rewrites_from in ("prompt", "gibbs1"), "rd_rewrites_from must be 'prompt' or 'gibbs1'")
    need(cfg.pairing_mode in PAIRING_MODES, f"pairing_mode must be one of {PAIRING_MODES}")
    need(cfg.selection in ("ppl", "uniform"), "selection must be 'ppl' or 'uniform'")
    need(isinstance(cfg.sandbox_concurrency, int) and cfg.sandbox_concurrency >= 1, "sandbox_concurrency must be ≥ 1")
    need(isinstance(cfg.chain_parallelism, int) and cfg.chain_parallelism >= 1, "chain_parallelism must be ≥ 1")
    need(isinstance(cfg.extra_descriptions, int) and cfg.extra_descriptions >= 0, "extra_descriptions must be ≥ 0")
    need(isinstance(cfg.random_seed, int), "random_seed must be an integer")
    for name in ("backend", "scoring_backend"):
        spec = getattr(cfg, name)
        if spec is None:
            continue
        need(spec.kind in ("http", "mock"), f"{name}.kind must be 'http' or 'mock'")
        need(isinstance(spec.max_concurrency, int) and spec.max_concurrency >= 1,
             f"{name}.max_concurrency must be ≥ 1")
        need(isinstance(spec.max_retries, int) and spec.max_retries >= 0, f"{name}.max_retries must be ≥ 0")
    return errors


def config_from_dict(data: Optional[dict], base_dir: Union[str, Path, None] = None) -> RunConfig:
    """Build and validate a RunConfig; relative paths resolve against ``base_dir``."""
    data = dict(data or {})
    errors: list[str] = []
    cfg = _build(RunConfig, data, "", errors)
    if cfg is not None:
        errors.extend(check(cfg))
    if errors:
        raise ConfigError(errors)
    if base_dir is not None:
        base = Path(base_dir)
        for name in _PATH_FIELDS:
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str(base / value))
        for spec in (cfg.backend, cfg.scoring_backend):
            if spec is not None and isinstance(spec.mock.get("book"), str) and not Path(spec.mock["book"]).is_absolute():
                spec.mock = {**spec.mock, "book": str(base / spec.mock["book"])}
    return cfg


def validate_config(path: Union[str, Path]) -> RunConfig:
    """Load ``path`` (YAML or JSON), fill defaults and check every invariant.

    Raises ConfigError listing each violation with its field path. Unknown
    fields only produce a warning.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError([f"{path}: not valid YAML/JSON: {e}"]) from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return config_from_dict(data, base_dir=path.parent)


def config_snapshot(cfg: RunConfig) -> dict[str, Any]:
    return cfg.to_dict()
