"""Run configuration: defaults, validation, file loading and hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Optional

MODES = ("ttsr", "ttrl", "frozen", "no_teacher_update", "no_sim_penalty")
BACKENDS = ("toy", "remote")

# Short names accepted in config files, mapped onto attribute names.
ALIASES = {
    "G": "group_size",
    "M": "n_variants",
    "M_fail": "max_failed",
    "T": "n_iterations",
    "epsilon": "clip_eps",
    "beta": "kl_coef",
    "delta": "adv_eps",
    "lambda": "sim_penalty",
    "tau": "sim_threshold",
    "url": "endpoint_url",
    "model": "model_name",
    "concurrency_cap": "concurrency",
    "batch": "batch_size",
}


class ConfigError(ValueError):
    """Raised with every violated constraint listed in ``errors``."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    group_size: int = 8
    n_variants: int = 4
    max_failed: Optional[int] = None  # filled with n_variants
    n_iterations: int = 20
    batch_size: int = 16
    clip_eps: float = 0.2
    kl_coef: float = 0.001
    adv_eps: float = 1e-4
    sim_penalty: float = 1.0
    sim_threshold: float = 0.75
    learning_rate: float = 1.0
    teacher_learning_rate: Optional[float] = None  # filled with learning_rate
    max_len: int = 4096
    mode: str = "ttsr"
    backend: str = "toy"
    seed: int = 0
    temperature: float = 1.0
    workers: int = 1
    # remote endpoint
    endpoint_url: Optional[str] = None
    model_name: Optional[str] = None
    concurrency: int = 4
    request_timeout: float = 60.0
    max_retries: int = 3
    questions_path: Optional[str] = None
    # toy task family
    modulus: int = 97
    n_test: int = 32
    n_eval: int = 200
    min_difficulty: int = 1
    max_difficulty: int = 6
    init_noise: float = 0.4
    eval_k: int = 32

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate_config(cfg: RunConfig) -> RunConfig:
    errors = []

    def need(cond, name, msg):
        if not cond:
            errors.append(f"{name}: {msg}")

    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in ("max_failed",) and v is None:
            continue
        if f.type in ("int", "Optional[int]") and not _is_int(v):
            errors.append(f"{f.name}: expected an integer, got {v!r}")
        elif f.type in ("float", "Optional[float]") and v is not None and not _is_num(v):
            errors.append(f"{f.name}: expected a number, got {v!r}")
    if errors:
        raise ConfigError(errors)

    need(cfg.group_size >= 2, "group_size", "G ≥ 2 required")
    need(cfg.n_variants >= 1, "n_variants", "M ≥ 1 required")
    need(cfg.max_failed is None or cfg.max_failed >= 1, "max_failed", "M_fail ≥ 1 required")
    need(cfg.n_iterations >= 0, "n_iterations", "T ≥ 0 required")
    need(cfg.batch_size >= 1, "batch_size", "batch_size ≥ 1 required")
    need(0 < cfg.clip_eps < 1, "clip_eps", "epsilon ∈ (0,1) required")
    need(cfg.kl_coef >= 0, "kl_coef", "beta ≥ 0 required")
    need(cfg.adv_eps > 0, "adv_eps", "delta > 0 required")
    need(cfg.sim_penalty >= 0, "sim_penalty", "lambda ≥ 0 required")
    need(0 <= cfg.sim_threshold < 1, "sim_threshold", "tau ∈ [0,1) required")
    need(cfg.learning_rate >= 0, "learning_rate", "learning_rate ≥ 0 required")
    need(cfg.teacher_learning_rate is None or cfg.teacher_learning_rate >= 0,
         "teacher_learning_rate", "teacher_learning_rate ≥ 0 required")
    need(cfg.max_len >= 1, "max_len", "max_len ≥ 1 required")
    need(cfg.mode in MODES, "mode", f"must be one of {', '.join(MODES)}")
    need(cfg.backend in BACKENDS, "backend", f"must be one of {', '.join(BACKENDS)}")
    need(cfg.temperature > 0, "temperature", "temperature > 0 required")
    need(cfg.workers >= 1, "workers", "workers ≥ 1 required")
    need(cfg.concurrency >= 1, "concurrency", "concurrency ≥ 1 required")
    need(cfg.request_timeout > 0, "request_timeout", "request_timeout > 0 required")
    need(cfg.max_retries >= 0, "max_retries", "max_retries ≥ 0 required")
    need(2 <= cfg.modulus <= 100, "modulus", "toy modulus must lie in [2, 100]")
    need(cfg.n_test >= 1, "n_test", "n_test ≥ 1 required")
    need(cfg.n_eval >= 1, "n_eval", "n_eval ≥ 1 required")
    need(1 <= cfg.min_difficulty <= cfg.max_difficulty, "min_difficulty",
         "1 ≤ min_difficulty ≤ max_difficulty required")
    need(cfg.init_noise >= 0, "init_noise", "init_noise ≥ 0 required")
    need(cfg.eval_k >= 1, "eval_k", "eval_k ≥ 1 required")
    if cfg.backend == "remote":
        need(bool(cfg.endpoint_url), "endpoint_url", "required for the remote backend")
        need(bool(cfg.model_name), "model_name", "required for the remote backend")
        need(bool(cfg.questions_path), "questions_path", "required for the remote backend")
    if errors:
        raise ConfigError(errors)

    filled = {}
    if cfg.max_failed is None:
        filled["max_failed"] = cfg.n_variants
    if cfg.teacher_learning_rate is None:
        filled["teacher_learning_rate"] = cfg.learning_rate
    return cfg.replace(**filled) if filled else cfg


def config_from_mapping(data: Mapping[str, Any]) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    kwargs, errors = {}, []
    for key, value in data.items():
        name = ALIASES.get(key, key)
        if name not in known:
            errors.append(f"{key}: unknown config field")
        elif name in kwargs:
            errors.append(f"{key}: given more than once")
        else:
            kwargs[name] = value
    if errors:
        raise ConfigError(errors)
    # integral floats from YAML/JSON ("1.0") are fine for float fields only
    for f in fields(RunConfig):
        if f.name in kwargs and f.type in ("float", "Optional[float]") and _is_int(kwargs[f.name]):
            kwargs[f.name] = float(kwargs[f.name])
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError([f"{path}: cannot parse config ({exc})"]) from exc
    if not isinstance(data, Mapping):
        raise ConfigError([f"{path}: config must be a key-value document"])
    return validate_config(config_from_mapping(data))


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
