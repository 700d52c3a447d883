"""Flat run configuration, read and written as INI.

One dataclass holds every knob a run can turn; the INI sections exist
only to keep the file readable. Unknown sections or keys are an error so
a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .judge import Limits
from .meta import MetaConfig
from .util import text_digest


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    problems: str = ""  # empty means the bundled mini corpus
    template_dir: str = ""  # empty means the bundled templates

    # policy
    backend: str = "stub"  # stub | subprocess | http
    command: str = ""
    url: str = ""
    model: str = "default"
    api_key_env: str = ""  # name of the env var holding the key
    parallelism: int = 4
    trajectory_temperature: float = 1.0
    candidate_temperature: float = 0.7
    trajectories_per_problem: int = 2
    stub_pass_probability: float = 0.5

    # judge
    time_limit: float = 5.0
    memory_mib: int = 512
    output_limit_bytes: int = 1024 * 1024
    judge_workers: int = 8
    judge_vehicle: str = "subprocess"

    # labeler
    k: int = 8
    binarize: bool = False

    # synth
    synth_d: int = 8
    synth_n_train: int = 200
    synth_n_meta: int = 100
    synth_noise: str = "flip"
    synth_noise_param: float = 0.3

    # prm
    architecture: str = "linear"
    hidden: int = 16
    optimizer: str = "sgd"

    # meta
    inner_lr: float = 1e-4
    meta_lr: float = 1e-2
    weight_decay: float = 1e-2
    batch_size: int = 8
    meta_batch_size: int = 0  # 0 means match batch_size
    iterations: int = 500

    # rank
    n_candidates: int = 4
    mode: str = "prm_mean"
    train_labels: str = "corrected"  # corrected | raw

    # run
    seed: int = 0

    def __post_init__(self) -> None:
        if self.backend not in ("stub", "subprocess", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.train_labels not in ("corrected", "raw"):
            raise ConfigError(f"train_labels must be corrected or raw, got {self.train_labels!r}")

    def judge_limits(self) -> Limits:
        return Limits(
            wall_time_per_test=self.time_limit,
            memory_bytes=self.memory_mib * 1024 * 1024,
            max_output_bytes=self.output_limit_bytes,
        )

    def meta_config(self) -> MetaConfig:
        return MetaConfig(
            inner_lr=self.inner_lr,
            meta_lr=self.meta_lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            meta_batch_size=self.meta_batch_size or None,
            iterations=self.iterations,
            seed=self.seed,
            architecture=self.architecture,
            hidden=self.hidden,
        )


SECTIONS: dict[str, tuple[str, ...]] = {
    "paths": ("problems", "template_dir"),
    "policy": (
        "backend",
        "command",
        "url",
        "model",
        "api_key_env",
        "parallelism",
        "trajectory_temperature",
        "candidate_temperature",
        "trajectories_per_problem",
        "stub_pass_probability",
    ),
    "judge": ("time_limit", "memory_mib", "output_limit_bytes", "judge_workers", "judge_vehicle"),
    "labeler": ("k", "binarize"),
    "synth": ("synth_d", "synth_n_train", "synth_n_meta", "synth_noise", "synth_noise_param"),
    "prm": ("architecture", "hidden", "optimizer"),
    "meta": (
        "inner_lr",
        "meta_lr",
        "weight_decay",
        "batch_size",
        "meta_batch_size",
        "iterations",
    ),
    "rank": ("n_candidates", "mode", "train_labels"),
    "run": ("seed",),
}

_FIELD_SECTION = {name: section for section, names in SECTIONS.items() for name in names}
_FIELD_TYPE = {}


def _field_types() -> dict[str, type]:
    if not _FIELD_TYPE:
        for f in fields(RunConfig):
            _FIELD_TYPE[f.name] = type(f.default)
    return _FIELD_TYPE


def _coerce(name: str, raw: str):
    kind = _field_types()[name]
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path: str | Path | None) -> RunConfig:
    """RunConfig from an INI file; None or a missing value means defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            values[key] = _coerce(key, raw)
    return RunConfig(**values)


def apply_overrides(cfg: RunConfig, pairs: list[str]) -> RunConfig:
    """Apply ``field=value`` override strings on top of a config."""
    values = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        key = key.strip()
        if not sep or key not in values:
            known = ", ".join(sorted(values))
            raise ConfigError(f"bad override {pair!r}; use field=value with field in: {known}")
        values[key] = _coerce(key, raw.strip())
    return RunConfig(**values)


def config_text(cfg: RunConfig) -> str:
    """Canonical INI rendering: fixed section and key order."""
    lines: list[str] = []
    for section, names in SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            lines.append(f"{name} = {getattr(cfg, name)}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(config_text(cfg), encoding="utf-8")


def config_digest(cfg: RunConfig) -> str:
    return text_digest(config_text(cfg))
