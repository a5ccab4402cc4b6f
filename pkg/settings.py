"""
Run configuration resolution.

Precedence, lowest first: field defaults, CTC_SLU_* environment variables,
the JSON config file, then command-line flags (--set and named shortcuts).
"""

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

import storage
from errors import ConfigError
from models import CorpusConfig, RunConfig

logger = logging.getLogger(__name__)

SECTIONS = ("corpus", "model", "train", "out")
RESOLVED_CONFIG_NAME = "resolved_config.json"

# named flag -> dotted config keys it sets
SHORTCUTS: dict[str, tuple[str, ...]] = {
    "alpha_ctc": ("train.alpha_ctc",),
    "lr": ("train.learning_rate",),
    "batch_size": ("train.batch_size",),
    "ablation": ("train.ablation",),
    "seed": ("corpus.seed", "train.seed"),
    "tap": ("model.tap_mode",),
    "joint_epochs": ("train.joint_epochs",),
    "out": ("out.dir",),
    "dataset": ("out.dataset_dir",),
}


class EnvOverrides(BaseSettings):
    """CTC_SLU_SEED sets the corpus and training seeds together."""

    model_config = SettingsConfigDict(env_prefix="CTC_SLU_", extra="ignore")

    seed: Optional[int] = None


def _assign(tree: dict, dotted: str, value: Any) -> None:
    section, _, key = dotted.partition(".")
    if section not in SECTIONS or not key or "." in key:
        raise ConfigError(f"unknown config key '{dotted}' (expected <section>.<key>, sections {SECTIONS})")
    tree.setdefault(section, {})[key] = value


def _merge(base: dict, overlay: dict) -> dict:
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def parse_set(assignment: str) -> tuple[str, Any]:
    """'section.key=value' with a JSON value; bare words are taken as strings."""
    dotted, sep, raw = assignment.partition("=")
    if not sep or not dotted.strip():
        raise ConfigError(f"--set expects section.key=value, got '{assignment}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return dotted.strip(), value


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        tree = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be an object with sections {SECTIONS}")
    unknown = set(tree) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return tree


def _link_model_to_corpus(tree: dict) -> None:
    """Model input/output sizes follow the corpus unless set explicitly."""
    try:
        corpus = CorpusConfig.model_validate(tree.get("corpus", {}))
    except ValidationError as exc:
        raise ConfigError(f"invalid corpus config:\n{exc}") from exc
    model = tree.setdefault("model", {})
    model.setdefault("feature_dim", corpus.feature_dim)
    model.setdefault("vocab_size", corpus.vocab_size)
    model.setdefault("num_labels", corpus.num_intents)


def resolve_config(
    config_file: Optional[str | Path] = None,
    assignments: Iterable[str] = (),
    flags: Optional[dict[str, Any]] = None,
) -> RunConfig:
    tree: dict = {}

    try:
        env = EnvOverrides()
    except ValidationError as exc:
        raise ConfigError(f"invalid CTC_SLU_* environment variable:\n{exc}") from exc
    if env.seed is not None:
        logger.info("Config: seed %d from environment", env.seed)
        _assign(tree, "corpus.seed", env.seed)
        _assign(tree, "train.seed", env.seed)

    if config_file is not None:
        _merge(tree, load_config_file(config_file))

    for assignment in assignments:
        _assign(tree, *parse_set(assignment))

    for flag, value in (flags or {}).items():
        if value is None:
            continue
        if flag not in SHORTCUTS:
            raise ConfigError(f"unknown config flag: {flag}")
        for dotted in SHORTCUTS[flag]:
            _assign(tree, dotted, value)

    _link_model_to_corpus(tree)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from exc


def echo_config(config: RunConfig) -> Path:
    """Write the fully resolved config where the run's artifacts live."""
    path = Path(config.out.dir) / RESOLVED_CONFIG_NAME
    storage.write_json(path, config.model_dump(mode="json"))
    return path
