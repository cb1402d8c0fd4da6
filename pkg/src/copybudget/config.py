"""Experiment configuration: schema, defaults, loading and validation.

The configuration is a single JSON file. Every field has a default, so a
minimal file only needs the values that differ from them; the full schema
is documented in the README. Two environment variables override the file:
``COPYBUDGET_SEED`` (root seed) and ``COPYBUDGET_OUT`` (output directory).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed or fails validation."""


class QualityTier(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class HolderSpec:
    """A data holder: sample inventory, quality tier, asking price, availability."""

    id: str
    sample_count: int
    quality_tier: QualityTier
    asking_price: float
    join_round: int = 1


# Sample counts cycled across the default 8-holder roster.
DEFAULT_SAMPLE_COUNTS = (50, 60, 80, 100, 150, 200)

# Default roster: the two high-quality holders ask roughly one unit per
# sample, medium holders overprice themselves, and the large low-quality
# holders are cheap. Holder 7 becomes available only from round 3.
_DEFAULT_TIERS = ("high", "high", "medium", "medium", "medium", "low", "medium", "low")
_DEFAULT_PRICES = (50.0, 60.0, 144.0, 100.0, 270.0, 40.0, 50.0, 12.0)
_DEFAULT_JOIN_ROUNDS = (1, 1, 1, 1, 1, 1, 3, 1)


def default_holders() -> list[HolderSpec]:
    counts = [DEFAULT_SAMPLE_COUNTS[i % len(DEFAULT_SAMPLE_COUNTS)] for i in range(8)]
    return [
        HolderSpec(
            id=f"holder{i + 1}",
            sample_count=counts[i],
            quality_tier=QualityTier(_DEFAULT_TIERS[i]),
            asking_price=_DEFAULT_PRICES[i],
            join_round=_DEFAULT_JOIN_ROUNDS[i],
        )
        for i in range(8)
    ]


@dataclass(frozen=True)
class AttributionParams:
    """Subset sampling and projection parameters for attribution scoring."""

    subsets: int = 32          # N random subsets
    subset_size: int | None = None  # K; None means ceil(|train| / 2)
    proj_dim: int = 8
    fit_regularizer: float = 32.0  # ridge penalty per training sample


@dataclass(frozen=True)
class ExperimentConfig:
    total_budget: float = 1000.0
    rounds: int = 5
    holders: tuple[HolderSpec, ...] = field(default_factory=lambda: tuple(default_holders()))

    # Copyright metric weights (semantic, perceptual).
    weight_semantic: float = 0.5
    weight_perceptual: float = 0.5

    # Inner reward weights (contribution, copyright).
    reward_contribution: float = 0.5
    reward_copyright: float = 0.5

    # DQN hyperparameters.
    explore_rate: float = 0.5
    discount: float = 0.98
    inner_iterations: int = 10_000
    outer_episodes: int = 40
    outer_updates_per_step: int = 16
    learning_rate: float = 1e-3
    batch_size: int = 64
    replay_capacity: int = 100_000
    target_sync: int = 100
    reward_clip: float = 1000.0
    reward_scale: float = 100.0

    attribution: AttributionParams = field(default_factory=AttributionParams)

    # Action grids: outer budget levels {0, B/G, ..., B}; inner fraction
    # vectors are compositions of `inner_parts` over the holder roster.
    outer_bins: int = 10
    inner_parts: int = 4

    # Simulated world.
    feature_dim: int = 8
    embed_dim: int = 16
    reference_size: int = 512
    generation_size: int = 512
    prior_offset: float = 6.0

    seed: int = 0
    out_dir: str = "runs"


_TOP_LEVEL_KEYS = {
    "total_budget",
    "rounds",
    "holders",
    "weight_semantic",
    "weight_perceptual",
    "reward_contribution",
    "reward_copyright",
    "explore_rate",
    "discount",
    "inner_iterations",
    "outer_episodes",
    "outer_updates_per_step",
    "learning_rate",
    "batch_size",
    "replay_capacity",
    "target_sync",
    "reward_clip",
    "reward_scale",
    "attribution",
    "outer_bins",
    "inner_parts",
    "feature_dim",
    "embed_dim",
    "reference_size",
    "generation_size",
    "prior_offset",
    "seed",
    "out_dir",
}


def _holder_from_dict(raw: dict[str, Any], index: int) -> HolderSpec:
    try:
        tier = QualityTier(raw.get("quality_tier", "medium"))
    except ValueError as exc:
        raise ConfigError(f"holders[{index}].quality_tier: {exc}") from None
    try:
        return HolderSpec(
            id=str(raw.get("id", f"holder{index + 1}")),
            sample_count=int(raw["sample_count"]),
            quality_tier=tier,
            asking_price=float(raw.get("asking_price", 0.0)),
            join_round=int(raw.get("join_round", 1)),
        )
    except KeyError as exc:
        raise ConfigError(f"holders[{index}]: missing field {exc}") from None


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build a validated config from a plain dict (JSON payload)."""
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    kwargs: dict[str, Any] = dict(raw)
    if "holders" in kwargs:
        holders = kwargs["holders"]
        if not isinstance(holders, list):
            raise ConfigError("holders: expected a list of holder objects")
        kwargs["holders"] = tuple(
            _holder_from_dict(h, i) for i, h in enumerate(holders)
        )
    if "attribution" in kwargs:
        attr = kwargs["attribution"]
        if not isinstance(attr, dict):
            raise ConfigError("attribution: expected an object")
        known = {f.name for f in dataclasses.fields(AttributionParams)}
        bad = set(attr) - known
        if bad:
            raise ConfigError(f"attribution: unknown keys {sorted(bad)}")
        kwargs["attribution"] = AttributionParams(**attr)

    cfg = ExperimentConfig(**kwargs)
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a JSON config file, fill defaults, apply env overrides, validate.

    Parse failures surface the offending line/column; validation failures
    list every violated field.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})"
        ) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")

    return config_from_dict(apply_env_overrides(raw))


def apply_env_overrides(raw: dict[str, Any]) -> dict[str, Any]:
    """Fold COPYBUDGET_SEED / COPYBUDGET_OUT into a raw config payload."""
    env_seed = os.environ.get("COPYBUDGET_SEED")
    if env_seed is not None:
        try:
            raw["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError("COPYBUDGET_SEED must be an integer") from None
    env_out = os.environ.get("COPYBUDGET_OUT")
    if env_out is not None:
        raw["out_dir"] = env_out
    return raw


def load_or_default(path: str | Path | None) -> ExperimentConfig:
    """Load the given config file, or the built-in defaults when no file is given."""
    if path is None:
        return config_from_dict(apply_env_overrides({}))
    return load_config(path)


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    """Serialize to the JSON schema (round-trips through config_from_dict)."""
    out = dataclasses.asdict(cfg)
    out["holders"] = [
        {**h, "quality_tier": h["quality_tier"].value} for h in out["holders"]
    ]
    return out


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n", encoding="utf-8")


def validate_config(cfg: ExperimentConfig) -> None:
    """Check every invariant; raise ConfigError listing all violated fields."""
    errors: list[str] = []

    def check(ok: bool, message: str) -> None:
        if not ok:
            errors.append(message)

    check(cfg.total_budget > 0, "total_budget must be > 0")
    check(cfg.rounds >= 1, "rounds must be >= 1")
    check(cfg.weight_semantic >= 0, "weight_semantic must be >= 0")
    check(cfg.weight_perceptual >= 0, "weight_perceptual must be >= 0")
    check(cfg.reward_contribution >= 0, "reward_contribution must be >= 0")
    check(cfg.reward_copyright >= 0, "reward_copyright must be >= 0")
    check(0.0 <= cfg.explore_rate <= 1.0, "explore_rate must be in [0, 1]")
    check(0.0 <= cfg.discount < 1.0, "discount must be in [0, 1)")
    check(cfg.inner_iterations >= 1, "inner_iterations must be >= 1")
    check(cfg.outer_episodes >= 1, "outer_episodes must be >= 1")
    check(cfg.outer_updates_per_step >= 1, "outer_updates_per_step must be >= 1")
    check(cfg.learning_rate > 0, "learning_rate must be > 0")
    check(cfg.batch_size >= 1, "batch_size must be >= 1")
    check(cfg.replay_capacity >= 1, "replay_capacity must be >= 1")
    check(cfg.target_sync >= 1, "target_sync must be >= 1")
    check(cfg.reward_clip > 0, "reward_clip must be > 0")
    check(cfg.reward_scale > 0, "reward_scale must be > 0")
    check(cfg.outer_bins >= 1, "outer_bins must be >= 1")
    check(cfg.inner_parts >= 1, "inner_parts must be >= 1")
    check(cfg.feature_dim >= 1, "feature_dim must be >= 1")
    check(cfg.embed_dim >= 1, "embed_dim must be >= 1")
    check(cfg.reference_size >= 2, "reference_size must be >= 2")
    check(cfg.generation_size >= 2, "generation_size must be >= 2")
    check(cfg.attribution.subsets >= 1, "attribution.subsets must be >= 1")
    check(cfg.attribution.proj_dim >= 1, "attribution.proj_dim must be >= 1")
    check(cfg.attribution.fit_regularizer > 0, "attribution.fit_regularizer must be > 0")
    if cfg.attribution.subset_size is not None:
        check(cfg.attribution.subset_size >= 1, "attribution.subset_size must be >= 1")
    check(not (-(1 << 63) > cfg.seed or cfg.seed >= (1 << 64)), "seed must fit in 64 bits")

    if not cfg.holders:
        errors.append("holders must not be empty")
    seen_ids: set[str] = set()
    for i, h in enumerate(cfg.holders):
        check(h.sample_count > 0, f"holders[{i}].sample_count must be > 0")
        check(h.asking_price >= 0, f"holders[{i}].asking_price must be >= 0")
        check(
            1 <= h.join_round <= cfg.rounds,
            f"holders[{i}].join_round must be in [1, rounds]",
        )
        check(h.id not in seen_ids, f"holders[{i}].id duplicates {h.id!r}")
        seen_ids.add(h.id)

    if errors:
        raise ConfigError("; ".join(errors))
