"""Run configuration: flat ``key = value`` text, UTF-8, '#' comments.

Unknown keys are an error (no silent typo tolerance).  Every training run
writes its fully resolved configuration next to the outputs so a run can
be reproduced from the artifacts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError
from .synthdata import SyntheticSpeakerConfig
from .training import TrainConfig
from .seeding import derive_seed


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/bwn"
    # network
    depth_blocks: int = 4
    channels: tuple[int, ...] = (8, 8, 16, 16)
    embedding_dim: int = 128
    activation: str = "relu"
    # training
    epochs: int = 30
    batch_size: int = 4
    lr0: float = 0.01
    momentum: float = 0.95
    clip_threshold: float = 1.0
    backward_rule: str = "scaled"
    clip_shadow_weights: bool = False
    loss: str = "cross_entropy"
    # synthetic data
    num_speakers: int = 10
    utterances_per_speaker: int = 40
    feature_height: int = 32
    feature_width: int = 32
    sigma_within: float = 0.22
    separation: float = 1.25
    time_shift_max: int = 2
    holdout_fraction: float = 0.2
    # detection-cost parameters
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _parse_channels(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _format_channels(channels) -> str:
    return ",".join(str(c) for c in channels)


# key -> (RunConfig field, parse, format)
_KEYS = {
    "seed": ("seed", int, str),
    "out_dir": ("out_dir", str, str),
    "net.depth_blocks": ("depth_blocks", int, str),
    "net.channels": ("channels", _parse_channels, _format_channels),
    "net.embedding_dim": ("embedding_dim", int, str),
    "net.activation": ("activation", str, str),
    "train.epochs": ("epochs", int, str),
    "train.batch_size": ("batch_size", int, str),
    "train.lr0": ("lr0", float, repr),
    "train.momentum": ("momentum", float, repr),
    "train.clip_threshold": ("clip_threshold", float, repr),
    "train.backward_rule": ("backward_rule", str, str),
    "train.clip_shadow_weights": ("clip_shadow_weights", _parse_bool,
                                  lambda v: "true" if v else "false"),
    "train.loss": ("loss", str, str),
    "data.num_speakers": ("num_speakers", int, str),
    "data.utterances_per_speaker": ("utterances_per_speaker", int, str),
    "data.feature_height": ("feature_height", int, str),
    "data.feature_width": ("feature_width", int, str),
    "data.sigma_within": ("sigma_within", float, repr),
    "data.separation": ("separation", float, repr),
    "data.time_shift_max": ("time_shift_max", int, str),
    "data.holdout_fraction": ("holdout_fraction", float, repr),
    "eval.p_target": ("p_target", float, repr),
    "eval.c_miss": ("c_miss", float, repr),
    "eval.c_fa": ("c_fa", float, repr),
}


def parse_config_text(text: str) -> RunConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not 'key = value': '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown config key '{key}' (line {lineno})")
        field_name, parse, _ = _KEYS[key]
        if field_name in values:
            raise ConfigError(f"duplicate config key '{key}' (line {lineno})")
        try:
            values[field_name] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for '{key}' (line {lineno}): {exc}") from None
    return RunConfig(**values)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return parse_config_text(handle.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from None


def resolved_config_text(config: RunConfig) -> str:
    """Every key, explicitly, in table order."""
    lines = []
    for key, (field_name, _, fmt) in _KEYS.items():
        lines.append(f"{key} = {fmt(getattr(config, field_name))}")
    return "\n".join(lines) + "\n"


def data_config(config: RunConfig) -> SyntheticSpeakerConfig:
    return SyntheticSpeakerConfig(
        num_speakers=config.num_speakers,
        utterances_per_speaker=config.utterances_per_speaker,
        feature_height=config.feature_height,
        feature_width=config.feature_width,
        sigma_within=config.sigma_within,
        separation=config.separation,
        time_shift_max=config.time_shift_max,
        holdout_fraction=config.holdout_fraction,
        seed=derive_seed(config.seed, "data"),
    )


def train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr0=config.lr0,
        momentum=config.momentum,
        clip_threshold=config.clip_threshold,
        backward_rule=config.backward_rule,
        clip_shadow_weights=config.clip_shadow_weights,
        loss=config.loss,
        seed=config.seed,
    )


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
