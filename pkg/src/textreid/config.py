"""Run configuration: flat key=value files, named profiles, config hashing.

Config files hold one KEY=VALUE pair per line ('#' comments allowed).
Unknown keys are hard errors so sweep typos cannot silently fall back to
defaults. Two named profiles ship: "desk" (small dims, fast synthetic runs)
and "paper" (full-size hyperparameters; runnable on synthetic data but not
expected to reach published benchmark numbers without pretrained weights
and the real datasets).
"""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass
from pathlib import Path

MIM_METHODS = ("semantic", "pixel", "patch", "feature", "none")


class ConfigError(Exception):
    pass


@dataclass
class TrainConfig:
    # run
    dataset_dir: str = "data/desk"
    output_dir: str = "runs/latest"
    seed: int = 17
    # model
    hidden_size: int = 64
    encoder_layers: int = 2
    encoder_heads: int = 4
    patch_size: int = 8
    mlp_ratio: int = 4
    cme_layers: int = 4
    cme_heads: int = 4
    text_global: str = "sos"
    # optimization
    batch_size: int = 32
    epochs: int = 60
    learning_rate: float = 1e-5
    warmup_start_lr: float = 1e-6
    warmup_epochs: int = 5
    lr_decay: str = "cosine"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # objectives
    sdm_temperature: float = 0.02
    sdm_epsilon: float = 1e-8
    text_mask_rate: float = 0.15
    patch_mask_rate: float = 0.15
    mlm_weight: float = 1.0
    mim_weight: float = 1.0
    mlm_enabled: bool = True
    mim_method: str = "semantic"
    normalize_ce_by_classes: bool = True
    # data handling
    flip_augmentation: bool = True
    test_fraction: float = 0.25

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.text_mask_rate <= 1.0 or not 0.0 <= self.patch_mask_rate <= 1.0:
            raise ConfigError("mask rates must lie in [0, 1]")
        if self.mlm_weight < 0 or self.mim_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.mim_method not in MIM_METHODS:
            raise ConfigError(f"mim_method must be one of {MIM_METHODS}")
        if self.text_global not in ("sos", "eos"):
            raise ConfigError("text_global must be 'sos' or 'eos'")
        if self.lr_decay != "cosine":
            raise ConfigError("only cosine lr decay is implemented")
        if min(self.batch_size, self.epochs, self.hidden_size, self.encoder_layers,
               self.cme_layers, self.patch_size) <= 0:
            raise ConfigError("sizes must be positive")
        if self.warmup_epochs < 0 or self.warmup_epochs >= self.epochs:
            raise ConfigError("warmup_epochs must lie in [0, epochs)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        return self


def desk_profile(**overrides) -> TrainConfig:
    """Small-dimension profile for minutes-scale CPU runs on synthetic data.

    Keeps the full schedule shape but raises the learning rate for
    from-scratch training at tiny width, and uses conventional per-token
    cross entropy for the masked objectives (the class-count-normalized
    form starves their gradients by 1/|V| and 1/|C| at this scale). Pair
    with a dataset generated at max_len=48."""
    cfg = TrainConfig(
        epochs=30,
        learning_rate=1e-3,
        warmup_start_lr=1e-4,
        warmup_epochs=3,
        mlp_ratio=2,
        normalize_ce_by_classes=False,
    )
    return dataclasses.replace(cfg, **overrides).validate()


def paper_profile(**overrides) -> TrainConfig:
    """Full-size hyperparameters: hidden 512, 12-layer image encoder with
    16px patches, 77-token text, 60 epochs at 1e-5."""
    cfg = TrainConfig(
        hidden_size=512,
        encoder_layers=12,
        encoder_heads=8,
        patch_size=16,
        cme_layers=4,
        cme_heads=8,
        epochs=60,
        learning_rate=1e-5,
        warmup_start_lr=1e-6,
        warmup_epochs=5,
    )
    return dataclasses.replace(cfg, **overrides).validate()


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def _coerce(name: str, text: str, target_type) -> object:
    text = text.strip()
    if target_type is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: cannot parse {text!r} as bool")
    if target_type is int:
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"{name}: cannot parse {text!r} as int") from exc
    if target_type is float:
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"{name}: cannot parse {text!r} as float") from exc
    return text


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    hints = typing.get_type_hints(TrainConfig)
    types = {f.name: hints[f.name] for f in dataclasses.fields(TrainConfig)}
    fields = types
    values: dict = {}
    profile_fn = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected KEY=VALUE, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "profile":
            if value not in PROFILES:
                raise ConfigError(f"line {lineno}: unknown profile {value!r}")
            profile_fn = PROFILES[value]
            continue
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value, types[key])
    if profile_fn is not None:
        cfg = profile_fn()
    elif base is not None:
        cfg = base
    else:
        cfg = TrainConfig()
    return dataclasses.replace(cfg, **values).validate()


def load_config(path) -> tuple[TrainConfig, str]:
    """Returns (config, raw file text); the raw text is echoed verbatim in
    run reports so the effective inputs stay auditable."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text), text


def serialize_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:12]
