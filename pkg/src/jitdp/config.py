"""Run configuration: flat JSON with dotted keys, CLI overrides win.

Every key has a default; unknown keys are rejected with the full list of
offenders. The resolved config is persisted verbatim next to every
artifact it produces.
"""

from __future__ import annotations

import json
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .predict import FinetuneConfig
from .pretrain import ObjectiveSchedule, PretrainConfig

DEFAULTS: dict[str, object] = {
    "seed": 0,
    # encoder (desk scale; see preset "paper")
    "encoder.num_layers": 2,
    "encoder.num_heads": 4,
    "encoder.hidden_dim": 128,
    "encoder.ffn_dim": 256,
    "encoder.max_len": 128,
    "encoder.dropout": 0.1,
    # tokenizer
    "tokenizer.vocab_size": 4096,
    "tokenizer.mask_rate": 0.15,
    "tokenizer.mask_scheme": "mask",
    # pre-training
    "pretrain.epochs": 30,
    "pretrain.batch_size": 16,
    "pretrain.grad_accum": 1,
    "pretrain.learning_rate": 5e-4,
    "pretrain.warmup_fraction": 0.1,
    "pretrain.mlm_weight": 2,
    "pretrain.rmi_weight": 1,
    "pretrain.p_replace": 0.5,
    "pretrain.order_mode": "alternating",
    # fine-tuning
    "finetune.epochs": 10,
    "finetune.batch_size": 16,
    "finetune.learning_rate": 1e-5,
    "finetune.warmup_fraction": 0.1,
    "finetune.threshold": 0.5,
    "finetune.use_semantic": True,
    "finetune.use_expert": True,
    "finetune.positive_weight": 1.0,
    "finetune.from_scratch": False,
    # paths
    "paths.corpus": "",
    "paths.features": "",
    "paths.splits": "",
    "paths.vocab": "",
    "paths.output_dir": "out",
    "paths.pretrained": "",
    "paths.model": "",
    # FIX keyword list is configurable; comma-separated
    "features.fix_keywords": "bug,fix,fixes,fixed,defect,patch,fault",
}

# Hyperparameters at publication scale; not expected to run on a desk machine.
PAPER_PRESET: dict[str, object] = {
    "encoder.num_layers": 12,
    "encoder.num_heads": 12,
    "encoder.hidden_dim": 768,
    "encoder.ffn_dim": 3072,
    "encoder.max_len": 512,
    "tokenizer.vocab_size": 50265,
    "pretrain.epochs": 100,
    "pretrain.batch_size": 16,
    "pretrain.grad_accum": 32,
    "pretrain.learning_rate": 5e-4,
    "finetune.batch_size": 12,
    "finetune.learning_rate": 1e-5,
}

PRESETS = {"desk": {}, "paper": PAPER_PRESET}


class RunConfig:
    def __init__(self, values: dict[str, object] | None = None):
        merged = dict(DEFAULTS)
        if values:
            unknown = sorted(set(values) - set(DEFAULTS))
            if unknown:
                raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
            for key, value in values.items():
                merged[key] = _coerce(key, value)
        self.values = merged

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key: {key}")
        return self.values[key]

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        merged = dict(self.values)
        unknown = sorted(set(overrides) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in overrides.items():
            merged[key] = _coerce(key, value)
        cfg = RunConfig.__new__(RunConfig)
        cfg.values = merged
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))

    @classmethod
    def from_preset(cls, name: str) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(dict(PRESETS[name]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.values, indent=2, sort_keys=True))

    # --- typed views over the flat keys ------------------------------------

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            num_layers=int(self["encoder.num_layers"]),
            num_heads=int(self["encoder.num_heads"]),
            hidden_dim=int(self["encoder.hidden_dim"]),
            ffn_dim=int(self["encoder.ffn_dim"]),
            max_len=int(self["encoder.max_len"]),
            dropout=float(self["encoder.dropout"]),
            seed=int(self["seed"]),
        )

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=int(self["pretrain.epochs"]),
            batch_size=int(self["pretrain.batch_size"]),
            learning_rate=float(self["pretrain.learning_rate"]),
            warmup_fraction=float(self["pretrain.warmup_fraction"]),
            mask_rate=float(self["tokenizer.mask_rate"]),
            mask_scheme=str(self["tokenizer.mask_scheme"]),
            p_replace=float(self["pretrain.p_replace"]),
            order_mode=str(self["pretrain.order_mode"]),
            schedule=ObjectiveSchedule(
                mlm_weight=int(self["pretrain.mlm_weight"]),
                rmi_weight=int(self["pretrain.rmi_weight"]),
                seed=int(self["seed"]),
            ),
            seed=int(self["seed"]),
        )

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            epochs=int(self["finetune.epochs"]),
            batch_size=int(self["finetune.batch_size"]),
            learning_rate=float(self["finetune.learning_rate"]),
            warmup_fraction=float(self["finetune.warmup_fraction"]),
            threshold=float(self["finetune.threshold"]),
            use_semantic=bool(self["finetune.use_semantic"]),
            use_expert=bool(self["finetune.use_expert"]),
            positive_weight=float(self["finetune.positive_weight"]),
            seed=int(self["seed"]),
        )

    def fix_keywords(self) -> tuple[str, ...]:
        return tuple(k.strip() for k in str(self["features.fix_keywords"]).split(",") if k.strip())


def _coerce(key: str, value: object):
    """Coerce a raw (possibly string) value to the type of the default."""
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        try:
            if isinstance(default, bool):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            if isinstance(default, int):
                return int(value)
            if isinstance(default, float):
                return float(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(f"bad value for {key}: {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"bad value for {key}: {value!r}")
        return int(value)
    if isinstance(default, float) and not isinstance(value, (int, float)):
        raise ConfigError(f"bad value for {key}: {value!r}")
    return value
