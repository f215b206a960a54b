"""Model and training configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

VARIANTS = ("det", "bam")
PRIOR_SOURCES = ("knowledge", "key", "uniform")
MODALITIES = ("text+speech", "text", "speech")
SPEECH_LEVELS = ("word", "frame")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int = 32
    heads: int = 4
    coatt_layers: int = 1
    weibull_k: float = 1.0
    gamma_beta: float = 10.0
    alpha_scale: float = 1.0
    kl_weight: float = 1.0
    dropout: float = 0.1
    lr: float = 1e-4
    batch_size: int = 32
    early_stop_patience: int = 6
    early_stop_metric: str = "ua"
    max_epochs: int = 40
    seed: int = 0
    variant: str = "det"
    prior_source: str = "knowledge"
    hard_knowledge: bool = False
    soften_uses_separate_head: bool = False
    modalities: str = "text+speech"
    speech_level: str = "word"
    classifier_layers: int = 1
    n_classes: int = 4
    text_layers: int = 1
    speech_layers: int = 1
    adam_betas: list = field(default_factory=lambda: [0.9, 0.999])
    adam_eps: float = 1e-8

    def validate(self):
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.prior_source not in PRIOR_SOURCES:
            raise ConfigError(f"prior_source must be one of {PRIOR_SOURCES}")
        if self.modalities not in MODALITIES:
            raise ConfigError(f"modalities must be one of {MODALITIES}")
        if self.speech_level not in SPEECH_LEVELS:
            raise ConfigError(f"speech_level must be one of {SPEECH_LEVELS}")
        if self.early_stop_metric not in ("ua", "loss"):
            raise ConfigError("early_stop_metric must be 'ua' or 'loss'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.weibull_k <= 0 or self.gamma_beta <= 0 or self.alpha_scale <= 0:
            raise ConfigError("weibull_k, gamma_beta and alpha_scale must be positive")
        if self.kl_weight < 0 or self.lr < 0:
            raise ConfigError("kl_weight and lr must be non-negative")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if min(self.coatt_layers, self.classifier_layers, self.batch_size, self.text_layers, self.speech_layers) < 1:
            raise ConfigError("layer counts and batch size must be >= 1")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj).validate()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()


PRESETS = {
    "desk": {},
    "paper-scale": {"d": 768, "heads": 8},
}


def load_config(path=None, preset=None, **overrides):
    """Preset, then JSON file, then explicit overrides (``None`` values skipped)."""
    obj = dict(PRESETS[preset]) if preset else {}
    if path is not None:
        try:
            obj.update(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    obj.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(obj)
