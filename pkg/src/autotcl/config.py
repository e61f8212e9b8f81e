"""Experiment configuration: a flat JSON file with explicit, validated keys.

Unknown keys and ill-typed values are hard errors so that a typo cannot
silently fall back to a default. The config hash is taken over the canonical
serialization of the fully resolved config (defaults filled in, keys sorted),
making it stable under key reordering in the source file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .augment import HardConcreteParams
from .encoder import EncoderConfig
from .errors import ConfigError, ValidationError

VARIANTS = (
    "full",
    "wo_h",
    "wo_g",
    "wo_dv",
    "wo_aug",
    "cutout",
    "jitter",
    "random_aug",
    "adversarial",
)
DATA_FORMATS = ("ett_csv", "generic_csv", "uea_archive")


@dataclass
class ExperimentConfig:
    # data
    dataset: str = ""
    data_format: str = "generic_csv"
    setting: str = "univariate"
    window_len: int = 128
    stride: int = 8
    # encoder
    depth: int = 10
    hidden_dim: int = 64
    repr_dim: int = 320
    dropout: float = 0.0
    mask_prob: float = 0.5
    # augmentation network
    aug_depth: int = 2
    aug_hidden_dim: int = 64
    g_floor: float = 0.05
    tau: float = 0.5
    gamma: float = -0.1
    zeta: float = 1.1
    # objectives
    l0_weight: float = 0.1
    continuity_weight: float = 0.1
    local_weight: float = 0.5
    segment_len: int = 16
    temperature: float = 1.0
    # optimization
    aug_period: int = 2
    epochs: int = 20
    batch_size: int = 8
    lr_encoder: float = 0.001
    lr_aug: float = 0.001
    seed: int = 0
    checkpoint_every: int = 10
    # static augmentation baselines
    cutout_frac: float = 0.5
    jitter_sigma: float = 0.3
    # experiment identity
    variant: str = "full"
    method: str = "autotcl"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}", key="variant")
        if self.data_format not in DATA_FORMATS:
            raise ConfigError(
                f"data_format must be one of {DATA_FORMATS}", key="data_format"
            )
        if self.setting not in ("univariate", "multivariate"):
            raise ConfigError(
                "setting must be univariate or multivariate", key="setting"
            )
        positive = (
            "window_len", "stride", "depth", "hidden_dim", "repr_dim",
            "aug_depth", "aug_hidden_dim", "segment_len", "aug_period",
            "epochs", "batch_size", "checkpoint_every",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", key=name)
        for name in ("l0_weight", "continuity_weight", "local_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", key=name)
        for name in ("lr_encoder", "lr_aug", "temperature", "tau"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0", key=name)
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)", key="dropout")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError("mask_prob must be in [0, 1]", key="mask_prob")
        if not 0.0 < self.cutout_frac < 1.0:
            raise ConfigError("cutout_frac must be in (0, 1)", key="cutout_frac")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be >= 0", key="jitter_sigma")
        if not 0.0 < self.g_floor < 1.0:
            raise ConfigError("g_floor must be in (0, 1)", key="g_floor")
        if not (self.gamma < 0.0 < 1.0 < self.zeta):
            raise ConfigError(
                "stretch interval must satisfy gamma < 0 < 1 < zeta", key="gamma"
            )
        if self.window_len < 3:
            raise ConfigError("window_len must be >= 3", key="window_len")
        if self.local_weight > 0 and self.window_len < 3 * self.segment_len:
            raise ConfigError(
                "window_len must be >= 3 * segment_len when local_weight > 0",
                key="segment_len",
            )

    # views consumed by the model constructors
    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            depth=self.depth,
            hidden_dim=self.hidden_dim,
            repr_dim=self.repr_dim,
            dropout=self.dropout,
            mask_prob=self.mask_prob,
        )

    @property
    def concrete(self) -> HardConcreteParams:
        return HardConcreteParams(tau=self.tau, gamma=self.gamma, zeta=self.zeta)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
        known = {f.name: f.type for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError("unknown config key", key=key)
        coerced = {}
        for key, value in raw.items():
            expected = known[key]
            if expected == "str":
                if not isinstance(value, str):
                    raise ConfigError(f"expected string, got {value!r}", key=key)
            elif expected == "int":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"expected integer, got {value!r}", key=key)
            elif expected == "float":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"expected number, got {value!r}", key=key)
                value = float(value)
            coerced[key] = value
        cfg = cls(**coerced)
        cfg.validate()
        return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return ExperimentConfig.from_dict(raw)


def canonical_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()
