"""Training/run configuration with strict JSON loading."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .masking import MaskSpec
from .patching import PatchScheme
from .vit import ViTConfig

VIT_MODES = ("pretrain_scheme", "fixed_16", "none")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; :func:`reference_preset` restores the full-scale values."""

    lr: float = 1e-3
    batch: int = 16
    max_epochs: int = 50
    weight_decay: float = 1e-5
    patience: int = 10
    lr_patience: int = 5
    seed: int = 0
    mask: MaskSpec = field(default_factory=lambda: MaskSpec(32, 32))
    vit: ViTConfig = field(default_factory=ViTConfig)
    composition: str = "residual"
    lambda_known: float = 0.1
    vit_mode: str = "pretrain_scheme"
    pretrain_epochs: int = 10
    finetune_vit: bool = False
    channels: int = 3
    gen_widths: tuple[int, int, int] = (32, 64, 32)

    def __post_init__(self):
        for name in ("lr", "batch", "max_epochs", "patience", "lr_patience", "channels"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.weight_decay < 0 or self.lambda_known < 0 or self.pretrain_epochs < 0:
            raise ConfigError("weight_decay, lambda_known and pretrain_epochs must be >= 0")
        if self.vit_mode not in VIT_MODES:
            raise ConfigError(f"vit_mode must be one of {VIT_MODES}, got {self.vit_mode!r}")
        if self.composition not in ("residual", "replace"):
            raise ConfigError(f"composition must be residual or replace, got {self.composition!r}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if len(self.gen_widths) != 3 or min(self.gen_widths) < 1:
            raise ConfigError("gen_widths must be three positive ints")

    @property
    def effective_vit(self) -> ViTConfig | None:
        """ViT actually used: none, the configured scheme, or fixed 16x16 squares."""
        if self.vit_mode == "none":
            return None
        if self.vit_mode == "fixed_16":
            return dataclasses.replace(self.vit, scheme=PatchScheme("square", 16))
        return self.vit

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["mask"] = self.mask.to_dict()
        d["vit"] = self.vit.to_dict()
        d["gen_widths"] = list(self.gen_widths)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        _reject_unknown(doc, {f.name for f in dataclasses.fields(cls)}, "config")
        if "mask" in doc:
            m = doc["mask"]
            _reject_unknown(m, {f.name for f in dataclasses.fields(MaskSpec)}, "mask")
            doc["mask"] = MaskSpec(**m)
        if "vit" in doc:
            v = dict(doc["vit"])
            _reject_unknown(v, {f.name for f in dataclasses.fields(ViTConfig)}, "vit")
            if "scheme" in v:
                v["scheme"] = PatchScheme.parse(v["scheme"])
            doc["vit"] = ViTConfig(**v)
        if "gen_widths" in doc:
            doc["gen_widths"] = tuple(doc["gen_widths"])
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _reject_unknown(doc: dict, allowed: set[str], where: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return TrainConfig.from_dict(doc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def reference_preset(**overrides) -> TrainConfig:
    """Full-scale hyperparameters of the original method: lr 1e-4, batch 64, 300 epochs, 128x128 holes."""
    base = dict(lr=1e-4, batch=64, max_epochs=300, weight_decay=1e-5, mask=MaskSpec(128, 128))
    base.update(overrides)
    return TrainConfig(**base)
