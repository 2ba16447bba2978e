"""Whole-pipeline configuration and the named experiment presets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from ._serde import from_dict, to_dict
from .decoder import DecoderConfig
from .errors import ConfigurationError
from .frontend import StftConfig, WindowSpec
from .labels import EncoderConfig, LossConfig
from .model import ModelConfig
from .trainer.toy import ToyModelConfig


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    toy: ToyModelConfig = field(default_factory=ToyModelConfig)
    variant_id: str | None = None

    def __post_init__(self):
        rate = self.stft.frame_rate
        for name in ("decoder", "encoder"):
            other = getattr(self, name).frame_rate
            if not math.isclose(other, rate):
                raise ConfigurationError(
                    f"{name}.frame_rate {other} does not match the frontend frame rate {rate}")
        if self.loss.kind == "shift_tolerant" and self.encoder.scheme != "binary":
            raise ConfigurationError("the shift-tolerant loss needs binary targets")

    def to_dict(self) -> dict:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data) -> "PipelineConfig":
        return from_dict(cls, data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def _asym(delay: int) -> StftConfig:
    return StftConfig(WindowSpec("asymmetric", 2048, delay))


_CENTERED = StftConfig(WindowSpec("centered_hann", 2048, 1024))
_NONCAUSAL = ModelConfig(causal=False, se_enabled=True)


def _build_presets() -> dict[str, PipelineConfig]:
    base = PipelineConfig()
    presets = {
        # Label encoding and loss sweep on the original non-causal model.
        "TP1": replace(base, stft=_CENTERED, model=_NONCAUSAL,
                       encoder=EncoderConfig(scheme="triangular"), loss=LossConfig("wbce", 1.0)),
        "TP2": replace(base, stft=_CENTERED, model=_NONCAUSAL, loss=LossConfig("wbce", 1.0)),
        "TP3": replace(base, stft=_CENTERED, model=_NONCAUSAL, loss=LossConfig("wbce", 10.0)),
        "TP4": replace(base, stft=_CENTERED, model=_NONCAUSAL,
                       loss=LossConfig("shift_tolerant", 1.0, 1)),
        "TP5": replace(base, stft=_CENTERED, model=_NONCAUSAL,
                       loss=LossConfig("shift_tolerant", 10.0, 1)),
        # Window sweep with the causal model.
        "H1": replace(base, stft=_CENTERED),
        "H2": replace(base, stft=StftConfig(WindowSpec("shifted_hann", 2048, 160))),
        "ST": replace(base, stft=_asym(160), loss=LossConfig("shift_tolerant", 10.0, 1)),
    }
    for i, delay in enumerate((160, 320, 480, 640, 800), start=1):
        presets[f"T{i}"] = replace(base, stft=_asym(delay))
    # Architecture and data variants on top of T1.
    t1 = presets["T1"]
    presets["A1"] = replace(t1, model=replace(t1.model, separate_offset_stack=True))
    presets["A2"] = replace(t1, model=replace(t1.model, velocity_conditioning=False))
    presets["A3"] = replace(t1, model=replace(t1.model, share_fraction=0.25))
    presets["A4"] = replace(t1, model=replace(t1.model, share_fraction=0.5))
    presets["A5"] = replace(t1, model=replace(t1.model, share_fraction=1.0))
    presets["A6"] = replace(t1, encoder=replace(t1.encoder, n_frames=1000))
    return {name: replace(cfg, variant_id=name) for name, cfg in presets.items()}


PRESETS = _build_presets()
PRESET_IDS = ("TP1", "TP2", "TP3", "TP4", "TP5", "H1", "H2", "T1", "T2", "T3", "T4", "T5", "ST",
              "A1", "A2", "A3", "A4", "A5", "A6")


def preset(name: str) -> PipelineConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_IDS)}") from None


def load_config(path) -> PipelineConfig:
    """Parse a UTF-8 JSON pipeline config; unknown keys are fatal.

    A top-level ``variant_id`` must name a preset; the preset is then the
    base and the remaining keys override it field by field.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"config {path} is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    name = data.get("variant_id")
    if name is not None:
        data = _merge(preset(name).to_dict(), data)
    return PipelineConfig.from_dict(data)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out
