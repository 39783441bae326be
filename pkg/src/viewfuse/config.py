"""Run configuration: JSON in, validated dataclasses out.

Unknown keys are rejected with their dotted path, so a typo like
``train.batch_sizes`` fails loudly instead of silently using a default.
``config_hash`` fingerprints the canonical JSON form, which is how runs
get compared for reproducibility.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .adapters import AdapterConfig
from .model import ModelConfig
from .text import TextConfig
from .training import TrainConfig
from .vision import VisionConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    manifest: str = ""
    image_size: int = 64
    downsample: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


# nested sections are scoped by parent type: AdapterConfig also has a
# field literally named "vision" (a bool), which must stay a plain value
_NESTED = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "data"): DataConfig,
    (ModelConfig, "vision"): VisionConfig,
    (ModelConfig, "text"): TextConfig,
    (ModelConfig, "adapters"): AdapterConfig,
}

_TUPLE_FIELDS = {"erase_area", "views"}


def _build(dc_type, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError(f"unknown config field {path!r}")
        nested = _NESTED.get((dc_type, key))
        if nested is not None:
            if dataclasses.is_dataclass(value) and not isinstance(value, type):
                pass  # already-built section, keep as-is
            else:
                value = _build(nested, value, path)
        elif key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return dc_type(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix or 'config'}: {exc}") from None


def run_config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "")


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return run_config_from_dict(raw)


def config_to_dict(cfg) -> dict:
    """Dataclass tree to plain JSON-ready dict (tuples become lists)."""
    out = dataclasses.asdict(cfg)

    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    return clean(out)


def config_hash(cfg_dict: dict) -> str:
    """First 12 hex chars of sha256 over canonical (sorted, compact) JSON."""
    blob = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# audit presets: full-scale tower shapes for parameter counting


def _preset_vitb32() -> ModelConfig:
    return ModelConfig(
        vision=VisionConfig(
            image_size=224, patch_size=32, width=768, heads=12,
            depth_local=6, depth_global=6, embed_dim=512,
        ),
        text=TextConfig(
            vocab_size=49408, context_length=77, width=512, heads=8,
            depth=12, embed_dim=512,
        ),
    )


def _preset_vitb16() -> ModelConfig:
    return ModelConfig(
        vision=VisionConfig(
            image_size=224, patch_size=16, width=768, heads=12,
            depth_local=6, depth_global=6, embed_dim=512,
        ),
        text=TextConfig(
            vocab_size=49408, context_length=77, width=512, heads=8,
            depth=12, embed_dim=512,
        ),
    )


def _preset_vitl14() -> ModelConfig:
    return ModelConfig(
        vision=VisionConfig(
            image_size=224, patch_size=14, width=1024, heads=16,
            depth_local=12, depth_global=12, embed_dim=768,
        ),
        text=TextConfig(
            vocab_size=4096, context_length=77, width=768, heads=12,
            depth=12, embed_dim=768,
        ),
    )


AUDIT_PRESETS = {
    "vitb32": _preset_vitb32,
    "vitb16": _preset_vitb16,
    "vitl14": _preset_vitl14,
}


def audit_preset(name: str) -> ModelConfig:
    try:
        return AUDIT_PRESETS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown audit preset {name!r}, choose from {sorted(AUDIT_PRESETS)}"
        ) from None
