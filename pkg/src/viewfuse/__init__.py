"""Multi-view image/text contrastive models on a numpy autodiff core."""

__version__ = "0.1.0"

from .adapters import AdapterConfig, apply_freeze_policy
from .config import RunConfig, audit_preset, config_hash, load_run_config
from .datasets import SyntheticSpec, generate_synthetic, load_cases, load_manifest
from .model import ModelConfig, VisionTextModel
from .tensor import NonFiniteError, ShapeError, Tensor, backward
from .text import TextConfig, Vocabulary, canonical_prompts, encode_prompt_pair
from .training import TrainConfig, cross_validate, evaluate, fit
from .vision import VIEW_ORDER, VisionConfig

__all__ = [
    "__version__",
    "AdapterConfig",
    "ModelConfig",
    "NonFiniteError",
    "RunConfig",
    "ShapeError",
    "SyntheticSpec",
    "Tensor",
    "TextConfig",
    "TrainConfig",
    "VIEW_ORDER",
    "VisionConfig",
    "VisionTextModel",
    "Vocabulary",
    "apply_freeze_policy",
    "audit_preset",
    "backward",
    "canonical_prompts",
    "config_hash",
    "cross_validate",
    "encode_prompt_pair",
    "evaluate",
    "fit",
    "generate_synthetic",
    "load_cases",
    "load_manifest",
    "load_run_config",
]
