"""Assembly of both encoders and the contrastive head over one registry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objective
from . import tensor as T
from .adapters import AdapterConfig
from .nn import ParameterRegistry
from .tensor import Tensor
from .text import TextConfig, TextEncoder
from .vision import VisionConfig, VisionEncoder


@dataclass(frozen=True)
class ModelConfig:
    vision: VisionConfig = field(default_factory=VisionConfig)
    text: TextConfig = field(default_factory=TextConfig)
    adapters: AdapterConfig | None = field(default_factory=AdapterConfig)
    temperature: float = objective.DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.vision.embed_dim != self.text.embed_dim:
            raise ValueError(
                f"encoders disagree on embedding width: vision {self.vision.embed_dim}, "
                f"text {self.text.embed_dim}"
            )
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


class VisionTextModel:
    """Two encoders sharing a registry, plus the cosine/temperature head."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.vision = VisionEncoder(cfg.vision, cfg.adapters)
        self.text = TextEncoder(cfg.text, cfg.adapters)
        self.registry = ParameterRegistry()

    @classmethod
    def build(cls, cfg: ModelConfig) -> "VisionTextModel":
        model = cls(cfg)
        model.vision.register(model.registry)
        model.text.register(model.registry)
        return model

    def materialize(self, seed: int, dtype=np.float32, std: float | None = None) -> None:
        if std is None:
            self.registry.materialize(seed=seed, dtype=dtype)
        else:
            self.registry.materialize(seed=seed, dtype=dtype, std=std)
        self.bind()

    def bind(self) -> None:
        self.vision.bind(self.registry)
        self.text.bind(self.registry)

    # -- forward paths ---------------------------------------------------

    def _as_image_tensor(self, images) -> Tensor:
        if isinstance(images, Tensor):
            return images
        dtype = self.registry.get("vision.patch.weight").dtype
        return Tensor(np.asarray(images), dtype=dtype)

    def encode_images(self, images) -> Tensor:
        return self.vision.forward(self._as_image_tensor(images))

    def encode_texts(self, ids: np.ndarray) -> Tensor:
        return self.text.forward(ids)

    def logits(self, images, prompt_ids: np.ndarray) -> Tensor:
        img = self.encode_images(images)
        txt = self.encode_texts(prompt_ids)
        return objective.case_logits(img, txt, self.cfg.temperature)

    def loss(self, images, prompt_ids: np.ndarray, labels: np.ndarray) -> Tensor:
        return objective.image_ce_loss(self.logits(images, prompt_ids), labels)

    def predict_batch(self, images, prompt_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Hard labels and positive-class probabilities, ties to negative."""
        logits = self.logits(images, prompt_ids)
        probs = T.softmax(logits, axis=-1).data
        p_pos = np.array(probs[:, 1], copy=True)
        labels = (probs[:, 1] > probs[:, 0]).astype(np.int64)
        return labels, p_pos

    # -- bookkeeping -------------------------------------------------------

    def trainable_tensors(self) -> list[tuple[str, Tensor]]:
        return [(e.name, e.tensor) for e in self.registry.entries() if e.trainable]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return self.registry.state_arrays()
