"""Multi-view vision encoder with token-level fusion.

Every view passes through the same weight-shared local blocks, then the
per-view token sequences (class token first) are concatenated along the
token axis in fixed view order and the global blocks attend across the
whole fused sequence. The case embedding pools the V class tokens (mean by
default) and projects to the shared embedding width.

View k's sub-sequence starts at offset ``k * (1 + L)`` of the fused
sequence; positions are not re-applied at the fusion boundary. With
``view_embedding`` enabled, a learnable per-view vector is added to every
token of its view at that boundary, giving the global blocks an explicit
view-identity signal (off by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from . import tensor as T
from .adapters import AdapterConfig
from .tensor import ShapeError, Tensor

VIEW_ORDER = ("LCC", "RCC", "LMLO", "RMLO")


@dataclass(frozen=True)
class VisionConfig:
    image_size: int = 64
    patch_size: int = 8
    width: int = 64
    heads: int = 4
    depth_local: int = 0
    depth_global: int = 4
    embed_dim: int = 32
    views: tuple[str, ...] = VIEW_ORDER
    pooling: str = "mean"  # mean | first
    channels: int = 3
    view_embedding: bool = False

    _POOLING_ALIASES = {"mean_class_tokens": "mean", "first_class_token": "first"}

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}"
            )
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.depth_local < 0 or self.depth_global < 0:
            raise ValueError("block depths must be non-negative")
        if self.depth_local + self.depth_global < 1:
            raise ValueError("encoder needs at least one block")
        pooling = self._POOLING_ALIASES.get(self.pooling, self.pooling)
        if pooling not in ("mean", "first"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        object.__setattr__(self, "pooling", pooling)
        views = tuple(self.views)
        if not views or len(set(views)) != len(views):
            raise ValueError(f"views must be a non-empty unique tuple, got {views!r}")
        unknown = [v for v in views if v not in VIEW_ORDER]
        if unknown:
            raise ValueError(f"unknown view names {unknown!r}; valid: {VIEW_ORDER}")
        ordered = tuple(v for v in VIEW_ORDER if v in views)
        if views != ordered:
            raise ValueError(f"views must follow the canonical order {VIEW_ORDER}, got {views!r}")
        object.__setattr__(self, "views", views)

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def tokens_per_view(self) -> int:
        return 1 + self.num_patches


@dataclass
class FusedSequence:
    """Token-level concatenation of per-view sequences."""

    tokens: Tensor  # (V * (1 + L), D)
    offsets: tuple[int, ...]  # index of each view's class token


def fuse_tokens(sequences: Sequence[Tensor]) -> FusedSequence:
    """Concatenate per-view (1+L, D) sequences along the token axis."""
    if not sequences:
        raise ValueError("fuse_tokens needs at least one view sequence")
    first = sequences[0]
    for s in sequences[1:]:
        if s.shape != first.shape:
            raise ShapeError(f"view sequences disagree: {first.shape} vs {s.shape}")
    span = first.shape[0]
    offsets = tuple(k * span for k in range(len(sequences)))
    return FusedSequence(tokens=T.concat(list(sequences), axis=0), offsets=offsets)


class VisionEncoder:
    def __init__(self, cfg: VisionConfig, adapters: AdapterConfig | None = None):
        self.cfg = cfg
        self.adapters = adapters if (adapters is None or adapters.vision) else None
        self._registry = None
        self._blocks_local: list[nn.BlockParams] = []
        self._blocks_global: list[nn.BlockParams] = []

    # -- registration / binding ----------------------------------------

    def register(self, reg: nn.ParameterRegistry) -> None:
        c = self.cfg
        patch_in = c.patch_size * c.patch_size * c.channels
        nn.register_linear(reg, "vision.patch", patch_in, c.width)
        reg.register("vision.class_token", (c.width,))
        reg.register("vision.pos_embed", (c.tokens_per_view, c.width))
        if c.view_embedding:
            reg.register("vision.view_embed", (c.num_views, c.width))
        for n in range(c.depth_local):
            nn.register_block(reg, f"vision.local.{n}", c.width, self.adapters)
        for n in range(c.depth_global):
            nn.register_block(reg, f"vision.global.{n}", c.width, self.adapters)
        nn.register_linear(reg, "vision.proj", c.width, c.embed_dim)

    def bind(self, reg: nn.ParameterRegistry) -> None:
        c = self.cfg
        self._registry = reg
        self._patch_w = reg.get("vision.patch.weight")
        self._patch_b = reg.get("vision.patch.bias")
        self._cls = reg.get("vision.class_token")
        self._pos = reg.get("vision.pos_embed")
        self._viewemb = reg.get("vision.view_embed") if c.view_embedding else None
        self._blocks_local = [
            nn.fetch_block(reg, f"vision.local.{n}", self.adapters) for n in range(c.depth_local)
        ]
        self._blocks_global = [
            nn.fetch_block(reg, f"vision.global.{n}", self.adapters) for n in range(c.depth_global)
        ]
        self._proj_w = reg.get("vision.proj.weight")
        self._proj_b = reg.get("vision.proj.bias")

    # -- forward --------------------------------------------------------

    def forward(self, images: Tensor) -> Tensor:
        """(B, V, H, W, C) case images to (B, embed_dim) case embeddings."""
        c = self.cfg
        if images.ndim != 5 or images.shape[1:] != (c.num_views, c.image_size, c.image_size, c.channels):
            raise ShapeError(
                f"expected images (B, {c.num_views}, {c.image_size}, {c.image_size}, {c.channels}),"
                f" got {images.shape}"
            )
        bsz = images.shape[0]
        v = c.num_views
        span = c.tokens_per_view

        x = images.reshape((bsz * v, c.image_size, c.image_size, c.channels))
        x = nn.patch_embed(x, self._patch_w, self._patch_b, c.patch_size)
        x = nn.assemble_sequence(x, self._cls, self._pos)
        for blk in self._blocks_local:
            x = nn.block_forward(x, blk, c.heads)

        # Fusion: (B*V, 1+L, D) rows are case-major, so this reshape is the
        # token-axis concatenation of the V views in canonical order.
        x = x.reshape((bsz, v * span, c.width))
        if self._viewemb is not None:
            segs = np.repeat(np.arange(v, dtype=np.int64), span)
            x = x + T.take(self._viewemb, segs, axis=0)
        for blk in self._blocks_global:
            x = nn.block_forward(x, blk, c.heads)

        offsets = np.arange(v, dtype=np.int64) * span
        cls_tokens = T.take(x, offsets, axis=1)  # (B, V, D)
        if c.pooling == "mean":
            pooled = cls_tokens.mean(axis=1)
        else:
            pooled = cls_tokens[:, 0, :]
        return nn.linear(pooled, self._proj_w, self._proj_b)

    def encode_case(self, view_images: Sequence[np.ndarray]) -> Tensor:
        """Single-case convenience wrapper over the batched forward."""
        c = self.cfg
        if len(view_images) != c.num_views:
            raise ShapeError(f"expected {c.num_views} views, got {len(view_images)}")
        stack = np.stack([np.asarray(img) for img in view_images])[None]
        dtype = self._patch_w.dtype
        return self.forward(Tensor(stack, dtype=dtype))[0]
