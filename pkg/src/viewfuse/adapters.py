"""Bottleneck adapters: residual down-project / gelu / up-project units.

An adapter maps ``x -> x + up(gelu(down(x)))`` with bottleneck width
``d = max(1, D // ratio)``. The up-projection starts at zero, so a freshly
injected adapter is exactly the identity and the surrounding network's
function is unchanged until training moves it.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class AdapterConfig:
    """Where adapters go and how narrow they are."""

    ratio: int = 32
    placement: str = "both"  # both | msa_only | mlp_only
    vision: bool = True
    text: bool = True

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError(f"adapter ratio must be >= 1, got {self.ratio}")
        if self.placement not in ("both", "msa_only", "mlp_only"):
            raise ValueError(f"unknown adapter placement {self.placement!r}")

    def wants(self, slot: int) -> bool:
        # Slot 1 follows attention, slot 2 follows the MLP.
        if self.placement == "both":
            return True
        return slot == (1 if self.placement == "msa_only" else 2)


@dataclass
class AdapterParams:
    down_w: Tensor
    down_b: Tensor
    up_w: Tensor
    up_b: Tensor


def adapter_dim(width: int, ratio: int) -> int:
    return max(1, width // ratio)


def adapter_param_count(width: int, ratio: int) -> int:
    d = adapter_dim(width, ratio)
    return 2 * width * d + d + width


def register_adapter(registry, prefix: str, width: int, ratio: int) -> None:
    d = adapter_dim(width, ratio)
    registry.register(f"{prefix}.down.weight", (width, d), init="trunc_normal")
    registry.register(f"{prefix}.down.bias", (d,), init="zeros")
    # Zero-initialized up-projection makes the unit an exact identity.
    registry.register(f"{prefix}.up.weight", (d, width), init="zeros")
    registry.register(f"{prefix}.up.bias", (width,), init="zeros")


def fetch_adapter(registry, prefix: str) -> AdapterParams:
    return AdapterParams(
        down_w=registry.get(f"{prefix}.down.weight"),
        down_b=registry.get(f"{prefix}.down.bias"),
        up_w=registry.get(f"{prefix}.up.weight"),
        up_b=registry.get(f"{prefix}.up.bias"),
    )


def adapter_forward(x: Tensor, p: AdapterParams) -> Tensor:
    h = T.gelu(T.matmul(x, p.down_w) + p.down_b)
    return x + (T.matmul(h, p.up_w) + p.up_b)


_ADAPTER_MARKERS = (".adapter1.", ".adapter2.")


def is_adapter_param(name: str) -> bool:
    return any(m in name for m in _ADAPTER_MARKERS)


def apply_freeze_policy(registry, mode: str, tune_heads: bool = False) -> dict[str, int]:
    """Set trainability: 'full' trains everything, 'adapters_only' trains
    just adapter parameters (plus the projection heads when ``tune_heads``).

    Returns {'total': n, 'trainable': m} over the registry.
    """
    if mode not in ("full", "adapters_only"):
        raise ValueError(f"unknown freeze mode {mode!r}")
    head_prefixes = ("vision.proj.", "text.proj.")
    for entry in registry.entries():
        if mode == "full":
            flag = True
        else:
            flag = is_adapter_param(entry.name)
            if tune_heads and entry.name.startswith(head_prefixes):
                flag = True
        registry.set_trainable(entry.name, flag)
    return {
        "total": registry.param_count(),
        "trainable": registry.param_count(trainable_only=True),
    }


def audit(registry) -> dict:
    """Parameter accounting: total, trainable, and trainable fraction."""
    total = registry.param_count()
    trainable = registry.param_count(trainable_only=True)
    fraction = trainable / total if total else 0.0
    return {"total": total, "trainable": trainable, "fraction": fraction}
