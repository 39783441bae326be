"""Parameter registry and transformer building blocks.

The registry is two-phase: builders ``register`` named shapes first (audit
and freeze policy work on shapes alone, so full-scale backbones can be
counted without allocating hundreds of millions of floats), and
``materialize`` then allocates and initializes tensors in registration
order from a single seeded stream. Because draws are consumed strictly in
registration order, two configs that register the same shape sequence get
identical values, whatever the entries are named.

Blocks follow the pre-norm recurrence with post-residual adapters:

    a = Adap1(MSA(LN(x)) + x)
    y = Adap2(MLP(LN(a)) + a)
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .adapters import AdapterConfig, AdapterParams, adapter_forward, fetch_adapter, register_adapter
from .tensor import ShapeError, Tensor

INIT_STD = 0.02
MASK_FILL = -1e9  # finite, and exp() underflows to exactly 0 after max-shift


@dataclass
class ParamEntry:
    name: str
    shape: tuple[int, ...]
    init: str
    trainable: bool
    tensor: Tensor | None = None

    @property
    def count(self) -> int:
        n = 1
        for s in self.shape:
            n *= s
        return n


class ParameterRegistry:
    """Ordered name -> parameter map with shape-only (unmaterialized) support."""

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}

    def register(self, name: str, shape, init: str = "trunc_normal", trainable: bool = True) -> None:
        if name in self._entries:
            raise ValueError(f"parameter {name!r} registered twice")
        if init not in ("trunc_normal", "zeros", "ones"):
            raise ValueError(f"unknown init {init!r} for {name!r}")
        self._entries[name] = ParamEntry(name, tuple(int(s) for s in shape), init, bool(trainable))

    def entry(self, name: str) -> ParamEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def entries(self):
        return self._entries.values()

    def names(self) -> list[str]:
        return list(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, name: str) -> Tensor:
        e = self.entry(name)
        if e.tensor is None:
            raise RuntimeError(f"parameter {name!r} is not materialized")
        return e.tensor

    def materialize(self, seed: int, dtype=np.float32, std: float = INIT_STD) -> None:
        """Allocate and initialize every entry, in registration order.

        Weights draw from a normal(0, std) clipped at two standard
        deviations; zeros/ones entries consume no randomness.
        """
        rng = np.random.default_rng(seed)
        for e in self._entries.values():
            if e.init == "zeros":
                data = np.zeros(e.shape, dtype=dtype)
            elif e.init == "ones":
                data = np.ones(e.shape, dtype=dtype)
            else:
                raw = rng.normal(0.0, std, size=e.shape)
                data = np.clip(raw, -2.0 * std, 2.0 * std).astype(dtype)
            e.tensor = Tensor(data, requires_grad=e.trainable, dtype=dtype)

    def set_trainable(self, name: str, flag: bool) -> None:
        e = self.entry(name)
        e.trainable = bool(flag)
        if e.tensor is not None:
            e.tensor.requires_grad = e.trainable

    def param_count(self, trainable_only: bool = False) -> int:
        return sum(e.count for e in self._entries.values() if e.trainable or not trainable_only)

    def trainable(self) -> list[ParamEntry]:
        return [e for e in self._entries.values() if e.trainable]

    def zero_grads(self) -> None:
        for e in self._entries.values():
            if e.tensor is not None:
                e.tensor.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for e in self._entries.values():
            if e.tensor is None:
                raise RuntimeError(f"parameter {e.name!r} is not materialized")
            out[e.name] = e.tensor.data
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values in by name; names and shapes must match exactly."""
        missing = [n for n in self._entries if n not in arrays]
        extra = [n for n in arrays if n not in self._entries]
        if missing or extra:
            raise KeyError(f"parameter name mismatch: missing={missing[:3]} extra={extra[:3]}")
        for name, e in self._entries.items():
            arr = arrays[name]
            if tuple(arr.shape) != e.shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {tuple(arr.shape)}, expected {e.shape}"
                )
            if e.tensor is None:
                e.tensor = Tensor(np.array(arr, copy=True), requires_grad=e.trainable)
            else:
                e.tensor.data = np.ascontiguousarray(arr, dtype=e.tensor.data.dtype).copy()


# ---------------------------------------------------------------------------
# parameter bundles


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class MlpParams:
    wi: Tensor
    bi: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class BlockParams:
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    mlp: MlpParams
    adapter1: AdapterParams | None
    adapter2: AdapterParams | None


def register_linear(reg: ParameterRegistry, prefix: str, din: int, dout: int) -> None:
    reg.register(f"{prefix}.weight", (din, dout))
    reg.register(f"{prefix}.bias", (dout,), init="zeros")


def register_layer_norm(reg: ParameterRegistry, prefix: str, dim: int) -> None:
    reg.register(f"{prefix}.gamma", (dim,), init="ones")
    reg.register(f"{prefix}.beta", (dim,), init="zeros")


def register_attention(reg: ParameterRegistry, prefix: str, dim: int) -> None:
    for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
        register_linear(reg, f"{prefix}.{proj}", dim, dim)


def register_mlp(reg: ParameterRegistry, prefix: str, dim: int) -> None:
    register_linear(reg, f"{prefix}.fc_in", dim, 4 * dim)
    register_linear(reg, f"{prefix}.fc_out", 4 * dim, dim)


def register_block(reg: ParameterRegistry, prefix: str, dim: int,
                   adapters: AdapterConfig | None) -> None:
    register_layer_norm(reg, f"{prefix}.ln1", dim)
    register_attention(reg, f"{prefix}.msa", dim)
    if adapters is not None and adapters.wants(1):
        register_adapter(reg, f"{prefix}.adapter1", dim, adapters.ratio)
    register_layer_norm(reg, f"{prefix}.ln2", dim)
    register_mlp(reg, f"{prefix}.mlp", dim)
    if adapters is not None and adapters.wants(2):
        register_adapter(reg, f"{prefix}.adapter2", dim, adapters.ratio)


def fetch_layer_norm(reg: ParameterRegistry, prefix: str) -> LayerNormParams:
    return LayerNormParams(reg.get(f"{prefix}.gamma"), reg.get(f"{prefix}.beta"))


def fetch_attention(reg: ParameterRegistry, prefix: str) -> AttentionParams:
    return AttentionParams(
        wq=reg.get(f"{prefix}.q_proj.weight"), bq=reg.get(f"{prefix}.q_proj.bias"),
        wk=reg.get(f"{prefix}.k_proj.weight"), bk=reg.get(f"{prefix}.k_proj.bias"),
        wv=reg.get(f"{prefix}.v_proj.weight"), bv=reg.get(f"{prefix}.v_proj.bias"),
        wo=reg.get(f"{prefix}.out_proj.weight"), bo=reg.get(f"{prefix}.out_proj.bias"),
    )


def fetch_mlp(reg: ParameterRegistry, prefix: str) -> MlpParams:
    return MlpParams(
        wi=reg.get(f"{prefix}.fc_in.weight"), bi=reg.get(f"{prefix}.fc_in.bias"),
        wo=reg.get(f"{prefix}.fc_out.weight"), bo=reg.get(f"{prefix}.fc_out.bias"),
    )


def fetch_block(reg: ParameterRegistry, prefix: str, adapters: AdapterConfig | None) -> BlockParams:
    a1 = fetch_adapter(reg, f"{prefix}.adapter1") if adapters is not None and adapters.wants(1) else None
    a2 = fetch_adapter(reg, f"{prefix}.adapter2") if adapters is not None and adapters.wants(2) else None
    return BlockParams(
        ln1=fetch_layer_norm(reg, f"{prefix}.ln1"),
        attn=fetch_attention(reg, f"{prefix}.msa"),
        ln2=fetch_layer_norm(reg, f"{prefix}.ln2"),
        mlp=fetch_mlp(reg, f"{prefix}.mlp"),
        adapter1=a1,
        adapter2=a2,
    )


# ---------------------------------------------------------------------------
# forward functions


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.matmul(x, w) + b


def patch_embed(images: Tensor, w: Tensor, b: Tensor, patch_size: int) -> Tensor:
    """(B, H, W, C) images to (B, L, D) patch tokens via unfold + matmul."""
    bsz, h, wdt, ch = images.shape
    p = patch_size
    if h % p or wdt % p:
        raise ShapeError(f"image size {h}x{wdt} not divisible by patch size {p}")
    gh, gw = h // p, wdt // p
    x = images.reshape((bsz, gh, p, gw, p, ch))
    x = T.transpose(x, (0, 1, 3, 2, 4, 5))
    x = x.reshape((bsz, gh * gw, p * p * ch))
    return linear(x, w, b)


def assemble_sequence(patches: Tensor, class_token: Tensor, pos_embed: Tensor) -> Tensor:
    """Prepend the class token and add positions: (B, L, D) -> (B, 1+L, D)."""
    bsz, length, dim = patches.shape
    if pos_embed.shape != (length + 1, dim):
        raise ShapeError(f"pos_embed shape {pos_embed.shape} != ({length + 1}, {dim})")
    cls = T.broadcast_to(class_token.reshape((1, 1, dim)), (bsz, 1, dim))
    return T.concat([cls, patches], axis=1) + pos_embed


@lru_cache(maxsize=32)
def _causal_mask_np(t: int, dtype_name: str) -> np.ndarray:
    mask = np.zeros((t, t), dtype=np.dtype(dtype_name))
    mask[np.triu_indices(t, k=1)] = MASK_FILL
    return mask


def mha_forward(x: Tensor, p: AttentionParams, heads: int, causal: bool = False) -> Tensor:
    bsz, t, dim = x.shape
    if dim % heads:
        raise ShapeError(f"width {dim} not divisible by {heads} heads")
    dh = dim // heads
    scale = 1.0 / np.sqrt(dh)

    q = linear(x, p.wq, p.bq).reshape((bsz, t, heads, dh)).transpose((0, 2, 1, 3))
    k = linear(x, p.wk, p.bk).reshape((bsz, t, heads, dh)).transpose((0, 2, 3, 1))
    v = linear(x, p.wv, p.bv).reshape((bsz, t, heads, dh)).transpose((0, 2, 1, 3))

    scores = T.matmul(q, k) * scale
    if causal:
        scores = scores + Tensor(_causal_mask_np(t, x.dtype.name))
    attn = T.softmax(scores, axis=-1)
    ctx = T.matmul(attn, v).transpose((0, 2, 1, 3)).reshape((bsz, t, dim))
    return linear(ctx, p.wo, p.bo)


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    return linear(T.gelu(linear(x, p.wi, p.bi)), p.wo, p.bo)


def block_forward(x: Tensor, p: BlockParams, heads: int, causal: bool = False) -> Tensor:
    a = mha_forward(T.layer_norm(x, p.ln1.gamma, p.ln1.beta), p.attn, heads, causal) + x
    if p.adapter1 is not None:
        a = adapter_forward(a, p.adapter1)
    m = mlp_forward(T.layer_norm(a, p.ln2.gamma, p.ln2.beta), p.mlp) + a
    if p.adapter2 is not None:
        m = adapter_forward(m, p.adapter2)
    return m
