"""Word-level tokenizer, prompt constants, and the causal text encoder.

The tokenizer lowercases, splits on whitespace and punctuation, and maps
words through a vocabulary built from a training corpus (here: the four
canonical prompts). Sequences are framed as ``<sos> words <eos>`` and
padded; the encoder is a causal pre-norm transformer pooled at the EOS
position, so padding beyond EOS can never influence the embedding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import nn
from . import tensor as T
from .adapters import AdapterConfig
from .tensor import ShapeError, Tensor

PAD, SOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")

_WORD_RE = re.compile(r"[a-z0-9]+")


def tokenize_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class PromptSet:
    train_negative: str
    train_positive: str
    zeroshot_negative: str
    zeroshot_positive: str

    def all(self) -> tuple[str, str, str, str]:
        return (self.train_negative, self.train_positive,
                self.zeroshot_negative, self.zeroshot_positive)

    def pair(self, zero_shot: bool = False) -> tuple[str, str]:
        if zero_shot:
            return self.zeroshot_negative, self.zeroshot_positive
        return self.train_negative, self.train_positive


def canonical_prompts() -> PromptSet:
    return PromptSet(
        train_negative=(
            "This is a normal mammogram case with left craniocaudal, right craniocaudal, "
            "left mediolateral oblique, and right mediolateral oblique views, all showing "
            "no signs of abnormalities."
        ),
        train_positive=(
            "This is an abnormal mammogram case with left craniocaudal, right craniocaudal, "
            "left mediolateral oblique, and right mediolateral oblique views, where "
            "abnormalities are present in one or more views."
        ),
        zeroshot_negative="This is a normal mammogram case.",
        zeroshot_positive="This is an abnormal mammogram case.",
    )


def encode_prompt_pair(
    vocab: "Vocabulary",
    context_length: int,
    zero_shot: bool = False,
    trim: bool = True,
) -> np.ndarray:
    """Encode the (negative, positive) prompt pair as a (2, T) id array.

    With trim=True, T shrinks to the longest prompt's EOS position plus
    one; trailing padding cannot affect the EOS-pooled embedding, so this
    only saves compute.
    """
    pair = canonical_prompts().pair(zero_shot)
    ids = np.stack([vocab.encode(p, context_length) for p in pair])
    if trim:
        eos_cols = np.argmax(ids == EOS, axis=1)
        ids = ids[:, : int(eos_cols.max()) + 1]
    return ids


class Vocabulary:
    """Specials first, then the corpus words sorted and deduplicated."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = tuple(tokens)
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpus: Iterable[str]) -> "Vocabulary":
        words = sorted({w for text in corpus for w in tokenize_words(text)})
        return cls(SPECIAL_TOKENS + tuple(words))

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str, context_length: int = 64) -> np.ndarray:
        """``<sos> words <eos>`` padded to context_length, as int64 ids."""
        words = tokenize_words(text)
        if len(words) + 2 > context_length:
            raise ValueError(
                f"prompt needs {len(words) + 2} positions, context is {context_length}"
            )
        ids = np.full(context_length, PAD, dtype=np.int64)
        ids[0] = SOS
        for i, w in enumerate(words, start=1):
            ids[i] = self.index.get(w, UNK)
        ids[len(words) + 1] = EOS
        return ids

    def decode_words(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i > UNK:
                out.append(self.tokens[int(i)])
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(line.rstrip("\n") for line in fh if line.strip()))


@dataclass(frozen=True)
class TextConfig:
    vocab_size: int = 64
    context_length: int = 64
    width: int = 64
    heads: int = 4
    depth: int = 4
    embed_dim: int = 32

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ValueError("text encoder needs at least one block")
        if self.vocab_size <= UNK:
            raise ValueError("vocab size must cover the special tokens")
        if self.context_length < 3:
            raise ValueError("context must fit <sos> word <eos>")


class TextEncoder:
    def __init__(self, cfg: TextConfig, adapters: AdapterConfig | None = None):
        self.cfg = cfg
        self.adapters = adapters if (adapters is None or adapters.text) else None
        self._blocks: list[nn.BlockParams] = []

    def register(self, reg: nn.ParameterRegistry) -> None:
        c = self.cfg
        reg.register("text.token_embedding", (c.vocab_size, c.width))
        reg.register("text.pos_embed", (c.context_length, c.width))
        for n in range(c.depth):
            nn.register_block(reg, f"text.blocks.{n}", c.width, self.adapters)
        nn.register_linear(reg, "text.proj", c.width, c.embed_dim)

    def bind(self, reg: nn.ParameterRegistry) -> None:
        c = self.cfg
        self._emb = reg.get("text.token_embedding")
        self._pos = reg.get("text.pos_embed")
        self._blocks = [nn.fetch_block(reg, f"text.blocks.{n}", self.adapters) for n in range(c.depth)]
        self._proj_w = reg.get("text.proj.weight")
        self._proj_b = reg.get("text.proj.bias")

    def forward(self, ids: np.ndarray) -> Tensor:
        """(B, T) int ids to (B, embed_dim); pooled at each row's EOS."""
        c = self.cfg
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ShapeError(f"expected (B, T) token ids, got shape {ids.shape}")
        bsz, t = ids.shape
        if t > c.context_length:
            raise ShapeError(f"sequence length {t} exceeds context {c.context_length}")
        if ids.min() < 0 or ids.max() >= c.vocab_size:
            raise ValueError("token id out of vocabulary range")
        has_eos = (ids == EOS).any(axis=1)
        if not has_eos.all():
            raise ValueError(f"EOS missing in sequence(s) {np.where(~has_eos)[0].tolist()}")
        eos_pos = np.argmax(ids == EOS, axis=1)

        x = T.take(self._emb, ids.reshape(-1), axis=0).reshape((bsz, t, c.width))
        x = x + self._pos[:t, :]
        for blk in self._blocks:
            x = nn.block_forward(x, blk, c.heads, causal=True)

        flat = x.reshape((bsz * t, c.width))
        rows = T.take(flat, np.arange(bsz, dtype=np.int64) * t + eos_pos, axis=0)
        return nn.linear(rows, self._proj_w, self._proj_b)
