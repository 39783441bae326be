"""Cosine-similarity classification head and its training loss.

A case is classified by comparing its image embedding against exactly two
text embeddings (negative prompt, positive prompt): temperature-scaled
cosine similarities go through a softmax, ties resolve to negative. The
training loss is cross-entropy over the image logits only; there is no
symmetric text-side term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

COSINE_EPS = 1e-12
DEFAULT_TEMPERATURE = 0.07


@dataclass
class CasePrediction:
    logits: np.ndarray  # (2,) negative, positive
    probabilities: np.ndarray  # (2,) softmax of logits
    label: int  # 1 only when p_pos strictly exceeds p_neg


def _check_nonzero_norms(norms: np.ndarray, side: str) -> None:
    if np.any(norms == 0.0):
        raise ValueError(f"zero-vector {side} embedding has no direction for cosine similarity")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of two 1-d embeddings, eps-guarded in the denominator."""
    if a.shape != b.shape or a.ndim != 1:
        raise T.ShapeError(f"cosine_similarity expects matching 1-d shapes, got {a.shape}, {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    _check_nonzero_norms(np.array([na]), "left")
    _check_nonzero_norms(np.array([nb]), "right")
    dot = (a * b).sum()
    norm_a = T.tsqrt((a * a).sum())
    norm_b = T.tsqrt((b * b).sum())
    return dot / (norm_a * norm_b + COSINE_EPS)


def cosine_matrix(image_emb: Tensor, text_emb: Tensor) -> Tensor:
    """(B, De) x (n, De) -> (B, n) pairwise cosines, same eps guard."""
    if image_emb.ndim != 2 or text_emb.ndim != 2 or image_emb.shape[1] != text_emb.shape[1]:
        raise T.ShapeError(
            f"cosine_matrix expects (B, De) and (n, De), got {image_emb.shape}, {text_emb.shape}"
        )
    _check_nonzero_norms(np.linalg.norm(image_emb.data, axis=1), "image")
    _check_nonzero_norms(np.linalg.norm(text_emb.data, axis=1), "text")
    dots = T.matmul(image_emb, T.transpose(text_emb, (1, 0)))
    na = T.tsqrt((image_emb * image_emb).sum(axis=1, keepdims=True))
    nb = T.tsqrt((text_emb * text_emb).sum(axis=1, keepdims=True))
    denom = T.matmul(na, T.transpose(nb, (1, 0))) + COSINE_EPS
    return dots / denom


def case_logits(image_emb: Tensor, text_emb: Tensor, temperature: float = DEFAULT_TEMPERATURE) -> Tensor:
    """Temperature-scaled cosine logits, (B, n)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return cosine_matrix(image_emb, text_emb) * (1.0 / temperature)


def predict(image_emb: Tensor, text_neg: Tensor, text_pos: Tensor,
            temperature: float = DEFAULT_TEMPERATURE) -> CasePrediction:
    """Classify one case embedding against the prompt pair."""
    img = image_emb.reshape((1, image_emb.shape[-1]))
    txt = T.concat([text_neg.reshape((1, -1)), text_pos.reshape((1, -1))], axis=0)
    logits = case_logits(img, txt, temperature)
    probs = T.softmax(logits, axis=-1).data[0]
    lg = logits.data[0]
    return CasePrediction(
        logits=np.array(lg, copy=True),
        probabilities=np.array(probs, copy=True),
        label=int(probs[1] > probs[0]),
    )


def image_ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of each case's label under softmaxed image logits."""
    labels = np.asarray(labels)
    bsz, ncls = logits.shape
    if labels.shape != (bsz,):
        raise T.ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= ncls:
        raise ValueError("label outside logit range")
    logp = T.log_softmax(logits, axis=-1)
    flat = logp.reshape((bsz * ncls,))
    picked = T.take(flat, np.arange(bsz, dtype=np.int64) * ncls + labels.astype(np.int64), axis=0)
    return -picked.mean()
