"""Training loop, augmentation, and split construction.

Augmentation order is fixed: one horizontal-flip coin per case (all views
flip together, so paired views stay geometrically consistent), then an
independent erase coin per view, then scale to [0, 1], then standardize
with statistics computed on the training fold. Evaluation skips the first
two steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .adapters import apply_freeze_policy
from .metrics import accuracy
from .model import VisionTextModel
from .optim import AdamW, AdamWConfig, lr_at
from .tensor import backward

TRAIN_MODES = ("full", "adapters_only")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 8
    base_lr: float = 5e-4
    min_lr: float = 1e-5
    warmup_epochs: int = 10
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hflip_prob: float = 0.5
    erase_prob: float = 0.25
    erase_area: tuple[float, float] = (0.02, 0.20)
    mode: str = "adapters_only"
    tune_heads: bool = False
    kfold: int = 0  # 0 = single holdout split, >= 2 = cross-validation
    val_fraction: float = 0.2
    stop_train_accuracy: float | None = None
    fold_workers: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(
                f"warmup_epochs ({self.warmup_epochs}) must be shorter than the run ({self.epochs})"
            )
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        lo, hi = self.erase_area
        if not 0 < lo <= hi < 1:
            raise ValueError(f"erase_area bounds must satisfy 0 < lo <= hi < 1, got {self.erase_area}")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.kfold != 0 and self.kfold < 2:
            raise ValueError("kfold must be 0 (holdout) or at least 2")


@dataclass
class LoadedCase:
    case_id: str
    images: np.ndarray  # (V, H, W, C) uint8
    label: int


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float
    train_accuracy: float | None = None


@dataclass
class FitResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_accuracy: float
    norm: NormStats
    param_total: int
    param_trainable: int


@dataclass
class EvalResult:
    case_ids: list[str]
    labels: np.ndarray
    predictions: np.ndarray
    scores: np.ndarray  # probability of the positive class
    accuracy: float


def compute_norm_stats(cases: list[LoadedCase], indices: np.ndarray) -> NormStats:
    """Scalar mean/std of training pixels after scaling to [0, 1]."""
    if len(indices) == 0:
        raise ValueError("cannot compute normalization from an empty training set")
    total = 0.0
    total_sq = 0.0
    count = 0
    for i in indices:
        x = cases[int(i)].images.astype(np.float64) / 255.0
        total += float(x.sum())
        total_sq += float(np.square(x).sum())
        count += x.size
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    std = math.sqrt(var)
    if std < 1e-6:
        std = 1.0  # constant images; standardizing would divide by ~0
    return NormStats(mean=mean, std=std)


def _erase_bounds(
    h: int, w: int, area_frac: float, aspect: float, lo: float, hi: float
) -> tuple[int, int]:
    """Rectangle dims whose realized area fraction stays inside [lo, hi].

    Rounding the side lengths can push the actual eh*ew/(h*w) outside the
    band the fraction was drawn from, so nudge one side back in.
    """
    area = area_frac * h * w
    eh = max(1, min(h, int(round(math.sqrt(area * aspect)))))
    ew = max(1, min(w, int(round(math.sqrt(area / aspect)))))
    total = h * w
    while eh * ew > hi * total and (eh > 1 or ew > 1):
        if eh >= ew and eh > 1:
            eh -= 1
        else:
            ew -= 1
    while eh * ew < lo * total and (eh < h or ew < w):
        if eh <= ew and eh < h:
            eh += 1
        else:
            ew += 1
    return eh, ew


def augment_case(images: np.ndarray, rng: np.random.Generator, cfg: TrainConfig, norm: NormStats) -> np.ndarray:
    """Flip, erase, scale, standardize. Returns float32 (V, H, W, C).

    Draw order is fixed (flip coin; per view: erase coin, then area,
    aspect, top, left only when erasing) so runs are reproducible from
    the generator state alone.
    """
    v, h, w, _ = images.shape
    out = images.copy()
    if rng.random() < cfg.hflip_prob:
        out = out[:, :, ::-1, :]
    lo, hi = cfg.erase_area
    for view in range(v):
        if rng.random() < cfg.erase_prob:
            area_frac = rng.uniform(lo, hi)
            aspect = rng.uniform(0.5, 2.0)
            eh, ew = _erase_bounds(h, w, area_frac, aspect, lo, hi)
            top = int(rng.integers(0, h - eh + 1))
            left = int(rng.integers(0, w - ew + 1))
            out[view, top:top + eh, left:left + ew, :] = 0
    x = out.astype(np.float32) / np.float32(255.0)
    return (x - np.float32(norm.mean)) / np.float32(norm.std)


def prepare_case(images: np.ndarray, norm: NormStats) -> np.ndarray:
    """Evaluation-path version of augment_case: scale and standardize only."""
    x = images.astype(np.float32) / np.float32(255.0)
    return (x - np.float32(norm.mean)) / np.float32(norm.std)


def stratified_kfold(labels: np.ndarray, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deal each class round-robin into k folds after a seeded shuffle.

    Returns [(train_idx, val_idx)] per fold; every index lands in exactly
    one val fold and fold class counts differ by at most one.
    """
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError("labels must be 1-d")
    if k < 2:
        raise ValueError("k must be at least 2")
    class_counts = [int((y == c).sum()) for c in np.unique(y)]
    if min(class_counts) < k:
        raise ValueError(f"smallest class has {min(class_counts)} cases, fewer than k={k} folds")
    rng = np.random.default_rng((seed, 0xF01D))
    folds: list[list[int]] = [[] for _ in range(k)]
    for c in np.unique(y):
        idx = np.nonzero(y == c)[0]
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            folds[j % k].append(int(i))
    out = []
    all_idx = set(range(y.shape[0]))
    for f in range(k):
        val = np.array(sorted(folds[f]), dtype=np.int64)
        train = np.array(sorted(all_idx - set(folds[f])), dtype=np.int64)
        out.append((train, val))
    return out


def stratified_holdout(labels: np.ndarray, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Single stratified train/val split; at least one case per class in val."""
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError("labels must be 1-d")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must be in (0, 1)")
    rng = np.random.default_rng((seed, 0x401D))
    val_parts = []
    train_parts = []
    for c in np.unique(y):
        idx = np.nonzero(y == c)[0]
        rng.shuffle(idx)
        n_val = max(1, int(round(val_fraction * idx.shape[0])))
        if n_val >= idx.shape[0]:
            raise ValueError(f"val_fraction {val_fraction} leaves no training cases for class {int(c)}")
        val_parts.append(idx[:n_val])
        train_parts.append(idx[n_val:])
    val = np.sort(np.concatenate(val_parts)).astype(np.int64)
    train = np.sort(np.concatenate(train_parts)).astype(np.int64)
    return train, val


def _stack_batch(cases: list[LoadedCase], indices, transform) -> tuple[np.ndarray, np.ndarray]:
    imgs = np.stack([transform(cases[int(i)].images) for i in indices])
    labels = np.array([cases[int(i)].label for i in indices], dtype=np.int64)
    return imgs, labels


def evaluate(
    model: VisionTextModel,
    cases: list[LoadedCase],
    indices: np.ndarray,
    prompt_ids: np.ndarray,
    norm: NormStats,
    batch_size: int = 8,
) -> EvalResult:
    if len(indices) == 0:
        raise ValueError("cannot evaluate on an empty index set")
    ids, labels, preds, scores = [], [], [], []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start:start + batch_size]
        imgs, y = _stack_batch(cases, chunk, lambda im: prepare_case(im, norm))
        p, s = model.predict_batch(imgs, prompt_ids)
        ids.extend(cases[int(i)].case_id for i in chunk)
        labels.append(y)
        preds.append(p)
        scores.append(s)
    labels = np.concatenate(labels)
    preds = np.concatenate(preds)
    scores = np.concatenate(scores)
    return EvalResult(
        case_ids=ids,
        labels=labels,
        predictions=preds,
        scores=scores,
        accuracy=accuracy(labels, preds),
    )


def fit(
    model: VisionTextModel,
    cases: list[LoadedCase],
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    prompt_ids: np.ndarray,
    cfg: TrainConfig,
    seed: int,
) -> FitResult:
    """Train in place; the registry ends up holding the best-epoch weights.

    Best epoch is the highest validation accuracy, earliest epoch on ties.
    If stop_train_accuracy is set, training also stops once accuracy on
    the (unaugmented) training fold reaches that level.
    """
    if len(train_idx) == 0:
        raise ValueError("empty training split")
    if len(val_idx) == 0:
        raise ValueError("empty validation split")
    norm = compute_norm_stats(cases, train_idx)
    counts = apply_freeze_policy(model.registry, cfg.mode, tune_heads=cfg.tune_heads)
    optimizer = AdamW(
        model.registry,
        AdamWConfig(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay),
    )

    history: list[EpochRecord] = []
    best_epoch = -1
    best_val = -1.0
    best_state: dict[str, np.ndarray] | None = None
    track_train = cfg.stop_train_accuracy is not None

    for epoch in range(cfg.epochs):
        # independent streams per purpose: reordering the shuffle cannot
        # perturb the augmentation draws, and vice versa
        shuffle_rng = np.random.default_rng((seed, 0xDEA1, epoch))
        augment_rng = np.random.default_rng((seed, 0xA06, epoch))
        order = np.array(train_idx, dtype=np.int64)
        shuffle_rng.shuffle(order)
        lr = lr_at(epoch, cfg.epochs, cfg.base_lr, cfg.warmup_epochs, cfg.min_lr)
        loss_sum = 0.0
        seen = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            imgs, y = _stack_batch(cases, chunk, lambda im: augment_case(im, augment_rng, cfg, norm))
            model.registry.zero_grads()
            loss = model.loss(imgs, prompt_ids, y)
            backward(loss, leaves=[t for _, t in model.trainable_tensors()])
            optimizer.step(lr)
            loss_sum += float(loss.data) * len(chunk)
            seen += len(chunk)
        train_loss = loss_sum / seen

        val_res = evaluate(model, cases, val_idx, prompt_ids, norm, cfg.batch_size)
        train_acc = None
        if track_train:
            train_res = evaluate(model, cases, train_idx, prompt_ids, norm, cfg.batch_size)
            train_acc = train_res.accuracy
        history.append(EpochRecord(epoch, lr, train_loss, val_res.accuracy, train_acc))

        if val_res.accuracy > best_val:
            best_val = val_res.accuracy
            best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        if track_train and train_acc is not None and train_acc >= cfg.stop_train_accuracy:
            break

    assert best_state is not None
    model.registry.load_arrays(best_state)
    return FitResult(
        history=history,
        best_epoch=best_epoch,
        best_val_accuracy=best_val,
        norm=norm,
        param_total=counts["total"],
        param_trainable=counts["trainable"],
    )


def fold_seed(seed: int, fold: int) -> int:
    """Derived per-fold seed; stable across runs and platforms."""
    return seed * 100003 + fold


@dataclass
class FoldResult:
    fold: int
    fit: FitResult
    eval: EvalResult
    model: VisionTextModel | None = None


def cross_validate(
    build_model,
    cases: list[LoadedCase],
    prompt_ids: np.ndarray,
    cfg: TrainConfig,
    seed: int,
) -> list[FoldResult]:
    """K-fold CV; each fold trains a fresh model and scores its held-out fold.

    build_model(fold_seed) must return a materialized VisionTextModel.
    Folds run sequentially unless cfg.fold_workers > 1.
    """
    labels = np.array([c.label for c in cases], dtype=np.int64)
    splits = stratified_kfold(labels, cfg.kfold, seed)

    def run_fold(f: int) -> FoldResult:
        train_idx, val_idx = splits[f]
        model = build_model((seed, f))
        fit_res = fit(model, cases, train_idx, val_idx, prompt_ids, cfg, seed=fold_seed(seed, f))
        eval_res = evaluate(model, cases, val_idx, prompt_ids, fit_res.norm, cfg.batch_size)
        return FoldResult(fold=f, fit=fit_res, eval=eval_res, model=model)

    if cfg.fold_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.fold_workers) as pool:
            return list(pool.map(run_fold, range(cfg.kfold)))
    return [run_fold(f) for f in range(cfg.kfold)]
