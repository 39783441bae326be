"""Case manifests and the synthetic four-view benchmark generator.

A manifest is a CSV with header ``case_id,view,path,label``: one row per
view, four views per case, paths resolved relative to the manifest's
directory. Labels may be written as 0/1 or common word aliases; all rows
of a case must agree.

The generator draws textured grayscale views with bright Gaussian spots
on a coarse cell grid. Spot locations follow two mirror relations: within
a breast, the MLO view's cell is the CC cell flipped vertically; across
breasts, the partner view's cell is flipped horizontally. Rendered MLO
images are stored row-flipped (the usual reading orientation for the
angled projection), so a within-breast consistent spot pair lands at the
same array position in both of the breast's stored views. Three tasks:

- ``presence``: positives put a spot in one breast's CC and MLO views at
  consistent (mirrored) locations; negatives have no spots.
- ``asymmetry``: negatives have matched spots in BOTH breasts at mirrored
  positions (all four views); positives in exactly one breast. Every
  negative view has a spot, and half of each positive's views do, so
  single-view spot detection cannot fully solve the task.
- ``correspondence``: every view has exactly one spot. Negatives keep
  each breast's CC/MLO pair consistent; positives break the pairing.
  Single-view marginals are identical across labels, so solving it
  requires comparing views.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import load_view, write_png
from .text import canonical_prompts
from .training import LoadedCase
from .vision import VIEW_ORDER

TASKS = ("presence", "asymmetry", "correspondence")
MANIFEST_HEADER = ("case_id", "view", "path", "label")

_LABEL_ALIASES = {
    "0": 0, "neg": 0, "negative": 0, "normal": 0,
    "1": 1, "pos": 1, "positive": 1, "abnormal": 1,
}


class ManifestError(ValueError):
    pass


@dataclass
class CaseRecord:
    case_id: str
    label: int
    paths: dict[str, Path]  # view -> resolved file path


def _parse_label(raw: str, case_id: str) -> int:
    label = _LABEL_ALIASES.get(raw.strip().lower())
    if label is None:
        raise ManifestError(f"case {case_id!r}: unrecognized label {raw!r}")
    return label


def load_manifest(path: str | Path) -> list[CaseRecord]:
    """Parse and validate a manifest; cases come back sorted by case_id."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path} is empty") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}"
            )
        cases: dict[str, CaseRecord] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            case_id, view, rel, raw_label = (c.strip() for c in row)
            if not case_id:
                raise ManifestError(f"{path}:{lineno}: empty case_id")
            if view not in VIEW_ORDER:
                raise ManifestError(
                    f"case {case_id!r}: unknown view {view!r} (expected one of {', '.join(VIEW_ORDER)})"
                )
            if not rel:
                raise ManifestError(f"case {case_id!r}: empty path for view {view}")
            label = _parse_label(raw_label, case_id)
            rec = cases.get(case_id)
            if rec is None:
                rec = cases[case_id] = CaseRecord(case_id=case_id, label=label, paths={})
            elif rec.label != label:
                raise ManifestError(f"case {case_id!r}: conflicting labels across views")
            if view in rec.paths:
                raise ManifestError(f"case {case_id!r}: duplicate view {view}")
            p = Path(rel)
            rec.paths[view] = p if p.is_absolute() else path.parent / p
    if not cases:
        raise ManifestError(f"{path} contains no cases")
    for rec in cases.values():
        missing = [v for v in VIEW_ORDER if v not in rec.paths]
        if missing:
            raise ManifestError(f"case {rec.case_id!r}: missing views {', '.join(missing)}")
        for view in VIEW_ORDER:
            p = rec.paths[view]
            try:
                with open(p, "rb") as img:
                    img.read(1)
            except OSError as exc:
                raise ManifestError(
                    f"case {rec.case_id!r}: unreadable image for view {view}: {p} ({exc.strerror or exc})"
                ) from None
    return [cases[k] for k in sorted(cases)]


def load_cases(manifest_path: str | Path, image_size: int, downsample: bool = False) -> list[LoadedCase]:
    """Materialize every case as a (V, H, W, 3) uint8 stack in view order."""
    out = []
    for rec in load_manifest(manifest_path):
        views = [load_view(rec.paths[v], image_size, downsample) for v in VIEW_ORDER]
        out.append(LoadedCase(case_id=rec.case_id, images=np.stack(views), label=rec.label))
    return out


def label_text(label: int, zero_shot: bool = False) -> str:
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return canonical_prompts().pair(zero_shot)[label]


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class SyntheticSpec:
    task: str
    count: int
    image_size: int = 64
    blob_radius: tuple[float, float] | None = None
    noise: float = 1.0
    balance: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.count < 2:
            raise ValueError("count must be at least 2")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if not 0 < self.balance < 1:
            raise ValueError("balance must be in (0, 1)")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.blob_radius is not None:
            lo, hi = self.blob_radius
            if not 0 < lo <= hi:
                raise ValueError(f"blob_radius range must satisfy 0 < lo <= hi, got {self.blob_radius}")

    @property
    def radius_range(self) -> tuple[float, float]:
        if self.blob_radius is not None:
            return self.blob_radius
        return self.image_size / 12.0, self.image_size / 8.0

    @property
    def grid(self) -> int:
        return 3 if self.image_size >= 48 else 2


def _background(rng: np.random.Generator, s: int, noise: float) -> np.ndarray:
    coarse_n = -(-s // 8)
    coarse = np.kron(rng.normal(0.0, 1.0, (coarse_n, coarse_n)), np.ones((8, 8)))[:s, :s]
    fine = rng.normal(0.0, 1.0, (s, s))
    return 110.0 + noise * (24.0 * coarse + 8.0 * fine)


def _add_blob(img: np.ndarray, cy: float, cx: float, radius: float) -> None:
    h, w = img.shape
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    img += 90.0 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius * radius))


def _random_cell(rng: np.random.Generator, g: int) -> tuple[int, int]:
    return int(rng.integers(0, g)), int(rng.integers(0, g))


def _cell_center(rng: np.random.Generator, s: int, g: int, cell: tuple[int, int]) -> tuple[float, float]:
    r, c = cell
    jitter = s / (6.0 * g)
    cy = (r + 0.5) * s / g + rng.uniform(-jitter, jitter)
    cx = (c + 0.5) * s / g + rng.uniform(-jitter, jitter)
    return cy, cx


def _mirror_within(cell: tuple[int, int], g: int) -> tuple[int, int]:
    """Same breast, CC <-> MLO: the vertical axis flips between projections."""
    return g - 1 - cell[0], cell[1]


def _mirror_across(cell: tuple[int, int], g: int) -> tuple[int, int]:
    """Opposite breast, same projection: left/right anatomy mirrors horizontally."""
    return cell[0], g - 1 - cell[1]


def _one_breast(rng: np.random.Generator, g: int, views: dict) -> None:
    """Put a consistent CC+MLO spot pair in one randomly chosen breast."""
    side = "L" if rng.random() < 0.5 else "R"
    cc = _random_cell(rng, g)
    views[side + "CC"] = cc
    views[side + "MLO"] = _mirror_within(cc, g)


def _place_blobs(task: str, rng: np.random.Generator, label: int, g: int) -> dict[str, tuple[int, int] | None]:
    """Pick a grid cell (or None) per view. Draw order: see each branch."""
    views: dict[str, tuple[int, int] | None] = {v: None for v in VIEW_ORDER}
    if task == "presence":
        # positive: one breast carries a spot, visible consistently in both
        # of its projections; negative: clean everywhere
        if label:
            _one_breast(rng, g, views)
    elif task == "asymmetry":
        # negative: both breasts carry spots at anatomically matched spots,
        # so every view has one; positive: exactly one breast does
        if label:
            _one_breast(rng, g, views)
        else:
            lcc = _random_cell(rng, g)
            rcc = _mirror_across(lcc, g)
            views["LCC"] = lcc
            views["LMLO"] = _mirror_within(lcc, g)
            views["RCC"] = rcc
            views["RMLO"] = _mirror_within(rcc, g)
    else:  # correspondence: one spot everywhere, pairing decides the label
        for side in ("L", "R"):
            cc = _random_cell(rng, g)
            mirrored = _mirror_within(cc, g)
            if label:
                while True:
                    mlo = _random_cell(rng, g)
                    if mlo != mirrored:
                        break
            else:
                mlo = mirrored
            views[side + "CC"] = cc
            views[side + "MLO"] = mlo
    return views


def _render_case(spec: SyntheticSpec, rng: np.random.Generator, label: int):
    """Placements first, then backgrounds and centers per view in canonical order.

    Cell metadata stays in each view's anatomical frame; only the stored
    pixel rows of MLO views are flipped (reading orientation).
    """
    cells = _place_blobs(spec.task, rng, label, spec.grid)
    lo, hi = spec.radius_range
    images = {}
    for v in VIEW_ORDER:
        img = _background(rng, spec.image_size, spec.noise)
        if cells[v] is not None:
            cy, cx = _cell_center(rng, spec.image_size, spec.grid, cells[v])
            _add_blob(img, cy, cx, rng.uniform(lo, hi))
        if v.endswith("MLO"):
            img = img[::-1]
        images[v] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return images, cells


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> list[dict]:
    """Write PNG views plus manifest.csv under out_dir; return placement metadata.

    Exactly round(balance * count) cases are positive; which ones is a
    seeded shuffle. Per-case pixels come from an independent generator
    keyed by (seed, case index), so any single case can be regenerated.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    labels = np.zeros(spec.count, dtype=np.int64)
    labels[: round(spec.balance * spec.count)] = 1
    np.random.default_rng((spec.seed, 0x1ABE1)).shuffle(labels)
    rows = []
    meta = []
    for idx in range(spec.count):
        case_id = f"case{idx:04d}"
        label = int(labels[idx])
        rng = np.random.default_rng((spec.seed, idx))
        images, cells = _render_case(spec, rng, label)
        for v in VIEW_ORDER:
            rel = f"images/{case_id}_{v}.png"
            write_png(out / rel, images[v])
            rows.append((case_id, v, rel, str(label)))
        meta.append({"case_id": case_id, "label": label, "cells": cells})
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    return meta
