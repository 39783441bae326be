"""Image loading and the raw-scan to model-input pipeline.

Pipeline for one view: read grayscale pixels (PNG or binary PGM, 8 or 16
bit), optionally 5x5 average-pool large scans, min-max rescale to
[0, 255], bilinear-resize to the square model resolution, then replicate
to three identical channels. Quantization to uint8 happens once, after
the resize, so no precision is thrown away mid-pipeline.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels

__all__ = [
    "read_image",
    "write_png",
    "write_pgm",
    "avg_pool_5x5",
    "to_model_input",
    "load_view",
]


def read_image(path: str | Path) -> np.ndarray:
    """Read a grayscale image as a 2-d uint8/uint16 array."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    with Image.open(path) as im:
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.uint16)
        elif im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
        else:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"{path} did not decode to a single-channel image")
    return arr


def write_png(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_png expects a 2-d uint8 array")
    Image.fromarray(img, mode="L").save(Path(path), format="PNG")


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary PGM (missing P5 magic)")
    # Header tokens: magic, width, height, maxval. Comments run '#' to EOL.
    tokens: list[bytes] = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:i])
    i += 1  # single whitespace byte after maxval
    width, height, maxval = (int(t) for t in tokens)
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad PGM dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raw = data[i:i + count * dtype.itemsize]
    if len(raw) != count * dtype.itemsize:
        raise ValueError(f"{path}: PGM pixel payload is truncated")
    arr = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return arr.astype(np.uint16) if maxval > 255 else arr.copy()


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("write_pgm expects a 2-d array")
    if img.dtype == np.uint8:
        maxval, payload = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, payload = 65535, img.astype(">u2").tobytes()
    else:
        raise ValueError(f"write_pgm expects uint8 or uint16, got {img.dtype}")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + payload)


def avg_pool_5x5(img: np.ndarray) -> np.ndarray:
    """Non-overlapping 5x5 mean pooling with half-up integer rounding.

    Output dims are ceil(h/5) x ceil(w/5); edge windows cover whatever
    pixels remain. Input depth (uint8/uint16) is preserved.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("avg_pool_5x5 expects a 2-d array")
    if not np.issubdtype(img.dtype, np.integer):
        raise ValueError(f"avg_pool_5x5 expects integer pixels, got {img.dtype}")
    return kernels.avg_pool5(img).astype(img.dtype)


def to_model_input(img: np.ndarray, image_size: int) -> np.ndarray:
    """Rescale, resize, replicate: 2-d pixels -> (image_size, image_size, 3) uint8.

    Intensities are mapped linearly so the observed min hits 0 and the
    observed max hits 255; a constant image maps to all zeros (with a
    warning) since it carries no contrast to preserve.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("to_model_input expects a 2-d array")
    if image_size < 1:
        raise ValueError("image_size must be positive")
    x = img.astype(np.float64)
    lo = float(x.min())
    hi = float(x.max())
    if hi == lo:
        warnings.warn("constant-intensity image rescaled to all zeros", stacklevel=2)
        x = np.zeros_like(x)
    else:
        x = (x - lo) * (255.0 / (hi - lo))
    if x.shape != (image_size, image_size):
        x = kernels.bilinear_resize(x, image_size, image_size)
    out = np.clip(np.rint(x), 0, 255).astype(np.uint8)
    return np.repeat(out[:, :, None], 3, axis=2)


def load_view(path: str | Path, image_size: int, downsample: bool = False) -> np.ndarray:
    """Full single-view pipeline from file to (image_size, image_size, 3) uint8."""
    img = read_image(path)
    if downsample:
        img = avg_pool_5x5(img)
    return to_model_input(img, image_size)
