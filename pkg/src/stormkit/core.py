"""Shared image conventions, deterministic RNG streams, and PNG I/O.

Images are uint8 arrays of shape (H, W, 3); label maps are uint8 arrays of
shape (H, W) holding class indices plus the reserved ignore value 255.
Pixel math happens in float32 on the [0, 255] scale and is quantized back
with round-half-to-even followed by a saturating clamp, so every image
operation is bit-reproducible across platforms.

Randomness comes from Philox-4x64-10 (counter-based, published test
vectors in the Random123 suite; numpy implementation), keyed with the
128-bit pair ``(global_seed, stream_id)``.  Distinct stream ids select
distinct keys and therefore streams that never share state, which makes
per-image work order-independent under parallel execution.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

IGNORE_INDEX = 255

_U64_MASK = (1 << 64) - 1


class StormkitError(Exception):
    """Validation or data error; the CLI maps this to exit code 1."""


def require_image(img: np.ndarray) -> np.ndarray:
    """Check that ``img`` is a uint8 (H, W, 3) array and return it."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise StormkitError(f"image must be uint8, got {img.dtype}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise StormkitError(f"image must have shape (H, W, 3), got {img.shape}")
    return img


def require_label_map(label: np.ndarray, num_classes: int | None = None) -> np.ndarray:
    """Check that ``label`` is a uint8 (H, W) array of valid class indices."""
    label = np.asarray(label)
    if label.dtype != np.uint8:
        raise StormkitError(f"label map must be uint8, got {label.dtype}")
    if label.ndim != 2:
        raise StormkitError(f"label map must have shape (H, W), got {label.shape}")
    if num_classes is not None:
        scored = label[label != IGNORE_INDEX]
        if scored.size and int(scored.max()) >= num_classes:
            raise StormkitError(
                f"label map contains class {int(scored.max())} >= num_classes {num_classes}"
            )
    return label


def to_f32(img: np.ndarray) -> np.ndarray:
    """Widen a uint8 image to float32 on the [0, 255] scale (no rescaling)."""
    return require_image(img).astype(np.float32)


def to_u8(raster: np.ndarray) -> np.ndarray:
    """Quantize a float raster to uint8: round half-to-even, clamp to [0, 255].

    Raises :class:`StormkitError` naming the coordinate of the first
    non-finite value, if any.
    """
    raster = np.asarray(raster)
    bad = ~np.isfinite(raster)
    if bad.any():
        coord = tuple(int(i) for i in np.argwhere(bad)[0])
        raise StormkitError(f"non-finite value {raster[coord]!r} at coordinate {coord}")
    out = np.rint(raster.astype(np.float64))
    np.clip(out, 0.0, 255.0, out=out)
    return out.astype(np.uint8)


def stream_id_for(*tags: str) -> int:
    """Map a tuple of string tags to a stable 64-bit stream id.

    Uses BLAKE2b-64 over the NUL-joined tags, so any (scene, frame, stage)
    combination gets its own RNG stream regardless of processing order.
    """
    h = hashlib.blake2b(digest_size=8)
    for tag in tags:
        h.update(tag.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def make_rng(global_seed: int, stream_id: int) -> np.random.Generator:
    """Build the Philox generator keyed by ``(global_seed, stream_id)``."""
    key = np.array([global_seed & _U64_MASK, stream_id & _U64_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_rng(global_seed: int, *tags: str) -> np.random.Generator:
    """Shorthand for ``make_rng(global_seed, stream_id_for(*tags))``."""
    return make_rng(global_seed, stream_id_for(*tags))


def read_image_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit RGB PNG into a uint8 (H, W, 3) array."""
    with _PILImage.open(path) as im:
        if im.mode != "RGB":
            raise StormkitError(f"{path}: expected 8-bit RGB PNG, got mode {im.mode!r}")
        return np.asarray(im, dtype=np.uint8)


def write_image_png(path: str | Path, img: np.ndarray) -> None:
    """Write a uint8 (H, W, 3) array as an 8-bit RGB PNG."""
    _PILImage.fromarray(require_image(img), mode="RGB").save(path, format="PNG")


def read_label_png(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale PNG into a uint8 (H, W) label map."""
    with _PILImage.open(path) as im:
        if im.mode != "L":
            raise StormkitError(
                f"{path}: expected 8-bit grayscale PNG label map, got mode {im.mode!r}"
            )
        return np.asarray(im, dtype=np.uint8)


def write_label_png(path: str | Path, label: np.ndarray) -> None:
    """Write a uint8 (H, W) label map as an 8-bit grayscale PNG."""
    _PILImage.fromarray(require_label_map(label), mode="L").save(path, format="PNG")
