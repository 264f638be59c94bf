"""Per-pixel class probability maps and scene-level fusion.

A probability map is a (K, H, W) array, nonnegative with per-pixel sums of
one.  Scene fusion is the elementwise arithmetic mean over the frames of a
scene (soft voting): it preserves the probability simplex, is invariant to
frame order, and is idempotent on identical frames.  Files use the ``PMAP``
flat binary layout with float32 little-endian payloads; in-memory fusion
accumulates in float64.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from stormkit.core import StormkitError

PMAP_MAGIC = b"PMAP"
SIMPLEX_ATOL = 1e-5


def require_probmap(prob: np.ndarray, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Check shape (K, H, W), nonnegativity, and per-pixel sums of 1 +- atol."""
    prob = np.asarray(prob)
    if prob.ndim != 3:
        raise StormkitError(f"probability map must have shape (K, H, W), got {prob.shape}")
    if np.any(prob < 0):
        raise StormkitError("probability map has negative entries")
    sums = prob.sum(axis=0, dtype=np.float64)
    worst = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
    if worst > atol:
        raise StormkitError(f"probability map pixel sums deviate from 1 by {worst:.3g}")
    return prob


def fuse_scene(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of per-frame probability maps (float64 accumulation)."""
    if len(frames) == 0:
        raise StormkitError("cannot fuse an empty list of frames")
    shape = np.asarray(frames[0]).shape
    acc = np.zeros(shape, dtype=np.float64)
    for i, frame in enumerate(frames):
        frame = np.asarray(frame)
        if frame.shape != shape:
            raise StormkitError(
                f"frame {i} shape {frame.shape} does not match first frame {shape}"
            )
        acc += frame.astype(np.float64)
    return acc / len(frames)


def argmax_labels(prob: np.ndarray) -> np.ndarray:
    """Per-pixel argmax decode; ties break toward the lowest class index."""
    prob = np.asarray(prob)
    if prob.ndim != 3:
        raise StormkitError(f"probability map must have shape (K, H, W), got {prob.shape}")
    if prob.shape[0] > 255:
        raise StormkitError(f"cannot decode {prob.shape[0]} classes into a uint8 label map")
    return prob.argmax(axis=0).astype(np.uint8)


def write_probmap(path: str | Path, prob: np.ndarray) -> None:
    """Write a probability map as PMAP: magic, u32 K/H/W, f32 payload (LE)."""
    prob = np.asarray(prob)
    if prob.ndim != 3:
        raise StormkitError(f"probability map must have shape (K, H, W), got {prob.shape}")
    k, h, w = prob.shape
    with open(path, "wb") as fh:
        fh.write(PMAP_MAGIC)
        fh.write(struct.pack("<III", k, h, w))
        fh.write(np.ascontiguousarray(prob, dtype="<f4").tobytes())


def read_probmap(path: str | Path) -> np.ndarray:
    """Read a PMAP file back into a float32 (K, H, W) array."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != PMAP_MAGIC:
        raise StormkitError(f"{path}: not a PMAP file")
    k, h, w = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * k * h * w
    if len(data) != expected:
        raise StormkitError(
            f"{path}: payload size mismatch (expected {expected} bytes, got {len(data)})"
        )
    return np.frombuffer(data[16:], dtype="<f4").reshape(k, h, w).copy()


def fuse_directory(scene_dir: str | Path) -> np.ndarray:
    """Fuse every ``*.pmap`` file in a directory (sorted by name)."""
    scene_dir = Path(scene_dir)
    paths = sorted(scene_dir.glob("*.pmap"))
    if not paths:
        raise StormkitError(f"no .pmap files found in {scene_dir}")
    return fuse_scene([read_probmap(p) for p in paths])
