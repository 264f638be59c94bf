"""Uniform weight averaging over same-architecture checkpoint archives.

An archive is an ordered name -> tensor map serialized in the ``TARC1``
flat binary layout (little-endian, float32/float64 only).  Averaging
refuses to run unless every archive has identical names, shapes, and
dtypes; the compatibility report names every divergent entry.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from stormkit.core import StormkitError

TARC_MAGIC = b"TARC1"

_DTYPE_TO_TAG = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

TensorArchive = "dict[str, np.ndarray]"


class CompatibilityError(StormkitError):
    """Archives diverge; ``report`` lists every mismatched entry."""

    def __init__(self, report: list[str]):
        self.report = report
        super().__init__("incompatible archives:\n  " + "\n  ".join(report))


def _check_archive(archive: "dict[str, np.ndarray]") -> "dict[str, np.ndarray]":
    for name, tensor in archive.items():
        tensor = np.asarray(tensor)
        if tensor.dtype not in (np.float32, np.float64):
            raise StormkitError(
                f"tensor {name!r}: dtype must be float32 or float64, got {tensor.dtype}"
            )
    return archive


def write_archive(path: str | Path, archive: "dict[str, np.ndarray]") -> None:
    _check_archive(archive)
    with open(path, "wb") as fh:
        fh.write(TARC_MAGIC)
        fh.write(struct.pack("<I", len(archive)))
        for name, tensor in archive.items():
            tensor = np.asarray(tensor)
            name_bytes = name.encode("utf-8")
            if len(name_bytes) > 0xFFFF:
                raise StormkitError(f"tensor name too long: {name!r}")
            if tensor.ndim > 0xFF:
                raise StormkitError(f"tensor {name!r} rank {tensor.ndim} exceeds format limit")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            tag = _DTYPE_TO_TAG[np.dtype(tensor.dtype).newbyteorder("<")]
            fh.write(struct.pack("<BB", tag, tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor, dtype=tensor.dtype.newbyteorder("<")).tobytes())


def read_archive(path: str | Path) -> "dict[str, np.ndarray]":
    data = Path(path).read_bytes()
    if len(data) < 9 or data[: len(TARC_MAGIC)] != TARC_MAGIC:
        raise StormkitError(f"{path}: not a TARC1 archive")
    offset = len(TARC_MAGIC)
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    archive: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            tag, rank = struct.unpack_from("<BB", data, offset)
            offset += 2
            shape = struct.unpack_from(f"<{rank}I", data, offset) if rank else ()
            offset += 4 * rank
        except struct.error as exc:
            raise StormkitError(f"{path}: truncated archive") from exc
        if tag not in _TAG_TO_DTYPE:
            raise StormkitError(f"{path}: tensor {name!r} has unknown dtype tag {tag}")
        if name in archive:
            raise StormkitError(f"{path}: duplicate tensor name {name!r}")
        dtype = _TAG_TO_DTYPE[tag]
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = size * dtype.itemsize
        if offset + nbytes > len(data):
            raise StormkitError(f"{path}: truncated payload for tensor {name!r}")
        archive[name] = (
            np.frombuffer(data[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(data):
        raise StormkitError(f"{path}: {len(data) - offset} trailing bytes after last tensor")
    return archive


def compat_check(archives: Sequence["dict[str, np.ndarray]"]) -> list[str]:
    """Compare archives entry by entry; an empty report means compatible."""
    if len(archives) < 2:
        raise StormkitError(f"need at least 2 archives to compare, got {len(archives)}")
    report: list[str] = []
    names: list[str] = list(archives[0].keys())
    seen = set(names)
    for other in archives[1:]:
        for name in other:
            if name not in seen:
                seen.add(name)
                names.append(name)
    for name in names:
        holders = [i for i, a in enumerate(archives) if name in a]
        if len(holders) != len(archives):
            absent = [i for i in range(len(archives)) if i not in holders]
            report.append(
                f"tensor {name!r}: missing from archive(s) {', '.join(map(str, absent))}"
            )
            continue
        shapes = {a[name].shape for a in archives}
        if len(shapes) > 1:
            report.append(f"tensor {name!r}: shapes differ: {sorted(shapes)}")
        dtypes = {np.dtype(a[name].dtype).name for a in archives}
        if len(dtypes) > 1:
            report.append(f"tensor {name!r}: dtypes differ: {sorted(dtypes)}")
    return report


def soup(archives: Sequence["dict[str, np.ndarray]"]) -> "dict[str, np.ndarray]":
    """Elementwise uniform mean of compatible archives.

    Accumulates in float64 and emits each tensor in its input dtype.
    Raises :class:`CompatibilityError` before producing anything if the
    archives diverge.
    """
    report = compat_check(archives)
    if report:
        raise CompatibilityError(report)
    out: dict[str, np.ndarray] = {}
    for name in archives[0]:
        acc = np.zeros(archives[0][name].shape, dtype=np.float64)
        for archive in archives:
            acc += archive[name].astype(np.float64)
        acc /= len(archives)
        out[name] = acc.astype(archives[0][name].dtype)
    return out
