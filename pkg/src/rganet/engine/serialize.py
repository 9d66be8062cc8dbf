"""Flat binary parameter container.

Layout (little-endian)::

    b"RGAN"  u32 version  u32 entry_count
    per entry: u32 name_len, name (utf-8), u32 rank, rank x u32 extents,
               prod(extents) x float32

Text payloads (e.g. a model config) are stored as rank-1 entries holding
one byte value per float; see :func:`text_to_entry` / :func:`entry_to_text`.
"""

import struct

import numpy as np

MAGIC = b"RGAN"
VERSION = 1


class FormatError(ValueError):
    pass


def write_container(path_or_file, entries):
    """Write ``{name: array}`` in insertion order."""
    if hasattr(path_or_file, "write"):
        _write(path_or_file, entries)
    else:
        with open(path_or_file, "wb") as fh:
            _write(fh, entries)


def _write(fh, entries):
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(entries)))
    for name, arr in entries.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_container(path_or_file):
    """Return ``{name: float32 array}`` preserving file order."""
    if hasattr(path_or_file, "read"):
        return _read(path_or_file)
    with open(path_or_file, "rb") as fh:
        return _read(fh)


def _take(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated parameter container")
    return buf


def _read(fh):
    if _take(fh, 4) != MAGIC:
        raise FormatError("not an RGAN parameter container (bad magic)")
    version, count = struct.unpack("<II", _take(fh, 8))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _take(fh, 4))
        name = _take(fh, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _take(fh, 4))
        shape = struct.unpack(f"<{rank}I", _take(fh, 4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(_take(fh, 4 * n), dtype="<f4").astype(np.float32)
        entries[name] = data.reshape(shape)
    return entries


def text_to_entry(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def entry_to_text(arr):
    return np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8")
