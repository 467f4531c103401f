"""Binary feature matrices (``CFEA``) and corpus listings."""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CFEA"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_features(path, features):
    features = np.asarray(features, dtype="<f4")
    if features.ndim != 2:
        raise ValueError("features must be a frames x dim matrix")
    frames, dim = features.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, frames, dim))
        fh.write(np.ascontiguousarray(features).tobytes())


def read_features(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    magic, version, frames, dim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = data[_HEADER.size:]
    if len(body) != 4 * frames * dim:
        raise FormatError(f"{path}: expected {frames}x{dim} floats")
    arr = np.frombuffer(body, dtype="<f4").reshape(frames, dim)
    return arr.astype(np.float64)


def read_table(path):
    """Read ``key<TAB>value`` lines into an ordered dict."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        key, sep, value = raw.partition("\t")
        if not sep:
            key, _, value = raw.partition(" ")
        out[key.strip()] = value.strip()
    return out


def write_table(path, mapping):
    Path(path).write_text("".join(f"{k}\t{v}\n" for k, v in mapping.items()),
                          encoding="utf-8")
