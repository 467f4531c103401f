"""Per-context Gaussian sufficient statistics gathered from alignments."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .context import TriContext
from .errors import DimMismatch, FormatError, LengthMismatch

HEADER = "CFSTATS v1"


@dataclass
class GaussStats:
    count: float
    sum: np.ndarray
    sum_sq: np.ndarray

    @classmethod
    def zeros(cls, dim):
        return cls(0.0, np.zeros(dim), np.zeros(dim))

    @classmethod
    def from_frames(cls, frames):
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        return cls(float(len(frames)), frames.sum(axis=0), (frames**2).sum(axis=0))

    @property
    def dim(self):
        return len(self.sum)

    def __add__(self, other):
        if self.dim != other.dim:
            raise DimMismatch(f"{self.dim} != {other.dim}")
        return GaussStats(self.count + other.count, self.sum + other.sum,
                          self.sum_sq + other.sum_sq)

    def mean(self):
        return self.sum / self.count

    def var(self):
        m = self.sum / self.count
        return self.sum_sq / self.count - m * m


class StatsTable:
    def __init__(self, dim, rows=None):
        self.dim = int(dim)
        self.rows = dict(rows or {})
        for st in self.rows.values():
            if st.dim != self.dim:
                raise DimMismatch(f"row dim {st.dim} != table dim {self.dim}")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows.items())

    def __getitem__(self, ctx):
        return self.rows[ctx]

    @property
    def total_count(self):
        return sum(st.count for st in self.rows.values())

    def pooled(self, keys=None):
        total = GaussStats.zeros(self.dim)
        for ctx in (self.rows if keys is None else keys):
            total = total + self.rows[ctx]
        return total

    def subset(self, predicate):
        return StatsTable(self.dim, {c: s for c, s in self.rows.items() if predicate(c)})

    def sorted_keys(self):
        return sorted(self.rows, key=TriContext.sort_key)

    def to_text(self):
        out = [f"{HEADER} dim={self.dim}\n"]
        for ctx in self.sorted_keys():
            st = self.rows[ctx]
            nums = [st.count, *st.sum, *st.sum_sq]
            out.append(str(ctx) + " " + " ".join(f"{float(x):.17g}" for x in nums) + "\n")
        return "".join(out)

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text, inventory):
        lines = text.splitlines()
        if not lines or not lines[0].startswith(HEADER + " dim="):
            raise FormatError("missing CFSTATS header")
        dim = int(lines[0].split("dim=", 1)[1])
        rows = {}
        for lineno, raw in enumerate(lines[1:], 2):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != 3 + 1 + 2 * dim:
                raise FormatError(f"stats line {lineno}: wrong field count")
            ctx = TriContext.parse(parts[:3], inventory)
            nums = np.array([float(x) for x in parts[3:]])
            rows[ctx] = GaussStats(float(nums[0]), nums[1:1 + dim], nums[1 + dim:])
        return cls(dim, rows)

    @classmethod
    def read(cls, path, inventory):
        return cls.from_text(Path(path).read_text(encoding="utf-8"), inventory)


def accumulate(labels, features) -> StatsTable:
    """Hard-occupancy statistics: one frame per label."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a frames x dim matrix")
    if len(labels) != len(features):
        raise LengthMismatch(f"{len(labels)} labels for {len(features)} frames")
    dim = features.shape[1]
    groups = {}
    for t, ctx in enumerate(labels):
        groups.setdefault(ctx, []).append(t)
    rows = {ctx: GaussStats.from_frames(features[idx]) for ctx, idx in groups.items()}
    return StatsTable(dim, rows)


def merge(a: StatsTable, b: StatsTable) -> StatsTable:
    if a.dim != b.dim:
        raise DimMismatch(f"{a.dim} != {b.dim}")
    rows = dict(a.rows)
    for ctx, st in b.rows.items():
        rows[ctx] = rows[ctx] + st if ctx in rows else st
    return StatsTable(a.dim, rows)
