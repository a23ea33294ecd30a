"""Pareto dominance for two minimised objectives, and the solution archive."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class ObjectivePoint(NamedTuple):
    f1: float
    f2: float


def dominates(a, b) -> bool:
    """Weak Pareto dominance for minimisation, exact comparison."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def non_dominated_filter(points) -> np.ndarray:
    """Indices (ascending) of the points no other point dominates.

    Sort by ``f1`` then ``f2`` and sweep the running minimum of ``f2``.
    Identical points do not dominate each other, so every copy of a
    non-dominated point is kept.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    keep = np.zeros(pts.shape[0], dtype=bool)
    best_f2 = np.inf
    k = 0
    m = order.size
    while k < m:
        # group of exactly equal points
        first = order[k]
        g = k + 1
        while g < m and pts[order[g], 0] == pts[first, 0] and pts[order[g], 1] == pts[first, 1]:
            g += 1
        f1, f2 = pts[first]
        # a point is dominated iff an earlier point has f2 <= its f2
        # (equal f1 and smaller f2, or smaller f1 and f2 <= its f2)
        if f2 < best_f2:
            keep[order[k:g]] = True
            best_f2 = f2
        k = g
    return np.flatnonzero(keep)


def manhattan(a, b) -> float:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


@dataclass(frozen=True)
class ArchiveEntry:
    bits: np.ndarray
    point: ObjectivePoint
    iteration: int
    weights: tuple

    @property
    def bits_hex(self) -> str:
        return bits_to_hex(self.bits)


def bits_to_hex(bits) -> str:
    """Hex string of a bit vector; bit 0 is the most significant bit of the first digit."""
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-bits.size) % 4
    padded = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    nibbles = padded.reshape(-1, 4) @ np.array([8, 4, 2, 1])
    return "".join(f"{v:x}" for v in nibbles)


def hex_to_bits(text: str, n: int) -> np.ndarray:
    nibbles = [int(c, 16) for c in text]
    bits = np.array([(v >> s) & 1 for v in nibbles for s in (3, 2, 1, 0)], dtype=np.uint8)
    return bits[:n]


@dataclass
class Archive:
    """Growing store of evaluated solutions; :meth:`finalise` prunes it."""

    entries: list = field(default_factory=list)

    def add(self, bits, point, iteration: int, weights) -> None:
        self.entries.append(
            ArchiveEntry(
                np.asarray(bits, dtype=np.uint8).copy(),
                ObjectivePoint(float(point[0]), float(point[1])),
                int(iteration),
                (float(weights[0]), float(weights[1])),
            )
        )

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def points(self) -> np.ndarray:
        return np.array([e.point for e in self.entries], dtype=np.float64).reshape(-1, 2)

    def finalise(self) -> "Archive":
        """Non-dominated, bit-pattern-deduplicated snapshot (first occurrence wins)."""
        seen = set()
        unique = []
        for e in self.entries:
            key = e.bits.tobytes()
            if key not in seen:
                seen.add(key)
                unique.append(e)
        pts = np.array([e.point for e in unique], dtype=np.float64).reshape(-1, 2)
        keep = non_dominated_filter(pts)
        kept = sorted((unique[i] for i in keep), key=lambda e: (e.point.f1, e.point.f2, e.bits_hex))
        return Archive(list(kept))

    def count(self, distinct_points: bool = True) -> int:
        """Size of the front: distinct objective points, or distinct bit patterns."""
        if distinct_points:
            return len({e.point for e in self.entries})
        return len({e.bits.tobytes() for e in self.entries})

    def to_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["f1", "f2", "iteration", "lambda1", "lambda2", "bits_hex"])
        for e in self.entries:
            writer.writerow(
                [repr(e.point.f1), repr(e.point.f2), e.iteration,
                 repr(e.weights[0]), repr(e.weights[1]), e.bits_hex]
            )

    @classmethod
    def from_csv(cls, stream, n_bits: int | None = None) -> "Archive":
        archive = cls()
        for row in csv.DictReader(stream):
            hex_bits = row["bits_hex"]
            n = n_bits if n_bits is not None else 4 * len(hex_bits)
            archive.add(
                hex_to_bits(hex_bits, n),
                (float(row["f1"]), float(row["f2"])),
                int(row["iteration"]),
                (float(row["lambda1"]), float(row["lambda2"])),
            )
        return archive
