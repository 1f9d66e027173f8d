"""Rectangles on the pixel grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, order=True)
class Rect:
    """Half-open pixel rectangle ``[row0, row1) x [col0, col1)``."""

    row0: int
    col0: int
    row1: int
    col1: int

    def __post_init__(self):
        if self.row1 <= self.row0 or self.col1 <= self.col0:
            raise ValueError(f"empty rectangle {self.as_tuple()}")

    @property
    def area(self) -> int:
        return (self.row1 - self.row0) * (self.col1 - self.col0)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.row0, self.col0, self.row1, self.col1)

    def inside(self, height: int, width: int) -> bool:
        return self.row0 >= 0 and self.col0 >= 0 and self.row1 <= height and self.col1 <= width

    def intersects(self, other: Rect) -> bool:
        return (
            self.row0 < other.row1
            and other.row0 < self.row1
            and self.col0 < other.col1
            and other.col0 < self.col1
        )

    def raster(self, height: int, width: int) -> np.ndarray:
        mask = np.zeros((height, width), dtype=bool)
        mask[self.row0 : self.row1, self.col0 : self.col1] = True
        return mask

    @classmethod
    def from_sequence(cls, seq) -> Rect:
        r0, c0, r1, c1 = (int(v) for v in seq)
        return cls(r0, c0, r1, c1)
