"""Boxes and run-length encoded binary masks.

Masks live on a per-image pixel grid and are stored as row-major RLE:
``runs[0]`` counts leading zeros (possibly 0), subsequent runs alternate
ones/zeros and are all positive. This canonical form makes
``encode(decode(m))`` bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates, min-corner inclusive."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self!r}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def to_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, xyxy) -> "Box":
        if len(xyxy) != 4:
            raise ValueError(f"box needs 4 coordinates, got {xyxy!r}")
        return cls(*(float(v) for v in xyxy))


@dataclass(frozen=True)
class Mask:
    """Binary mask over a ``width`` x ``height`` grid, row-major RLE runs."""

    width: int
    height: int
    runs: tuple[int, ...] = field(repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask grid dimensions must be positive")
        total = sum(self.runs)
        if total != self.width * self.height:
            raise ValueError(
                f"RLE runs sum to {total}, expected {self.width * self.height}"
            )
        if any(r < 0 for r in self.runs):
            raise ValueError("RLE runs must be nonnegative")
        if any(r == 0 for r in self.runs[1:]):
            raise ValueError("only the leading zero-run may be empty")

    def decode(self) -> np.ndarray:
        """Return the mask as a bool array of shape (height, width)."""
        flat = np.zeros(self.width * self.height, dtype=bool)
        pos = 0
        value = False
        for run in self.runs:
            if value:
                flat[pos : pos + run] = True
            pos += run
            value = not value
        return flat.reshape(self.height, self.width)

    @classmethod
    def encode(cls, grid: np.ndarray) -> "Mask":
        """Encode a 2-D boolean array into canonical RLE form."""
        grid = np.asarray(grid, dtype=bool)
        if grid.ndim != 2:
            raise ValueError("mask grid must be 2-D")
        height, width = grid.shape
        flat = grid.reshape(-1)
        if flat.size == 0:
            raise ValueError("mask grid must be non-empty")
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs = [0] + runs
        return cls(width=width, height=height, runs=tuple(int(r) for r in runs))

    @property
    def area(self) -> int:
        # ones live in odd-indexed runs
        return int(sum(self.runs[1::2]))

    def tight_box(self) -> Box:
        """Tight bounding box of the set pixels, in pixel units."""
        grid = self.decode()
        rows = np.flatnonzero(grid.any(axis=1))
        cols = np.flatnonzero(grid.any(axis=0))
        if rows.size == 0:
            raise ValueError("empty mask has no bounding box")
        return Box(
            x_min=float(cols[0]),
            y_min=float(rows[0]),
            x_max=float(cols[-1] + 1),
            y_max=float(rows[-1] + 1),
        )

    def to_json(self) -> dict:
        return {"w": self.width, "h": self.height, "runs": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict, owner: str = "?") -> "Mask":
        try:
            runs = tuple(int(r) for r in obj["runs"])
            mask = cls(width=int(obj["w"]), height=int(obj["h"]), runs=runs)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed mask for instance {owner!r}: {exc}") from exc
        except ValueError as exc:
            raise ParseError(f"bad mask RLE for instance {owner!r}: {exc}") from exc
        return mask
