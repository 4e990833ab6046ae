"""Sampled fields with region tags, and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

__all__ = ["FieldGrid", "REGIONS"]

REGIONS = ("inner", "annulus")


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """``values[k]`` is u^i when ``region[k] == "inner"`` and u^o when it is ``"annulus"``."""

    points: np.ndarray
    region: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.points) == len(self.region) == len(self.values)):
            raise ValueError("points, region and values must have equal length")
        bad = set(np.unique(self.region)) - set(REGIONS)
        if bad:
            raise ValueError(f"unknown region tags {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.values)

    def mask(self, region: str) -> np.ndarray:
        return self.region == region

    def values_in(self, region: str) -> np.ndarray:
        return self.values[self.mask(region)]

    def to_csv(self, path=None) -> str:
        """Write ``x,y,region,value`` rows (``x,y,z,...`` for 3D points) in point order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dim = self.points.shape[1]
        w.writerow(["x", "y", "z"][:dim] + ["region", "value"])
        for p, r, v in zip(self.points, self.region, self.values):
            w.writerow([repr(float(c)) for c in p] + [str(r), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text
