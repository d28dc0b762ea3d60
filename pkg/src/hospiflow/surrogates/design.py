from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Design:
    """Inputs scaled to [0, 1] per column, plus the map back to raw parameters.

    ``columns`` holds the 1-based parameter index of each column; ``lower``
    and ``upper`` are that column's raw bounds.
    """

    X: np.ndarray
    y: np.ndarray
    columns: tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ValueError("X must be n x d with one response per row")
        if self.X.shape[1] != len(self.columns):
            raise ValueError("one column index per input dimension")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_unit(cls, X, y, columns=None) -> "Design":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = X.shape[1]
        cols = tuple(columns) if columns is not None else tuple(range(1, d + 1))
        return cls(X, np.asarray(y, dtype=float).ravel(), cols, np.zeros(d), np.ones(d))

    @classmethod
    def from_raw(cls, X_raw, y, space, columns=None) -> "Design":
        """Build from full parameter vectors (``n x 29``) restricted to ``columns``."""
        cols = tuple(columns) if columns is not None else tuple(range(1, len(space) + 1))
        sel = [c - 1 for c in cols]
        lo, hi = space.lower[sel], space.upper[sel]
        X = (np.atleast_2d(np.asarray(X_raw, dtype=float))[:, sel] - lo) / (hi - lo)
        return cls(X, np.asarray(y, dtype=float).ravel(), cols, lo, hi)

    def to_unit(self, x_raw_full) -> np.ndarray:
        """Scale full raw parameter vectors into this design's unit inputs."""
        x = np.atleast_2d(np.asarray(x_raw_full, dtype=float))
        sel = [c - 1 for c in self.columns]
        return (x[:, sel] - self.lower) / (self.upper - self.lower)


@dataclass(frozen=True)
class InputMap:
    """The part of a design a fitted model keeps for mapping raw inputs."""

    columns: tuple[int, ...]
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def of(cls, design: Design) -> "InputMap":
        return cls(design.columns, design.lower, design.upper)

    def to_unit(self, x_raw_full) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_raw_full, dtype=float))
        sel = [c - 1 for c in self.columns]
        return (x[:, sel] - self.lower) / (self.upper - self.lower)

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "InputMap":
        return cls(tuple(d["columns"]), np.array(d["lower"], dtype=float), np.array(d["upper"], dtype=float))
