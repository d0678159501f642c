"""Weighted isotonic regression by pool-adjacent-violators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SortedSample:
    """Responses ``y`` with weights ``w`` at nondecreasing positions ``x``."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        w = np.ones_like(y) if self.w is None else np.asarray(self.w, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.shape != w.shape:
            raise ValueError("x, y and w must be vectors of equal length")
        if x.size == 0:
            raise ValueError("empty sample")
        if np.any(np.diff(x) < 0):
            raise ValueError("x must be sorted ascending")
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be nonnegative with positive total")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_unsorted(cls, x, y, w=None) -> "SortedSample":
        x = np.asarray(x, dtype=float)
        order = np.argsort(x, kind="stable")
        w = None if w is None else np.asarray(w, dtype=float)[order]
        return cls(x[order], np.asarray(y, dtype=float)[order], w)

    def merge_ties(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Collapse equal ``x`` into one point carrying the weighted mean response.

        Zero-weight groups are dropped.
        """
        ux, start = np.unique(self.x, return_index=True)
        wsum = np.add.reduceat(self.w, start)
        wy = np.add.reduceat(self.w * self.y, start)
        keep = wsum > 0
        return ux[keep], wy[keep] / wsum[keep], wsum[keep]


def pava(y, w) -> np.ndarray:
    """Fitted values of the weighted isotonic least-squares problem on a chain."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    means: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y.tolist(), w.tolist()):
        m, ww, sz = yi, wi, 1
        while means and means[-1] >= m:
            pw = weights.pop()
            m = (means.pop() * pw + m * ww) / (pw + ww)
            ww += pw
            sz += sizes.pop()
        means.append(m)
        weights.append(ww)
        sizes.append(sz)
    return np.repeat(means, sizes)


def pav_isotonic(sample: SortedSample):
    """Isotonic regression of a sorted sample, returned as a right-continuous step fit."""
    from scoredecomp.recalib.calibrators import IsotonicFit

    x, y, w = sample.merge_ties()
    return IsotonicFit(x, pava(y, w))
