"""Rank-based discrimination checks for monotone recalibration."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from scoredecomp.errors import DegenerateDataError


def roc_auc(scores, outcomes) -> float:
    """Mann-Whitney probability ``P(S+ > S-) + P(S+ = S-)/2`` via midranks."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes).astype(bool)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateDataError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def threshold_preimage(scores, transformed, tau: float):
    """Return ``tau'`` with ``{g(S) >= tau} == {S >= tau'}`` on the sample, or None.

    Only meaningful when ``transformed`` is a nondecreasing function of
    ``scores``; then the smallest score whose image clears ``tau`` works.
    """
    s = np.asarray(scores, dtype=float)
    t = np.asarray(transformed, dtype=float)
    above = t >= tau
    if not above.any():
        return float(np.inf)
    cand = float(s[above].min())
    return cand if np.array_equal(above, s >= cand) else None
