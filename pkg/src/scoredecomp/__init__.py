"""Proper-loss decompositions of probabilistic scores.

Reliability (miscalibration), grouping (information lost by compressing
features into a score) and residual uncertainty, together with monotone
recalibrators, a synthetic generator with known ground truth and
resampling-based inference.
"""

from scoredecomp.losses import BRIER, LOGLOSS, LossKind, ProperLoss, get_loss

__all__ = ["BRIER", "LOGLOSS", "LossKind", "ProperLoss", "get_loss"]
__version__ = "0.1.0"
