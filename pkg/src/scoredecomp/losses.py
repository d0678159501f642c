"""Proper losses on a finite label set.

Every quantity is derived from the pointwise loss ``l(p, y)``:

* conditional risk ``L(p, q) = sum_y q_y l(p, y)``
* generalized entropy ``E(q) = L(q, q)``
* divergence (regret) ``d(p, q) = L(p, q) - E(q)``

Probability vectors are numpy arrays whose last axis runs over labels, so all
functions broadcast over leading axes.  Binary scores given as ``P(Y=1)`` can
be lifted to the simplex with :func:`binary`.  Log-loss values are in nats.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SIMPLEX_TOL = 1e-12
# rounding residue allowed below zero before a divergence is treated as a bug
NEGATIVE_DIVERGENCE_TOL = 1e-9


class LossKind(str, enum.Enum):
    BRIER = "brier"
    LOGLOSS = "logloss"


def binary(p) -> np.ndarray:
    """Lift ``P(Y=1)`` values to points of the 2-simplex, shape ``(..., 2)``."""
    p = np.asarray(p, dtype=float)
    return np.stack([1.0 - p, p], axis=-1)


def check_simplex(p, name: str = "p") -> np.ndarray:
    """Return ``p`` as a float array after checking it lies on the simplex.

    Raises
    ------
    ValueError
        If fewer than two labels, a coordinate outside [0, 1] or a row whose
        mass differs from 1 by more than ``1e-12``.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim == 0 or p.shape[-1] < 2:
        raise ValueError(f"{name} must have at least two labels on its last axis")
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has coordinates outside [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError(f"{name} does not sum to 1")
    return p


def onehot(y, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must lie in 0..{k - 1}")
    return np.eye(k)[y]


@dataclass(frozen=True)
class ProperLoss:
    """A strictly proper loss: Brier or log-loss.

    Binary Brier uses the scalar convention ``(p_1 - y)^2``; with more than two
    labels it is the full squared distance ``||p - onehot(y)||^2``.  Log-loss
    floors ``p_y`` at ``clamp_epsilon`` before taking the logarithm.
    """

    kind: LossKind
    clamp_epsilon: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not self.clamp_epsilon > 0:
            raise ValueError("clamp_epsilon must be positive")

    @property
    def name(self) -> str:
        return self.kind.value

    def loss_table(self, p) -> np.ndarray:
        """Pointwise losses ``l(p, y)`` for every label ``y``, shape of ``p``."""
        p = np.asarray(p, dtype=float)
        k = p.shape[-1]
        if self.kind is LossKind.BRIER:
            if k == 2:
                p1 = p[..., 1:2]
                return (p1 - np.array([0.0, 1.0])) ** 2
            sq = np.sum(p * p, axis=-1, keepdims=True)
            return sq - 2.0 * p + 1.0
        return -np.log(np.maximum(p, self.clamp_epsilon))

    def pointwise(self, p, y) -> np.ndarray:
        """Loss ``l(p, y)`` of prediction ``p`` when label ``y`` occurs."""
        p = check_simplex(p)
        y = np.asarray(y, dtype=int)
        k = p.shape[-1]
        if np.any(y < 0) or np.any(y >= k):
            raise ValueError(f"label outside 0..{k - 1} for a {k}-class prediction")
        table = self.loss_table(p)
        y_b = np.broadcast_to(y, table.shape[:-1])
        return np.take_along_axis(table, y_b[..., None], axis=-1)[..., 0]

    def conditional_risk(self, p, q) -> np.ndarray:
        p = check_simplex(p, "p")
        q = check_simplex(q, "q")
        if p.shape[-1] != q.shape[-1]:
            raise ValueError("p and q have different numbers of labels")
        return np.sum(q * self.loss_table(p), axis=-1)

    def entropy(self, q) -> np.ndarray:
        return self.conditional_risk(q, q)

    def divergence(self, p, q) -> np.ndarray:
        """Regret ``L(p, q) - E(q)``, clamped at zero.

        Raises
        ------
        ArithmeticError
            If the raw difference is below ``-1e-9``, which would mean the
            loss is not proper (or the clamp was hit in a bad place).
        """
        d = self.conditional_risk(p, q) - self.entropy(q)
        if np.any(d < -NEGATIVE_DIVERGENCE_TOL):
            raise ArithmeticError(f"negative divergence {np.min(d)}")
        return np.maximum(d, 0.0)

    def max_entropy(self, k: int = 2) -> float:
        """Entropy of the uniform distribution, the largest possible value."""
        return float(self.entropy(np.full(k, 1.0 / k)))

    def clamped(self, p, y) -> np.ndarray:
        """Mask of predictions whose realized probability hit the log floor."""
        if self.kind is not LossKind.LOGLOSS:
            return np.zeros(np.shape(p)[:-1], dtype=bool)
        p = np.asarray(p, dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=int), p.shape[:-1])
        py = np.take_along_axis(p, y[..., None], axis=-1)[..., 0]
        return py < self.clamp_epsilon

    # binary shortcuts on P(Y=1) arrays
    def binary_pointwise(self, p, y) -> np.ndarray:
        return self.pointwise(binary(p), y)

    def binary_divergence(self, p, q) -> np.ndarray:
        return self.divergence(binary(p), binary(q))

    def binary_entropy(self, q) -> np.ndarray:
        return self.entropy(binary(q))


BRIER = ProperLoss(LossKind.BRIER)
LOGLOSS = ProperLoss(LossKind.LOGLOSS)


def get_loss(name) -> ProperLoss:
    """Look up a loss by name (``"brier"`` or ``"logloss"``)."""
    if isinstance(name, ProperLoss):
        return name
    return ProperLoss(LossKind(str(name).lower()))


def parse_losses(spec: str) -> list[ProperLoss]:
    """Parse the CLI ``--loss`` value: ``brier``, ``logloss`` or ``both``."""
    if spec == "both":
        return [BRIER, LOGLOSS]
    return [get_loss(spec)]


# module-level aliases mirroring the method names
def pointwise_loss(loss: ProperLoss, p, y):
    return loss.pointwise(p, y)


def conditional_risk(loss: ProperLoss, p, q):
    return loss.conditional_risk(p, q)


def entropy(loss: ProperLoss, q):
    return loss.entropy(q)


def divergence(loss: ProperLoss, p, q):
    return loss.divergence(p, q)
