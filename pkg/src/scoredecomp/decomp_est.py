"""Sample estimators of reliability, grouping and irreducible uncertainty.

Given binary outcomes, scores ``S`` and a calibration map ``C_hat`` fitted
out of sample, reliability is the mean divergence ``d(S, C_hat(S))``.  When
the true ``P(Y=1|X)`` is known (simulations) grouping is the mean
``d(C_hat(S), q)`` and the irreducible term the mean entropy of ``q``.

Every estimator accepts either a fitted calibrator or an array of already
calibrated values (e.g. cross-fitted predictions) aligned with the sample.
Samples may carry weights, which lets a finite population be enumerated
exactly as a weighted sample.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from scoredecomp.losses import BRIER, LOGLOSS, ProperLoss, get_loss
from scoredecomp.recalib.calibrators import Calibrator, fit_calibrator, quantile_bins


@dataclass(frozen=True)
class ScoredSample:
    scores: np.ndarray
    outcomes: np.ndarray
    oracle_q: np.ndarray | None = None
    features: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        y = np.asarray(self.outcomes, dtype=float)
        if s.ndim != 1 or s.shape != y.shape:
            raise ValueError("scores and outcomes must be aligned vectors")
        if np.any((s < 0) | (s > 1)):
            raise ValueError("scores must lie in [0, 1]")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("outcomes must be 0 or 1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "outcomes", y)
        if self.oracle_q is not None:
            q = np.asarray(self.oracle_q, dtype=float)
            if q.shape != s.shape or np.any((q < 0) | (q > 1)):
                raise ValueError("oracle_q must be aligned and lie in [0, 1]")
            object.__setattr__(self, "oracle_q", q)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != s.shape or np.any(w < 0) or not w.sum() > 0:
                raise ValueError("weights must be aligned, nonnegative and not all zero")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.scores.size

    @property
    def has_oracle(self) -> bool:
        return self.oracle_q is not None

    def mean(self, values) -> float:
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise ValueError("empty sample")
        if self.weights is None:
            return float(np.mean(values))
        return float(np.average(values, weights=self.weights))

    def subset(self, idx) -> "ScoredSample":
        pick = (lambda a: None if a is None else a[idx])
        return ScoredSample(self.scores[idx], self.outcomes[idx], pick(self.oracle_q),
                            pick(self.features), pick(self.weights))


def _calibrated(sample: ScoredSample, calibrator) -> np.ndarray:
    if isinstance(calibrator, Calibrator):
        return np.asarray(calibrator.predict(sample.scores), dtype=float)
    c = np.asarray(calibrator, dtype=float)
    if c.shape != sample.scores.shape:
        raise ValueError("calibrated values must align with the sample")
    return c


def _require_oracle(sample: ScoredSample) -> np.ndarray:
    if sample.oracle_q is None:
        raise ValueError("this estimate needs oracle_q")
    return sample.oracle_q


def _nonempty(sample: ScoredSample) -> None:
    if len(sample) == 0:
        raise ValueError("empty sample")


def reliability_hat(loss: ProperLoss, sample: ScoredSample, calibrator) -> float:
    _nonempty(sample)
    c = _calibrated(sample, calibrator)
    return sample.mean(loss.binary_divergence(sample.scores, c))


def grouping_hat(loss: ProperLoss, sample: ScoredSample, calibrator) -> float:
    _nonempty(sample)
    q = _require_oracle(sample)
    return sample.mean(loss.binary_divergence(_calibrated(sample, calibrator), q))


def irreducible_hat(loss: ProperLoss, sample: ScoredSample) -> float:
    _nonempty(sample)
    return sample.mean(loss.binary_entropy(_require_oracle(sample)))


def lcs(sample: ScoredSample, calibrator) -> float:
    """Local calibration score: mean squared gap between score and calibrated score."""
    _nonempty(sample)
    return sample.mean((sample.scores - _calibrated(sample, calibrator)) ** 2)


def ici(sample: ScoredSample, calibrator) -> float:
    """Integrated calibration index: mean absolute gap."""
    _nonempty(sample)
    return sample.mean(np.abs(sample.scores - _calibrated(sample, calibrator)))


def mean_scores(sample: ScoredSample, clamp_epsilon: float = LOGLOSS.clamp_epsilon) -> dict:
    _nonempty(sample)
    y = sample.outcomes.astype(int)
    ll = ProperLoss("logloss", clamp_epsilon)
    return {
        "brier": sample.mean(BRIER.binary_pointwise(sample.scores, y)),
        "logloss": sample.mean(ll.binary_pointwise(sample.scores, y)),
    }


@dataclass(frozen=True)
class DiagramBin:
    bin: int
    mean_score: float
    emp_freq: float
    mass: float


def reliability_diagram(sample: ScoredSample, n_bins: int = 10) -> list[DiagramBin]:
    """Per quantile bin: mean score, empirical outcome frequency and mass (count or weight)."""
    if n_bins > len(sample):
        raise ValueError("more bins than observations")
    b = quantile_bins(sample.scores, n_bins, sample.weights)
    w = np.ones(len(sample)) if sample.weights is None else sample.weights
    nb = int(b.max()) + 1
    mass = np.bincount(b, weights=w, minlength=nb)
    ms = np.bincount(b, weights=w * sample.scores, minlength=nb) / mass
    fr = np.bincount(b, weights=w * sample.outcomes, minlength=nb) / mass
    return [DiagramBin(j, float(ms[j]), float(fr[j]), float(mass[j])) for j in range(nb)]


def format_float(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def diagram_to_csv(bins: list[DiagramBin]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "mean_score", "emp_freq", "mass"])
    for b in bins:
        w.writerow([b.bin, format_float(b.mean_score), format_float(b.emp_freq), format_float(b.mass)])
    return buf.getvalue()


@dataclass
class LossComponents:
    reliability: float
    total: float
    grouping: float | None = None
    irreducible: float | None = None
    clamped: int = 0

    @property
    def residual(self) -> float | None:
        if self.grouping is None or self.irreducible is None:
            return None
        return self.total - (self.reliability + self.grouping + self.irreducible)

    def to_dict(self) -> dict:
        d = {"reliability": self.reliability, "total": self.total}
        if self.grouping is not None:
            d["grouping"] = self.grouping
        if self.irreducible is not None:
            d["irreducible"] = self.irreducible
        if self.residual is not None:
            d["residual"] = self.residual
        if self.clamped:
            d["clamped"] = self.clamped
        return d


@dataclass
class DecompositionReport:
    components: dict[str, LossComponents]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"losses": {k: v.to_dict() for k, v in self.components.items()},
                "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def decompose_sample(sample: ScoredSample, calibrator, losses=(BRIER, LOGLOSS),
                     metadata: dict | None = None) -> DecompositionReport:
    """Reliability, grouping, irreducible and total loss for each loss.

    Grouping, irreducible and the residual ``total - (rel + grp + irr)``
    appear only when the sample has ``oracle_q``.  The residual is reported,
    not forced to zero: sample estimates satisfy the identity only
    approximately.
    """
    c = _calibrated(sample, calibrator)
    y = sample.outcomes.astype(int)
    comps = {}
    for loss in losses:
        loss = get_loss(loss)
        total = sample.mean(loss.binary_pointwise(sample.scores, y))
        comp = LossComponents(reliability=reliability_hat(loss, sample, c), total=total)
        if sample.has_oracle:
            comp.grouping = grouping_hat(loss, sample, c)
            comp.irreducible = irreducible_hat(loss, sample)
        if loss.kind == LOGLOSS.kind:
            eps = loss.clamp_epsilon
            near = lambda v: (v < eps) | (v > 1 - eps)  # noqa: E731
            comp.clamped = int(np.sum(near(sample.scores) | near(c)))
        comps[loss.name] = comp
    meta = {"n": len(sample), "log_base": "e"}
    if isinstance(calibrator, Calibrator):
        meta["calibrator"] = calibrator.kind
    meta.update(metadata or {})
    return DecompositionReport(comps, meta)


def crossfit_predictions(scores, outcomes, method: str = "isotonic", folds: int = 5,
                         seed: int = 0, config: dict | None = None) -> np.ndarray:
    """Out-of-fold calibrated values: each point's map is fitted on the other folds."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if folds < 2:
        raise ValueError("cross-fitting needs at least two folds")
    fold = np.random.default_rng(seed).permutation(s.size) % folds
    out = np.empty_like(s)
    for f in range(folds):
        te = fold == f
        if not te.any():
            continue
        cal = fit_calibrator(method, s[~te], y[~te], config)
        out[te] = cal.predict(s[te])
    return out


def enumerate_population(space, predictor, oracle_partition=None) -> ScoredSample:
    """Weighted sample listing every (atom, label) pair of a binary finite space.

    Scores are the predictor's ``P(Y=1)``; ``oracle_q`` is the conditional
    law at ``oracle_partition`` (the atoms themselves by default).
    """
    from scoredecomp.finite_world import Partition, conditional_law

    if space.n_labels != 2:
        raise ValueError("sample estimators are binary")
    part = oracle_partition or Partition.discrete(space.n_atoms)
    q = conditional_law(space, part).at_atoms()[:, 1]
    s = predictor.at_atoms()[:, 1]
    n = space.n_atoms
    scores = np.repeat(s, 2)
    outcomes = np.tile([0.0, 1.0], n)
    weights = (space.atom_probs[:, None] * space.chance).ravel()
    keep = weights > 0
    return ScoredSample(scores[keep], outcomes[keep], np.repeat(q, 2)[keep], weights=weights[keep])


__all__ = [
    "ScoredSample", "DecompositionReport", "LossComponents", "DiagramBin", "reliability_hat",
    "grouping_hat", "irreducible_hat", "lcs", "ici", "mean_scores", "reliability_diagram",
    "decompose_sample", "crossfit_predictions", "enumerate_population", "diagram_to_csv",
    "format_float",
]
