"""Synthetic data with known ``P(Y=1|X)``, base models and ensembles.

Features come from a Gaussian copula with uniform marginals and latent
correlation ``rho``.  Two probability surfaces are available:

* ``main``: ``sigmoid(2.5 (x1 + x2 - 1) + 2 (exp((x1 - x2)^3) - 1))``
* ``appendix_sim``: ``sigmoid(x1 + x2 + exp((x1 - x2)^3) - 1)``

Random streams are Philox generators keyed by ``(seed, stream)`` so a cell of
a sweep reproduces regardless of scheduling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from scoredecomp._logistic import irls
from scoredecomp.errors import DegenerateDataError
from scoredecomp.finite_world import (
    BlockPredictor,
    FiniteSpace,
    Partition,
    coarsen,
    conditional_law,
    expected_loss,
    random_space,
    telescope_decompose,
)
from scoredecomp.losses import BRIER, LOGLOSS, ProperLoss

SURFACES = ("main", "appendix_sim")
FEATURES = ("x1", "x2")


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for one stream of a seeded experiment."""
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class DGPConfig:
    rho: float = 0.0
    n: int = 10_000
    seed: int = 0
    surface: str = "main"

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.surface not in SURFACES:
            raise ValueError(f"surface must be one of {SURFACES}")


@dataclass(frozen=True)
class SyntheticDataset:
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    q: np.ndarray

    def __len__(self) -> int:
        return self.y.size

    def features(self, names) -> np.ndarray:
        cols = {"x1": self.x1, "x2": self.x2}
        return np.column_stack([cols[n] for n in names]) if names else np.empty((len(self), 0))

    def subset(self, idx) -> "SyntheticDataset":
        return SyntheticDataset(self.x1[idx], self.x2[idx], self.y[idx], self.q[idx])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x1", "x2", "y", "q"])
        for row in zip(self.x1, self.x2, self.y, self.q):
            w.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2]), repr(float(row[3]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SyntheticDataset":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["x1", "x2", "y", "q"]:
            raise ValueError("dataset CSV header must be x1,x2,y,q")
        a = np.array(rows[1:], dtype=float).reshape(-1, 4)
        return cls(a[:, 0], a[:, 1], a[:, 2].astype(int), a[:, 3])


def sample_copula(config: DGPConfig, stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Uniform marginals coupled through a bivariate normal with correlation ``rho``."""
    rng = rng_for(config.seed, 0, stream)
    e1 = rng.standard_normal(config.n)
    e2 = rng.standard_normal(config.n)
    z1 = e1
    z2 = config.rho * e1 + np.sqrt(1.0 - config.rho ** 2) * e2
    return ndtr(z1), ndtr(z2)


def true_q(x1, x2, surface: str = "main") -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    psi = np.exp((x1 - x2) ** 3) - 1.0
    if surface == "main":
        eta = 2.5 * (x1 + x2 - 1.0) + 2.0 * psi
    elif surface == "appendix_sim":
        eta = x1 + x2 + psi
    else:
        raise ValueError(f"unknown surface {surface!r}")
    return expit(eta)


def sample_dataset(config: DGPConfig, stream: int = 0) -> SyntheticDataset:
    """Draw features, true probabilities and Bernoulli outcomes; deterministic given the seed."""
    x1, x2 = sample_copula(config, stream)
    q = true_q(x1, x2, config.surface)
    u = rng_for(config.seed, 1, stream).random(config.n)
    return SyntheticDataset(x1, x2, (u < q).astype(int), q)


def sample_splits(config: DGPConfig) -> tuple[SyntheticDataset, SyntheticDataset, SyntheticDataset]:
    """Independent train, calibration and test draws of ``config.n`` each."""
    return tuple(sample_dataset(config, stream) for stream in range(3))


@dataclass
class LogisticModel:
    features: tuple[str, ...]
    coef: np.ndarray  # intercept first
    converged: bool = True
    separated: bool = False
    meta: dict = field(default_factory=dict)

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not self.features:
            return np.full(X.shape[0], self.coef[0])
        return self.coef[0] + X.reshape(-1, len(self.features)) @ self.coef[1:]

    def predict_matrix(self, X) -> np.ndarray:
        return expit(self.decision(X))

    def predict(self, dataset: SyntheticDataset) -> np.ndarray:
        return self.predict_matrix(dataset.features(self.features))


def _fit_matrix(X, y, names) -> LogisticModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise DegenerateDataError("need at least two observations")
    if np.all(y == y[0]):
        raise DegenerateDataError("only one class present")
    design = np.column_stack([np.ones(len(y)), X])
    res = irls(design, y)
    eta = design @ res.coef
    separated = (not res.converged) or bool(np.all((eta > 0) == (y > 0.5)) and np.abs(eta).min() > 5)
    if separated:
        res = irls(design, y, ridge=1e-8)
    return LogisticModel(tuple(names), res.coef, res.converged, separated,
                         {"iterations": res.n_iter})


def fit_logistic(dataset: SyntheticDataset, features=("x1",)) -> LogisticModel:
    """Logistic MLE by IRLS on a subset of ``{x1, x2}``.

    Perfectly separated data are refitted with a ``1e-8`` ridge and flagged.
    """
    features = tuple(features)
    unknown = set(features) - set(FEATURES)
    if unknown:
        raise ValueError(f"unknown features {sorted(unknown)}")
    return _fit_matrix(dataset.features(features), dataset.y, features)


def ensemble_average(s1, s2) -> np.ndarray:
    return 0.5 * (np.asarray(s1, dtype=float) + np.asarray(s2, dtype=float))


@dataclass
class StackingModel:
    meta_model: LogisticModel

    def predict(self, s1, s2) -> np.ndarray:
        return self.meta_model.predict_matrix(np.column_stack([s1, s2]))


def ensemble_stack(s1, s2, calib_outcomes) -> StackingModel:
    """Meta-logistic model on the pair of base scores, fitted on calibration outcomes."""
    model = _fit_matrix(np.column_stack([s1, s2]), calib_outcomes, ("s1", "s2"))
    return StackingModel(model)


def quantize_score(scores, levels: int = 8) -> np.ndarray:
    """Map each score to the midpoint of its cell in a uniform ``levels``-cell grid."""
    if levels < 2:
        raise ValueError("need at least two levels")
    s = np.asarray(scores, dtype=float)
    cell = np.clip(np.floor(s * levels), 0, levels - 1)
    return (cell + 0.5) / levels


# --------------------------------------------------------------------------
# population-level boosting and stagewise recalibration


@dataclass
class BoostingStage:
    stage: int
    n_blocks: int
    brier_risk: float
    gain: float
    logloss_risk: float
    logloss_gain: float
    mutual_info: float


def boosting_demo(space_size: int = 8, depth: int = 3, seed: int = 0,
                  trivial: bool = False) -> list[BoostingStage]:
    """Telescoping table along a random refining filtration of a random binary space.

    ``F_0`` is the trivial partition and each later stage refines the
    previous one; ``trivial=True`` keeps every stage equal to ``F_0``.
    Row ``t`` reports the Bayes risk at stage ``t`` and the gain from
    ``t`` to ``t+1`` (zero on the last row).
    """
    from scoredecomp.finite_world import conditional_entropy

    if depth < 1:
        raise ValueError("depth must be at least 1")
    rng = rng_for(seed, 7)
    space = random_space(rng, space_size, 2)
    if trivial:
        filtration = [Partition.trivial(space_size)] * (depth + 1)
    else:
        filtration = [Partition.discrete(space_size)]
        for t in range(depth, 0, -1):
            target = 1 if t == 1 else max(1, int(np.ceil(filtration[0].block_count / 2)))
            filtration.insert(0, coarsen(rng, filtration[0], target))
    t0 = conditional_law(space, filtration[0])
    brier = telescope_decompose(space, filtration, t0, BRIER)
    logl = telescope_decompose(space, filtration, t0, LOGLOSS)
    rows = []
    for t, part in enumerate(filtration):
        last = t == depth
        mi = 0.0 if last else (conditional_entropy(space, part)
                               - conditional_entropy(space, filtration[t + 1]))
        rows.append(BoostingStage(
            stage=t,
            n_blocks=part.block_count,
            brier_risk=brier.stage_risks[t],
            gain=0.0 if last else brier.gains[t],
            logloss_risk=logl.stage_risks[t],
            logloss_gain=0.0 if last else logl.gains[t],
            mutual_info=mi,
        ))
    return rows


@dataclass
class StagewiseResult:
    pre_loss: float
    reliability_removed: float
    post_loss: float
    recalibrated: BlockPredictor


def stagewise_recalibrate(space: FiniteSpace, predictor: BlockPredictor,
                          loss: ProperLoss) -> StagewiseResult:
    """Replace a stage score by ``P(Y | score)`` and account for the loss it removes.

    The conditioning is on the sigma-algebra generated by the score's values,
    which may be coarser than the partition the predictor is declared on.
    """
    own = predictor.induced_partition()
    law = conditional_law(space, own)
    pre = float(expected_loss(space, predictor.at_atoms(), loss))
    post = float(expected_loss(space, law.at_atoms(), loss))
    removed = float(space.atom_probs @ loss.divergence(predictor.at_atoms(), law.at_atoms()))
    return StagewiseResult(pre, removed, post, law)


# --------------------------------------------------------------------------
# rho sweep: calibration and grouping of base, ensemble and quantized scores

VARIANTS = ("s1", "s2", "avg", "s12", "s12q")


@dataclass(frozen=True)
class SweepConfig:
    rhos: tuple[float, ...] = tuple(np.round(np.arange(-0.9, 0.91, 0.1), 10))
    n: int = 10_000
    seed: int = 0
    surface: str = "main"
    calibrator: str = "isotonic"
    losses: tuple[str, ...] = ("brier", "logloss")
    folds: int = 5
    levels: int = 8
    calibrator_config: dict | None = None


def variant_scores(train: SyntheticDataset, levels: int = 8):
    """Fitted base models and a function giving every variant's score on a split."""
    m1 = fit_logistic(train, ("x1",))
    m2 = fit_logistic(train, ("x2",))
    m12 = fit_logistic(train, ("x1", "x2"))

    def scores(d: SyntheticDataset) -> dict[str, np.ndarray]:
        s1, s2, s12 = m1.predict(d), m2.predict(d), m12.predict(d)
        return {"s1": s1, "s2": s2, "avg": ensemble_average(s1, s2), "s12": s12,
                "s12q": quantize_score(s12, levels)}

    return scores


def sweep_cell(rho: float, cfg: SweepConfig) -> list[dict]:
    """One row per score variant at correlation ``rho``.

    Each variant is recalibrated by a map ``g`` fitted on the calibration
    split.  On the test split, the before/after columns describe ``S`` and
    ``g(S)``; each uses its own calibration map ``C_hat``, cross-fitted on
    the test split with ``cfg.folds`` folds, and the known ``q``.
    """
    from scoredecomp.decomp_est import ScoredSample, crossfit_predictions, decompose_sample, lcs
    from scoredecomp.recalib import fit_calibrator

    train, calib, test = sample_splits(DGPConfig(rho=rho, n=cfg.n, seed=cfg.seed,
                                                 surface=cfg.surface))
    scores = variant_scores(train, cfg.levels)
    on_calib, on_test = scores(calib), scores(test)
    rows = []
    for name in VARIANTS:
        g = fit_calibrator(cfg.calibrator, on_calib[name], calib.y, cfg.calibrator_config)
        row = {"rho": float(rho), "variant": name}
        for tag, s in (("before", on_test[name]), ("after", g.predict(on_test[name]))):
            sample = ScoredSample(s, test.y, test.q)
            c_hat = crossfit_predictions(s, test.y, cfg.calibrator, cfg.folds, cfg.seed,
                                         cfg.calibrator_config)
            row[f"lcs_{tag}"] = lcs(sample, c_hat)
            report = decompose_sample(sample, c_hat, cfg.losses)
            for loss, comp in report.components.items():
                row[f"rel_{loss}_{tag}"] = comp.reliability
                row[f"grp_{loss}_{tag}"] = comp.grouping
                row[f"irr_{loss}_{tag}"] = comp.irreducible
        rows.append(row)
    return rows


def sweep_columns(losses=("brier", "logloss")) -> list[str]:
    cols = ["rho", "variant", "lcs_before", "lcs_after"]
    for loss in losses:
        for tag in ("before", "after"):
            cols += [f"rel_{loss}_{tag}", f"grp_{loss}_{tag}", f"irr_{loss}_{tag}"]
    return cols
