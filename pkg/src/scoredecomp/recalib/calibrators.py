"""Fitted recalibration maps ``g: [0, 1] -> [0, 1]`` and the fitting dispatcher."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import expit

from scoredecomp._logistic import irls
from scoredecomp.errors import DegenerateDataError
from scoredecomp.recalib.pav import SortedSample, pava

PLATT_RIDGE = 1e-6


def _clamp_unit(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s > 1)):
        warnings.warn("scores outside [0, 1] clamped", RuntimeWarning, stacklevel=3)
        s = np.clip(s, 0.0, 1.0)
    return s


class Calibrator:
    """Base class; subclasses implement :meth:`_predict` on clamped scores."""

    kind = "abstract"

    def predict(self, s):
        scalar = np.ndim(s) == 0
        out = self._predict(_clamp_unit(s))
        return float(out) if scalar else out

    __call__ = predict

    def _predict(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class IdentityCalibrator(Calibrator):
    kind = "identity"

    def _predict(self, s):
        return s.copy()

    def to_dict(self):
        return {"kind": self.kind}


@dataclass
class StepFit(Calibrator):
    """Right-continuous step function: level ``values[j]`` on ``[breakpoints[j], breakpoints[j+1])``.

    Queries below the first breakpoint take the first level.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    kind = "step"

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.breakpoints.shape != self.values.shape or self.breakpoints.size == 0:
            raise ValueError("breakpoints and values must be nonempty and aligned")

    def _predict(self, s):
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        return self.values[np.clip(idx, 0, self.values.size - 1)]

    def to_dict(self):
        return {"kind": self.kind, "breakpoints": self.breakpoints.tolist(),
                "values": self.values.tolist()}


class IsotonicFit(StepFit):
    kind = "isotonic"


class BinnedFit(StepFit):
    """Quantile-bin frequencies, pooled by PAV across bins so the map is monotone."""

    kind = "binned"


class ExactFit(StepFit):
    """Conditional outcome mean at every distinct score of a sample.

    This is the in-sample calibration map used to evaluate population
    fixtures; unlike the other fits it need not be monotone.
    """

    kind = "exact"


@dataclass
class PlattFit(Calibrator):
    """``g(s) = sigmoid(a s + b)`` with ``a >= 0``."""

    a: float
    b: float
    meta: dict = field(default_factory=dict)
    kind = "platt"

    def _predict(self, s):
        return expit(self.a * s + self.b)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b, "meta": self.meta}


@dataclass
class MonotoneSplineFit(Calibrator):
    knots: np.ndarray
    coef: np.ndarray
    link: str
    lam: float
    bandwidth: float | None = None
    meta: dict = field(default_factory=dict)
    kind = "monotone_spline"

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.coef = np.asarray(self.coef, dtype=float)
        self._spline = BSpline(self.knots, self.coef, 3, extrapolate=False)

    def link_scale(self, s) -> np.ndarray:
        """The spline itself (logit scale under the logit link)."""
        return self._spline(np.clip(np.asarray(s, dtype=float), 0.0, 1.0))

    def derivative(self, s) -> np.ndarray:
        return self._spline.derivative()(np.clip(np.asarray(s, dtype=float), 0.0, 1.0))

    def _predict(self, s):
        eta = self.link_scale(s)
        if self.link == "logit":
            return expit(eta)
        return np.clip(eta, 0.0, 1.0)

    def to_dict(self):
        return {"kind": self.kind, "knots": self.knots.tolist(), "coef": self.coef.tolist(),
                "link": self.link, "lam": self.lam, "bandwidth": self.bandwidth,
                "meta": self.meta}


def calibrator_from_dict(doc: dict) -> Calibrator:
    kind = doc.get("kind")
    if kind == "identity":
        return IdentityCalibrator()
    steps = {"isotonic": IsotonicFit, "binned": BinnedFit, "exact": ExactFit, "step": StepFit}
    if kind in steps:
        return steps[kind](np.array(doc["breakpoints"]), np.array(doc["values"]))
    if kind == "platt":
        return PlattFit(float(doc["a"]), float(doc["b"]), dict(doc.get("meta", {})))
    if kind == "monotone_spline":
        return MonotoneSplineFit(np.array(doc["knots"]), np.array(doc["coef"]), doc["link"],
                                 float(doc["lam"]), doc.get("bandwidth"), dict(doc.get("meta", {})))
    raise ValueError(f"unknown calibrator kind {kind!r}")


def calibrator_from_json(text: str) -> Calibrator:
    return calibrator_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# fitting


def _check_binary(outcomes) -> np.ndarray:
    y = np.asarray(outcomes, dtype=float)
    if y.size < 2:
        raise DegenerateDataError("need at least two observations")
    if np.all(y == y[0]):
        raise DegenerateDataError("only one class present")
    return y


def isotonic_fit(scores, outcomes, weights=None) -> IsotonicFit:
    from scoredecomp.recalib.pav import pav_isotonic

    return pav_isotonic(SortedSample.from_unsorted(scores, outcomes, weights))


def platt_fit(scores, outcomes, weights=None) -> PlattFit:
    """Logistic recalibration ``sigmoid(a s + b)`` by ridge-penalized IRLS.

    The tiny ridge ``1e-6 (a^2 + b^2)`` keeps separated data finite.  When
    the unconstrained slope is negative the fit falls back to ``a = 0``,
    the constrained optimum by convexity.

    Raises
    ------
    DegenerateDataError
        If fewer than two samples or a single class.
    """
    s = np.asarray(scores, dtype=float)
    y = _check_binary(outcomes)
    X = np.column_stack([s, np.ones_like(s)])
    res = irls(X, y, weights, ridge=PLATT_RIDGE)
    a, b = res.coef
    if a < 0:
        res = irls(X[:, 1:], y, weights, ridge=PLATT_RIDGE)
        a, b = 0.0, res.coef[0]
    return PlattFit(float(a), float(b), {"converged": res.converged, "iterations": res.n_iter})


def quantile_bins(scores, n_bins: int, weights=None) -> np.ndarray:
    """Bin index per score for approximately equal-mass quantile bins.

    Each distinct score value is placed by the midpoint of its cumulative
    mass, so ties share a bin and indices are nondecreasing in the score.
    Empty bins are removed and indices renumbered from zero.
    """
    s = np.asarray(scores, dtype=float)
    if n_bins < 1:
        raise ValueError("need at least one bin")
    if n_bins > s.size:
        raise ValueError("more bins than observations")
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    uniq, inv = np.unique(s, return_inverse=True)
    mass = np.bincount(inv, weights=w)
    total = mass.sum()
    centre = (np.cumsum(mass) - 0.5 * mass) / total
    ubin = np.minimum((centre * n_bins).astype(int), n_bins - 1)
    _, ubin = np.unique(ubin, return_inverse=True)
    return ubin[inv]


def binned_fit(scores, outcomes, n_bins: int = 10, weights=None) -> BinnedFit:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    b = quantile_bins(s, n_bins, w)
    nb = b.max() + 1
    mass = np.bincount(b, weights=w, minlength=nb)
    freq = np.bincount(b, weights=w * y, minlength=nb) / mass
    lower = np.array([s[b == j].min() for j in range(nb)])
    return BinnedFit(lower, pava(freq, mass))


def exact_fit(scores, outcomes, weights=None) -> ExactFit:
    s = np.asarray(scores, dtype=float)
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=float)
    uniq, inv = np.unique(s, return_inverse=True)
    mass = np.bincount(inv, weights=w)
    means = np.bincount(inv, weights=w * np.asarray(outcomes, dtype=float)) / mass
    return ExactFit(uniq, means)


METHODS = ("isotonic", "platt", "monotone_spline", "binned")
_ALIASES = {"spline": "monotone_spline"}

DEFAULT_CONFIG = {
    "bins": 10,
    "k": 15,
    "h": 0.08,
    "lam": None,  # None: choose by cross-validation
    "link": "logit",
    "grid_size": 101,
    "cv_folds": 5,
    "seed": 0,
}


def fit_calibrator(method: str, scores, outcomes, config: dict | None = None,
                   weights=None) -> Calibrator:
    """Fit a monotone calibrator of the given kind.

    ``method`` is one of ``isotonic``, ``platt``, ``monotone_spline``
    (alias ``spline``) or ``binned``; ``exact`` gives the in-sample
    conditional means.  ``config`` overrides :data:`DEFAULT_CONFIG`.
    """
    method = _ALIASES.get(method, method)
    cfg = dict(DEFAULT_CONFIG)
    if config:
        unknown = set(config) - set(DEFAULT_CONFIG)
        if unknown:
            raise ValueError(f"unknown calibrator options: {sorted(unknown)}")
        cfg.update(config)
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise DegenerateDataError("empty sample")
    if np.any((s < 0) | (s > 1)):
        raise ValueError("scores must lie in [0, 1]")
    y = np.asarray(outcomes, dtype=float)
    if method == "isotonic":
        return isotonic_fit(s, y, weights)
    if method == "platt":
        return platt_fit(s, y, weights)
    if method == "binned":
        return binned_fit(s, y, cfg["bins"], weights)
    if method == "exact":
        return exact_fit(s, y, weights)
    if method == "monotone_spline":
        from scoredecomp.recalib.spline import fit_two_step, select_lambda

        if weights is not None:
            raise ValueError("the spline calibrator does not take sample weights")
        _check_binary(y)
        lam = cfg["lam"]
        cv = None
        if lam is None:
            lam, cv = select_lambda(s, y, k=cfg["k"], h=cfg["h"], link=cfg["link"],
                                    grid_size=cfg["grid_size"], folds=cfg["cv_folds"],
                                    seed=cfg["seed"])
        fit = fit_two_step(s, y, k=cfg["k"], h=cfg["h"], lam=lam, link=cfg["link"],
                           grid_size=cfg["grid_size"])
        if cv is not None:
            fit.meta["cv_deviance"] = {repr(k): v for k, v in cv.items()}
        return fit
    raise ValueError(f"unknown calibration method {method!r}")
