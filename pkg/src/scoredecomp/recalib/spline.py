"""Kernel smoothing and monotone cubic splines on [0, 1].

The monotone calibrator is built in two steps: Nadaraya-Watson
pre-smoothing on a fixed grid (pseudo-responses plus kernel mass), then a
penalized cubic B-spline fit whose coefficients are constrained to be
nondecreasing, either by least squares (identity link) or by constrained
IRLS on the Bernoulli deviance (logit link).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import expit, logit

from scoredecomp.recalib.qp import kkt_residuals, solve_qp

DEGREE = 3
LAMBDA_GRID = tuple(10.0 ** np.arange(-4, 3))
PROB_FLOOR = 1e-10


def triweight(u) -> np.ndarray:
    """``35/32 (1 - u^2)^3`` on ``|u| <= 1``, zero outside."""
    v = np.maximum(1.0 - np.square(np.asarray(u, dtype=float)), 0.0)
    return 35.0 / 32.0 * v * v * v


def nadaraya_watson(x, y, at, h: float) -> np.ndarray:
    """Kernel regression estimate at the points ``at`` (NaN where no mass)."""
    sm = kernel_presmooth(x, y, at, h)
    return sm.pseudo_full


@dataclass
class Presmoothed:
    grid: np.ndarray
    pseudo_full: np.ndarray
    mass_full: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.mass_full > 0

    @property
    def t(self) -> np.ndarray:
        return self.grid[self.covered]

    @property
    def pseudo(self) -> np.ndarray:
        return self.pseudo_full[self.covered]

    @property
    def mass(self) -> np.ndarray:
        return self.mass_full[self.covered]


def kernel_presmooth(scores, outcomes, grid, h: float) -> Presmoothed:
    """Pseudo-responses and kernel masses on ``grid``.

    Grid points with zero kernel mass get a NaN pseudo-response and are left
    out of :attr:`Presmoothed.pseudo` / :attr:`Presmoothed.mass`.
    """
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    mass = np.zeros(grid.shape)
    wy = np.zeros(grid.shape)
    # chunk over data to bound memory at large n
    for start in range(0, x.size, 4096):
        k = triweight((grid[:, None] - x[None, start:start + 4096]) / h)
        mass += k.sum(axis=1)
        wy += k @ y[start:start + 4096]
    with np.errstate(invalid="ignore", divide="ignore"):
        pseudo = np.where(mass > 0, wy / mass, np.nan)
    return Presmoothed(grid, pseudo, mass)


def knot_vector(k: int) -> np.ndarray:
    """Clamped cubic knots on [0, 1] with uniform breakpoints, giving ``k`` basis functions."""
    if k < DEGREE + 1:
        raise ValueError("basis size must be at least 4")
    inner = np.linspace(0.0, 1.0, k - DEGREE + 1)
    return np.concatenate([np.zeros(DEGREE), inner, np.ones(DEGREE)])


def design_matrix(x, knots) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return BSpline.design_matrix(x, knots, DEGREE).toarray()


def difference_matrix(k: int, order: int) -> np.ndarray:
    return np.diff(np.eye(k), n=order, axis=0)


def pspline_fit(x, y, w=None, k: int = 15, lam: float = 1.0) -> BSpline:
    """Unconstrained penalized cubic B-spline (no shape constraint)."""
    knots = knot_vector(k)
    B = design_matrix(x, knots)
    w = np.ones(len(B)) if w is None else np.asarray(w, dtype=float)
    D2 = difference_matrix(k, 2)
    H = (B * w[:, None]).T @ B + lam * D2.T @ D2
    coef = np.linalg.lstsq(H, B.T @ (w * np.asarray(y, dtype=float)), rcond=None)[0]
    return BSpline(knots, coef, DEGREE, extrapolate=False)


@dataclass
class SplineProblem:
    """Weighted penalized spline objective at fixed design points."""

    B: np.ndarray
    target: np.ndarray
    weights: np.ndarray
    lam: float
    D1: np.ndarray = field(init=False)
    P: np.ndarray = field(init=False)

    def __post_init__(self):
        k = self.B.shape[1]
        self.D1 = difference_matrix(k, 1)
        D2 = difference_matrix(k, 2)
        self.P = self.lam * D2.T @ D2

    def penalty(self, beta) -> float:
        return 0.5 * float(beta @ self.P @ beta)

    def ls_objective(self, beta) -> float:
        r = self.target - self.B @ beta
        return 0.5 * float(self.weights @ (r * r)) + self.penalty(beta)

    def ls_gradient(self, beta) -> np.ndarray:
        return -self.B.T @ (self.weights * (self.target - self.B @ beta)) + self.P @ beta

    def deviance_objective(self, beta) -> float:
        mu = np.clip(expit(self.B @ beta), PROB_FLOOR, 1 - PROB_FLOOR)
        y = self.target
        dev = -(y * np.log(mu) + (1 - y) * np.log(1 - mu))
        return float(self.weights @ dev) + self.penalty(beta)

    def deviance_gradient(self, beta) -> np.ndarray:
        mu = expit(self.B @ beta)
        return self.B.T @ (self.weights * (mu - self.target)) + self.P @ beta

    def hessian_ls(self, w) -> np.ndarray:
        data = (self.B * w[:, None]).T @ self.B
        # tiny ridge keeps reduced Hessians nonsingular where the data leave a basis
        # function free; scaled by the data term so a huge penalty does not inflate it
        ridge = 1e-10 * max(np.mean(np.diag(data)), 1e-300)
        return data + self.P + ridge * np.eye(data.shape[0])


@dataclass
class SplineSolution:
    coef: np.ndarray
    converged: bool
    iterations: int
    kkt: dict


def solve_identity(problem: SplineProblem) -> SplineSolution:
    H = problem.hessian_ls(problem.weights)
    g = -problem.B.T @ (problem.weights * problem.target)
    x0 = np.full(H.shape[0], float(np.average(problem.target, weights=problem.weights)))
    res = solve_qp(H, g, problem.D1, x0=x0)
    kkt = kkt_residuals(problem.ls_gradient(res.x), problem.D1, res.x)
    return SplineSolution(res.x, res.converged, res.iterations, kkt)


def solve_logit(problem: SplineProblem, max_iter: int = 200, tol: float = 1e-12) -> SplineSolution:
    """Constrained IRLS: each step solves the monotone QP on working responses."""
    y = problem.target
    ybar = np.clip(np.average(y, weights=problem.weights), 1e-6, 1 - 1e-6)
    beta = np.full(problem.B.shape[1], float(logit(ybar)))
    obj = problem.deviance_objective(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = problem.B @ beta
        mu = np.clip(expit(eta), PROB_FLOOR, 1 - PROB_FLOOR)
        var = mu * (1 - mu)
        w = problem.weights * var
        z = eta + (y - mu) / var
        H = problem.hessian_ls(w)
        g = -problem.B.T @ (w * z)
        cand = solve_qp(H, g, problem.D1, x0=beta).x
        step = cand - beta
        t = 1.0
        while True:
            trial = beta + t * step
            new_obj = problem.deviance_objective(trial)
            if new_obj <= obj + 1e-13 * abs(obj) or t < 1e-8:
                break
            t *= 0.5
        beta = trial
        change = obj - new_obj
        obj = new_obj
        if abs(change) <= tol * (1.0 + abs(obj)) and np.max(np.abs(t * step)) < 1e-7:
            converged = True
            break
    kkt = kkt_residuals(problem.deviance_gradient(beta), problem.D1, beta)
    return SplineSolution(beta, converged, it, kkt)


def monotone_spline_fit(pseudo, mass, grid, k: int = 15, lam: float = 1.0,
                        link: str = "logit", bandwidth: float | None = None):
    """Fit a nondecreasing cubic spline to pseudo-responses on ``grid``.

    Masses are rescaled to mean one, so ``lam`` is relative to an average
    grid point's weight.  Points with NaN pseudo-response or zero mass are
    dropped.  Non-convergence of IRLS is recorded in ``meta['converged']``
    and reported as a warning; the last iterate is returned.
    """
    from scoredecomp.recalib.calibrators import MonotoneSplineFit

    if link not in ("identity", "logit"):
        raise ValueError(f"unknown link {link!r}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    pseudo = np.asarray(pseudo, dtype=float)
    mass = np.asarray(mass, dtype=float)
    grid = np.asarray(grid, dtype=float)
    use = np.isfinite(pseudo) & (mass > 0)
    if use.sum() < 2:
        raise ValueError("need at least two usable pseudo-observations")
    t, y, v = grid[use], np.clip(pseudo[use], 0.0, 1.0), mass[use]
    v = v / v.mean()
    knots = knot_vector(k)
    problem = SplineProblem(design_matrix(t, knots), y, v, lam)
    sol = solve_identity(problem) if link == "identity" else solve_logit(problem)
    if not sol.converged:
        warnings.warn("monotone spline fit did not converge; returning last iterate",
                      RuntimeWarning, stacklevel=2)
    meta = {
        "converged": bool(sol.converged),
        "iterations": int(sol.iterations),
        "kkt": sol.kkt,
        "n_pseudo": int(use.sum()),
        "n_dropped": int((~use).sum()),
    }
    return MonotoneSplineFit(knots=knots, coef=sol.coef, link=link, lam=float(lam),
                             bandwidth=bandwidth, meta=meta)


def fit_two_step(scores, outcomes, k: int = 15, h: float = 0.08, lam: float = 1.0,
                 link: str = "logit", grid_size: int = 101):
    grid = np.linspace(0.0, 1.0, grid_size)
    sm = kernel_presmooth(scores, outcomes, grid, h)
    return monotone_spline_fit(sm.pseudo_full, sm.mass_full, grid, k=k, lam=lam,
                               link=link, bandwidth=h)


def _bernoulli_deviance(p, y) -> float:
    p = np.clip(p, PROB_FLOOR, 1 - PROB_FLOOR)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def select_lambda(scores, outcomes, k: int = 15, h: float = 0.08, link: str = "logit",
                  grid_size: int = 101, lambdas=LAMBDA_GRID, folds: int = 5,
                  seed: int = 0) -> tuple[float, dict]:
    """Pick the smoothing penalty by K-fold cross-validated Bernoulli deviance.

    Ties go to the larger (smoother) penalty.
    """
    x = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    grid = np.linspace(0.0, 1.0, grid_size)
    fold = np.random.default_rng(seed).permutation(x.size) % folds
    splits = []
    for f in range(folds):
        tr, te = fold != f, fold == f
        if te.sum() and tr.sum() >= 2:
            splits.append((kernel_presmooth(x[tr], y[tr], grid, h), te))
    scores_by_lam = {}
    for lam in lambdas:
        devs = []
        for sm, te in splits:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = monotone_spline_fit(sm.pseudo_full, sm.mass_full, grid, k=k, lam=lam,
                                          link=link, bandwidth=h)
            devs.append(_bernoulli_deviance(fit.predict(x[te]), y[te]))
        scores_by_lam[float(lam)] = float(np.mean(devs))
    best = min(scores_by_lam.values())
    chosen = max(lam for lam, d in scores_by_lam.items() if d <= best + 1e-12)
    return chosen, scores_by_lam
