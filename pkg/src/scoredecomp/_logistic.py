"""Ridge-penalized logistic maximum likelihood by Newton/IRLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit


@dataclass
class IRLSResult:
    coef: np.ndarray
    converged: bool
    n_iter: int
    loglik: float


def penalized_loglik(X, y, w, coef, ridge) -> float:
    eta = X @ coef
    ll = np.sum(w * (y * log_expit(eta) + (1 - y) * log_expit(-eta)))
    return float(ll - ridge * coef @ coef)


def irls(X, y, w=None, ridge: float = 0.0, tol: float = 1e-10, max_iter: int = 100) -> IRLSResult:
    """Maximize ``sum w [y log mu + (1-y) log(1-mu)] - ridge ||coef||^2``.

    Stops when the penalized log-likelihood changes by less than ``tol``.
    Newton steps are halved until the objective does not decrease.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    coef = np.zeros(X.shape[1])
    ll = penalized_loglik(X, y, w, coef, ridge)
    for it in range(1, max_iter + 1):
        mu = expit(X @ coef)
        grad = X.T @ (w * (y - mu)) - 2 * ridge * coef
        hess = (X * (w * mu * (1 - mu))[:, None]).T @ X + 2 * ridge * np.eye(X.shape[1])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = coef + t * step
            ll_new = penalized_loglik(X, y, w, cand, ridge)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        coef = cand
        change = abs(ll_new - ll)
        ll = ll_new
        if change < tol:
            return IRLSResult(coef, True, it, ll)
    return IRLSResult(coef, False, max_iter, ll)
