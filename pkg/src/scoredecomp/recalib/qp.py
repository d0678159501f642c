"""Primal active-set solver for small dense convex QPs.

Solves ``min 1/2 x'Hx + g'x  s.t.  Ax >= b`` from a feasible starting
point.  Intended for a few dozen variables (spline coefficients).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import nnls


@dataclass
class QPResult:
    x: np.ndarray
    active: np.ndarray
    iterations: int
    converged: bool
    kkt: dict = field(default_factory=dict)


def _independent_rows(A: np.ndarray, rows: list[int]) -> list[int]:
    chosen: list[int] = []
    for r in rows:
        trial = chosen + [r]
        if np.linalg.matrix_rank(A[trial]) == len(trial):
            chosen = trial
    return chosen


def _solve_eqp(H, grad, Aw):
    """Step ``p`` minimizing the model on ``{Aw p = 0}`` and the working multipliers.

    Uses a null-space basis rather than the full KKT matrix: with a heavy
    penalty the KKT matrix is badly conditioned while the reduced Hessian on
    the feasible directions stays well scaled.
    """
    n = H.shape[0]
    Z = null_space(Aw) if Aw.shape[0] else np.eye(n)
    if Z.shape[1] == 0:
        p = np.zeros(n)
    else:
        p = Z @ np.linalg.solve(Z.T @ H @ Z, -(Z.T @ grad))
    if Aw.shape[0] == 0:
        return p, np.zeros(0)
    mu = np.linalg.lstsq(Aw.T, H @ p + grad, rcond=None)[0]
    return p, mu


def solve_qp(H, g, A, b=None, x0=None, max_iter: int | None = None,
             tol: float = 1e-12) -> QPResult:
    """Minimize ``1/2 x'Hx + g'x`` subject to ``Ax >= b``.

    ``x0`` must be feasible; the initial working set is the constraints
    tight at ``x0``.  ``H`` must be positive definite on the null space of
    every working set met (add a small ridge otherwise).
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = H.shape[0]
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    scale = 1.0 + np.max(np.abs(A), axis=1) * (1.0 + np.max(np.abs(x)))
    slack = A @ x - b
    if np.any(slack < -1e-9 * scale):
        raise ValueError("starting point is infeasible")
    work = _independent_rows(A, [i for i in range(A.shape[0]) if slack[i] <= 1e-12 * scale[i]])
    max_iter = max_iter or 50 * (n + A.shape[0])

    h_norm = np.abs(H).sum(axis=1).max()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = H @ x + g
        # size of the round-off in grad; a heavy penalty in H makes it large
        noise = 8 * n * np.finfo(float).eps * (h_norm * np.abs(x).max() + np.abs(g).max())
        p, mu = _solve_eqp(H, grad, A[work])
        decrease = -(grad @ p + 0.5 * p @ H @ p)
        negligible = (np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(x))
                      or decrease <= noise * np.linalg.norm(p))
        if negligible:
            if not work or mu.min() >= -(1e-12 * (1.0 + np.abs(grad).max()) + noise):
                converged = True
                break
            work.pop(int(np.argmin(mu)))
            continue
        alpha, blocking = 1.0, None
        ap = A @ p
        for i in range(A.shape[0]):
            if i in work or ap[i] >= -tol:
                continue
            step = (b[i] - A[i] @ x) / ap[i]
            if step < alpha:
                alpha, blocking = max(step, 0.0), i
        x = x + alpha * p
        if blocking is not None:
            work.append(blocking)
    active = np.zeros(A.shape[0], dtype=bool)
    active[work] = True
    return QPResult(x, active, it, converged, kkt_residuals(H @ x + g, A, x, b))


def kkt_residuals(grad, A, x, b=None, active_tol: float = 1e-8) -> dict:
    """First-order optimality diagnostics for ``min f`` s.t. ``Ax >= b``.

    Multipliers on the near-active constraints are found by nonnegative
    least squares, so this check does not reuse the solver's own multipliers.

    Returns
    -------
    dict
        ``primal``: smallest constraint slack (feasible when >= 0);
        ``complementarity``: largest ``|mu_i * slack_i|``;
        ``stationarity``: norm of ``grad - A_active' mu``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
    slack = A @ x - b
    act = slack <= active_tol * (1.0 + np.abs(x).max())
    if act.any():
        mu, resid = nnls(A[act].T, np.asarray(grad, dtype=float))
        comp = float(np.max(np.abs(mu * slack[act])))
    else:
        resid = float(np.linalg.norm(grad))
        comp = 0.0
    return {
        "primal": float(slack.min()) if slack.size else 0.0,
        "complementarity": comp,
        "stationarity": float(resid),
    }
