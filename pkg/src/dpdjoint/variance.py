"""Plug-in variance for the DPD fit: Lasso pilot, pseudo standard error, refresh.

sigma^2 is held fixed during optimization. It comes from a Lasso fit of y on
X (ignoring z), whose residuals are summarized robustly by the pseudo
standard error: an initial scale s0 = 1.5 median|r|, a screen |r| < 2.5 s0,
and sigma = 1.5 median of the surviving |r|.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lasso_path as _sk_lasso_path

from .model import sigmoid

__all__ = [
    "SIGMA2_FLOOR",
    "VarianceEstimate",
    "lasso_cd",
    "lasso_lambda_max",
    "lasso_path",
    "lasso_pilot",
    "ridge_logistic",
    "ridge_logistic_cv",
    "pse_sigma",
    "refresh_sigma",
    "joint_residuals",
    "pilot_sigma",
]

SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2: float
    s0: float
    n_safe: int
    floored: bool

    @property
    def sigma(self):
        return float(np.sqrt(self.sigma2))


# ---------------------------------------------------------------------------
# Lasso (no intercept), solved by scikit-learn's coordinate descent
# ---------------------------------------------------------------------------

def _degenerate_columns(X):
    bad = np.flatnonzero(np.sum(X**2, axis=0) == 0)
    if bad.size:
        warnings.warn(
            f"dropping all-zero predictor column(s) {bad.tolist()} from the Lasso fit",
            RuntimeWarning,
            stacklevel=3,
        )
    return bad


def lasso_path(X, y, lambdas, tol=1e-10):
    """Coefficients along a decreasing penalty sequence, shape (len, p).

    Objective at each penalty: (1/2n)|y - Xb|^2 + lam |b|_1, no intercept.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        _, coefs, _ = _sk_lasso_path(X, y, alphas=lambdas, precompute=True, tol=tol, max_iter=100_000)
    return coefs.T


def lasso_cd(X, y, lam, tol=1e-10):
    """Lasso at a single penalty: argmin (1/2n)|y - Xb|^2 + lam |b|_1 (no intercept)."""
    X = np.asarray(X, dtype=float)
    _degenerate_columns(X)
    return lasso_path(X, y, [float(lam)], tol)[0]


def lasso_lambda_max(X, y):
    """Smallest penalty at which the Lasso solution is identically zero."""
    X = np.asarray(X, dtype=float)
    return float(np.max(np.abs(X.T @ np.asarray(y, dtype=float))) / X.shape[0])


def _log_path(lam_max, size, ratio=1e-3):
    if lam_max <= 0:
        return np.zeros(1)
    return np.geomspace(lam_max, ratio * lam_max, size)


def lasso_pilot(data, lambda_grid_size=100, cv_folds=5, seed=0):
    """Lasso of y on X with the penalty chosen by k-fold CV mean squared error.

    The penalty path runs log-spaced from lambda_max down to 1e-3 lambda_max.
    All-zero columns are dropped (with a warning) and get coefficient 0.
    """
    X, y = data.X, data.y
    n, p = X.shape
    if not (2 <= cv_folds <= n):
        raise ValueError(f"need 2 <= cv_folds <= n, got cv_folds={cv_folds}, n={n}")
    bad = _degenerate_columns(X)
    keep = np.setdiff1d(np.arange(p), bad)
    coef = np.zeros(p)
    if keep.size == 0:
        return coef
    Xk = X[:, keep]
    lam_max = lasso_lambda_max(Xk, y)
    if lam_max == 0:
        return coef
    lambdas = _log_path(lam_max, lambda_grid_size)

    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    folds[rng.permutation(n)] = np.arange(n) % cv_folds
    mse = np.zeros(len(lambdas))
    for k in range(cv_folds):
        tr, te = folds != k, folds == k
        path = lasso_path(Xk[tr], y[tr], lambdas)
        resid = y[te][None, :] - path @ Xk[te].T
        mse += np.mean(resid**2, axis=1) * te.sum()
    best = int(np.argmin(mse / n))
    coef[keep] = lasso_path(Xk, y, lambdas[: best + 1])[-1]
    return coef


# ---------------------------------------------------------------------------
# Ridge-penalized logistic regression (eta initializer and baseline classifier)
# ---------------------------------------------------------------------------

def ridge_logistic(X, z, lam=1e-2, eta0=None):
    """argmin (1/n) sum[log(1 + e^t) - z t] + (lam/2)|eta|^2 with t = X eta."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n, p = X.shape

    def fun(eta):
        t = X @ eta
        f = np.mean(np.logaddexp(0.0, t) - z * t) + 0.5 * lam * eta @ eta
        g = X.T @ (sigmoid(t) - z) / n + lam * eta
        return f, g

    x0 = np.zeros(p) if eta0 is None else np.asarray(eta0, dtype=float)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", options={"maxiter": 1000, "gtol": 1e-9, "ftol": 1e-14})
    return res.x


def ridge_logistic_cv(X, z, lambdas=None, cv_folds=5, seed=0):
    """Ridge logistic with the penalty picked by k-fold CV deviance."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n = X.shape[0]
    if lambdas is None:
        lambdas = np.geomspace(1.0, 1e-4, 9)
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=int)
    folds[rng.permutation(n)] = np.arange(n) % cv_folds
    dev = np.zeros(len(lambdas))
    for k in range(cv_folds):
        tr, te = folds != k, folds == k
        eta = None
        for i, lam in enumerate(lambdas):
            eta = ridge_logistic(X[tr], z[tr], lam, eta0=eta)
            t = X[te] @ eta
            dev[i] += np.sum(np.logaddexp(0.0, t) - z[te] * t)
    best = float(lambdas[int(np.argmin(dev))])
    return ridge_logistic(X, z, best)


# ---------------------------------------------------------------------------
# Pseudo standard error
# ---------------------------------------------------------------------------

def pse_sigma(residuals):
    r = np.abs(np.asarray(residuals, dtype=float).ravel())
    if r.size == 0:
        raise ValueError("pse_sigma needs at least one residual")
    s0 = 1.5 * float(np.median(r))
    safe = r[r < 2.5 * s0]
    if safe.size == 0:
        return VarianceEstimate(SIGMA2_FLOOR, s0, 0, True)
    sigma = 1.5 * float(np.median(safe))
    sigma2 = sigma * sigma
    if sigma2 < SIGMA2_FLOOR:
        return VarianceEstimate(SIGMA2_FLOOR, s0, int(safe.size), True)
    return VarianceEstimate(sigma2, s0, int(safe.size), False)


def joint_residuals(data, params):
    """y - z x'beta - (1 - z) x'omega."""
    mu = np.where(data.z == 1, data.X @ params.beta, data.X @ params.omega)
    return data.y - mu


def refresh_sigma(data, params, method="pse"):
    """Post-fit sigma^2 from the joint-model residuals.

    ``method="pse"`` (default) reuses the pseudo standard error;
    ``method="variance"`` is the plain mean squared residual, floored.
    """
    r = joint_residuals(data, params)
    if method == "pse":
        return pse_sigma(r)
    if method == "variance":
        if r.size == 0:
            raise ValueError("no residuals")
        s2 = float(np.mean(r**2))
        return VarianceEstimate(max(s2, SIGMA2_FLOOR), float("nan"), int(r.size), s2 < SIGMA2_FLOOR)
    raise ValueError(f"unknown refresh method {method!r}")


def pilot_sigma(data, lambda_grid_size=100, cv_folds=5, seed=0):
    """Lasso pilot followed by PSE; returns (VarianceEstimate, pilot coefficients)."""
    coef = lasso_pilot(data, lambda_grid_size, cv_folds, seed)
    return pse_sigma(data.y - data.X @ coef), coef
