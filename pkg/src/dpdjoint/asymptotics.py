"""Closed-form J and K matrices and the sandwich covariance J^-1 K J^-1.

Both matrices are block diagonal over (beta, omega, eta); every cross block
vanishes, so the 3p x 3p sandwich is assembled from three independent p x p
sandwiches. All blocks are averages over the observed x_i of per-observation
integrals evaluated at the model point (data density equal to the model).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from .errors import NumericalConsistencyError, RankDeficiencyError
from .model import sigmoid

__all__ = [
    "BLOCKS",
    "SandwichCov",
    "compute_J",
    "compute_K",
    "xi_eta",
    "sandwich_cov",
    "standard_errors",
    "trace_jinv_k",
    "fitted_covariance",
]

BLOCKS = ("beta", "omega", "eta")


@dataclass(frozen=True)
class SandwichCov:
    J_bb: np.ndarray
    J_oo: np.ndarray
    J_ee: np.ndarray
    K_bb: np.ndarray
    K_oo: np.ndarray
    K_ee: np.ndarray
    sandwich: np.ndarray
    trace_JinvK: float

    @property
    def J(self):
        return block_diag(self.J_bb, self.J_oo, self.J_ee)

    @property
    def K(self):
        return block_diag(self.K_bb, self.K_oo, self.K_ee)


def _probs(X, eta):
    t = X @ eta
    return sigmoid(t), sigmoid(-t)


def _weighted_gram(X, w):
    return (X * w[:, None]).T @ X / X.shape[0]


def compute_J(data, params, alpha):
    """Diagonal blocks (J_bb, J_oo, J_ee)."""
    X, a, s2 = data.X, float(alpha), params.sigma2
    p, q = _probs(X, params.eta)
    base = (2 * np.pi * s2) ** (-a / 2)
    c_reg = base / s2 * (1 + a) ** -1.5
    J_bb = _weighted_gram(X, c_reg * p ** (1 + a))
    J_oo = _weighted_gram(X, c_reg * q ** (1 + a))
    J_ee = _weighted_gram(X, base * (1 + a) ** -0.5 * (q**2 * p ** (1 + a) + q ** (1 + a) * p**2))
    return J_bb, J_oo, J_ee


def xi_eta(data, params, alpha):
    """Per-observation xi vectors for the eta block, shape (n, p)."""
    X, a, s2 = data.X, float(alpha), params.sigma2
    p, q = _probs(X, params.eta)
    c = (2 * np.pi * s2) ** (-a / 2) * (1 + a) ** -0.5 * p * q * (p**a - q**a)
    return X * c[:, None]


def compute_K(data, params, alpha):
    """Diagonal blocks (K_bb, K_oo, K_ee); the beta and omega xi terms are zero."""
    X, a, s2 = data.X, float(alpha), params.sigma2
    p, q = _probs(X, params.eta)
    c_reg = (1 + 2 * a) ** -1.5 * (2 * np.pi) ** (-a) * s2 ** (-a - 1)
    K_bb = _weighted_gram(X, c_reg * p ** (1 + 2 * a))
    K_oo = _weighted_gram(X, c_reg * q ** (1 + 2 * a))
    c_eta = (1 + 2 * a) ** -0.5 * (2 * np.pi * s2) ** (-a)
    xi = xi_eta(data, params, alpha)
    K_ee = _weighted_gram(X, c_eta * (q**2 * p ** (1 + 2 * a) + p**2 * q ** (1 + 2 * a)))
    K_ee = K_ee - xi.T @ xi / X.shape[0]
    return K_bb, K_oo, K_ee


def _chol(J, name):
    if J.shape[0] == 0:
        return None
    try:
        c = cho_factor(J, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise RankDeficiencyError(name) from exc
    # cho_factor accepts numerically singular matrices with tiny pivots
    piv = np.diag(c[0]) ** 2
    if piv.min() <= 1e-13 * max(piv.max(), 1e-300):
        raise RankDeficiencyError(name)
    return c


def _block_sandwich(J, K, name):
    c = _chol(J, name)
    if c is None:
        return np.zeros((0, 0)), 0.0
    JinvK = cho_solve(c, K)
    S = cho_solve(c, JinvK.T).T
    return 0.5 * (S + S.T), float(np.trace(JinvK))


def trace_jinv_k(J_blocks, K_blocks):
    """tr(J^-1 K) summed over the three blocks."""
    total = 0.0
    for J, K, name in zip(J_blocks, K_blocks, BLOCKS):
        c = _chol(J, name)
        if c is not None:
            total += float(np.trace(cho_solve(c, K)))
    return total


def sandwich_cov(J_blocks, K_blocks):
    """Blockwise J^-1 K J^-1; a J block that is not positive definite raises
    :class:`RankDeficiencyError` naming the block."""
    J_blocks = [np.asarray(b, dtype=float) for b in J_blocks]
    K_blocks = [np.asarray(b, dtype=float) for b in K_blocks]
    parts, tr = [], 0.0
    for J, K, name in zip(J_blocks, K_blocks, BLOCKS):
        S, t = _block_sandwich(J, K, name)
        parts.append(S)
        tr += t
    return SandwichCov(*J_blocks, *K_blocks, sandwich=block_diag(*parts), trace_JinvK=tr)


def standard_errors(cov, n):
    """sqrt(diag(J^-1 K J^-1) / n); tiny negative diagonals (> -1e-10) clamp to 0."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    d = np.diag(cov.sandwich).copy()
    if np.any(d < -1e-10):
        raise NumericalConsistencyError(f"sandwich diagonal has negative entries: {d[d < -1e-10]}")
    return np.sqrt(np.clip(d, 0.0, None) / n)


def fitted_covariance(data, params, alpha):
    """Convenience: J, K at ``params`` and their sandwich."""
    return sandwich_cov(compute_J(data, params, alpha), compute_K(data, params, alpha))
