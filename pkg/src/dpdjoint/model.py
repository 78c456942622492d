"""Core vocabulary: data containers, parameters, the joint density and prediction.

The joint model factors as f(y, z | x) = f(y | z, x) f(z | x): a logistic
marginal for the binary response with coefficients ``eta`` and a Gaussian
linear regression for the continuous response whose coefficients switch
between ``beta`` (z = 1) and ``omega`` (z = 0), sharing one variance.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InvalidParameterError

__all__ = [
    "Dataset",
    "ModelParams",
    "DPDConfig",
    "Prediction",
    "sigmoid",
    "logistic_prob",
    "joint_density",
    "predict",
    "predict_batch",
    "RULES",
]

RULES = ("classify-then-regress", "mixture-mean")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Predictors ``X`` (n x p), continuous response ``y`` and binary response ``z``."""

    X: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        z_raw = np.asarray(self.z)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        n, p = X.shape
        if n < 1 or p < 1:
            raise ValueError(f"need n >= 1 and p >= 1, got X shape {X.shape}")
        if y.shape != (n,) or z_raw.shape != (n,):
            raise ValueError(
                f"inconsistent lengths: X has {n} rows, y {y.shape}, z {z_raw.shape}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        z = np.asarray(z_raw, dtype=float)
        if not np.all((z == 0) | (z == 1)):
            raise ValueError("z must contain only 0/1 values")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        z = z.astype(np.int8)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.z[idx])


@dataclass(frozen=True)
class ModelParams:
    beta: np.ndarray
    omega: np.ndarray
    eta: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        beta, omega, eta = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (self.beta, self.omega, self.eta))
        if not (beta.ndim == omega.ndim == eta.ndim == 1):
            raise InvalidParameterError("coefficient blocks must be vectors")
        if not (beta.shape == omega.shape == eta.shape):
            raise InvalidParameterError(
                f"coefficient blocks differ in length: {beta.shape}, {omega.shape}, {eta.shape}"
            )
        sigma2 = float(self.sigma2)
        if not (np.isfinite(sigma2) and sigma2 > 0):
            raise InvalidParameterError(f"sigma2 must be positive and finite, got {sigma2}")
        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "omega", _frozen(omega))
        object.__setattr__(self, "eta", _frozen(eta))
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def p(self):
        return self.beta.shape[0]

    @classmethod
    def zeros(cls, p, sigma2=1.0):
        return cls(np.zeros(p), np.zeros(p), np.zeros(p), sigma2)

    def blocks(self):
        return self.beta, self.omega, self.eta

    def with_sigma2(self, sigma2):
        return ModelParams(self.beta, self.omega, self.eta, sigma2)

    def stacked(self):
        """theta = (beta, omega, eta) as one vector of length 3p."""
        return np.concatenate([self.beta, self.omega, self.eta])


@dataclass(frozen=True)
class DPDConfig:
    alpha: float = 1.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        for name in ("lambda1", "lambda2", "lambda3"):
            lam = getattr(self, name)
            if not (np.isfinite(lam) and lam >= 0):
                raise ConfigError(f"{name} must be >= 0, got {lam}")

    @property
    def lambdas(self):
        return (self.lambda1, self.lambda2, self.lambda3)


@dataclass(frozen=True)
class Prediction:
    z_hat: int
    p_hat: float
    y_hat: float


def sigmoid(t):
    """Elementwise logistic function (overflow-free for any finite input)."""
    return expit(np.asarray(t, dtype=float))


def logistic_prob(x, eta):
    """P(z = 1 | x) = logit^{-1}(x'eta)."""
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if x.shape != eta.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: x {x.shape} vs eta {eta.shape}")
    return float(sigmoid(np.array([x @ eta]))[0])


def joint_density(y, z, x, params):
    if z not in (0, 1):
        raise ValueError(f"z must be 0 or 1, got {z}")
    x = np.asarray(x, dtype=float)
    if x.shape != (params.p,):
        raise ValueError(f"dimension mismatch: x {x.shape} vs p={params.p}")
    s2 = params.sigma2
    mean = x @ params.beta if z == 1 else x @ params.omega
    t = x @ params.eta
    pz = float(sigmoid(np.array([t if z == 1 else -t]))[0])
    return float(np.exp(-0.5 * (y - mean) ** 2 / s2) / np.sqrt(2 * np.pi * s2) * pz)


def predict_batch(X, params, rule="classify-then-regress"):
    """Vectorized :func:`predict`; returns arrays ``(z_hat, p_hat, y_hat)``.

    Ties at p_hat == 0.5 go to class 0.
    """
    if rule not in RULES:
        raise ValueError(f"unknown prediction rule {rule!r}; expected one of {RULES}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.p:
        raise ValueError(f"dimension mismatch: X has {X.shape[1]} columns, model expects {params.p}")
    p_hat = sigmoid(X @ params.eta)
    z_hat = (p_hat > 0.5).astype(np.int8)
    mu1 = X @ params.beta
    mu0 = X @ params.omega
    if rule == "classify-then-regress":
        y_hat = np.where(z_hat == 1, mu1, mu0)
    else:
        y_hat = p_hat * mu1 + (1.0 - p_hat) * mu0
    return z_hat, p_hat, y_hat


def predict(x, params, rule="classify-then-regress"):
    z_hat, p_hat, y_hat = predict_batch(np.asarray(x, dtype=float)[None, :], params, rule)
    return Prediction(int(z_hat[0]), float(p_hat[0]), float(y_hat[0]))
