"""Block proximal-gradient solver with Barzilai-Borwein steps.

Each iteration takes one soft-thresholded gradient step per block in the
order beta, omega, eta, where each block's gradient is evaluated with the
blocks already updated in that sweep. A candidate is accepted under a
nonmonotone sufficient-decrease test against the largest objective in a
sliding window; otherwise all step parameters are inflated and the sweep is
redone.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InitializationError
from .loss import LossEvaluator
from .model import ModelParams

__all__ = [
    "OptimizerConfig",
    "FitResult",
    "soft_threshold",
    "bb_step",
    "prox_block_update",
    "acceptance_reference",
    "lasso_init",
    "fit",
]

BB_VARIANTS = ("v1", "v2")


@dataclass(frozen=True)
class OptimizerConfig:
    """Solver knobs; defaults are the simulation-study settings.

    ``init`` is ``"zeros"``, ``"lasso"`` or an explicit :class:`ModelParams`.
    """

    delta: float = 1e-4
    zeta: float = 1.5
    memory: int = 8
    xi: float = 1e-4
    gamma_min: float = 1e-4
    gamma_max: float = 1e2
    max_iter: int = 2000
    init: object = "lasso"
    bb_variant: str = "v1"
    per_block_inflation: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if not self.zeta > 1:
            raise ConfigError(f"zeta must be > 1, got {self.zeta}")
        if int(self.memory) != self.memory or self.memory < 1:
            raise ConfigError(f"memory must be a positive integer, got {self.memory}")
        if not self.xi > 0:
            raise ConfigError(f"xi must be > 0, got {self.xi}")
        if not (0 < self.gamma_min < 1 < self.gamma_max):
            raise ConfigError(
                f"need 0 < gamma_min < 1 < gamma_max, got ({self.gamma_min}, {self.gamma_max})"
            )
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.bb_variant not in BB_VARIANTS:
            raise ConfigError(f"bb_variant must be one of {BB_VARIANTS}")
        if not (isinstance(self.init, ModelParams) or self.init in ("zeros", "lasso")):
            raise ConfigError(f"init must be 'zeros', 'lasso' or ModelParams, got {self.init!r}")

    @classmethod
    def simulation(cls, **kw):
        return cls(**kw)

    @classmethod
    def case_study(cls, **kw):
        base = dict(delta=1e-9, zeta=2.0, memory=5, xi=1e-5, gamma_max=1e30, max_iter=1000)
        base.update(kw)
        return cls(**base)

    @classmethod
    def cross_validation(cls, **kw):
        base = dict(delta=1e-5, zeta=3.0, memory=5, xi=1e-5, gamma_max=1e2, max_iter=200)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    objective: float
    iterations: int
    converged: bool
    reason: str
    objective_trace: np.ndarray
    accepted_step_trace: np.ndarray  # (iterations, 3): gamma_1t, gamma_2t, gamma_3t
    step_sq_trace: np.ndarray  # (iterations, 3): squared block moves of each accepted step
    memory: int = 8
    xi: float = 1e-4
    rejections: int = 0
    lambdas: tuple = field(default=(0.0, 0.0, 0.0))

    def acceptance_violations(self):
        """Indices of accepted steps that fail the sufficient-decrease test on re-check."""
        h = self.objective_trace
        bad = []
        for k in range(self.iterations):
            ref = acceptance_reference(h[: k + 1], k, self.memory, self.xi,
                                       self.accepted_step_trace[k], self.step_sq_trace[k])
            if not h[k + 1] <= ref:
                bad.append(k)
        return bad

    def summary(self):
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "reason": self.reason,
            "nnz_beta": int(np.count_nonzero(self.params.beta)),
            "nnz_omega": int(np.count_nonzero(self.params.omega)),
            "nnz_eta": int(np.count_nonzero(self.params.eta)),
        }


def soft_threshold(u, a):
    """sign(u) max(|u| - a, 0); works elementwise on arrays."""
    if np.any(np.asarray(a) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(u) * np.maximum(np.abs(u) - a, 0.0)


def bb_step(delta_param, delta_grad, variant="v1", gamma_min=1e-4, gamma_max=1e2):
    """Spectral step parameter gamma (the inverse step size), clamped.

    With no history (``delta_param is None``) this returns 1. A zero
    denominator, or a raw value that is nonpositive or not finite, falls back
    to ``gamma_min``.
    """
    if delta_param is None:
        return 1.0
    d = np.asarray(delta_param, dtype=float)
    g = np.asarray(delta_grad, dtype=float)
    if d.shape != g.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {g.shape}")
    if variant == "v1":
        num, den = d @ g, d @ d
    elif variant == "v2":
        num, den = g @ g, d @ g
    else:
        raise ValueError(f"unknown BB variant {variant!r}")
    if den == 0:
        return float(gamma_min)
    gamma = num / den
    if not np.isfinite(gamma) or gamma <= 0:
        return float(gamma_min)
    return float(min(max(gamma, gamma_min), gamma_max))


def prox_block_update(current, grad, gamma, lam):
    """argmin_v <grad, v - current> + (gamma/2)|v - current|^2 + lam |v|_1."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    u = np.asarray(current, dtype=float) - np.asarray(grad, dtype=float) / gamma
    return soft_threshold(u, lam / gamma)


def acceptance_reference(history, t, memory, xi, gammas, step_sq):
    """Right-hand side of the nonmonotone test at iteration t.

    max over j = max(t - memory, 0), ..., t of h_j, minus (xi/2) sum_m gamma_m |step_m|^2.
    """
    window = history[max(t - memory, 0): t + 1]
    return max(window) - 0.5 * xi * float(np.dot(gammas, step_sq))


def _relative_change(new, old):
    diff = np.linalg.norm(new - old)
    nrm = np.linalg.norm(new)
    if nrm == 0:
        return 0.0 if diff == 0 else float(diff)
    return float(diff / nrm)


def lasso_init(data, seed=0, coef=None):
    """Starting point: pilot Lasso for beta and omega, ridge logistic for eta.

    ``coef`` reuses already computed pilot Lasso coefficients.
    """
    from .variance import lasso_pilot, ridge_logistic

    if coef is None:
        coef = lasso_pilot(data, seed=seed)
    eta = ridge_logistic(data.X, data.z, lam=1e-2)
    return ModelParams(coef, coef, eta)


def _start(data, opt, init):
    init = opt.init if init is None else init
    if isinstance(init, ModelParams):
        if init.p != data.p:
            raise ValueError(f"init has p={init.p}, data has p={data.p}")
        return [np.array(b, dtype=float) for b in init.blocks()]
    if init == "zeros":
        return [np.zeros(data.p) for _ in range(3)]
    if init == "lasso":
        return [np.array(b) for b in lasso_init(data).blocks()]
    raise ConfigError(f"unknown init {init!r}")


def fit(data, cfg, opt=None, sigma2=1.0, *, init=None, support=None):
    """Minimize the l1-penalized DPD objective at fixed ``sigma2``.

    ``support`` optionally restricts each block to a boolean mask; coordinates
    outside it are held at zero.

    Returns the final iterate when the relative-change test passes, else the
    accepted iterate with the lowest objective (``reason`` is ``"max_iter"``
    or ``"stall"``; the latter means inflation reached ``gamma_max`` without
    an accepted step).
    """
    opt = OptimizerConfig() if opt is None else opt
    ev = LossEvaluator(data, cfg.alpha, sigma2)
    lam = np.array(cfg.lambdas, dtype=float)
    masks = None
    if support is not None:
        masks = [np.asarray(m, dtype=bool) for m in support]
        if any(m.shape != (data.p,) for m in masks):
            raise ValueError("support masks must have length p")

    theta = _start(data, opt, init)
    if masks is not None:
        theta = [b * m for b, m in zip(theta, masks)]

    def objective(th):
        return ev.loss(*th) + float(sum(l * np.sum(np.abs(b)) for l, b in zip(lam, th)))

    def gradient(th):
        g = list(ev.gradient(*th).blocks())
        if masks is not None:
            g = [gi * m for gi, m in zip(g, masks)]
        return g

    def prox(m, current, grad, gamma):
        v = prox_block_update(current, grad, gamma, lam[m])
        return v if masks is None else v * masks[m]

    h0 = objective(theta)
    if not np.isfinite(h0):
        raise InitializationError(f"objective at the initial point is not finite ({h0})")

    hist = [h0]
    gammas_trace, sq_trace = [], []
    G = gradient(theta)
    prev_theta = prev_G = None
    best_h, best_theta = h0, theta
    converged, reason = False, "max_iter"
    rejections = 0

    for t in range(opt.max_iter):
        if prev_theta is None:
            gam = np.ones(3)
        else:
            gam = np.array([
                bb_step(theta[m] - prev_theta[m], G[m] - prev_G[m],
                        opt.bb_variant, opt.gamma_min, opt.gamma_max)
                for m in range(3)
            ])
        accepted = False
        while True:
            b_new = prox(0, theta[0], G[0], gam[0])
            # the omega gradient does not involve beta, so G[1] is already evaluated at (b_new, omega_t, eta_t)
            w_new = prox(1, theta[1], G[1], gam[1])
            g_eta = ev.grad_eta(b_new, w_new, theta[2])
            if masks is not None:
                g_eta = g_eta * masks[2]
            e_new = prox(2, theta[2], g_eta, gam[2])
            cand = [b_new, w_new, e_new]
            sq = np.array([np.sum((c - o) ** 2) for c, o in zip(cand, theta)])
            h_new = objective(cand)
            ref = acceptance_reference(hist, t, opt.memory, opt.xi, gam, sq)
            if np.isfinite(h_new) and h_new <= ref:
                accepted = True
                break
            rejections += 1
            grow = np.ones(3, dtype=bool) if not opt.per_block_inflation else sq > 0
            if not grow.any():
                grow[:] = True
            if np.all(gam[grow] >= opt.gamma_max):
                break
            gam = np.where(grow, np.minimum(gam * opt.zeta, opt.gamma_max), gam)

        if not accepted:
            reason = "stall"
            break

        hist.append(h_new)
        gammas_trace.append(gam.copy())
        sq_trace.append(sq)
        prev_theta, prev_G = theta, G
        theta = cand
        G = gradient(theta)
        if h_new < best_h:
            best_h, best_theta = h_new, theta
        change = max(_relative_change(theta[m], prev_theta[m]) for m in range(3))
        if change <= opt.delta:
            converged, reason = True, "converged"
            break

    final = theta if converged else best_theta
    params = ModelParams(*final, sigma2=sigma2)
    return FitResult(
        params=params,
        objective=objective(final),
        iterations=len(gammas_trace),
        converged=converged,
        reason=reason,
        objective_trace=np.array(hist),
        accepted_step_trace=np.array(gammas_trace).reshape(-1, 3),
        step_sq_trace=np.array(sq_trace).reshape(-1, 3),
        memory=opt.memory,
        xi=opt.xi,
        rejections=rejections,
        lambdas=tuple(float(l) for l in lam),
    )
