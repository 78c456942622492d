"""Penalty selection by the robust information criterion over a 3-D lambda grid.

RIC = Q_alpha(fit) + (1 + alpha) tr(J^-1 K) / n, with J and K restricted to
the nonzero coordinates of each block of the fitted model.

J and K carry the factor (2 pi sigma^2)^(-alpha/2) of the normal density, which
the loss used for fitting drops. By default the loss term is put back on that
scale so both terms measure the same divergence; ``loss_scale="factor-free"``
uses the fitting loss as is.
"""

import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import NamedTuple

import numpy as np

from .asymptotics import BLOCKS, compute_J, compute_K, trace_jinv_k
from .errors import DegenerateAxisError, RankDeficiencyError, SelectionError
from .loss import LossEvaluator
from .model import DPDConfig, ModelParams
from .optimizer import OptimizerConfig, fit, lasso_init

__all__ = [
    "RICParts",
    "LambdaGrid",
    "SelectionResult",
    "ric",
    "ric_parts",
    "make_grid",
    "grid_search",
]


class RICParts(NamedTuple):
    ric: float
    loss: float
    penalty: float
    active_dim: int


LOSS_SCALES = ("density", "factor-free")


def ric_parts(data, params, alpha, force_k_equal_j=False, loss_scale="density"):
    if loss_scale not in LOSS_SCALES:
        raise ValueError(f"loss_scale must be one of {LOSS_SCALES}, got {loss_scale!r}")
    ev = LossEvaluator(data, alpha, params.sigma2)
    q = ev.loss(*params.blocks())
    if loss_scale == "density":
        q *= (2 * np.pi * params.sigma2) ** (-alpha / 2)
    J = compute_J(data, params, alpha)
    K = J if force_k_equal_j else compute_K(data, params, alpha)
    Jr, Kr, dim = [], [], 0
    for Jm, Km, coef in zip(J, K, params.blocks()):
        idx = np.flatnonzero(coef)
        dim += idx.size
        Jr.append(Jm[np.ix_(idx, idx)])
        Kr.append(Km[np.ix_(idx, idx)])
    if force_k_equal_j:
        # tr(J^-1 J) is the active dimension; skip the solve so singular J cannot intervene
        tr = float(dim)
    else:
        try:
            tr = trace_jinv_k(Jr, Kr)
        except RankDeficiencyError as exc:
            warnings.warn(f"RIC disqualified: restricted J block '{exc.block}' is singular", RuntimeWarning,
                          stacklevel=2)
            return RICParts(float("inf"), q, float("inf"), dim)
    pen = (1 + alpha) * tr / data.n
    return RICParts(q + pen, q, pen, dim)


def ric(data, fit_result, alpha, force_k_equal_j=False, loss_scale="density"):
    """RIC of a fitted model; +inf when a restricted J block is singular."""
    params = fit_result.params if hasattr(fit_result, "params") else fit_result
    return ric_parts(data, params, alpha, force_k_equal_j, loss_scale).ric


@dataclass(frozen=True)
class LambdaGrid:
    bounds: tuple  # ((lo1, hi1), (lo2, hi2), (lo3, hi3))
    points_per_axis: int
    spacing: str = "log"

    def __post_init__(self):
        if self.points_per_axis < 1:
            raise ValueError("points_per_axis must be >= 1")
        for lo, hi in self.bounds:
            if not (0 < lo <= hi):
                raise ValueError(f"need 0 < lambda_min <= lambda_max, got ({lo}, {hi})")

    def axis(self, m):
        lo, hi = self.bounds[m]
        if self.points_per_axis == 1:
            return np.array([hi])
        return np.geomspace(lo, hi, self.points_per_axis)

    def axes(self):
        return [self.axis(m) for m in range(3)]

    def candidates(self):
        return [tuple(float(v) for v in c) for c in product(*self.axes())]


def make_grid(data, points_per_axis=10, sigma2=1.0, alpha=1.0, ratio=1e-3):
    """Per block: lambda_max = max |gradient| at theta = 0, lambda_min = ratio * lambda_max.

    At lambda_max the first proximal step from zero keeps that block at zero.
    """
    if points_per_axis < 2:
        raise ValueError("points_per_axis must be >= 2")
    zero = np.zeros(data.p)
    g = LossEvaluator(data, alpha, sigma2).gradient(zero, zero, zero)
    bounds = []
    for name, gm in zip(BLOCKS, g.blocks()):
        hi = float(np.max(np.abs(gm)))
        if not hi > 0:
            raise DegenerateAxisError(f"gradient of the {name} block is zero at the origin")
        bounds.append((ratio * hi, hi))
    return LambdaGrid(tuple(bounds), points_per_axis)


@dataclass(frozen=True)
class SelectionResult:
    best_lambdas: tuple
    best_ric: float
    ric_surface: list  # [(lambda triple, RIC, fit summary dict)]
    best_fit: object = field(default=None, repr=False)

    def surface_rows(self):
        rows = []
        for lam, r, s in self.ric_surface:
            rows.append({"lambda1": lam[0], "lambda2": lam[1], "lambda3": lam[2], "ric": r, **s})
        return rows


def _fit_line(data, alpha, opt, sigma2, base_init, lam12, lam3_values, warm_start, loss_scale):
    """Fits along lambda3 (descending) with lambda1, lambda2 fixed."""
    out = {}
    init = base_init
    for l3 in lam3_values:
        cfg = DPDConfig(alpha, lam12[0], lam12[1], l3)
        res = fit(data, cfg, opt, sigma2, init=init)
        parts = ric_parts(data, res.params, alpha, loss_scale=loss_scale)
        out[(lam12[0], lam12[1], l3)] = (res, parts)
        if warm_start:
            init = res.params
    return out


def _fit_line_job(args):
    out = _fit_line(*args)
    # traces are not needed across processes
    return {k: (v[0], v[1]) for k, v in out.items()}


def grid_search(data, grid, alpha=1.0, opt=None, sigma2=1.0, *, init=None, warm_start=True, n_jobs=1,
                loss_scale="density"):
    """Fit every lambda triple on the grid and return the RIC minimizer.

    Ties go to the larger lambda1 + lambda2 + lambda3. Each (lambda1, lambda2)
    line is solved in descending lambda3 order with warm starts; that order
    is fixed by the values, so the selection does not depend on how the
    candidates were enumerated or on ``n_jobs``.
    """
    opt = OptimizerConfig() if opt is None else opt
    candidates = grid.candidates() if isinstance(grid, LambdaGrid) else [tuple(map(float, c)) for c in grid]
    if not candidates:
        raise SelectionError("empty grid")
    if init is None:
        init = opt.init
    if init == "lasso":
        init = lasso_init(data)
    elif init == "zeros":
        init = ModelParams.zeros(data.p)

    lines = defaultdict(set)
    for l1, l2, l3 in candidates:
        lines[(l1, l2)].add(l3)
    jobs = [
        (data, alpha, opt, sigma2, init, key, sorted(lines[key], reverse=True), warm_start, loss_scale)
        for key in sorted(lines)
    ]
    results = {}
    if n_jobs == 1:
        for job in jobs:
            results.update(_fit_line(*job))
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for part in pool.map(_fit_line_job, jobs):
                results.update(part)

    surface = []
    for lam in candidates:
        res, parts = results[lam]
        summary = res.summary()
        summary.update(loss=parts.loss, penalty=parts.penalty, active_dim=parts.active_dim)
        surface.append((lam, parts.ric, summary))

    finite = sorted(
        (key for key in set(candidates) if np.isfinite(results[key][1].ric)),
        key=lambda k: (results[k][1].ric, -sum(k), k),
    )
    if not finite:
        raise SelectionError("every candidate on the grid has RIC = +inf")
    best = finite[0]
    return SelectionResult(best, results[best][1].ric, surface, results[best][0])
