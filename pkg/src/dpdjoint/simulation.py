"""Monte-Carlo harness: data generation, contamination, test-set metrics and
the replication driver comparing the DPD fit against a Lasso baseline."""

import csv
import dataclasses
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import DPDConfig, Dataset, ModelParams, predict_batch
from .optimizer import OptimizerConfig, lasso_init
from .selection import grid_search, make_grid
from .variance import lasso_pilot, pilot_sigma, refresh_sigma, ridge_logistic_cv

__all__ = [
    "Scenario",
    "ContaminationScheme",
    "EvalMetrics",
    "METRICS",
    "TABLE_COLUMNS",
    "SUITE",
    "METHODS",
    "generate",
    "contaminate",
    "evaluate",
    "fit_method",
    "run_replications",
    "summarize",
    "plot_rows",
    "write_table_csv",
    "read_table_csv",
    "write_summary_json",
    "read_summary_json",
    "write_plot_csv",
]

LAPLACE_SCALE = 1 / math.sqrt(2)  # sd 1
METHODS = ("dpd", "lasso-baseline")
SUITE = ("x", "y", "z", "xy", "xz", "yz", "xyz")


@dataclass(frozen=True)
class Scenario:
    """Simulation design.

    ``design="fixed"`` uses beta = 3, omega = 5, eta = 5 in every coordinate.
    ``design="sparse"`` draws a support of size floor(sparsity * p) per block
    with beta ~ N(3, 1), omega ~ N(-5, 1), eta ~ U(2, 5) on it.
    """

    p: int = 8
    n_train: int = 700
    n_test: int = 300
    design: str = "fixed"
    sparsity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n_train < 1 or self.n_test < 0:
            raise ValueError("need p >= 1, n_train >= 1, n_test >= 0")
        if self.design not in ("fixed", "sparse"):
            raise ValueError(f"unknown design {self.design!r}")
        if not (0 < self.sparsity <= 1):
            raise ValueError(f"sparsity must be in (0, 1], got {self.sparsity}")
        if self.design == "sparse" and math.floor(self.sparsity * self.p) < 1:
            raise ValueError("sparsity * p must be at least 1")

    @classmethod
    def p8(cls, seed=0, **kw):
        return cls(p=8, design="fixed", seed=seed, **kw)

    @classmethod
    def p50(cls, sparsity=0.1, seed=0, **kw):
        return cls(p=50, design="sparse", sparsity=sparsity, seed=seed, **kw)

    @property
    def label(self):
        return f"p{self.p}" if self.design == "fixed" else f"p{self.p}-s{self.sparsity:g}"

    @property
    def support_size(self):
        return self.p if self.design == "fixed" else math.floor(self.sparsity * self.p)


@dataclass(frozen=True)
class ContaminationScheme:
    """Which responses/predictors to corrupt and on what fraction of rows.

    With ``joint=True`` every target is corrupted on the same rows; otherwise
    each target draws its own row set.
    """

    targets: frozenset
    rate: float
    joint: bool = True

    def __post_init__(self):
        t = frozenset(str(s).lower() for s in self.targets)
        if not t or not t <= {"x", "y", "z"}:
            raise ValueError(f"targets must be a nonempty subset of {{x, y, z}}, got {sorted(t)}")
        # rate = 1 is allowed so that a total corruption (e.g. every z flipped) is expressible
        if not (0 <= self.rate <= 1):
            raise ValueError(f"rate must be in [0, 1], got {self.rate}")
        object.__setattr__(self, "targets", t)

    @classmethod
    def parse(cls, spec, rate, joint=True):
        """``"xyz"`` style spec; ``"none"`` returns None (clean data)."""
        if spec in (None, "none"):
            return None
        return cls(frozenset(spec), rate, joint)

    @property
    def label(self):
        return "".join(c for c in "xyz" if c in self.targets)


def scheme_label(scheme):
    return "none" if scheme is None else scheme.label


def scheme_rate(scheme):
    return 0.0 if scheme is None else float(scheme.rate)


def _truth(scenario, rng):
    p = scenario.p
    if scenario.design == "fixed":
        return ModelParams(np.full(p, 3.0), np.full(p, 5.0), np.full(p, 5.0))
    k = math.floor(scenario.sparsity * p)
    blocks = []
    for draw in (lambda: rng.normal(3.0, 1.0, k), lambda: rng.normal(-5.0, 1.0, k),
                 lambda: rng.uniform(2.0, 5.0, k)):
        b = np.zeros(p)
        b[np.sort(rng.choice(p, k, replace=False))] = draw()
        blocks.append(b)
    return ModelParams(*blocks)


def generate(scenario):
    """Returns (train, test, truth); a pure function of the scenario (seed included)."""
    rng = np.random.default_rng(scenario.seed)
    truth = _truth(scenario, rng)
    n = scenario.n_train + scenario.n_test
    X = rng.standard_normal((n, scenario.p))
    pz = 1.0 / (1.0 + np.exp(-(X @ truth.eta)))
    z = (rng.random(n) < pz).astype(np.int8)
    noise = rng.laplace(0.0, LAPLACE_SCALE, n)
    y = np.where(z == 1, X @ truth.beta, X @ truth.omega) + noise
    tr = slice(0, scenario.n_train)
    te = slice(scenario.n_train, n)
    test = Dataset(X[te], y[te], z[te]) if scenario.n_test > 0 else None
    return Dataset(X[tr], y[tr], z[tr]), test, truth


def n_corrupted(rate, n):
    # round before flooring so that e.g. 0.29 * 100 counts as 29
    return int(math.floor(round(rate * n, 9)))


def contaminate(train, scheme, seed):
    """Corrupt floor(rate * n) rows per target; untouched rows are copied as is."""
    if scheme is None or scheme.rate == 0:
        return train
    n = train.n
    m = n_corrupted(scheme.rate, n)
    if m < 1:
        warnings.warn(f"rate {scheme.rate} corrupts no rows at n={n}; data returned unchanged",
                      RuntimeWarning, stacklevel=2)
        return train
    rng = np.random.default_rng(seed)
    X, y, z = np.array(train.X), np.array(train.y), np.array(train.z)
    shared = np.sort(rng.choice(n, m, replace=False)) if scheme.joint else None
    for target in "xyz":
        if target not in scheme.targets:
            continue
        rows = shared if scheme.joint else np.sort(rng.choice(n, m, replace=False))
        if target == "x":
            mean = train.X.mean(axis=0) + 5.0
            cov = 1.2 * np.atleast_2d(np.cov(train.X, rowvar=False))
            X[rows] = rng.multivariate_normal(mean, cov, size=m, method="cholesky")
        elif target == "y":
            y[rows] = rng.normal(20.0, 1.0, m)
        else:
            z[rows] = 1 - z[rows]
    return Dataset(X, y, z)


@dataclass(frozen=True)
class EvalMetrics:
    rmspe: float  # (1/m) sum |y - y_hat|, a mean absolute error kept under this name
    rmse: float
    me: float
    l2_beta: float
    l2_omega: float
    l2_eta: float
    fp_rate: float  # NaN when the test set has no z = 0 rows
    fn_rate: float  # NaN when the test set has no z = 1 rows

    def as_dict(self):
        return dataclasses.asdict(self)


METRICS = tuple(f.name for f in dataclasses.fields(EvalMetrics))


def evaluate(test, fitted, truth, rule="classify-then-regress"):
    if fitted.p != truth.p or fitted.p != test.p:
        raise ValueError(f"dimension mismatch: test p={test.p}, fitted p={fitted.p}, truth p={truth.p}")
    z_hat, _, y_hat = predict_batch(test.X, fitted, rule)
    r = test.y - y_hat
    wrong = z_hat != test.z
    neg, pos = test.z == 0, test.z == 1
    return EvalMetrics(
        rmspe=float(np.mean(np.abs(r))),
        rmse=float(np.sqrt(np.mean(r**2))),
        me=float(np.mean(wrong)),
        l2_beta=float(np.linalg.norm(fitted.beta - truth.beta)),
        l2_omega=float(np.linalg.norm(fitted.omega - truth.omega)),
        l2_eta=float(np.linalg.norm(fitted.eta - truth.eta)),
        fp_rate=float(np.mean(wrong[neg])) if neg.any() else float("nan"),
        fn_rate=float(np.mean(wrong[pos])) if pos.any() else float("nan"),
    )


# ---------------------------------------------------------------------------
# Estimation pipelines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodFit:
    params: ModelParams
    info: dict = field(default_factory=dict)


def fit_dpd(train, alpha=1.0, points_per_axis=4, opt=None, seed=0):
    """Pilot sigma^2, RIC grid search at that sigma^2, then refresh sigma^2 from the fit."""
    opt = OptimizerConfig() if opt is None else opt
    var, coef = pilot_sigma(train, seed=seed)
    grid = make_grid(train, points_per_axis, var.sigma2, alpha)
    init = lasso_init(train, seed=seed, coef=coef)
    sel = grid_search(train, grid, alpha, opt, var.sigma2, init=init)
    fitted = sel.best_fit
    refreshed = refresh_sigma(train, fitted.params)
    params = fitted.params.with_sigma2(refreshed.sigma2)
    info = {
        "lambda1": sel.best_lambdas[0],
        "lambda2": sel.best_lambdas[1],
        "lambda3": sel.best_lambdas[2],
        "ric": sel.best_ric,
        "pilot_sigma2": var.sigma2,
        "sigma2": refreshed.sigma2,
        "iterations": fitted.iterations,
        "converged": fitted.converged,
    }
    return MethodFit(params, info)


def fit_lasso_baseline(train, seed=0):
    """Regression-only Lasso of y on X (CV) used for both beta and omega,
    plus ridge logistic (CV) for z."""
    coef = lasso_pilot(train, cv_folds=5, seed=seed)
    eta = ridge_logistic_cv(train.X, train.z, seed=seed)
    params = ModelParams(coef, coef, eta)
    return MethodFit(params, {"sigma2": refresh_sigma(train, params).sigma2})


def fit_method(method, train, *, alpha=1.0, points_per_axis=4, opt=None, seed=0):
    if method == "dpd":
        return fit_dpd(train, alpha, points_per_axis, opt, seed)
    if method == "lasso-baseline":
        return fit_lasso_baseline(train, seed)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# ---------------------------------------------------------------------------
# Replication driver
# ---------------------------------------------------------------------------

INFO_COLUMNS = ("lambda1", "lambda2", "lambda3", "ric", "pilot_sigma2", "sigma2", "iterations", "converged")
TABLE_COLUMNS = (
    ("replication", "seed", "method", "scenario", "contamination", "rate", "status")
    + METRICS
    + INFO_COLUMNS
    + ("error",)
)


def replication_seeds(master_seed, B):
    """B independent 64-bit seeds split from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(B)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _one_replication(args):
    (index, seed, scenario, scheme, methods, alpha, points_per_axis, opt, keep_models) = args
    scen = dataclasses.replace(scenario, seed=seed)
    rows, models = [], {}
    base = {
        "replication": index,
        "seed": seed,
        "scenario": scen.label,
        "contamination": scheme_label(scheme),
        "rate": scheme_rate(scheme),
    }
    try:
        train, test, truth = generate(scen)
        # a distinct stream for the corruption, derived from the replication seed
        corrupted = contaminate(train, scheme, np.random.SeedSequence([seed, 1]))
    except Exception as exc:  # recorded, never fatal
        for method in methods:
            rows.append(_failed_row(base, method, exc))
        return rows, models
    for method in methods:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mf = fit_method(method, corrupted, alpha=alpha, points_per_axis=points_per_axis,
                                opt=opt, seed=index)
            metrics = evaluate(test, mf.params, truth)
            row = dict(base, method=method, status="ok", error="")
            row.update(metrics.as_dict())
            row.update({k: mf.info.get(k, "") for k in INFO_COLUMNS})
            rows.append(row)
            if keep_models:
                models[method] = mf.params
        except Exception as exc:
            rows.append(_failed_row(base, method, exc))
    return rows, models


def _failed_row(base, method, exc):
    row = dict(base, method=method, status="failed", error=f"{type(exc).__name__}: {exc}")
    row.update({m: float("nan") for m in METRICS})
    row.update({k: "" for k in INFO_COLUMNS})
    return row


@dataclass
class ReplicationTable:
    rows: list
    summary: dict
    models: list = field(default_factory=list)


def run_replications(scenario, scheme, method="dpd", B=100, *, master_seed=0, alpha=1.0,
                     points_per_axis=4, opt=None, n_jobs=1, keep_models=False):
    """B replications; ``method`` may be one name or a sequence of names.

    Replication b uses seed b of the split master seed for both data generation
    and contamination, so every method sees the same data. Rows are ordered by
    (replication, method) regardless of ``n_jobs``.
    """
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    methods = (method,) if isinstance(method, str) else tuple(method)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    jobs = [(b, s, scenario, scheme, methods, alpha, points_per_axis, opt, keep_models)
            for b, s in enumerate(replication_seeds(master_seed, B))]
    if n_jobs == 1:
        out = [_one_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            out = list(pool.map(_one_replication, jobs))
    rows = [r for rr, _ in out for r in rr]
    models = [m for _, m in out]
    return ReplicationTable(rows, summarize(rows), models if keep_models else [])


def summarize(rows):
    """Median, quartiles and IQR per (method, scenario, contamination, rate) and metric."""
    groups = {}
    for r in rows:
        key = (r["method"], r["scenario"], r["contamination"], float(r["rate"]))
        groups.setdefault(key, []).append(r)
    out = []
    for (method, scen, cont, rate), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        entry = {
            "method": method,
            "scenario": scen,
            "contamination": cont,
            "rate": rate,
            "replications": len(rs),
            "failures": len(rs) - len(ok),
            "metrics": {},
        }
        for m in METRICS:
            v = np.array([float(r[m]) for r in ok], dtype=float)
            v = v[np.isfinite(v)]
            if v.size == 0:
                entry["metrics"][m] = {"median": None, "q25": None, "q75": None, "iqr": None, "count": 0}
                continue
            q25, med, q75 = np.percentile(v, [25, 50, 75])
            entry["metrics"][m] = {
                "median": float(med),
                "q25": float(q25),
                "q75": float(q75),
                "iqr": float(q75 - q25),
                "count": int(v.size),
            }
        out.append(entry)
    return {"groups": out}


def plot_rows(rows):
    """Long format (method, scenario, contamination, rate, metric, replication, value)."""
    out = []
    for r in rows:
        if r["status"] != "ok":
            continue
        for m in METRICS:
            out.append({
                "method": r["method"],
                "scenario": r["scenario"],
                "contamination": r["contamination"],
                "rate": r["rate"],
                "metric": m,
                "replication": r["replication"],
                "value": r[m],
            })
    return out


PLOT_COLUMNS = ("method", "scenario", "contamination", "rate", "metric", "replication", "value")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(rows, columns, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def write_table_csv(rows, path):
    _write_csv(rows, TABLE_COLUMNS, path)


def write_plot_csv(rows, path):
    _write_csv(plot_rows(rows), PLOT_COLUMNS, path)


_INT_COLS = {"replication", "seed", "iterations"}
_FLOAT_COLS = set(METRICS) | {"rate", "lambda1", "lambda2", "lambda3", "ric", "pilot_sigma2", "sigma2", "value"}


def _parse_cell(col, s):
    if s == "":
        return ""
    if col in _INT_COLS:
        return int(s)
    if col in _FLOAT_COLS:
        return float(s)
    if col == "converged":
        return s == "true"
    return s


def read_table_csv(path):
    """Inverse of :func:`write_table_csv` (and of :func:`write_plot_csv`)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        known = set(TABLE_COLUMNS) | set(PLOT_COLUMNS)
        unknown = [c for c in header if c not in known]
        if unknown:
            raise ValueError(f"{path}: unknown columns {unknown}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append({c: _parse_cell(c, s) for c, s in zip(header, rec)})
    return rows


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_summary_json(summary, path, meta=None):
    doc = {"meta": meta or {}, **summary}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_summary_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
