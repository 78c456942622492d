"""CSV datasets and the versioned JSON model file."""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, ModelParams

__all__ = [
    "SCHEMA_VERSION",
    "InputError",
    "Table",
    "read_csv_table",
    "read_dataset",
    "read_features",
    "Standardizer",
    "ModelFile",
    "write_model",
    "read_model",
    "write_predictions",
    "read_predictions",
    "PREDICTION_COLUMNS",
]

SCHEMA_VERSION = 1


class InputError(ValueError):
    """Malformed or inconsistent user input (CSV, model file, flags)."""


@dataclass
class Table:
    header: list
    rows: np.ndarray  # (n, len(header)) float


def read_csv_table(path):
    """Comma-separated, mandatory header row, '.' decimals; all cells numeric.

    A file with no lines at all yields an empty header and zero rows.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            return Table([], np.zeros((0, 0)))
        if len(set(header)) != len(header):
            raise InputError(f"{path}, line 1: duplicate column names")
        if any(h == "" for h in header):
            raise InputError(f"{path}, line 1: empty column name")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(c.strip() == "" for c in rec):
                continue
            if len(rec) != len(header):
                raise InputError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                bad = next(c for c in rec if not _is_float(c))
                raise InputError(f"{path}, line {lineno}: non-numeric value {bad!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}, line {lineno}: non-finite value")
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return Table(header, arr)


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_dataset(path, y_col="y", z_col="z", features=None):
    """Returns (Dataset, feature names). Features default to every other column."""
    t = read_csv_table(path)
    for c in (y_col, z_col):
        if c not in t.header:
            raise InputError(f"{path}: missing column {c!r}")
    names = [h for h in t.header if h not in (y_col, z_col)] if features is None else list(features)
    missing = [f for f in names if f not in t.header]
    if missing:
        raise InputError(f"{path}: missing feature columns {missing}")
    if not names:
        raise InputError(f"{path}: no feature columns")
    if t.rows.shape[0] == 0:
        raise InputError(f"{path}: no data rows")
    col = {h: i for i, h in enumerate(t.header)}
    z = t.rows[:, col[z_col]]
    bad = np.flatnonzero((z != 0) & (z != 1))
    if bad.size:
        # +2: one header line, 1-based numbering
        raise InputError(f"{path}, line {bad[0] + 2}: {z_col} must be 0 or 1, got {z[bad[0]]:g}")
    X = t.rows[:, [col[f] for f in names]]
    return Dataset(X, t.rows[:, col[y_col]], z.astype(np.int8)), names


def read_features(path, names):
    """Feature matrix with columns ``names``; other columns are ignored."""
    t = read_csv_table(path)
    if not t.header:
        return np.zeros((0, len(names)))
    missing = [f for f in names if f not in t.header]
    if missing:
        extra = [h for h in t.header if h not in names and h not in ("y", "z")]
        raise InputError(
            f"{path}: dimension mismatch, model expects {len(names)} features {names}, "
            f"missing {missing}" + (f", unrecognized {extra}" if extra else "")
        )
    col = {h: i for i, h in enumerate(t.header)}
    # column selection by index list yields Fortran order; keep row-major so
    # matrix products reduce in the same order as for a fitted Dataset
    return np.ascontiguousarray(t.rows[:, [col[f] for f in names]].reshape(-1, len(names)))


@dataclass(frozen=True)
class Standardizer:
    """Column centering/scaling of X and centering of y (the model has no intercept)."""

    x_mean: tuple
    x_scale: tuple
    y_mean: float

    @classmethod
    def from_data(cls, data):
        sd = data.X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return cls(tuple(map(float, data.X.mean(axis=0))), tuple(map(float, sd)), float(data.y.mean()))

    def transform_X(self, X):
        return (np.asarray(X, dtype=float) - np.array(self.x_mean)) / np.array(self.x_scale)

    def transform(self, data):
        return Dataset(self.transform_X(data.X), data.y - self.y_mean, data.z)

    def as_dict(self):
        return {"x_mean": list(self.x_mean), "x_scale": list(self.x_scale), "y_mean": self.y_mean}


@dataclass
class ModelFile:
    params: ModelParams
    alpha: float
    lambdas: tuple
    feature_names: list
    convergence: dict
    standard_errors: dict = None  # {"beta": [...], ...} or None when J is singular
    pilot_sigma2: float = None
    standardizer: Standardizer = None
    selection: dict = None
    notes: list = field(default_factory=list)


_MODEL_KEYS = {
    "schema_version", "alpha", "lambda1", "lambda2", "lambda3", "sigma2", "pilot_sigma2",
    "beta", "omega", "eta", "feature_names", "convergence", "standard_errors",
    "standardize", "selection", "notes",
}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_model(mf, path):
    P = mf.params
    doc = {
        "schema_version": SCHEMA_VERSION,
        "alpha": mf.alpha,
        "lambda1": mf.lambdas[0],
        "lambda2": mf.lambdas[1],
        "lambda3": mf.lambdas[2],
        "sigma2": P.sigma2,
        "pilot_sigma2": mf.pilot_sigma2,
        "beta": P.beta,
        "omega": P.omega,
        "eta": P.eta,
        "feature_names": list(mf.feature_names),
        "convergence": mf.convergence,
        "standard_errors": mf.standard_errors,
        "standardize": None if mf.standardizer is None else mf.standardizer.as_dict(),
        "selection": mf.selection,
        "notes": list(mf.notes),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: model file must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    unknown = sorted(set(doc) - _MODEL_KEYS)
    if unknown:
        raise InputError(f"{path}: unknown fields {unknown}")
    missing = sorted({"alpha", "sigma2", "beta", "omega", "eta", "feature_names"} - set(doc))
    if missing:
        raise InputError(f"{path}: missing fields {missing}")
    try:
        params = ModelParams(doc["beta"], doc["omega"], doc["eta"], doc["sigma2"])
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: invalid coefficients ({exc})") from None
    names = list(doc["feature_names"])
    if len(names) != params.p:
        raise InputError(f"{path}: {len(names)} feature names for p={params.p}")
    std = doc.get("standardize")
    standardizer = None
    if std is not None:
        standardizer = Standardizer(tuple(std["x_mean"]), tuple(std["x_scale"]), float(std["y_mean"]))
    return ModelFile(
        params=params,
        alpha=float(doc["alpha"]),
        lambdas=(float(doc.get("lambda1", 0.0)), float(doc.get("lambda2", 0.0)), float(doc.get("lambda3", 0.0))),
        feature_names=names,
        convergence=doc.get("convergence") or {},
        standard_errors=doc.get("standard_errors"),
        pilot_sigma2=doc.get("pilot_sigma2"),
        standardizer=standardizer,
        selection=doc.get("selection"),
        notes=list(doc.get("notes") or []),
    )


PREDICTION_COLUMNS = ("row", "p_hat", "z_hat", "y_hat_classify", "y_hat_mixture")


def write_predictions(fh, p_hat, z_hat, y_cls, y_mix):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PREDICTION_COLUMNS)
    for i in range(len(p_hat)):
        w.writerow([i, repr(float(p_hat[i])), int(z_hat[i]), repr(float(y_cls[i])), repr(float(y_mix[i]))])


def read_predictions(path):
    t = read_csv_table(path)
    if tuple(t.header) != PREDICTION_COLUMNS:
        raise InputError(f"{path}: unexpected header {t.header}")
    return {c: t.rows[:, i] for i, c in enumerate(t.header)}
