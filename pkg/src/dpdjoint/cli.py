"""Command-line front end.

Exit codes: 0 success, 1 input/validation error, 2 optimizer did not converge
(stall or iteration limit), 3 penalty selection failed.
"""

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from .asymptotics import fitted_covariance, standard_errors
from .errors import (
    ConfigError,
    DegenerateAxisError,
    InitializationError,
    InvalidParameterError,
    NumericalConsistencyError,
    RankDeficiencyError,
    SelectionError,
)
from .io import (
    InputError,
    ModelFile,
    Standardizer,
    read_dataset,
    read_features,
    read_model,
    write_model,
    write_predictions,
)
from .model import DPDConfig, predict_batch
from .optimizer import OptimizerConfig, fit, lasso_init
from .selection import grid_search, make_grid
from .simulation import (
    METHODS,
    METRICS,
    SUITE,
    ContaminationScheme,
    Scenario,
    read_table_csv,
    run_replications,
    summarize,
    write_plot_csv,
    write_summary_json,
    write_table_csv,
)
from .variance import pilot_sigma, refresh_sigma

EXIT_OK, EXIT_INPUT, EXIT_STALL, EXIT_SELECTION = 0, 1, 2, 3

PRESETS = {
    "simulation": OptimizerConfig.simulation,
    "case-study": OptimizerConfig.case_study,
    "cross-validation": OptimizerConfig.cross_validation,
}


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _positive(name):
    def conv(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {s!r}") from None
        if not (np.isfinite(v) and v > 0):
            raise argparse.ArgumentTypeError(f"{name} must be > 0, got {s}")
        return v
    return conv


def _nonneg(name):
    def conv(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {s!r}") from None
        if not (np.isfinite(v) and v >= 0):
            raise argparse.ArgumentTypeError(f"{name} must be >= 0, got {s}")
        return v
    return conv


def _count(name, lo=1):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {s!r}") from None
        if v < lo:
            raise argparse.ArgumentTypeError(f"{name} must be >= {lo}, got {v}")
        return v
    return conv


def _rate(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"rate must be a number, got {s!r}") from None
    if not (0 <= v <= 1):
        raise argparse.ArgumentTypeError(f"rate must be in [0, 1], got {s}")
    return v


def _opt_config(args):
    kw = {}
    if getattr(args, "max_iter", None) is not None:
        kw["max_iter"] = args.max_iter
    return PRESETS[args.preset](**kw)


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


# ---------------------------------------------------------------------------
# fit / select
# ---------------------------------------------------------------------------

def _load_training(args):
    data, names = read_dataset(args.input, args.y_col, args.z_col)
    std = Standardizer.from_data(data) if args.standardize else None
    if std is not None:
        data = std.transform(data)
    return data, names, std


def _run_selection(data, alpha, opt, sigma2, init, points, seed):
    grid = make_grid(data, points, sigma2, alpha)
    return grid_search(data, grid, alpha, opt, sigma2, init=init)


def cmd_fit(args):
    data, names, std = _load_training(args)
    opt = _opt_config(args)
    cfg = DPDConfig(args.alpha, args.lambda1, args.lambda2, args.lambda3)
    var, coef = pilot_sigma(data, seed=args.seed)
    init = lasso_init(data, seed=args.seed, coef=coef)
    selection = None
    if args.select:
        sel = _run_selection(data, args.alpha, opt, var.sigma2, init, args.points_per_axis, args.seed)
        res = sel.best_fit
        cfg = DPDConfig(args.alpha, *sel.best_lambdas)
        selection = {"ric": sel.best_ric, "points_per_axis": args.points_per_axis, "candidates": len(sel.ric_surface)}
    else:
        res = fit(data, cfg, opt, var.sigma2, init=init)

    refreshed = refresh_sigma(data, res.params)
    params = res.params.with_sigma2(refreshed.sigma2)
    notes = []
    try:
        cov = fitted_covariance(data, params, args.alpha)
        se = standard_errors(cov, data.n)
        p = data.p
        ses = {"beta": se[:p], "omega": se[p:2 * p], "eta": se[2 * p:]}
    except (RankDeficiencyError, NumericalConsistencyError) as exc:
        ses = None
        notes.append(f"standard errors unavailable: {type(exc).__name__}: {exc}")
    mf = ModelFile(
        params=params,
        alpha=args.alpha,
        lambdas=cfg.lambdas,
        feature_names=names,
        convergence={
            "converged": res.converged,
            "reason": res.reason,
            "iterations": res.iterations,
            "rejections": res.rejections,
            "objective": res.objective,
            "preset": args.preset,
        },
        standard_errors=ses,
        pilot_sigma2=var.sigma2,
        standardizer=std,
        selection=selection,
        notes=notes,
    )
    write_model(mf, args.model)
    _print_fit_summary(mf, data)
    if not res.converged:
        raise CLIError(f"optimizer did not converge ({res.reason} after {res.iterations} iterations); "
                       f"best iterate written to {args.model}", EXIT_STALL)
    return EXIT_OK


def _print_fit_summary(mf, data):
    P = mf.params
    out = sys.stdout
    out.write(f"n={data.n} p={data.p} alpha={mf.alpha:g} "
              f"lambda=({mf.lambdas[0]:.4g}, {mf.lambdas[1]:.4g}, {mf.lambdas[2]:.4g})\n")
    c = mf.convergence
    out.write(f"{c['reason']} after {c['iterations']} iterations, objective {c['objective']:.6g}; "
              f"sigma2 pilot {mf.pilot_sigma2:.4g}, refreshed {P.sigma2:.4g}\n")
    width = max(len(n) for n in mf.feature_names)
    out.write(f"{'':{width}}  {'beta':>10} {'omega':>10} {'eta':>10}\n")
    for j, name in enumerate(mf.feature_names):
        row = f"{name:{width}}  {P.beta[j]:10.4f} {P.omega[j]:10.4f} {P.eta[j]:10.4f}"
        if mf.standard_errors is not None:
            se = [mf.standard_errors[b][j] for b in ("beta", "omega", "eta")]
            row += "   se " + " ".join(f"{s:.3g}" for s in se)
        out.write(row + "\n")
    for note in mf.notes:
        out.write(f"note: {note}\n")


def cmd_select(args):
    data, names, std = _load_training(args)
    opt = _opt_config(args)
    var, coef = pilot_sigma(data, seed=args.seed)
    init = lasso_init(data, seed=args.seed, coef=coef)
    sel = _run_selection(data, args.alpha, opt, var.sigma2, init, args.points_per_axis, args.seed)
    rows = sel.surface_rows()
    cols = ["lambda1", "lambda2", "lambda3", "ric", "loss", "penalty", "active_dim", "objective",
            "iterations", "converged", "reason", "nnz_beta", "nnz_omega", "nnz_eta"]
    fh, close = _open_out(args.out)
    try:
        if args.format == "json":
            doc = {"best_lambdas": list(sel.best_lambdas), "best_ric": sel.best_ric, "sigma2": var.sigma2,
                   "surface": [{c: r[c] for c in cols} for r in rows]}
            json.dump(_json_ready(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
        else:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([_cell(r[c]) for c in cols])
    finally:
        if close:
            fh.close()
    l1, l2, l3 = sel.best_lambdas
    sys.stderr.write(f"selected lambda=({l1:.6g}, {l2:.6g}, {l3:.6g}) RIC={sel.best_ric:.6g}\n")
    return EXIT_OK


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def predict_from_model(mf, X):
    """Returns (p_hat, z_hat, y_classify, y_mixture) on the original y scale."""
    X = np.asarray(X, dtype=float).reshape(-1, mf.params.p)
    if mf.standardizer is not None:
        X = mf.standardizer.transform_X(X)
    z_hat, p_hat, y_cls = predict_batch(X, mf.params, "classify-then-regress")
    _, _, y_mix = predict_batch(X, mf.params, "mixture-mean")
    if mf.standardizer is not None:
        y_cls = y_cls + mf.standardizer.y_mean
        y_mix = y_mix + mf.standardizer.y_mean
    return p_hat, z_hat, y_cls, y_mix


def cmd_predict(args):
    mf = read_model(args.model)
    X = read_features(args.input, mf.feature_names)
    fh, close = _open_out(args.out)
    try:
        write_predictions(fh, *predict_from_model(mf, X))
    finally:
        if close:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / report
# ---------------------------------------------------------------------------

def _scenario(args):
    if args.scenario == "p8":
        return Scenario.p8()
    return Scenario.p50(args.sparsity)


def cmd_simulate(args):
    scen = _scenario(args)
    configs = SUITE if args.contamination == "suite" else (args.contamination,)
    methods = tuple(args.methods)
    opt = _opt_config(args)
    rows = []
    for k, spec in enumerate(configs):
        scheme = ContaminationScheme.parse(spec, args.rate)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            table = run_replications(scen, scheme, methods, args.replications, master_seed=args.seed,
                                     alpha=args.alpha, points_per_axis=args.points_per_axis, opt=opt,
                                     n_jobs=args.jobs)
        rows.extend(table.rows)
        sys.stderr.write(f"[{k + 1}/{len(configs)}] contamination={spec}: "
                         f"{sum(r['status'] == 'ok' for r in table.rows)}/{len(table.rows)} fits ok\n")
    os.makedirs(args.out, exist_ok=True)
    if args.format == "json":
        with open(os.path.join(args.out, "replications.json"), "w", encoding="utf-8") as fh:
            json.dump(_json_ready(rows), fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        write_table_csv(rows, os.path.join(args.out, "replications.csv"))
    meta = {
        "scenario": scen.label,
        "contamination": list(configs),
        "rate": args.rate,
        "replications": args.replications,
        "seed": args.seed,
        "alpha": args.alpha,
        "methods": list(methods),
        "points_per_axis": args.points_per_axis,
        "preset": args.preset,
        "version": __version__,
    }
    write_summary_json(summarize(rows), os.path.join(args.out, "summary.json"), meta)
    write_plot_csv(rows, os.path.join(args.out, "plot_data.csv"))
    _print_summary(summarize(rows))
    return EXIT_OK


def _print_summary(summary):
    for g in summary["groups"]:
        med = " ".join(
            f"{m}={g['metrics'][m]['median']:.4g}" for m in ("rmspe", "me", "l2_beta", "l2_omega", "l2_eta")
            if g["metrics"][m]["median"] is not None
        )
        sys.stdout.write(f"{g['method']:>15} {g['scenario']} {g['contamination']:>4} {g['rate']:g}: "
                         f"{med} (failures {g['failures']})\n")


def _load_rows(path):
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            rows = json.load(fh)
        for r in rows:
            for m in METRICS:
                if r.get(m) is None:
                    r[m] = float("nan")
        return rows
    return read_table_csv(path)


def cmd_report(args):
    from .plotting import metric_boxplot

    path = args.input
    if os.path.isdir(path):
        for name in ("replications.csv", "replications.json"):
            if os.path.exists(os.path.join(path, name)):
                path = os.path.join(path, name)
                break
        else:
            raise InputError(f"{args.input}: no replications.csv or replications.json found")
    rows = _load_rows(path)
    if not rows:
        raise InputError(f"{path}: no replication rows")
    os.makedirs(args.out, exist_ok=True)
    summary = summarize(rows)
    cols = ["method", "scenario", "contamination", "rate", "replications", "failures", "metric",
            "median", "q25", "q75", "iqr", "count"]
    with open(os.path.join(args.out, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for g in summary["groups"]:
            for m in METRICS:
                s = g["metrics"][m]
                w.writerow([g["method"], g["scenario"], g["contamination"], repr(g["rate"]),
                            g["replications"], g["failures"], m]
                           + ["" if s[k] is None else repr(s[k]) for k in ("median", "q25", "q75", "iqr")]
                           + [s["count"]])
    metrics = METRICS if args.metrics is None else args.metrics
    for m in metrics:
        out = metric_boxplot(rows, m, os.path.join(args.out, f"boxplot_{m}.png"))
        sys.stdout.write(f"wrote {out}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_optimizer_flags(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="simulation",
                   help="solver settings (default: simulation)")
    p.add_argument("--max-iter", type=_count("max-iter"), default=None)


def _add_training_flags(p):
    p.add_argument("--input", required=True, help="training CSV with feature columns, y and z")
    p.add_argument("--y-col", default="y")
    p.add_argument("--z-col", default="z")
    p.add_argument("--standardize", action="store_true",
                   help="center/scale X and center y before fitting (stored in the model file)")
    p.add_argument("--alpha", type=_positive("alpha"), default=1.0)
    p.add_argument("--seed", type=int, default=0, help="seed for the CV folds of the pilot Lasso")
    p.add_argument("--points-per-axis", type=_count("points-per-axis", 2), default=10)
    _add_optimizer_flags(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="dpdjoint",
                                     description="Robust joint regression/classification via density power divergence.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write it as JSON")
    _add_training_flags(p)
    p.add_argument("--model", "--out", dest="model", required=True, help="output model file")
    lam = p.add_argument_group("penalties (or --select)")
    lam.add_argument("--lambda1", type=_nonneg("lambda1"), default=0.0)
    lam.add_argument("--lambda2", type=_nonneg("lambda2"), default=0.0)
    lam.add_argument("--lambda3", type=_nonneg("lambda3"), default=0.0)
    lam.add_argument("--select", action="store_true", help="choose the penalties by RIC grid search")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="RIC grid search; writes the RIC surface")
    _add_training_flags(p)
    p.add_argument("--out", default="-", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("predict", help="predict with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="CSV with the model's feature columns")
    p.add_argument("--out", default="-", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="Monte-Carlo comparison against the Lasso baseline")
    p.add_argument("--scenario", choices=("p8", "p50"), default="p8")
    p.add_argument("--sparsity", type=float, default=0.1, help="p50 only")
    p.add_argument("--contamination", choices=("none",) + SUITE + ("suite",), default="xyz")
    p.add_argument("--rate", type=_rate, default=0.15)
    p.add_argument("--replications", type=_count("replications"), default=100)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--alpha", type=_positive("alpha"), default=1.0)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--points-per-axis", type=_count("points-per-axis", 2), default=4)
    p.add_argument("--jobs", type=_count("jobs"), default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_optimizer_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summary table and boxplot PNGs from simulate output")
    p.add_argument("--input", required=True, help="simulate output directory or replications file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metrics", nargs="+", choices=METRICS, default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.command == "simulate" and args.scenario == "p50" and not (0 < args.sparsity <= 1):
        sys.stderr.write("error: --sparsity must be in (0, 1]\n")
        return EXIT_INPUT
    if args.command == "fit" and args.select and any((args.lambda1, args.lambda2, args.lambda3)):
        sys.stderr.write("error: --select and explicit --lambda values are mutually exclusive\n")
        return EXIT_INPUT
    try:
        return args.func(args)
    except CLIError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code
    except SelectionError as exc:
        sys.stderr.write(f"error: selection failed: {exc}\n")
        return EXIT_SELECTION
    except (InputError, ConfigError, InvalidParameterError, DegenerateAxisError, InitializationError,
            FileNotFoundError, IsADirectoryError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
