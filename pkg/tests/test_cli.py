import csv
import json

import numpy as np
import pytest

from dpdjoint import cli
from dpdjoint.errors import SelectionError
from dpdjoint.io import ModelFile, read_model, read_predictions, write_model
from dpdjoint.model import DPDConfig, ModelParams, predict_batch
from dpdjoint.optimizer import fit, lasso_init
from dpdjoint.simulation import (
    ContaminationScheme,
    Scenario,
    contaminate,
    generate,
    read_summary_json,
    read_table_csv,
    replication_seeds,
)
from dpdjoint.variance import pilot_sigma, refresh_sigma

from conftest import simulate_joint


def write_dataset(path, data, with_response=True):
    names = [f"x{j + 1}" for j in range(data.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + (["y", "z"] if with_response else []))
        for i in range(data.n):
            row = [repr(float(v)) for v in data.X[i]]
            if with_response:
                row += [repr(float(data.y[i])), int(data.z[i])]
            w.writerow(row)
    return path


@pytest.fixture
def train_csv(tmp_path, rng):
    d = simulate_joint(rng, 120, [1.0, -1.0, 0.0], [0.5, 1.5, 0.0], [1.0, -0.5, 0.0])
    return write_dataset(tmp_path / "train.csv", d), d


def run(argv):
    return cli.main([str(a) for a in argv])


# --- exit codes and validation ------------------------------------------------

def test_bad_label_is_input_error(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x1,y,z\n0.5,1.0,0\n0.1,2.0,2\n")
    code = run(["fit", "--input", p, "--model", tmp_path / "m.json"])
    assert code == 1
    assert "line 3" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_malformed_row_names_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("x1,y,z\n0.5,1.0,0\n0.1,abc,1\n")
    assert run(["fit", "--input", p, "--model", tmp_path / "m.json"]) == 1
    assert "line 3" in capsys.readouterr().err


def test_argument_errors_exit_one(tmp_path):
    assert run(["fit", "--input", "x.csv", "--model", "m.json", "--alpha", "-1"]) == 1
    assert run(["simulate", "--out", tmp_path, "--rate", "1.5"]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["fit", "--input", tmp_path / "missing.csv", "--model", tmp_path / "m.json"]) == 1


def test_select_and_lambdas_are_exclusive(train_csv, tmp_path):
    path, _ = train_csv
    assert run(["fit", "--input", path, "--model", tmp_path / "m.json", "--select", "--lambda1", "0.1"]) == 1


def test_nonconvergence_exits_two_and_keeps_model(train_csv, tmp_path):
    path, _ = train_csv
    code = run(["fit", "--input", path, "--model", tmp_path / "m.json", "--lambda1", "0.01", "--max-iter", "1"])
    assert code == 2
    mf = read_model(tmp_path / "m.json")
    assert mf.convergence["converged"] is False


def test_selection_failure_exits_three(train_csv, tmp_path, monkeypatch):
    path, _ = train_csv

    def fail(*a, **k):
        raise SelectionError("every candidate on the grid has RIC = +inf")

    monkeypatch.setattr(cli, "grid_search", fail)
    assert run(["select", "--input", path, "--points-per-axis", "2"]) == 3


def test_huge_lambdas_give_zero_model(train_csv, tmp_path):
    path, _ = train_csv
    code = run(["fit", "--input", path, "--model", tmp_path / "m.json",
                "--lambda1", "1e6", "--lambda2", "1e6", "--lambda3", "1e6"])
    assert code == 0
    mf = read_model(tmp_path / "m.json")
    for b in mf.params.blocks():
        assert np.array_equal(b, np.zeros(3))


# --- fit / predict round trip -------------------------------------------------

def test_fit_predict_round_trip_is_bit_exact(train_csv, tmp_path):
    path, d = train_csv
    lam = (0.01, 0.02, 0.005)
    assert run(["fit", "--input", path, "--model", tmp_path / "m.json",
                "--lambda1", lam[0], "--lambda2", lam[1], "--lambda3", lam[2]]) == 0
    assert run(["predict", "--model", tmp_path / "m.json", "--input", path, "--out", tmp_path / "p.csv"]) == 0

    var, coef = pilot_sigma(d, seed=0)
    res = fit(d, DPDConfig(1.0, *lam), None, var.sigma2, init=lasso_init(d, coef=coef))
    params = res.params.with_sigma2(refresh_sigma(d, res.params).sigma2)
    z, p, y_cls = predict_batch(d.X, params, "classify-then-regress")
    _, _, y_mix = predict_batch(d.X, params, "mixture-mean")

    pred = read_predictions(tmp_path / "p.csv")
    assert np.array_equal(pred["p_hat"], p)
    assert np.array_equal(pred["z_hat"], z)
    assert np.array_equal(pred["y_hat_classify"], y_cls)
    assert np.array_equal(pred["y_hat_mixture"], y_mix)
    stored = read_model(tmp_path / "m.json").params
    for a, b in zip(stored.blocks(), params.blocks()):
        assert np.array_equal(a, b)
    assert stored.sigma2 == params.sigma2


def test_fit_writes_standard_errors_and_summary(train_csv, tmp_path, capsys):
    path, _ = train_csv
    assert run(["fit", "--input", path, "--model", tmp_path / "m.json", "--lambda1", "0.01"]) == 0
    out = capsys.readouterr().out
    assert "converged" in out and "x1" in out
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["schema_version"] == 1
    assert len(doc["standard_errors"]["beta"]) == 3


def test_equal_blocks_give_equal_rule_columns(tmp_path):
    mf = ModelFile(ModelParams([1.0, 2.0], [1.0, 2.0], [0.3, -0.2], 1.0), 1.0, (0.0, 0.0, 0.0),
                   ["a", "b"], {"converged": True})
    write_model(mf, tmp_path / "m.json")
    (tmp_path / "x.csv").write_text("b,a\n1.0,2.0\n-0.5,0.25\n")
    assert run(["predict", "--model", tmp_path / "m.json", "--input", tmp_path / "x.csv",
                "--out", tmp_path / "p.csv"]) == 0
    pred = read_predictions(tmp_path / "p.csv")
    assert np.array_equal(pred["y_hat_classify"], pred["y_hat_mixture"])
    # columns are matched by name, not position
    assert pred["y_hat_classify"][0] == 1.0 * 2.0 + 2.0 * 1.0


def test_empty_feature_file_gives_header_only(tmp_path):
    mf = ModelFile(ModelParams.zeros(2), 1.0, (0.0, 0.0, 0.0), ["x1", "x2"], {})
    write_model(mf, tmp_path / "m.json")
    (tmp_path / "empty.csv").write_text("")
    assert run(["predict", "--model", tmp_path / "m.json", "--input", tmp_path / "empty.csv",
                "--out", tmp_path / "p.csv"]) == 0
    assert (tmp_path / "p.csv").read_text() == "row,p_hat,z_hat,y_hat_classify,y_hat_mixture\n"


def test_dimension_mismatch_names_expected_and_missing(tmp_path, capsys):
    mf = ModelFile(ModelParams.zeros(3), 1.0, (0.0, 0.0, 0.0), ["x1", "x2", "x3"], {})
    write_model(mf, tmp_path / "m.json")
    (tmp_path / "x.csv").write_text("x1,x2\n1,2\n")
    assert run(["predict", "--model", tmp_path / "m.json", "--input", tmp_path / "x.csv"]) == 1
    err = capsys.readouterr().err
    assert "expects 3 features" in err and "x3" in err


def test_model_file_rejects_unknown_fields(tmp_path):
    mf = ModelFile(ModelParams.zeros(1), 1.0, (0.0, 0.0, 0.0), ["x1"], {})
    write_model(mf, tmp_path / "m.json")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["future_field"] = 1
    (tmp_path / "m.json").write_text(json.dumps(doc))
    (tmp_path / "x.csv").write_text("x1\n1\n")
    assert run(["predict", "--model", tmp_path / "m.json", "--input", tmp_path / "x.csv"]) == 1
    doc.pop("future_field")
    doc["schema_version"] = 2
    (tmp_path / "m.json").write_text(json.dumps(doc))
    assert run(["predict", "--model", tmp_path / "m.json", "--input", tmp_path / "x.csv"]) == 1


def test_standardize_round_trip(train_csv, tmp_path):
    path, d = train_csv
    assert run(["fit", "--input", path, "--model", tmp_path / "m.json", "--standardize",
                "--lambda1", "0.01"]) == 0
    mf = read_model(tmp_path / "m.json")
    assert mf.standardizer is not None
    assert run(["predict", "--model", tmp_path / "m.json", "--input", path, "--out", tmp_path / "p.csv"]) == 0
    pred = read_predictions(tmp_path / "p.csv")
    assert np.array_equal(pred["y_hat_classify"], cli.predict_from_model(mf, d.X)[2])


def test_select_outputs(train_csv, tmp_path, capsys):
    path, _ = train_csv
    assert run(["select", "--input", path, "--points-per-axis", "2", "--out", tmp_path / "s.csv"]) == 0
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8
    assert "selected lambda" in capsys.readouterr().err
    assert run(["select", "--input", path, "--points-per-axis", "2", "--format", "json",
                "--out", tmp_path / "s.json"]) == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["best_ric"] == min(float(r["ric"]) for r in rows)
    assert len(doc["surface"]) == 8


# --- simulate / report ----------------------------------------------------------

def test_case_study_schema_runs(tmp_path, rng):
    names = ["Pressure", "Rotation", "LPTime", "HPTime", "CTHK0", "TTV0", "TIRO", "STIR0", "BOW0", "WARPO"]
    d = simulate_joint(rng, 60, np.linspace(-1, 1, 10), np.linspace(1, -1, 10), np.full(10, 0.2))
    with open(tmp_path / "lap.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["TTV", "STIR"])
        for i in range(d.n):
            w.writerow([repr(float(v)) for v in d.X[i]] + [repr(float(d.y[i])), int(d.z[i])])
    code = run(["fit", "--input", tmp_path / "lap.csv", "--y-col", "TTV", "--z-col", "STIR", "--standardize",
                "--preset", "case-study", "--lambda1", "0.01", "--lambda2", "0.01", "--lambda3", "0.01",
                "--model", tmp_path / "m.json"])
    assert code in (0, 2)
    assert read_model(tmp_path / "m.json").feature_names == names


def test_simulate_clean_has_zero_rate(tmp_path):
    assert run(["simulate", "--contamination", "none", "--replications", "2", "--methods", "lasso-baseline",
                "--out", tmp_path]) == 0
    rows = read_table_csv(tmp_path / "replications.csv")
    assert all(r["rate"] == 0.0 and r["contamination"] == "none" for r in rows)


@pytest.mark.slow
def test_full_suite_emits_seven_configurations(tmp_path):
    assert run(["simulate", "--contamination", "suite", "--replications", "5", "--points-per-axis", "2",
                "--out", tmp_path]) == 0
    rows = read_table_csv(tmp_path / "replications.csv")
    assert sorted({r["contamination"] for r in rows}) == sorted(["x", "y", "z", "xy", "xz", "yz", "xyz"])
    assert len(rows) == 7 * 5 * 2
    assert all(r["status"] == "ok" for r in rows)
    summary = read_summary_json(tmp_path / "summary.json")
    assert len(summary["groups"]) == 14 and summary["meta"]["replications"] == 5
    plot = read_table_csv(tmp_path / "plot_data.csv")
    assert {p["metric"] for p in plot} >= {"rmspe", "me", "l2_beta"}


def test_simulate_json_and_report(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "--contamination", "y", "--replications", "2", "--methods", "lasso-baseline",
                "--format", "json", "--out", out]) == 0
    rows = json.loads((out / "replications.json").read_text())
    assert len(rows) == 2
    assert run(["report", "--input", out, "--out", tmp_path / "rep", "--metrics", "rmspe", "me"]) == 0
    assert (tmp_path / "rep" / "boxplot_rmspe.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with open(tmp_path / "rep" / "summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert {r["metric"] for r in summary} >= {"rmspe", "me"}
    assert run(["report", "--input", tmp_path / "nothing", "--out", tmp_path / "rep2"]) == 1


def test_pipeline_consistency_with_simulate(tmp_path):
    """Fit and predict through the CLI on the data of replication 0 and recompute its metrics."""
    assert run(["simulate", "--contamination", "xyz", "--rate", "0.15", "--replications", "1",
                "--methods", "dpd", "--seed", "5", "--out", tmp_path / "sim"]) == 0
    row = read_table_csv(tmp_path / "sim" / "replications.csv")[0]

    seed = replication_seeds(5, 1)[0]
    train, test, truth = generate(Scenario.p8(seed=seed))
    train = contaminate(train, ContaminationScheme.parse("xyz", 0.15), np.random.SeedSequence([seed, 1]))
    write_dataset(tmp_path / "train.csv", train)
    write_dataset(tmp_path / "test.csv", test, with_response=False)
    code = run(["fit", "--input", tmp_path / "train.csv", "--select", "--points-per-axis", "4",
                "--model", tmp_path / "m.json"])
    assert code in (0, 2)
    assert run(["predict", "--model", tmp_path / "m.json", "--input", tmp_path / "test.csv",
                "--out", tmp_path / "p.csv"]) == 0
    mf = read_model(tmp_path / "m.json")
    pred = read_predictions(tmp_path / "p.csv")

    assert mf.lambdas == (row["lambda1"], row["lambda2"], row["lambda3"])
    assert mf.params.sigma2 == row["sigma2"]
    resid = test.y - pred["y_hat_classify"]
    wrong = pred["z_hat"] != test.z
    assert float(np.mean(np.abs(resid))) == row["rmspe"]
    assert float(np.sqrt(np.mean(resid**2))) == row["rmse"]
    assert float(np.mean(wrong)) == row["me"]
    assert float(np.mean(wrong[test.z == 0])) == row["fp_rate"]
    assert float(np.mean(wrong[test.z == 1])) == row["fn_rate"]
    for name in ("beta", "omega", "eta"):
        assert float(np.linalg.norm(getattr(mf.params, name) - getattr(truth, name))) == row[f"l2_{name}"]


def _snapshot(directory):
    return {f"{directory.name}/{p.name}": p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_repeated_commands_are_byte_identical(train_csv, tmp_path):
    path, _ = train_csv
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        assert run(["fit", "--input", path, "--model", d / "m.json", "--lambda1", "0.01"]) == 0
        assert run(["select", "--input", path, "--points-per-axis", "2", "--out", d / "s.csv"]) == 0
        assert run(["predict", "--model", d / "m.json", "--input", path, "--out", d / "p.csv"]) == 0
        assert run(["simulate", "--contamination", "xz", "--replications", "2", "--points-per-axis", "2",
                    "--seed", "3", "--out", d / "sim"]) == 0
        assert run(["report", "--input", d / "sim", "--out", d / "rep"]) == 0
        outs.append({**_snapshot(d), **_snapshot(d / "sim"), **_snapshot(d / "rep")})
        outs[-1] = {k.split("/", 1)[1] if k.startswith("run") else k: v for k, v in outs[-1].items()}
    assert outs[0].keys() == outs[1].keys()
    for name in outs[0]:
        assert outs[0][name] == outs[1][name], name
