import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpdjoint.model import Dataset, ModelParams
from dpdjoint.simulation import (
    LAPLACE_SCALE,
    METRICS,
    SUITE,
    TABLE_COLUMNS,
    ContaminationScheme,
    Scenario,
    contaminate,
    evaluate,
    fit_method,
    generate,
    n_corrupted,
    read_summary_json,
    read_table_csv,
    replication_seeds,
    run_replications,
    summarize,
    write_plot_csv,
    write_summary_json,
    write_table_csv,
)


def assert_same_dataset(a, b):
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)


# --- scenarios and data ------------------------------------------------------

def test_fixed_truth():
    _, _, truth = generate(Scenario.p8(seed=1))
    assert np.array_equal(truth.beta, np.full(8, 3.0))
    assert np.array_equal(truth.omega, np.full(8, 5.0))
    assert np.array_equal(truth.eta, np.full(8, 5.0))


def test_generate_is_deterministic():
    a = generate(Scenario.p8(seed=11))
    b = generate(Scenario.p8(seed=11))
    for x, y in zip(a[:2], b[:2]):
        assert_same_dataset(x, y)
    for u, v in zip(a[2].blocks(), b[2].blocks()):
        assert np.array_equal(u, v)
    assert a[2].sigma2 == b[2].sigma2
    c = generate(Scenario.p8(seed=12))
    assert not np.array_equal(a[0].y, c[0].y)


@pytest.mark.parametrize("s", [0.1, 0.2, 0.5])
def test_sparse_design_supports_and_laws(s):
    scen = Scenario.p50(s, seed=3)
    train, test, truth = generate(scen)
    k = math.floor(s * 50)
    assert scen.support_size == k
    for b in truth.blocks():
        assert np.count_nonzero(b) == k
    assert np.all((truth.eta[truth.eta != 0] >= 2) & (truth.eta[truth.eta != 0] <= 5))
    assert (train.n, test.n, train.p) == (700, 300, 50)


def test_sparse_coefficient_means():
    b, w = [], []
    for seed in range(40):
        _, _, t = generate(Scenario.p50(0.5, seed=seed, n_train=1, n_test=0))
        b.append(t.beta[t.beta != 0])
        w.append(t.omega[t.omega != 0])
    assert abs(np.mean(np.concatenate(b)) - 3) < 0.1
    assert abs(np.mean(np.concatenate(w)) + 5) < 0.1


def test_laplace_noise_has_unit_sd():
    e = np.random.default_rng(0).laplace(0.0, LAPLACE_SCALE, 1_000_000)
    assert abs(e.std() - 1.0) < 0.01


def test_generated_noise_has_unit_sd():
    train, _, truth = generate(Scenario(p=2, n_train=200_000, n_test=0, design="fixed"))
    r = train.y - np.where(train.z == 1, train.X @ truth.beta, train.X @ truth.omega)
    assert abs(r.std() - 1.0) < 0.01


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(sparsity=0.0)
    with pytest.raises(ValueError):
        Scenario(p=5, design="sparse", sparsity=0.1)
    assert Scenario.p8().label == "p8"
    assert Scenario.p50(0.2).label == "p50-s0.2"


# --- contamination ---------------------------------------------------------

def _train(n=700, seed=0):
    return generate(Scenario.p8(seed=seed, n_train=n, n_test=0))[0]


def test_scheme_parsing():
    assert ContaminationScheme.parse("none", 0.1) is None
    s = ContaminationScheme.parse("ZX", 0.1)
    assert s.targets == {"x", "z"} and s.label == "xz"
    with pytest.raises(ValueError):
        ContaminationScheme.parse("w", 0.1)
    with pytest.raises(ValueError):
        ContaminationScheme.parse("x", 1.5)
    assert SUITE == ("x", "y", "z", "xy", "xz", "yz", "xyz")


def test_rate_zero_is_identity():
    d = _train()
    assert contaminate(d, ContaminationScheme.parse("xyz", 0.0), 1) is d
    assert contaminate(d, None, 1) is d


def test_too_small_rate_warns_and_returns_input():
    d = _train(n=50)
    with pytest.warns(RuntimeWarning, match="no rows"):
        assert contaminate(d, ContaminationScheme.parse("y", 0.01), 1) is d


def test_total_label_flip():
    d = _train()
    c = contaminate(d, ContaminationScheme.parse("z", 1.0), 3)
    assert np.array_equal(c.z, 1 - d.z)
    assert_same_dataset(Dataset(c.X, c.y, d.z), d)


def test_y_contamination_count_and_level():
    d = _train()
    c = contaminate(d, ContaminationScheme.parse("y", 0.15), 4)
    changed = np.flatnonzero(c.y != d.y)
    assert changed.size == 105
    assert 19.5 <= c.y[changed].mean() <= 20.5


def test_x_contamination_shift():
    d = _train()
    c = contaminate(d, ContaminationScheme.parse("x", 0.2), 5)
    rows = np.flatnonzero(np.any(c.X != d.X, axis=1))
    assert rows.size == 140
    shift = c.X[rows].mean(axis=0) - d.X.mean(axis=0)
    assert np.all(np.abs(shift - 5.0) < 0.4)


def test_joint_scheme_uses_the_same_rows():
    d = _train()
    c = contaminate(d, ContaminationScheme.parse("xyz", 0.1), 6)
    rx = set(np.flatnonzero(np.any(c.X != d.X, axis=1)))
    ry = set(np.flatnonzero(c.y != d.y))
    rz = set(np.flatnonzero(c.z != d.z))
    assert rx == ry == rz and len(rx) == 70


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(SUITE), st.floats(0.0, 0.6), st.integers(0, 2**32 - 1), st.booleans())
def test_contamination_touches_exactly_floor_rate_n(targets, rate, seed, joint):
    d = _train(n=120)
    scheme = ContaminationScheme.parse(targets, rate, joint)
    m = n_corrupted(rate, 120)
    if m < 1:
        return
    c = contaminate(d, scheme, seed)
    for t, changed in (("x", np.any(c.X != d.X, axis=1)), ("y", c.y != d.y), ("z", c.z != d.z)):
        assert changed.sum() == (m if t in scheme.targets else 0)
    untouched = ~(np.any(c.X != d.X, axis=1) | (c.y != d.y) | (c.z != d.z))
    assert np.array_equal(c.X[untouched], d.X[untouched])
    again = contaminate(d, scheme, seed)
    assert_same_dataset(again, c)


def test_n_corrupted_rounding():
    assert n_corrupted(0.29, 100) == 29
    assert n_corrupted(0.15, 700) == 105
    assert n_corrupted(0.999, 10) == 9


# --- metrics ---------------------------------------------------------------

def _test_set():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5]])
    truth = ModelParams([1.0, 2.0], [-1.0, 0.5], [2.0, -1.0])
    z = np.array([1, 0, 1, 0])
    y = np.where(z == 1, X @ truth.beta, X @ truth.omega)
    return Dataset(X, y, z), truth


def test_perfect_predictions():
    test, truth = _test_set()
    m = evaluate(test, truth, truth)
    assert m.me == 0 and m.rmspe == 0 and m.rmse == 0
    assert m.l2_beta == m.l2_omega == m.l2_eta == 0


def test_residuals_one_minus_one():
    X = np.array([[1.0], [1.0]])
    params = ModelParams([0.0], [0.0], [-50.0])
    test = Dataset(X, np.array([1.0, -1.0]), np.array([0, 0]))
    m = evaluate(test, params, params)
    assert m.rmspe == 1.0 and m.rmse == 1.0


def test_total_misclassification():
    test, truth = _test_set()
    flipped = Dataset(test.X, test.y, 1 - test.z)
    m = evaluate(flipped, truth, truth)
    assert m.me == 1 and m.fp_rate == 1 and m.fn_rate == 1


def test_undefined_rates_are_nan():
    test, truth = _test_set()
    ones = Dataset(test.X, test.y, np.ones(4, int))
    m = evaluate(ones, truth, truth)
    assert math.isnan(m.fp_rate) and not math.isnan(m.fn_rate)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_me_decomposes_into_class_rates(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 3))
    truth = ModelParams(*(rng.normal(size=3) for _ in range(3)))
    fitted = ModelParams(*(rng.normal(size=3) for _ in range(3)))
    z = rng.integers(0, 2, 40)
    if z.min() == z.max():
        return
    m = evaluate(Dataset(X, rng.normal(size=40), z), fitted, truth)
    m0, m1 = np.sum(z == 0), np.sum(z == 1)
    assert m.me == pytest.approx((m.fp_rate * m0 + m.fn_rate * m1) / 40, abs=1e-15)
    assert 0 <= m.me <= 1 and min(m.l2_beta, m.l2_omega, m.l2_eta) >= 0


def test_evaluate_dimension_check():
    test, truth = _test_set()
    with pytest.raises(ValueError):
        evaluate(test, ModelParams.zeros(3), truth)


# --- driver ----------------------------------------------------------------

def test_replication_seeds():
    s = replication_seeds(7, 5)
    assert s == replication_seeds(7, 5)
    assert len(set(s)) == 5 and s[:3] == replication_seeds(7, 3)


def test_unknown_method():
    with pytest.raises(ValueError):
        fit_method("sparse-lts", _train(n=50))
    with pytest.raises(ValueError):
        run_replications(Scenario.p8(), None, "sparse-lts", 1)
    with pytest.raises(ValueError):
        run_replications(Scenario.p8(), None, "dpd", 0)


def test_single_replication_summary_equals_row():
    scen = Scenario(p=3, n_train=120, n_test=60)
    tab = run_replications(scen, ContaminationScheme.parse("y", 0.1), "dpd", 1, master_seed=3,
                           points_per_axis=2)
    assert len(tab.rows) == 1
    row = tab.rows[0]
    assert row["status"] == "ok"
    g = tab.summary["groups"][0]
    for m in METRICS:
        assert g["metrics"][m]["median"] == pytest.approx(row[m], abs=0)
        assert g["metrics"][m]["iqr"] == 0
    assert g["failures"] == 0


def test_runs_are_reproducible_and_round_trip(tmp_path):
    scen = Scenario(p=3, n_train=100, n_test=50)
    scheme = ContaminationScheme.parse("xyz", 0.1)
    a = run_replications(scen, scheme, ("dpd", "lasso-baseline"), 2, master_seed=9, points_per_axis=2)
    b = run_replications(scen, scheme, ("dpd", "lasso-baseline"), 2, master_seed=9, points_per_axis=2)
    write_table_csv(a.rows, tmp_path / "a.csv")
    write_table_csv(b.rows, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = read_table_csv(tmp_path / "a.csv")
    assert [r["method"] for r in back] == ["dpd", "lasso-baseline"] * 2
    for r0, r1 in zip(a.rows, back):
        for c in TABLE_COLUMNS:
            v0, v1 = r0[c], r1[c]
            if isinstance(v0, float) and math.isnan(v0):
                assert math.isnan(v1)
            else:
                assert v0 == v1, c
    assert summarize(back) == a.summary
    write_summary_json(a.summary, tmp_path / "s.json", {"B": 2})
    doc = read_summary_json(tmp_path / "s.json")
    assert doc["meta"] == {"B": 2} and len(doc["groups"]) == 2
    write_plot_csv(a.rows, tmp_path / "p.csv")
    plot = read_table_csv(tmp_path / "p.csv")
    assert len(plot) == 4 * len(METRICS)


def test_failures_are_recorded(monkeypatch):
    import dpdjoint.simulation as sim

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(sim, "fit_dpd", boom)
    tab = run_replications(Scenario(p=2, n_train=60, n_test=20), None, ("dpd", "lasso-baseline"), 2)
    dpd = [r for r in tab.rows if r["method"] == "dpd"]
    assert all(r["status"] == "failed" and "solver exploded" in r["error"] for r in dpd)
    g = {e["method"]: e for e in tab.summary["groups"]}
    assert g["dpd"]["failures"] == 2 and g["lasso-baseline"]["failures"] == 0


def test_clean_runs_record_zero_rate():
    tab = run_replications(Scenario(p=2, n_train=60, n_test=20), None, "lasso-baseline", 2)
    assert all(r["contamination"] == "none" and r["rate"] == 0.0 for r in tab.rows)


@pytest.mark.slow
def test_error_grows_with_contamination():
    med = {}
    for rate in (0.05, 0.20):
        tab = run_replications(Scenario.p8(), ContaminationScheme.parse("xyz", rate), "dpd", 10,
                               master_seed=17)
        med[rate] = tab.summary["groups"][0]["metrics"]["l2_beta"]["median"]
    print(f"median l2(beta): 5% {med[0.05]:.4f}, 20% {med[0.20]:.4f}")
    assert med[0.05] <= med[0.20]
