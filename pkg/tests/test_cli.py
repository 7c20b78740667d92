from __future__ import annotations

import json

import jsonschema
import numpy as np
import pytest

from subsced.cli import bundled_path, certify_report, load_schema, main
from subsced.linmodel import fls_fit
from subsced.simharness import load_csv_matrix
from subsced.subscedastic import certify

DATA = str(bundled_path("synthetic_hetero.csv"))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_vec(path, values, header="weight"):
    path.write_text(header + "\n" + "".join(f"{float(v)!r}\n" for v in values))
    return path


def test_fit_t_smoke(capsys):
    code, out, _ = run(capsys, "fit", "--data", DATA, "--response", "y", "--method", "t", "--nu", 7)
    assert code == 0
    rep = json.loads(out)
    jsonschema.validate(rep, load_schema("fit"))
    assert rep["diagnostics"]["converged"] and rep["covariance"]["estimator"] == "t-sandwich"
    ci = np.array(rep["intervals"])
    assert np.all(ci[:, 0] < rep["coefficients"]) and np.all(rep["coefficients"] < ci[:, 1])


def test_fit_round_trip_exact(capsys):
    code, out, _ = run(capsys, "fit", "--data", DATA, "--response", "y", "--method", "ols")
    X, _, y = load_csv_matrix(DATA, "y")
    X = np.column_stack([np.ones(len(y)), X])
    assert code == 0 and json.loads(out)["coefficients"] == fls_fit(X, y).beta.tolist()


def test_fit_validation_errors(capsys, tmp_path):
    code, _, err = run(capsys, "fit", "--data", DATA, "--response", "y", "--method", "wls")
    assert code == 2 and json.loads(err)["error"] == "validation"
    code, _, _ = run(capsys, "fit", "--data", DATA, "--response", "nope", "--method", "ols")
    assert code == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x\n1,2\n3,\n")
    code, _, err = run(capsys, "fit", "--data", bad, "--response", "y", "--method", "ols")
    assert code == 2 and "\n" not in err.strip()
    code, _, _ = run(capsys, "fit", "--data", DATA, "--response", "y", "--method", "bogus")
    assert code == 2


def test_fit_not_converged(capsys):
    code, _, err = run(capsys, "fit", "--data", DATA, "--response", "y", "--method", "t", "--adaptive-nu",
                       "--max-iter", 1)
    assert code == 3 and json.loads(err)["error"] == "not_converged"


def test_ols_equals_huber_without_outliers(capsys, tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(60)
    y = 1 + 2 * x + 0.05 * rng.standard_normal(60)
    path = tmp_path / "clean.csv"
    path.write_text("y,x\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(y.tolist(), x.tolist())))
    _, o, _ = run(capsys, "fit", "--data", path, "--response", "y", "--method", "ols")
    _, h, _ = run(capsys, "fit", "--data", path, "--response", "y", "--method", "huber")
    diff = np.abs(np.array(json.loads(o)["coefficients"]) - json.loads(h)["coefficients"])
    assert diff.max() < 1e-8


def test_fit_wls_with_weights(capsys, tmp_path):
    X, _, y = load_csv_matrix(DATA, "y")
    w = write_vec(tmp_path / "w.csv", np.abs(X[:, 0]) ** 3 + 1e-3)
    code, out, _ = run(capsys, "fit", "--data", DATA, "--response", "y", "--method", "wls", "--weights", w,
                       "--cov", "HC0")
    assert code == 0 and json.loads(out)["covariance"]["estimator"] == "HC0"


def test_certify_examples(capsys, tmp_path):
    t = write_vec(tmp_path / "t.csv", [1, 4, 9])
    code, out, _ = run(capsys, "certify", "--candidate", t, "--truth", t)
    rep = json.loads(out)
    assert code == 0 and rep["verdict"] and rep["margin"] >= 0
    jsonschema.validate(rep, load_schema("certificate"))
    a = write_vec(tmp_path / "a.csv", [1, 2])
    b = write_vec(tmp_path / "b.csv", [1, 4])
    for cand, truth, c_vals, t_vals in ((a, b, [1, 2], [1, 4]), (b, a, [1, 4], [1, 2])):
        _, out, _ = run(capsys, "certify", "--candidate", cand, "--truth", truth, "--oracle")
        rep = json.loads(out)
        assert rep["verdict"] == certify(c_vals, t_vals).verdict and rep["oracle"]["agreement"]
    bad = tmp_path / "bad.csv"
    bad.write_text("w\n1\n-2\n")
    code, _, _ = run(capsys, "certify", "--candidate", bad, "--truth", t)
    assert code == 2


def test_certify_oracle_fixtures():
    fixtures = json.loads(bundled_path("certify_fixtures.json").read_text())["fixtures"]
    assert len(fixtures) == 100
    for fx in fixtures:
        rep = certify_report(fx["candidate"], fx["truth"], oracle=True)
        assert rep["oracle"]["agreement"] and rep["verdict"] == fx["verdict"]


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0] == "estimator,n,value,mc_stderr"
    return {tuple(l.split(",")[:2]): float(l.split(",")[2]) for l in lines[1:]}


def test_simulate_figure2_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "simulate", "--spec", "figure2.json", "--out", a)[0] == 0
    assert run(capsys, "simulate", "--spec", bundled_path("figure2.json"), "--out", b)[0] == 0
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    jsonschema.validate(manifest, load_schema("manifest"))
    for nu in (3, 5, 9, 15, 30, 100):
        vals = read_csv(a / f"sgv_figure2_nu{nu}.csv")
        wls = vals[("WLS", "1000")]
        assert all(wls <= v for v in vals.values())


def test_simulate_table2(capsys, tmp_path):
    assert run(capsys, "simulate", "--spec", "table2_synthetic.json", "--out", tmp_path)[0] == 0
    vals = read_csv(tmp_path / "coverage_table2_synthetic.csv")
    labels = {k[0].split(":")[0] for k in vals}
    assert {"HC0", "HC1", "HC2", "HC3", "T", "HOM"} <= labels


def test_simulate_errors(capsys, tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "x", "replicates": 0}))
    assert run(capsys, "simulate", "--spec", bad, "--out", tmp_path / "o")[0] == 2
    bad.write_text("{not json")
    assert run(capsys, "simulate", "--spec", bad, "--out", tmp_path / "o")[0] == 2
    assert run(capsys, "simulate", "--spec", tmp_path / "missing.json", "--out", tmp_path / "o")[0] == 2

    import subsced.simharness as sh
    from subsced.errors import NotConverged

    def failing(*a, **k):
        raise NotConverged("forced")

    monkeypatch.setattr(sh, "t_em_fit", failing)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"name": "drop", "n_grid": [30], "p": 2, "replicates": 10,
                                "estimators": ["T_FIXED"]}))
    assert run(capsys, "simulate", "--spec", good, "--out", tmp_path / "o")[0] == 4


def test_design_weights_groupwise(capsys, tmp_path):
    out = tmp_path / "w.csv"
    assert run(capsys, "design-weights", "--mode", "groupwise", "--sizes", "2,3", "--gamma", 1, "--out", out)[0] == 0
    assert out.read_text() == "weight\n" + "1.0\n" * 5
    assert run(capsys, "design-weights", "--mode", "groupwise", "--sizes", "1,1,1", "--gamma", 1.5,
               "--out", out)[0] == 0
    assert out.read_text().split()[1:] == ["1.0", "2.0", "4.0"]
    side = json.loads((tmp_path / "w.csv.json").read_text())
    jsonschema.validate(side, load_schema("weights_sidecar"))
    assert side["gamma"] == 1.5


def test_design_weights_group_column(capsys, tmp_path):
    data = tmp_path / "g.csv"
    data.write_text("g,x\n2,0.1\n1,0.2\n3,0.3\n1,0.4\n")
    out = tmp_path / "w.csv"
    assert run(capsys, "design-weights", "--mode", "groupwise", "--data", data, "--group-column", "g",
               "--order", "1,2,3", "--gamma", 2, "--out", out)[0] == 0
    assert out.read_text().split()[1:] == ["3.0", "1.0", "9.0", "1.0"]


def test_design_weights_bad_flags(capsys, tmp_path):
    out = tmp_path / "w.csv"
    assert run(capsys, "design-weights", "--mode", "groupwise", "--out", out)[0] == 2
    assert run(capsys, "design-weights", "--mode", "covariate", "--out", out)[0] == 2
    assert run(capsys, "design-weights", "--mode", "wrong", "--out", out)[0] == 2


def test_design_weights_covariate_and_mixed(capsys, tmp_path):
    out = tmp_path / "c.csv"
    assert run(capsys, "design-weights", "--mode", "covariate", "--data", DATA, "--column", "x1",
               "--form", "abs_power", "--theta", 1.5, "--out", out)[0] == 0
    X, header, _ = load_csv_matrix(DATA)
    w = np.loadtxt(out, skiprows=1)
    assert np.allclose(w, np.abs(X[:, header.index("x1")]) ** 1.5)
    assert run(capsys, "design-weights", "--mode", "mixed", "--sizes", "3,2", "--gamma", 0.5, "--out", out)[0] == 0
    assert np.allclose(np.loadtxt(out, skiprows=1), [3.5, 2.5, 0.5, 0.5, 0.5])


def test_parametric_pipeline(capsys, tmp_path):
    w = tmp_path / "pw.csv"
    assert run(capsys, "design-weights", "--mode", "parametric", "--data", DATA, "--response", "y",
               "--form", "log_abs_x", "--out", w)[0] == 0
    ones = write_vec(tmp_path / "ones.csv", np.ones(400))
    _, out, _ = run(capsys, "certify", "--candidate", w, "--truth", ones)
    assert json.loads(out)["verdict"] is False
    assert run(capsys, "simulate", "--spec", "parametric_followup.json", "--out", tmp_path / "s")[0] == 0
    vals = read_csv(tmp_path / "s" / "sgv_parametric_followup.csv")
    assert vals[("FLS_LOG_ABS_X", "400")] < vals[("OLS", "400")]
