import csv
import io
import json

import pytest

from goodparams.cli import bundled_configs, load_config, main, num


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(text):
    return list(csv.reader(io.StringIO(text)))


def test_bundled_configs_present():
    names = set(bundled_configs())
    assert {"scan_z1_r005.json", "scan_z1_r010.json", "bound_curve.json", "covid_synthetic.json"} <= names
    assert any(n.startswith("estimate_") for n in names)


def test_num_accepts_fractions():
    assert num("1/21") == 1 / 21
    assert num(3) == 3.0
    with pytest.raises(ValueError):
        num("one")


def test_simulate_sir(capsys):
    code, out, _ = run(capsys, "simulate", "--params", "0.25,1/21", "--horizon", "40")
    rows = read_csv(out)
    assert code == 0 and rows[0] == ["t", "S", "I", "R"] and len(rows) == 42
    peak = max(rows[1:], key=lambda r: float(r[2]))
    assert peak[0] == "24"


def test_simulate_horizon_zero(capsys):
    code, out, _ = run(capsys, "simulate", "--params", "0.25,1/21", "--horizon", "0")
    assert code == 0 and len(read_csv(out)) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ("simulate", "--params", "0.25"),
        ("simulate", "--params", "0.25,1/21", "--horizon", "-1"),
        ("scan", "--config", "no_such_config"),
        ("frobnicate",),
        ("bounds", "--c", "0.5", "--delta", "0.01", "--G", "0.001", "--p", "68"),
        ("bounds",),
        ("estimate", "--config", "estimate_z1_r005", "--workers", "0"),
    ],
)
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 2


@pytest.mark.parametrize("config,p,G", [("scan_z1_r005", 68, 0.000136), ("scan_z3_r010", 263, 263 / 80_200)])
def test_scan_bundled(capsys, tmp_path, config, p, G):
    code, _, _ = run(capsys, "scan", "--config", config, "--out", str(tmp_path))
    doc = json.loads((tmp_path / "scan.json").read_text())
    assert code == 0 and doc["p"] == p and doc["G"] == pytest.approx(G, rel=1e-12)
    assert len((tmp_path / "good_params.csv").read_text().splitlines()) == p + 1
    echoed = json.loads((tmp_path / "config.json").read_text())
    assert echoed["grid"] == load_config(config)[0]["grid"]


def test_scan_empty_fitness(capsys, tmp_path):
    cfg, _ = load_config("scan_z3_r005")
    cfg["observed"]["params"] = {"beta": 0.2505, "gamma": 0.0501}
    cfg["fitness"]["r"] = 1e-9
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "scan", "--config", str(path))
    assert code == 0 and json.loads(out)["p"] == 0


def test_scan_guard(capsys, tmp_path):
    cfg, _ = load_config("scan_z1_r005")
    cfg["scan_limit"] = 1000
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert run(capsys, "scan", "--config", str(path))[0] == 4


def test_estimate_outputs_and_determinism(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "estimate", "--config", "estimate_z3_r010", "--seed", "3", "--out", str(a))[0] == 0
    assert run(capsys, "estimate", "--config", "estimate_z3_r010", "--seed", "3", "--workers", "2",
               "--out", str(b))[0] == 0
    assert (a / "goodset.json").read_bytes() == (b / "goodset.json").read_bytes()
    assert (a / "goodset.csv").read_bytes() == (b / "goodset.csv").read_bytes()
    doc = json.loads((a / "goodset.json").read_text())
    assert doc["seed"] == 3 and doc["n_sampled"] == 29_920
    assert 40 <= doc["n_distinct_good"] <= 140


def test_estimate_z1_r005(capsys):
    code, out, _ = run(capsys, "estimate", "--config", "estimate_z1_r005")
    doc = json.loads(out)
    assert code == 0 and 10 <= doc["n_distinct_good"] <= 40


def test_bounds_values(capsys):
    code, out, _ = run(capsys, "bounds", "--c", "0.9", "--delta", "0.01", "--G", "0.000136", "--p", "68")
    doc = json.loads(out)
    assert code == 0
    assert abs(doc["eq10"] - 211_219) <= 1 and doc["eq10_ceil"] == 211_220
    assert doc["eq9"] == pytest.approx(422_705.7, abs=0.1)
    assert doc["rounding"] == "nearest"
    code, out, _ = run(capsys, "bounds", "--epsilon", "0.1", "--delta", "0.05", "--h-card", "1024")
    assert json.loads(out)["corollary"] == pytest.approx(99.27, abs=0.01)


def test_bounds_curve(capsys, tmp_path):
    code, _, _ = run(capsys, "bounds", "--config", "bound_curve", "--out", str(tmp_path))
    rows = read_csv((tmp_path / "curve.csv").read_text())
    assert code == 0 and rows[0] == ["c", "m_general", "m_improved"]
    m9 = [float(r[1]) for r in rows[1:]]
    m10 = [float(r[2]) for r in rows[1:]]
    assert all(x > y for x, y in zip(m9, m9[1:])) and all(x > y for x, y in zip(m10, m10[1:]))
    assert all(a > b for a, b in zip(m9, m10))


def test_covid_missing_data(capsys, tmp_path):
    code, _, err = run(capsys, "covid", "--config", "covid_us_fixture", "--data", str(tmp_path / "x.csv"))
    assert code == 3 and "not found" in err


def test_covid_synthetic(capsys, tmp_path):
    code, _, _ = run(capsys, "covid", "--config", "covid_synthetic", "--n", "60000", "--out", str(tmp_path))
    assert code == 0
    peaks = read_csv((tmp_path / "peaks.csv").read_text())
    assert peaks[0] == ["t0", "p2.5", "median", "p97.5"] and len(peaks) == 9
    doc = json.loads((tmp_path / "results.json").read_text())
    assert all(r["status"] == "ok" for r in doc["results"])
    assert (tmp_path / "synthetic_data.csv").exists() and (tmp_path / "params_summary.csv").exists()
    assert json.loads((tmp_path / "config.json").read_text())["sampling"]["n"] == 60000


def test_logs_stay_off_stdout(capsys):
    code, out, err = run(capsys, "scan", "--config", "scan_z3_r005")
    assert code == 0 and "INFO" not in out and "INFO" in err
    json.loads(out)
