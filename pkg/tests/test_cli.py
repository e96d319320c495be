import csv
import io
import json
import math
import shutil
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from assassin_sim.cli import fmt, main
from assassin_sim.core import THREADS_ENV


def schema(name):
    return json.loads(resources.files("assassin_sim").joinpath("schemas", name).read_text())


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, 2.0 ** -40, 1e300, 123456789.123456789):
        assert float(fmt(x)) == x
    assert fmt(3) == "3" and fmt(True) == "true" and fmt(math.inf) == "INF" and fmt(math.nan) == ""


def test_ba_sample_csv(capsys):
    code, out, err = run_cli(capsys, "ba-sample", "--lambda", "0.2", "--replicas", "50", "--seed", "3")
    assert code == 0
    r = rows(out)
    assert [int(x["replica_index"]) for x in r] == list(range(50))
    assert set(r[0]) == {"replica_index", "n_born", "extinction_time", "censored"}
    assert "closed_form_mean=1.381966" in err


def test_ba_sample_dies_at_zero(capsys):
    code, out, _ = run_cli(capsys, "ba-sample", "--lambda", "0.9", "--replicas", "20",
                           "--root", "dies-at=0")
    assert code == 0
    assert {x["n_born"] for x in rows(out)} == {"1"}


def test_ba_sample_json_validates(capsys):
    code, out, _ = run_cli(capsys, "ba-sample", "--lambda", "0.2", "--replicas", "30",
                           "--format", "json")
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, schema("ba-sample.schema.json"))
    assert doc["summary"]["closed_form_mean"] == pytest.approx(1.381966, abs=1e-6)


def test_ba_sample_json_with_censoring_validates(capsys):
    code, out, _ = run_cli(capsys, "ba-sample", "--lambda", "2", "--replicas", "10",
                           "--max-particles", "20", "--format", "json")
    doc = json.loads(out)
    jsonschema.validate(doc, schema("ba-sample.schema.json"))
    assert any(r["censored"] and r["extinction_time"] is None for r in doc["rows"])
    assert doc["summary"]["closed_form_mean"] is None


def test_rumor_sample_json_validates(capsys):
    code, out, _ = run_cli(capsys, "rumor-sample", "--n", "20", "--lambda", "0.4",
                           "--replicas", "15", "--format", "json")
    assert code == 0
    jsonschema.validate(json.loads(out), schema("rumor-sample.schema.json"))


def test_moments_examples(capsys):
    _, out, _ = run_cli(capsys, "moments", "--lambda", "0.25", "--p", "1")
    assert rows(out) == [{"k": "1", "recursion": "2"}]
    _, out, _ = run_cli(capsys, "moments", "--lambda", "0.23", "--p", "2")
    r = rows(out)
    assert math.isfinite(float(r[0]["recursion"])) and r[1]["recursion"] == "INF"
    _, rec, _ = run_cli(capsys, "moments", "--lambda", "0.1", "--p", "3", "--mode", "recursion")
    _, cf, _ = run_cli(capsys, "moments", "--lambda", "0.1", "--p", "3", "--mode", "closed-form")
    for a, b in zip(rows(rec), rows(cf)):
        assert float(a["recursion"]) == pytest.approx(float(b["closed_form"]), abs=1e-9)


def test_moments_mc_columns(capsys):
    code, out, _ = run_cli(capsys, "moments", "--lambda", "0.1", "--p", "2", "--mode", "mc",
                           "--replicas", "2000")
    assert code == 0
    r = rows(out)
    assert set(r[0]) == {"k", "mc_estimate", "mc_stderr", "analytic_finite"}


def test_tail(capsys):
    code, out, err = run_cli(capsys, "tail", "--lambda", "0.2", "--replicas", "5000",
                             "--k-range", "10:50")
    assert code == 0
    r = rows(out)
    assert [int(x["k"]) for x in r] == list(range(10, 51))
    assert {x["gamma_analytic"] for x in r} == {fmt(2.618033988749894)}
    assert "hill_window_mean=" in err


def test_tail_light_tail_warns(capsys):
    with pytest.warns(UserWarning, match="large"):
        code, out, _ = run_cli(capsys, "tail", "--lambda", "0.01", "--replicas", "500",
                               "--k-range", "5:10")
    assert code == 0
    assert float(rows(out)[0]["gamma_analytic"]) == pytest.approx(97.99, abs=0.01)


@pytest.mark.parametrize("bad", ["5", "a:b", "10:5", "0:3"])
def test_tail_malformed_k_range(capsys, bad):
    code, _, _ = run_cli(capsys, "tail", "--lambda", "0.2", "--k-range", bad)
    assert code == 2


def test_tail_domain(capsys):
    code, _, err = run_cli(capsys, "tail", "--lambda", "0.3", "--replicas", "100", "--k-range", "1:5")
    assert code == 3


@pytest.mark.parametrize("lam,killing,verdict", [
    ("0.3", "exp:1", "Unstable"),
    ("0.3", "det:1", "Stable"),
    ("0.25", "exp:1", "Stable"),
    ("0.2", "gamma:2,2", "Stable"),
])
def test_stability(capsys, lam, killing, verdict):
    code, out, _ = run_cli(capsys, "stability", "--lambda", lam, "--killing", killing)
    assert code == 0
    assert out.startswith(f"verdict={verdict} ")
    if killing == "det:1":
        value = float(out.split("criterion=")[1].split()[0])
        assert value == pytest.approx(0.81548, abs=1e-5)
    if lam == "0.25":
        assert "boundary=true" in out


def test_stability_bad_killing(capsys):
    code, _, _ = run_cli(capsys, "stability", "--lambda", "0.3", "--killing", "weibull:1")
    assert code == 3


def test_extinction(capsys):
    code, out, err = run_cli(capsys, "extinction", "--lambda", "0.2")
    assert code == 0
    r = rows(out)
    assert abs(float(r[0]["pi"]) - 1) < 1e-6 and float(r[-1]["t"]) == 40.0
    assert "pi0=" in err


def test_extinction_zero_step(capsys):
    code, _, _ = run_cli(capsys, "extinction", "--lambda", "0.2", "--step", "0")
    assert code == 2


def test_extinction_nonconvergence_exit_code(capsys, monkeypatch):
    from assassin_sim import analytics

    real = analytics.extinction_profile
    monkeypatch.setattr("assassin_sim.cli.analytics.extinction_profile",
                        lambda lam, horizon, step: real(lam, horizon, step, max_iter=2))
    code, _, err = run_cli(capsys, "extinction", "--lambda", "0.5")
    assert code == 4 and "residual" in err


def test_laplace_anchors(capsys):
    _, out, _ = run_cli(capsys, "laplace", "--lambda", "0.2", "--theta", "0", "--t", "3")
    assert float(rows(out)[0]["laplace"]) == 1.0
    _, out, _ = run_cli(capsys, "laplace", "--lambda", "0.2", "--theta", "1", "--t", "0")
    assert float(rows(out)[0]["laplace"]) == pytest.approx(0.367879, abs=1e-6)
    code, _, _ = run_cli(capsys, "laplace", "--lambda", "0.3", "--theta", "1", "--t", "0")
    assert code == 3


def test_laplace_mc_column(capsys):
    _, out, _ = run_cli(capsys, "laplace", "--lambda", "0.2", "--theta", "1", "--t", "1",
                        "--mc-replicas", "20000")
    solver, mc = rows(out)
    assert solver["source"] == "solver" and mc["source"] == "mc"
    assert abs(float(solver["laplace"]) - float(mc["laplace"])) < 3 * float(mc["stderr"])


def test_rumor_sample_single_vertex(capsys):
    code, out, _ = run_cli(capsys, "rumor-sample", "--n", "1", "--lambda", "0.4", "--replicas", "10")
    assert code == 0
    assert {x["n_recovered"] for x in rows(out)} == {"1"}


def test_rumor_sample_file_topology(capsys, tmp_path):
    g = tmp_path / "ring.txt"
    g.write_text("0 1\n1 2\n2 3\n3 4\n4 1\n")
    code, out, _ = run_cli(capsys, "rumor-sample", "--lambda", "1.0", "--replicas", "20",
                           "--topology", f"file={g}", "--init", "full-blame")
    assert code == 0
    assert all(1 <= int(x["n_recovered"]) <= 4 for x in rows(out))
    code, _, _ = run_cli(capsys, "rumor-sample", "--lambda", "1.0", "--topology", "lattice")
    assert code == 3


def test_converge_subcritical(capsys):
    code, out, _ = run_cli(capsys, "converge", "--lambda", "0.2", "--n-list", "50,200",
                           "--replicas", "2000")
    assert code == 0
    r = rows(out)
    assert [x["n"] for x in r] == ["50", "200"]
    assert all(float(x["ks_distance"]) < float(x["ks_critical_1pct"]) for x in r)


def test_converge_supercritical(capsys):
    code, out, _ = run_cli(capsys, "converge", "--lambda", "0.5", "--n-list", "200,400",
                           "--replicas", "1000")
    assert code == 0
    assert all(float(x["p_large_outbreak"]) > 0 for x in rows(out))


@pytest.mark.parametrize("bad", ["", "400,200", "a,b", "0,5"])
def test_converge_bad_n_list(capsys, bad):
    code, _, _ = run_cli(capsys, "converge", "--lambda", "0.2", "--n-list", bad)
    assert code == 2


@pytest.mark.parametrize("argv", [
    [], ["nope"], ["ba-sample"], ["ba-sample", "--lambda", "x"],
    ["ba-sample", "--lambda", "0.2", "--replicas", "0"],
    ["ba-sample", "--lambda", "0.2", "--seed", "-1"],
    ["ba-sample", "--lambda", "0.2", "--format", "xml"],
])
def test_usage_errors(capsys, argv):
    assert run_cli(capsys, *argv)[0] == 2


def test_domain_errors(capsys):
    assert run_cli(capsys, "ba-sample", "--lambda", "-1", "--replicas", "5")[0] == 3
    assert run_cli(capsys, "ba-sample", "--lambda", "0.2", "--root", "later")[0] == 3


def test_manifest_and_replay(capsys, tmp_path):
    out = tmp_path / "s.csv"
    code, _, _ = run_cli(capsys, "ba-sample", "--lambda", "0.2", "--replicas", "100",
                         "--seed", "11", "--out", str(out))
    assert code == 0
    manifest_path = tmp_path / "s.csv.manifest.json"
    manifest = json.loads(manifest_path.read_text())
    jsonschema.validate(manifest, schema("manifest.schema.json"))
    assert manifest["master_seed"] == 11 and manifest["replicas"] == 100
    again = tmp_path / "again.csv"
    assert run_cli(capsys, "replay", str(manifest_path), "--out", str(again))[0] == 0
    assert again.read_bytes() == out.read_bytes()


def test_replay_bad_manifest(capsys, tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{}")
    assert run_cli(capsys, "replay", str(bad))[0] == 3
    assert run_cli(capsys, "replay", str(tmp_path / "missing.json"))[0] == 3


def test_outputs_independent_of_worker_count(capsys, tmp_path, monkeypatch):
    files = []
    for workers in ("1", "3"):
        monkeypatch.setenv(THREADS_ENV, workers)
        path = tmp_path / f"r{workers}.csv"
        assert run_cli(capsys, "rumor-sample", "--n", "40", "--lambda", "0.3", "--replicas", "200",
                       "--seed", "2", "--out", str(path))[0] == 0
        files.append(path.read_bytes())
    assert files[0] == files[1]


@pytest.mark.skipif(shutil.which("assassin-sim") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["assassin-sim", "stability", "--lambda", "0.2"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("verdict=Stable")
    proc = subprocess.run([sys.executable, "-m", "assassin_sim.cli", "moments", "--lambda", "0.1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 2
