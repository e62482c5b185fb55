import csv
import io
import json
import math
import subprocess
import sys

import pytest

from affine_ldp.cli import EXIT_DOMAIN, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main

from conftest import fixture_path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_fixture(capsys):
    code, out, _ = run(["validate", "--model", fixture_path("lattice")], capsys)
    doc = json.loads(out)
    assert code == EXIT_OK and doc["result"]["passed"]
    assert len(doc["manifest"]["model_hash"]) == 64


def test_validate_violation(tmp_path, capsys):
    text = fixture_path("lattice").read_text().replace("b = [6.0,", "b = [0.0,")
    bad = tmp_path / "b0.toml"
    bad.write_text(text)
    code, out, _ = run(["validate", "--model", bad], capsys)
    assert code == EXIT_DOMAIN
    assert any(v["clause"] == "II" for v in json.loads(out)["result"]["violations"])


def test_malformed_model(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("d = [\n")
    code, _, err = run(["validate", "--model", bad], capsys)
    assert code == EXIT_INPUT and "bad.toml" in err


def test_saddle(capsys):
    code, out, _ = run(["saddle", "--model", fixture_path("lattice"), "--level", 25], capsys)
    res = json.loads(out)["result"]
    assert code == EXIT_OK and abs(res["eta_derivs"][1] - 25) < 1e-10 * 25


def test_level_below_mean(capsys):
    code, _, _ = run(["saddle", "--model", fixture_path("lattice"), "--level", 1], capsys)
    assert code == EXIT_DOMAIN


def test_numerical_failure(capsys):
    code, _, err = run(["tilt", "--model", fixture_path("lattice"), "--theta", 10], capsys)
    assert code == EXIT_NUMERIC and "BeyondCriticalTilt" in err


def test_tilt_and_psi(capsys):
    code, out, _ = run(["tilt", "--model", fixture_path("exponential"), "--theta", 0.02], capsys)
    assert code == EXIT_OK and len(json.loads(out)["result"]["eta_derivs"]) == 5
    code, out, _ = run(["psi", "--model", fixture_path("lattice"), "--theta", 0.05,
                        "--method", "ode"], capsys)
    res = json.loads(out)["result"]
    assert code == EXIT_OK and res["method"] == "ode" and res["ode_tol"] == 1e-10


def test_approx_order_zero_identity(capsys):
    code, out, _ = run(["approx", "--model", fixture_path("poisson"), "--level", 2,
                        "--time", 100, "--order", 0], capsys)
    res = json.loads(out)["result"]
    lead = math.exp(-100 * res["rate"]) / math.sqrt(2 * math.pi * 100 * res["eta2"])
    assert res["value"] == lead * res["coefficients"][0]
    assert res["csv_row"].split(",")[2] == "lattice"


def test_approx_payoffs(capsys):
    for payoff in ("prob", "plus", "power:0.5"):
        code, out, _ = run(["approx", "--model", fixture_path("exponential"), "--level", 25,
                            "--time", 100, "--payoff", payoff], capsys)
        assert code == EXIT_OK and json.loads(out)["result"]["regime"] == "nonlattice"


def test_bad_payoff(capsys):
    with pytest.raises(SystemExit) as info:
        main(["approx", "--model", str(fixture_path("poisson")), "--level", "2", "--time", "1",
              "--payoff", "cube"])
    assert info.value.code == EXIT_INPUT


def test_mc_smoke(capsys):
    code, out, _ = run(["mc", "--model", fixture_path("lattice"), "--level", 25, "--time", 10,
                        "--paths", 100, "--sampler", "is", "--seed", 1], capsys)
    res = json.loads(out)["result"]
    assert code == EXIT_OK and res["stderr"] > 0 and res["paths"] == 100


def read_table(text):
    lines = text.splitlines()
    assert lines[0].startswith("# manifest: ")
    json.loads(lines[0][len("# manifest: "):])
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_table_spot_values(capsys):
    code, out, _ = run(["table", "--model", fixture_path("lattice"), "--levels", 30,
                        "--times", 200, "--frozen-tilt"], capsys)
    assert code == EXIT_OK and read_table(out)[0]["P_order1"] == "2.95E-56"
    code, out, _ = run(["table", "--model", fixture_path("exponential"), "--levels", 25,
                        "--times", 300, "--skew-weight", 1.0], capsys)
    assert read_table(out)[0]["P_order1"] == "3.37E-18"


def test_table_empty_times(capsys):
    code, out, _ = run(["table", "--model", fixture_path("lattice"), "--times", ""], capsys)
    assert code == EXIT_OK and read_table(out) == []


def test_table_relative_errors_recompute(capsys, tmp_path):
    js = tmp_path / "rows.json"
    code, out, _ = run(["table", "--model", fixture_path("lattice"), "--levels", 25,
                        "--times", "10,20", "--paths", 200, "--seed", 5, "--json", js], capsys)
    rows = read_table(out)
    assert len(rows) == 2
    for row in rows:
        for tag in ("P", "E"):
            approx, est = float(row[f"{tag}_order1"]), float(row[f"{tag}_IS"])
            assert float(row[f"{tag}_RE_pct"]) == pytest.approx(100 * (approx - est) / est, abs=1.5)
    full = json.loads(js.read_text())["rows"]
    assert full[0]["P_RE_pct"] == pytest.approx(
        100 * (full[0]["P_order1"] - full[0]["P_IS"]) / full[0]["P_IS"])


def test_rerun_is_deterministic(capsys):
    argv = ["mc", "--model", fixture_path("poisson"), "--level", 2, "--time", 10,
            "--paths", 50, "--seed", 9]
    _, a, _ = run(argv, capsys)
    _, b, _ = run(argv, capsys)
    ra, rb = json.loads(a)["result"], json.loads(b)["result"]
    assert ra["mean"] == rb["mean"] and ra["stderr"] == rb["stderr"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "affine_ldp", "validate", "--model",
                           str(fixture_path("poisson"))], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["result"]["passed"]
