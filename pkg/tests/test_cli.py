import csv
import io
import json
import subprocess
import sys

import pytest

from rssreflect.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_threshold_anchor(capsys):
    code, out, _ = run(capsys, "threshold", "--C", "16", "--sigma", "1", "--pf", "6e-6")
    assert code == 0
    assert rows(out)[0]["threshold_db2"] == "53.6117"


def test_threshold_list_and_json(capsys):
    code, out, _ = run(capsys, "threshold", "--C", "16", "--sigmas", "0.16,0.19", "--format", "json")
    recs = json.loads(out)
    assert [r["threshold_db2"] for r in recs] == [1.3725, 1.9354]


def test_model_zero_gamma_column(capsys):
    code, out, _ = run(capsys, "model", "--gamma", "0", "--delta-max-m", "0.5", "--delta-step-m", "0.05")
    r = rows(out)
    assert len(r) == 11
    assert all(float(x["zeta_db"]) == 0.0 for x in r)
    assert "-0.0" not in out


def test_outputs_have_unit_headers(capsys):
    for cmd in (["energy", "--delta-max-m", "0.01"], ["pd", "--delta-max-m", "0.01"], ["roc", "--points", "3"],
                ["pdmap", "--resolution-m", "0.5"], ["plan", "--target-pd", "0.9"], ["model", "--sweep", "beta"]):
        code, out, err = run(capsys, *cmd)
        assert code == 0, err
        header = out.splitlines()[0].split(",")
        assert any(h.endswith(("_m", "_db", "_db2", "_per_m")) or h in ("pd", "pf", "feasible") for h in header)


def test_json_mirrors_csv(capsys):
    _, c, _ = run(capsys, "pd", "--delta-max-m", "0.02", "--counts", "4")
    _, j, _ = run(capsys, "pd", "--delta-max-m", "0.02", "--counts", "4", "--format", "json")
    cr, jr = rows(c), json.loads(j)
    assert len(cr) == len(jr)
    assert float(cr[2]["pd"]) == jr[2]["pd"]


def test_simulate_deterministic_files(tmp_path, capsys):
    args = ["simulate", "--seed", "7", "--trials", "3000", "--counts", "4", "--snrs", "2"]
    assert main(args + ["-o", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["-o", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_pipeline_commands_end_to_end(tmp_path, capsys):
    v1, v2, g = tmp_path / "v1.csv", tmp_path / "v2.csv", tmp_path / "g.csv"
    assert main(["synth", "--seed", "1", "--sigma", "0.15", "--duration-s", "20", "-o", str(v1)]) == 0
    assert main(["synth", "--seed", "2", "--sigma", "0.15", "--duration-s", "20", "-o", str(v2)]) == 0
    assert main(["synth", "--kind", "grid", "--seed", "3", "--sigma", "0.15", "--dwell-s", "2", "-o", str(g)]) == 0
    base, cal = tmp_path / "base.json", tmp_path / "cal.json"
    assert main(["baseline", "--trace", str(v1), "-o", str(base)]) == 0
    assert len(json.loads(base.read_text())["baseline"]) == 16
    assert main(["calibrate", "--trace", str(v2), "--baseline", str(base), "--C", "4", "-o", str(cal)]) == 0
    assert json.loads(cal.read_text())["channels"] == 4
    code, out, err = run(capsys, "detect", "--trace", str(g), "--baseline", str(base), "--calibration", str(cal), "--C", "4")
    assert code == 0, err
    r = rows(out)
    assert len(r) == 26 and r[-1]["label"] == "all"
    code, out, _ = run(capsys, "detect", "--trace", str(g), "--baseline", str(base), "--sigma", "0.15", "--windows")
    assert rows(out)[0].keys() == {"start_time_s", "label", "energy_db2", "occupied"}
    code, _, err = run(capsys, "detect", "--trace", str(g), "--baseline", str(base), "--calibration", str(cal), "--C", "16")
    assert code == 2 and json.loads(err)["error"] == "usage"


def test_config_file_and_flag_override(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "rssreflect.ini"
    cfg.write_text("[detector]\nchannels = 2\nsigma_db = 0.1328\npf = 6e-6\n")
    _, out, _ = run(capsys, "threshold", "--config", str(cfg))
    assert rows(out)[0]["threshold_db2"] == "0.4241"
    _, out, _ = run(capsys, "threshold", "--config", str(cfg), "--sigma", "1", "--C", "16")
    assert rows(out)[0]["threshold_db2"] == "53.6117"
    monkeypatch.setenv("RSSREFLECT_CONFIG_DIR", str(tmp_path))
    _, out, _ = run(capsys, "threshold")
    assert rows(out)[0]["channels"] == "2"


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[detector]\nsigma = 1\n")
    code, _, err = run(capsys, "threshold", "--config", str(cfg))
    assert code == 2
    assert "unknown config key" in json.loads(err)["message"]


@pytest.mark.parametrize(
    "argv,code",
    [
        (["threshold", "--pf", "1.5"], 1),
        (["bogus"], 2),
        (["threshold", "--C", "x"], 2),
        (["baseline"], 2),
        (["baseline", "--trace", "/nonexistent/file.csv"], 1),
    ],
)
def test_errors_are_json_records(capsys, argv, code):
    got, out, err = run(capsys, *argv)
    assert got == code
    rec = json.loads(err)
    assert set(rec) == {"error", "message"}


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "rssreflect.cli", "threshold", "--C", "16", "--sigma", "1", "--pf", "6e-6"],
        capture_output=True, text=True, check=True,
    )
    assert "53.6117" in proc.stdout
