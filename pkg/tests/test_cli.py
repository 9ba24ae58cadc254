import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from mcres import cli
from mcres.config import ConfigError, parse_complex, parse_matrix, parse_omegas
from mcres.errors import NotConverged

ROOT = Path(__file__).resolve().parents[1]
STRIP = ROOT / "configs" / "strip_rank1.yaml"


def run(args, capsys):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_cfg(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def base_raw():
    return yaml.safe_load(STRIP.read_text())


def test_parsers():
    assert parse_complex([1, -2]) == 1 - 2j
    assert parse_complex(3) == 3
    with pytest.raises(ConfigError):
        parse_complex([1, 2, 3])
    assert parse_matrix([[1, [0, 1]], [0, 2]])[0, 1] == 1j
    assert parse_matrix({"diag_power": 2}, 3)[2, 2] == pytest.approx(1 / 9)
    om = parse_omegas({"sweep": {"start": 1e-1, "stop": 1e-3, "count": 3}})
    assert [abs(w) for w in om] == pytest.approx([1e-1, 1e-2, 1e-3])
    assert parse_omegas([{"modulus": 2, "argument": 3.141592653589793 / 2}])[0] == pytest.approx(2j)


def test_spectrum_strip(capsys):
    code, out, _ = run(["spectrum", STRIP], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["bands"] == [[[1.0, 0.0], [5.0, 0.0]], [[3.0, 0.0], [7.0, 0.0]]]


def test_spectrum_ring_and_degenerate(tmp_path, capsys):
    raw = base_raw()
    raw["model"] = {"preset": "ring", "params": {"m": 4, "g": 0.0}}
    raw["potential"]["terms"][0]["block"] = "identity"
    code, out, _ = run(["spectrum", write_cfg(tmp_path, raw, "ring.yaml")], capsys)
    lows = sorted(b[0][0] for b in json.loads(out)["bands"])
    assert code == 0 and lows == pytest.approx([-2, 0, 2], abs=1e-12)
    raw["model"] = {"matrix": [[0, 0], [0, 4]]}
    raw["potential"]["terms"][0]["block"] = "identity"
    code, out, _ = run(["spectrum", write_cfg(tmp_path, raw, "deg.yaml")], capsys)
    th = {t["id"]: t["degenerate"] for t in json.loads(out)["thresholds"]}
    assert th["L1@4"] and th["R0@4"] and not th["L0@0"]


def test_zero_omega_gives_empty_csv(capsys):
    code, out, _ = run(["resonances", STRIP, "--omega", "0"], capsys)
    assert code == 0
    assert out == ",".join(cli.CSV_COLUMNS) + "\n"


def test_rank_one_record(tmp_path, capsys):
    report = tmp_path / "r.json"
    code, out, _ = run(["resonances", STRIP, "--report", report], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 1
    assert list(rows[0]) == list(cli.CSV_COLUMNS)
    k = complex(float(rows[0]["k_re"]), float(rows[0]["k_im"]))
    assert abs(k + 0.0025j) < 1e-4
    rep = json.loads(report.read_text())
    assert json.loads(cli.dump_report(rep)) == rep


def test_overrides_and_plot_data(tmp_path, capsys):
    plots = tmp_path / "plots"
    code, out, _ = run(["resonances", STRIP, "--omega", "0.02", "--set", "seed=3",
                        "--emit-plot-data", plots, "--csv", tmp_path / "o.csv"], capsys)
    assert code == 0 and out == ""
    assert (plots / "resonances_k.csv").exists() and (plots / "resonances_z.csv").exists()
    rows = list(csv.DictReader((tmp_path / "o.csv").open()))
    assert float(rows[0]["omega_re"]) == 0.02


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(["resonances", tmp_path / "missing.yaml"], capsys)[0] == 2
    raw = base_raw()
    raw["case"] = "C"
    assert run(["resonances", write_cfg(tmp_path, raw)], capsys)[0] == 2
    raw = base_raw()
    raw["threshold"]["value"] = 2.0
    assert run(["resonances", write_cfg(tmp_path, raw)], capsys)[0] == 2
    assert run(["accumulate", STRIP], capsys)[0] == 2


def test_numerical_failure_exit_3(monkeypatch, capsys):
    def boom(cfg):
        raise NotConverged("forced")
    monkeypatch.setitem(cli.COMMANDS, "resonances", boom)
    assert run(["resonances", STRIP], capsys)[0] == 3


def test_crosscheck_passes_and_negative_control_fails(tmp_path, capsys):
    base = ["crosscheck", STRIP, "--set", "crosscheck.points=4"]
    code, _, _ = run(base + ["--report", tmp_path / "ok.json"], capsys)
    rep = json.loads((tmp_path / "ok.json").read_text())
    assert code == 0 and all(c["passed"] for c in rep["checks"].values())
    code, _, _ = run(base + ["--set", "crosscheck.corrupt_branch=true", "--report", tmp_path / "bad.json"], capsys)
    rep = json.loads((tmp_path / "bad.json").read_text())
    assert code == 1 and not rep["checks"]["continuation"]["passed"]


def test_crosscheck_zero_omega_passes(capsys):
    code, _, _ = run(["crosscheck", STRIP, "--omega", "0", "--set", "crosscheck.points=2"], capsys)
    assert code == 0


def test_clusters_command(tmp_path, capsys):
    code, _, _ = run(["clusters", ROOT / "configs" / "diag113_clusters.yaml", "--report", tmp_path / "c.json"], capsys)
    rep = json.loads((tmp_path / "c.json").read_text())
    assert code == 0
    assert [e["slope"] for e in rep["regression"]] == pytest.approx([2.0, 2.0], abs=0.2)
    assert all(r["report"]["counts"] == [1, 1] for r in rep["per_omega"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mcres", "spectrum", str(STRIP)], capture_output=True, text=True)
    assert res.returncode == 0 and '"bands"' in res.stdout
