import json
import os
import subprocess
import sys

import pytest

from wavegauge import cli
from wavegauge.errors import ConfigurationError


def write_config(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_defaults_validate():
    cfg = cli.load_config()
    assert cfg["window"] == {"Tstar": 2.2, "t1": 2.5, "t2": 3.0}
    assert cfg["grid"]["T"] == 5.5
    assert cli.load_config(nx=51, seed=3)["grid"]["nx"] == 51


@pytest.mark.parametrize("window,needle", [
    ({"Tstar": 2.6, "t1": 2.5, "t2": 3.0}, "Tstar < t1"),
    ({"Tstar": 1.5, "t1": 2.5, "t2": 3.0}, "2*diam"),
    ({"Tstar": 2.2, "t1": 2.5, "t2": 3.4}, "T - Tstar"),
])
def test_malformed_window_exits_2(tmp_path, capsys, window, needle):
    path = write_config(tmp_path, {"window": window})
    assert cli.main(["suite", "--suite", "thm1_2", "--config", path, "--out", str(tmp_path)]) == 2
    assert needle in capsys.readouterr().err


def test_bad_configs(tmp_path):
    with pytest.raises(ConfigurationError, match="unknown config key 'grid.size'"):
        cli.load_config(write_config(tmp_path, {"grid": {"size": 3}}))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["forward", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["suite", "--suite", "nope", "--out", str(tmp_path)]) == 2
    assert cli.main(["forward", "--nx", "8", "--out", str(tmp_path), "--quiet"]) == 2


def test_outputs_are_deterministic_and_named_by_hash(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["linearize", "--out", str(out), "--quiet"]) == 0
    h = cli.config_hash(cli.load_config())
    names = sorted(os.listdir(a))
    assert names == [f"linearize-{h}.csv", f"linearize-{h}.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    manifest = json.loads((a / names[1]).read_text())
    assert manifest["config_hash"] == h
    assert manifest["passed"] is True
    assert [c["name"] for c in manifest["checks"]] == [f"oracle_k{k}_relative_error" for k in (1, 2, 3)]
    header = (a / names[0]).read_text().splitlines()[0]
    assert header == "order,relative_error,richardson_gap,flagged,message"


def test_seed_changes_hash(tmp_path):
    assert cli.config_hash(cli.load_config(seed=1)) != cli.config_hash(cli.load_config(seed=2))


def test_check_failure_exits_1(tmp_path):
    path = write_config(tmp_path, {"forward": {"nxs": [51, 61]}})
    assert cli.main(["forward", "--config", path, "--out", str(tmp_path), "--quiet"]) == 1


def test_solver_failure_exits_3(tmp_path, capsys):
    path = write_config(tmp_path, {"spec": {"scale": 8.0}, "battery": {"amplitude": 12.8}})
    assert cli.main(["forward", "--config", path, "--out", str(tmp_path), "--quiet"]) == 3
    assert "well-posedness" in capsys.readouterr().err


def test_suite_case2_passes(tmp_path):
    assert cli.main(["suite", "--suite", "cor1_5_case2", "--out", str(tmp_path), "--quiet"]) == 0
    files = os.listdir(tmp_path)
    assert not any(f.startswith(".tmp-") for f in files)
    man = json.loads(next((tmp_path / f).read_text() for f in files if f.endswith(".json")))
    assert man["passed"] and man["command"] == "suite-cor1_5_case2"


@pytest.mark.parametrize("command", ["dtn", "gauge-check", "probe-study"])
def test_commands_write_tables(tmp_path, command):
    assert cli.main([command, "--out", str(tmp_path), "--quiet"]) == 0
    csvs = [f for f in os.listdir(tmp_path) if f.endswith(".csv")]
    assert len(csvs) == 1
    assert len((tmp_path / csvs[0]).read_text().splitlines()) > 1


def test_gauge_check_rejects_touching_bump(tmp_path):
    path = write_config(tmp_path, {"gauge": {"halfwidth": 0.5}})
    assert cli.main(["gauge-check", "--config", path, "--out", str(tmp_path), "--quiet"]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "wavegauge.cli", "suite", "--suite", "cor1_4",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "PASS cor1_4.linear_raw_q_normalized" in proc.stdout
