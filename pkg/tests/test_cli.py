import json
import subprocess
import sys

import pytest

from msilab.cli import main


@pytest.fixture
def files(tmp_path, plant):
    (tmp_path / "plant.json").write_text(json.dumps(plant.to_json()))
    (tmp_path / "bd.json").write_text(json.dumps({"Bd": plant.Bd.tolist()}))
    return tmp_path


def _gen(files, N=50, dbar=0.0):
    out = files / "data.csv"
    rc = main(["gen-data", "--plant", str(files / "plant.json"), "--n-samples", str(N), "--dbar", str(dbar),
               "--seed", "1", "--out", str(out)])
    assert rc == 0
    return out


def test_gen_data_format(files):
    lines = _gen(files, N=10).read_text().splitlines()
    assert lines[0] == "t,x1,x2,u1" and len(lines) == 12 and lines[-1].endswith(",")


def test_msi_analyze_report(files):
    data = _gen(files)
    out = files / "report.json"
    rc = main(["msi", "--method", "io", "--mode", "analyze", "--data", str(data), "--dbar", "0", "--bd",
               str(files / "bd.json"), "--gain", "-3.75,-11.5", "--max-h", "14", "--out", str(out)])
    rep = json.loads(out.read_text())
    assert rc == 0 and rep["schema"] == 1 and rep["h_msi"] == 12 and rep["status"] == "certified"


def test_msi_no_certificate_exit_code(files):
    data = _gen(files)
    rc = main(["msi", "--method", "io", "--data", str(data), "--bd", str(files / "bd.json"),
               "--gain", "10,10", "--max-h", "3", "--out", str(files / "r.json")])
    assert rc == 2


def test_input_errors_exit_3(files, capsys):
    data = _gen(files)
    assert main(["msi", "--method", "io", "--data", str(data), "--gain", "-3.75,-11.5"]) == 3  # no Bd
    assert main(["msi", "--method", "io", "--data", str(files / "missing.csv"), "--bd", str(files / "bd.json"),
                 "--gain", "1,1"]) == 3
    assert main(["msi", "--method", "io", "--data", str(data), "--bd", str(files / "bd.json"),
                 "--gain", "1,1", "--max-h", "0"]) == 3
    assert main(["msi", "--method", "io", "--data", str(data), "--bd", str(files / "bd.json"),
                 "--gain", "1,1,1"]) == 3
    assert main(["msi", "--method", "io", "--data", str(data), "--bd", str(files / "bd.json"),
                 "--gain", "1,1", "--reuse-lift", str(files / "s.json")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["msi", "--method", "bogus"])
    assert exc.value.code == 3


def test_switched_reuse_lift(files):
    data = _gen(files, N=20)
    state = files / "state.json"
    args = ["msi", "--method", "switched", "--data", str(data), "--bd", str(files / "bd.json"),
            "--gain", "-3.75,-11.5", "--max-h", "3", "--reuse-lift", str(state), "--multiplier", "quadratic",
            "--out", str(files / "r.json")]
    assert main(args) == 0 and state.exists()
    assert json.loads(state.read_text())["kind"] == "quadratic"
    assert main(args) == 0


def test_model_based_and_design(files):
    out = files / "m.json"
    assert main(["msi", "--method", "switched-model", "--plant", str(files / "plant.json"), "--gain",
                 "-3.75,-11.5", "--max-h", "4", "--strategy", "linear", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["h_msi"] == 4
    data = _gen(files, dbar=0.001)
    assert main(["msi", "--method", "io", "--mode", "design", "--data", str(data), "--dbar", "0.001",
                 "--bd", str(files / "bd.json"), "--max-h", "4", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["mode"] == "design" and len(rep["K"][0]) == 2


def test_falsify_command(files):
    out = files / "w.json"
    assert main(["falsify", "--plant", str(files / "plant.json"), "--gain", "-3.75,-11.5", "--hbar", "24",
                 "--depth", "2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["witness"]["sequence"] == [24]
    assert main(["falsify", "--plant", str(files / "plant.json"), "--gain", "-3.75,-11.5", "--hbar", "0"]) == 3


def test_reproduce_command(files, capsys):
    cfg = files / "cfg.toml"
    cfg.write_text("[reproduce.table1]\nh_bar = 2\n")
    assert main(["reproduce", "table1", "--out-dir", str(files / "res"), "--config", str(cfg)]) == 0
    assert (files / "res" / "table1.csv").exists()


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "msilab.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-data" in r.stdout
