import json
import subprocess
import sys

import jsonschema
import pytest

from oseenlab.cli import main
from oseenlab.scenarios import SCENARIOS, CONFIG_SCHEMA, ScenarioConfig, ConfigError

TINY = {"grid": {"N_xi": 64, "N_z": 2}, "tau_end": 0.2}


def _cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(kw))
    return str(p)


def test_list_table(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    names = [ln.split()[0] for ln in out.splitlines() if not ln.startswith(" ")]
    assert names == list(SCENARIOS) and len(names) == 8
    assert "semigroup-convergence" in out


def test_list_json(capsys):
    assert main(["list", "--json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert len(d["scenarios"]) == 8
    jsonschema.validate({"scenario": "attraction", "m": 3}, d["config_schema"])
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"scenario": "nope"}, d["config_schema"])


def test_bad_weight(tmp_path, capsys):
    code = main(["simulate", "--config", _cfg(tmp_path, scenario="oseen-stationarity", m=1.5),
                 "--output-dir", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "invalid-config" and "m must exceed 2" in err["message"]


@pytest.mark.parametrize("d", [{"scenario": "nope"}, {"scenario": "attraction", "bogus": 1},
                               {"scenario": "attraction", "controls": {"dt": 0.5}}])
def test_config_errors(d):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(d)


def test_usage_error():
    assert main(["verify"]) == 2
    assert main(["simulate", "--config", "/nonexistent.json"]) == 2


def test_stationarity_run(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["simulate", "--config", _cfg(tmp_path, scenario="oseen-stationarity", **TINY),
                 "--output-dir", str(out), "--seed", "5"])
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    rep = json.loads((out / "report.json").read_text())
    assert man["status"] == 0 and man["seed"] == 5 and len(man["config_hash"]) >= 10
    assert "versions" in man
    assert rep["report"]["drift_core"] < 1e-6
    assert "[PASS]" in capsys.readouterr().out


def test_deterministic(tmp_path):
    outs = []
    for k in range(2):
        o = tmp_path / f"o{k}"
        assert main(["simulate", "--config",
                     _cfg(tmp_path, scenario="2d3d-consistency", seed=3, **TINY),
                     "--output-dir", str(o)]) == 0
        outs.append(o)
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_failure_status(tmp_path):
    # an impossible tolerance makes a check fail, giving status 1 and a failure report
    o = tmp_path / "o"
    code = main(["simulate", "--config",
                 _cfg(tmp_path, scenario="oseen-stationarity", params={"tol": 0.0}, **TINY),
                 "--output-dir", str(o)])
    assert code == 1
    assert json.loads((o / "failure.json").read_text())["failures"]


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("OSEENLAB_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["simulate", "--config",
                 _cfg(tmp_path, scenario="oseen-stationarity", **TINY)]) == 0
    assert any((tmp_path / "root").iterdir())


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "oseenlab.cli", "list"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "attraction" in r.stdout
