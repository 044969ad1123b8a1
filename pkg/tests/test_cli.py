import json
import math

import pytest

from crystaldislo.cli import main
from crystaldislo.experiments import ConfigError, schedule, to_csv, validate_config


def write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, {"experiment": "screw-scaling"})]) == 0
    assert json.loads(capsys.readouterr().out) == {"ok": True, "experiment": "screw-scaling"}


@pytest.mark.parametrize("cfg, field", [
    ({"experiment": "screw-scaling", "m": 5}, "m"),
    ({"experiment": "elastic-limit", "eps": [0.1, 0.2]}, "eps"),
    ({"experiment": "elastic-limit", "bogus": 1}, "bogus"),
    ({"experiment": "nope"}, "experiment"),
    ({"experiment": "mollified", "crystal": {"kind": "fcc"}}, "crystal.kind"),
    ({"experiment": "screw-scaling", "schedule": {"kind": "cubic"}}, "schedule.kind"),
    ({"experiment": "prelog", "energy": {"kind": "isotropic", "nu": 0.5}}, "energy.nu"),
])
def test_validate_rejects(tmp_path, capsys, cfg, field):
    assert main(["validate", "--config", write(tmp_path, cfg)]) == 2
    assert f"error: {field}:" in capsys.readouterr().err


def test_m_message_names_condition():
    with pytest.raises(ConfigError) as e:
        validate_config({"experiment": "screw-scaling", "m": 10})
    assert "m >= k*" in str(e.value) and "10.4868" in str(e.value)


def test_bad_json_and_missing_file(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, "{\"experiment\": ")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 2


def test_log_schedule_ratio_decreases():
    rat = []
    for e in (1 / 16, 1 / 32, 1 / 64, 1 / 1024):
        k, a = schedule(e, {"kind": "log"})
        assert 0 < a <= 0.25
        rat.append(math.log(1 / (a * k)) / math.log(1 / e))
    assert all(r1 < r0 for r0, r1 in zip(rat, rat[1:]))
    # once alpha = eps^b the power law pins the ratio at a + b instead of 0
    for e in (1e-8, 1e-12):
        k, a = schedule(e, {"kind": "power"})
        assert math.log(1 / (a * k)) / math.log(1 / e) == pytest.approx(0.3)


def test_psi_isotropic(tmp_path, capsys):
    cfg = write(tmp_path, {"experiment": "psi-table", "energy": {"kind": "isotropic"}})
    assert main(["psi", "--b", "0,0,1", "--t", "0,0,1", "--config", cfg]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["psi"] == pytest.approx(1 / (4 * math.pi), rel=1e-6)


def test_psi_default_spring_tensor(capsys):
    assert main(["psi", "--b", "0 0 1", "--t", "0 0 1"]) == 0
    # antiplane screw along a cube axis: C44 / (4 pi) with C44 = 12
    assert json.loads(capsys.readouterr().out)["psi"] == pytest.approx(12 / (4 * math.pi), rel=1e-8)
    assert main(["psi", "--b", "0 0 1", "--t", "0 0 0"]) == 2
    with pytest.raises(SystemExit):
        main(["psi", "--b", "1,2", "--t", "0,0,1"])


def test_run_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, {"experiment": "coercivity"})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--seed", "3"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--seed", "3", "--threads", "2"]) == 0
    assert (a / "coercivity.csv").read_bytes() == (b / "coercivity.csv").read_bytes()
    s = json.loads((a / "summary.json").read_text())
    assert s["passed"] and s["seed"] == 3
    assert "[PASS] criterion 3" in capsys.readouterr().out


def test_run_prelog_outputs(tmp_path):
    cfg = write(tmp_path, {"experiment": "prelog"})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "prelog.csv").read_text().splitlines()
    assert lines[0] == "rho,increment,psi_L_ln2,rel_err" and len(lines) == 4


def test_csv_quoting():
    text = to_csv([{"a": 1.5, "b": [1, 2]}, {"a": None, "c": "x,y"}])
    assert text == 'a,b,c\r\n1.5,"[1, 2]",\r\n,,"x,y"\r\n'
