import csv
import sys

import pytest
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from capgap.cli import main
from capgap.config import ExperimentConfig, config_to_dict, load_config, parse_config, write_config
from capgap.errors import ConfigurationError


def _doc():
    return config_to_dict(ExperimentConfig())


def test_round_trip(tmp_path):
    path = tmp_path / "c.toml"
    cfg = ExperimentConfig()
    write_config(cfg, path)
    assert load_config(path) == cfg
    with open(path, "rb") as fh:
        assert tomllib.load(fh) == _doc()


def test_unknown_key_rejected():
    doc = _doc()
    doc["sim"]["rounds"] = 3
    with pytest.raises(ConfigurationError, match="sim.rounds"):
        parse_config(doc)
    doc = _doc()
    doc["extras"] = {"a": 1}
    with pytest.raises(ConfigurationError, match="extras"):
        parse_config(doc)


def test_missing_key_named():
    doc = _doc()
    del doc["mechanism"]["omega2"]
    with pytest.raises(ConfigurationError, match="mechanism.omega2"):
        parse_config(doc)


def test_schema_version_pinned():
    doc = _doc()
    doc["meta"]["schema_version"] = 2
    with pytest.raises(ConfigurationError, match="schema_version"):
        parse_config(doc)


def test_type_and_value_errors():
    doc = _doc()
    doc["grid"]["eta1"] = "ten"
    with pytest.raises(ConfigurationError, match="grid.eta1"):
        parse_config(doc)
    doc = _doc()
    doc["incircle"]["lam"] = 0.0
    with pytest.raises(ConfigurationError):
        parse_config(doc)
    doc = _doc()
    doc["agents"]["aspiration"] = "high"
    with pytest.raises(ConfigurationError):
        parse_config(doc)


def test_aspiration_and_window():
    doc = _doc()
    doc["agents"]["aspiration"] = -2.0
    doc["agents"]["window"] = 30
    cfg = parse_config(doc)
    assert cfg.sim.aspiration == -2.0 and cfg.sim.window == 30


def _write(tmp_path, doc):
    path = tmp_path / "c.toml"
    with open(path, "wb") as fh:
        tomli_w.dump(doc, fh)
    return str(path)


def _small(tmp_path):
    doc = _doc()
    doc["sim"].update(R=5, Q=10, repeats=2)
    doc["incircle"].update(grid_resolution=3, time_resolution=20)
    return _write(tmp_path, doc)


def test_cli_init_config(tmp_path):
    path = tmp_path / "d.toml"
    assert main(["init-config", "--out", str(path)]) == 0
    assert load_config(path) == ExperimentConfig()


def test_cli_simulate(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", _small(tmp_path), "--out", str(out), "--seed", "3"]) == 0
    text = capsys.readouterr().out
    assert "final p_e mean" in text and "upsilon_m" in text
    with open(out / "trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 15
    assert (out / "aggregate.csv").exists()


def test_cli_simulate_repeats_override(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", _small(tmp_path), "--out", str(out), "--repeats", "1"]) == 0
    with open(out / "trace.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 15


def test_cli_missing_key(tmp_path, capsys):
    doc = _doc()
    del doc["sim"]["Q"]
    assert main(["simulate", "--config", _write(tmp_path, doc)]) == 2
    assert "sim.Q" in capsys.readouterr().err


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["simulate", "--config", _small(tmp_path), "--out", str(blocker / "sub")]) == 3


def test_cli_zd_range(capsys):
    assert main(["zd-range"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == ["e_min,e_max", "2.5,5.9"]


def test_cli_zd_check(tmp_path, capsys):
    out = tmp_path / "res.csv"
    assert main(["zd-check", "--target", "4.2", "--policies", "100", "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 100
    assert max(float(r["residual"]) for r in rows) < 1e-9


def test_cli_zd_infeasible(capsys):
    assert main(["zd-check", "--target", "7.0"]) == 1
    err = capsys.readouterr().err
    assert "[2.5, 5.9]" in err


def test_cli_verify_supermodular(tmp_path, capsys):
    cfg = _small(tmp_path)
    out = tmp_path / "sm.csv"
    assert main(["verify-supermodular", "--config", cfg, "--side", "user", "--out", str(out)]) == 0
    assert main(["verify-supermodular", "--config", cfg, "--side", "miner", "--out", str(out)]) == 1
    assert "violation" in capsys.readouterr().err
    with open(out, newline="") as fh:
        header = next(csv.reader(fh))
    assert header[:2] == ["side", "profile"]


def test_cli_zero_rate_rejected(tmp_path):
    doc = _doc()
    doc["incircle"]["lam"] = 0.0
    assert main(["verify-supermodular", "--config", _write(tmp_path, doc)]) == 2


@pytest.mark.parametrize("cost, expect_gap", [(0.0, False), (8.0, True)])
def test_cli_gap_profile(tmp_path, capsys, cost, expect_gap):
    doc = _doc()
    doc["incircle"]["cost_rate"] = cost
    out = tmp_path / "gap.csv"
    assert main(["gap-profile", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert any(r["in_gap"] == "True" for r in rows) == expect_gap
