import csv
import json

import numpy as np
import pytest

from superspin import cli


def write(tmp_path, cfg, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)



@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("CONFIG", "OUT", "SEED", "WORKERS"):
        monkeypatch.delenv(cli.ENV_PREFIX + key, raising=False)


SIM = {"N": 6, "spacing": "2/3", "t_max": 4, "n_samples": 21}


def test_simulate_writes_series_and_manifest(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", write(tmp_path, SIM), "--out", str(out)]) == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["config"]["dt"] == cli.DEFAULTS["dt"]
    with open(out / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["t", "R", "Sz"]
    assert len(rows) == 22
    assert float(rows[1][1]) == pytest.approx(6.0)
    emission = np.loadtxt(out / "emission.csv", delimiter=",", skiprows=1)
    assert emission[:, 3].max() == 1.0
    np.testing.assert_allclose(emission[:, 2], emission[:, 1] / 6)


def test_same_seed_gives_identical_bytes(tmp_path):
    cfg = {"N": 3, "spacing": "2/3", "t_max": 2, "n_samples": 5, "trajectories": {"n_traj": 20}}
    path = write(tmp_path, cfg)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert cli.main(["trajectories", "--config", path, "--out", str(out), "--seed", "5"]) == 0
        outs.append((out / "series.csv").read_bytes())
    assert outs[0] == outs[1]
    out = tmp_path / "o3"
    cli.main(["trajectories", "--config", path, "--out", str(out), "--seed", "6"])
    assert (out / "series.csv").read_bytes() != outs[0]


def test_csv_values_roundtrip_exactly(tmp_path):
    out = tmp_path / "out"
    cli.main(["simulate", "--config", write(tmp_path, SIM), "--out", str(out)])
    lines = (out / "series.csv").read_text().splitlines()[1:]
    data = np.loadtxt(out / "series.csv", delimiter=",", skiprows=1)
    # every written value parses back to a float that formats to the same text
    assert [",".join("%.17g" % x for x in row) for row in data] == lines


@pytest.mark.parametrize("cfg", [
    {"N": 6, "spacing": "2/3", "bogus": 1},
    {"N": 6, "spacing": "two thirds"},
    {"N": 6, "kd": 1.0},
    {"N": 0, "spacing": "1/1"},
    {"N": 6, "spacing": "2/3", "analysis": {"unknown": True}},
])
def test_invalid_config_exits_2(tmp_path, cfg, capsys):
    assert cli.main(["simulate", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_unreadable_config_exits_2(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["simulate"]) == 2


def test_env_overrides_and_precedence(tmp_path, monkeypatch):
    cfg = dict(SIM, seed=1)
    monkeypatch.setenv("SUPERSPIN_CONFIG", write(tmp_path, cfg))
    monkeypatch.setenv("SUPERSPIN_OUT", str(tmp_path / "env_out"))
    monkeypatch.setenv("SUPERSPIN_SEED", "9")
    assert cli.main(["simulate"]) == 0
    manifest = json.loads((tmp_path / "env_out" / "manifest.json").read_text())
    assert manifest["seed"] == 9
    # a flag beats the environment
    assert cli.main(["simulate", "--seed", "4", "--out", str(tmp_path / "flag_out")]) == 0
    manifest = json.loads((tmp_path / "flag_out" / "manifest.json").read_text())
    assert manifest["seed"] == 4


@pytest.mark.parametrize("value", ["-1", "abc", str(2**64)])
def test_bad_seed_exits_2(tmp_path, monkeypatch, value):
    monkeypatch.setenv("SUPERSPIN_SEED", value)
    assert cli.main(["simulate", "--config", write(tmp_path, SIM), "--out", str(tmp_path / "o")]) == 2


def test_oracle_tolerance_breach_exits_3(tmp_path, capsys):
    cfg = {"N": 4, "spacing": "1/2", "t_max": 2, "n_samples": 5, "oracle": {"tolerance": 1e-300}}
    assert cli.main(["oracle-compare", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3
    assert "numerical failure" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] != "ok"


def test_oracle_compare_passes(tmp_path):
    cfg = {"N": 4, "spacing": "1/2", "t_max": 5, "n_samples": 11}
    out = tmp_path / "o"
    assert cli.main(["oracle-compare", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert (out / "series_oracle.csv").exists()


def test_list_presets(capsys):
    assert cli.main(["list-presets"]) == 0
    text = capsys.readouterr().out
    for name in ("fig2a", "fig2b", "fig3"):
        assert name in text


def test_unknown_preset_exits_2(tmp_path):
    assert cli.main(["preset", "nope", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("command,cfg,artifact", [
    ("liealg", {"N": 12, "kd": 1.0}, "report.json"),
    ("darkstates", {"N": 6, "spacing": "2/3", "darkstates": {"decay_bound_m": [1, 2, 3]}}, "report.json"),
    ("disorder-scan", {"N": 6, "spacing": "2/3", "t_max": 3, "n_samples": 11,
                       "disorder": {"sigmas": [0.0, 0.05], "n_realizations": 3}}, "disorder.csv"),
])
def test_other_subcommands(tmp_path, command, cfg, artifact):
    out = tmp_path / "o"
    assert cli.main([command, "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert (out / artifact).exists()


def test_workers_do_not_change_results(tmp_path):
    cfg = {"N": 6, "spacing": "2/3", "t_max": 3, "n_samples": 11,
           "disorder": {"sigmas": [0.03], "n_realizations": 4}}
    path = write(tmp_path, cfg)
    for w in ("1", "2"):
        assert cli.main(["disorder-scan", "--config", path, "--out", str(tmp_path / w), "--workers", w]) == 0
    assert (tmp_path / "1" / "disorder.csv").read_bytes() == (tmp_path / "2" / "disorder.csv").read_bytes()
