import csv
import json

import pytest

from parksim import cli
from parksim.outputs import ARTIFACTS
from parksim.scenario import ScenarioConfig, to_text

SHORT = ScenarioConfig(sim_duration=600.0, seed=5)


@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "short.ini"
    p.write_text(to_text(SHORT))
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_artifacts(tmp_path, scenario_file, capsys):
    out = tmp_path / "r1"
    assert cli.main(["run", str(scenario_file), "--out", str(out)]) == 0
    for name in ARTIFACTS:
        assert (out / name).is_file()
    assert len(_rows(out / "frames.csv")) > 1
    assert len(_rows(out / "delays.csv")) > 1
    assert len(_rows(out / "energy.csv")) == 26
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 5 and summary["protocol"] == "csma"
    assert (out / "manifest.json").is_file()
    assert str(out / "frames.csv") in capsys.readouterr().out


def test_same_seed_same_digests(tmp_path, scenario_file):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["run", str(scenario_file), "--protocol", "iqueue", "--seed", "9", "--out", str(d)]) == 0
    for name in ARTIFACTS:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_malformed_config_exit_two_no_output(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[app]\nperiod = 10\nthreshold = 20\n[mac]\nbogus = 1\n")
    out = tmp_path / "never"
    assert cli.main(["run", str(bad), "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()
    assert "bogus" in capsys.readouterr().err


def test_invalid_values_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[app]\nperiod = 10\nthreshold = 20\n")
    out = tmp_path / "never"
    assert cli.main(["run", str(bad), "--out", str(out)]) == cli.EXIT_CONFIG
    assert "threshold exceeds period" in capsys.readouterr().err
    assert not out.exists()


def test_missing_scenario_file_exit_two(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.ini")]) == cli.EXIT_CONFIG


def test_env_var_sets_output_root(tmp_path, scenario_file, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envroot"))
    assert cli.main(["run", str(scenario_file), "--seed", "2"]) == 0
    assert (tmp_path / "envroot" / "crossroad_csma" / "run_2" / "summary.json").is_file()


def test_sweep_single_run_has_no_sd_columns(tmp_path, scenario_file):
    out = tmp_path / "sw"
    rc = cli.main(["sweep", str(scenario_file), "--protocols", "csma,tdma", "--topologies", "crossroad",
                   "--runs", "1", "--out", str(out)])
    assert rc == 0
    header = _rows(out / "pooled.csv")[0]
    assert not any(h.endswith("_sd") and h != "sensor_life_sd" for h in header)
    assert len(_rows(out / "pooled.csv")) == 3


def test_sweep_multi_run_has_sd_columns(tmp_path):
    res = cli.sweep(SHORT, ["tdma"], ["crossroad"], 2, 1, tmp_path / "sw")
    assert "delay_p50_sd" in res.table[0]
    assert res.manifest.cells["crossroad_tdma"]["status"] == "done"


def test_sweep_parallel_equals_sequential(tmp_path):
    seq = cli.sweep(SHORT, ["csma", "iqueue"], ["crossroad"], 2, 1, tmp_path / "seq")
    par = cli.sweep(SHORT, ["csma", "iqueue"], ["crossroad"], 2, 1, tmp_path / "par", parallel=2)
    assert (tmp_path / "seq" / "pooled.csv").read_bytes() == (tmp_path / "par" / "pooled.csv").read_bytes()
    for key, cell in seq.manifest.cells.items():
        for s, run in cell["runs"].items():
            assert par.manifest.cells[key]["runs"][s]["files"] == run["files"]


def test_sweep_interrupt_marks_missing(tmp_path, monkeypatch):
    real = cli.execute_run
    calls = []

    def flaky(cfg, seed, out):
        calls.append(out)
        if len(calls) == 3:
            raise KeyboardInterrupt
        return real(cfg, seed, out)

    monkeypatch.setattr(cli, "execute_run", flaky)
    res = cli.sweep(SHORT, ["csma", "tdma"], ["crossroad"], 2, 1, tmp_path / "sw")
    assert res.interrupted
    cells = res.manifest.cells
    assert cells["crossroad_csma"]["status"] == "done"
    assert cells["crossroad_tdma"]["status"] == "missing"
    assert {r["status"] for r in cells["crossroad_tdma"]["runs"].values()} == {"missing"}
    for s in ("1", "2"):
        assert (tmp_path / "sw" / "crossroad_csma" / f"run_{s}" / "summary.json").is_file()
    saved = json.loads((tmp_path / "sw" / "sweep_manifest.json").read_text())
    assert saved["cells"]["crossroad_tdma"]["status"] == "missing"


def test_sweep_failed_cell_does_not_stop_others(tmp_path, monkeypatch):
    real = cli.execute_run

    def faulty(cfg, seed, out):
        if cfg.mac.protocol == "tdma":
            raise RuntimeError("injected fault")
        return real(cfg, seed, out)

    monkeypatch.setattr(cli, "execute_run", faulty)
    res = cli.sweep(SHORT, ["tdma", "csma"], ["crossroad"], 1, 1, tmp_path / "sw")
    assert res.failed == ["crossroad_tdma"]
    assert res.manifest.cells["crossroad_csma"]["status"] == "done"
    assert "injected fault" in res.manifest.cells["crossroad_tdma"]["runs"]["1"]["error"]


def test_sweep_rejects_unknown_protocol(tmp_path):
    assert cli.main(["sweep", "--protocols", "aloha", "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG


def test_verify_math_passes(capsys):
    assert cli.main(["verify-math", "--quick"]) == 0
    assert "verification passed" in capsys.readouterr().out


def test_verify_math_catches_mutation(capsys):
    assert cli.main(["verify-math", "--quick", "--mutate", "count_prob-sign"]) == cli.EXIT_VERIFY
    assert "verification failed: count_prob" in capsys.readouterr().out


def test_defaults_round_trip(capsys):
    from parksim.scenario import from_text
    assert cli.main(["defaults"]) == 0
    assert from_text(capsys.readouterr().out) == ScenarioConfig()
