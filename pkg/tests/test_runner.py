import csv
import io
import json
from pathlib import Path

import pytest
import yaml

from scrooge_sim.cli import main
from scrooge_sim.errors import SchemaError
from scrooge_sim.runner import load_scenario, parse_scenario, run_scenario, write_atomic

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def doc(**kw):
    base = {"schema_version": 1, "mode": "detect", "profile": "3B", "seed": 1}
    base.update(kw)
    return base


def test_shipped_scenarios_parse():
    for path in sorted(SCENARIOS.glob("*.yaml")):
        assert load_scenario(path).mode


@pytest.mark.parametrize("bad, field", [
    (doc(tick=0), "tick"),
    (doc(provider={"undervolt_level": 3}), "provider.undervolt_level"),
    (doc(detection={"thread_count": 0}), "detection.thread_count"),
    (doc(colour="red"), "<root>"),
    (doc(schema_version=2), "schema_version"),
])
def test_schema_errors_carry_field_path(bad, field):
    with pytest.raises(SchemaError) as info:
        parse_scenario(bad)
    assert info.value.path == field


def test_seed_required_for_stochastic_modes():
    d = doc()
    del d["seed"]
    with pytest.raises(SchemaError, match="seed"):
        parse_scenario(d)


def test_duration_at_least_tick():
    with pytest.raises(SchemaError, match="duration"):
        parse_scenario(doc(tick=1.0, duration=0.5))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "deep" / "out.txt"
    write_atomic(target, "one")
    write_atomic(target, b"two")
    assert target.read_bytes() == b"two"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_detect_nominal_exits_zero(tmp_path):
    res = run_scenario(doc(detection={"max_duration": 300}), tmp_path)
    assert res.exit_code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["verdict"] == "NoEvidence"


def test_event_log_times_are_ordered(tmp_path):
    run_scenario(doc(provider={"undervolt_level": -3, "attack_enabled": True}), tmp_path)
    rows = [json.loads(line) for line in (tmp_path / "events.jsonl").read_text().splitlines()]
    times = [r["time"] for r in rows]
    assert times == sorted(times)
    assert {"boot", "phase", "failure", "crash"} <= {r["kind"] for r in rows}


def test_campaign_bytes_are_reproducible(tmp_path):
    sc = doc(mode="campaign", provider={"undervolt_level": -3, "attack_enabled": True},
             detection={"deployment": "container", "max_duration": 600}, campaign={"trials": 15})
    a, b = tmp_path / "a", tmp_path / "b"
    run_scenario(sc, a)
    run_scenario(sc, b)
    for name in ("report.json", "runtime_hist.csv", "temp_hist.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_guardband_mode_writes_dataset(tmp_path):
    run_scenario(doc(mode="guardband", tick=1.0, guardband={"temperatures": [30, 60]}), tmp_path)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "guardband.csv").read_text())))
    assert {r["outcome"] for r in rows} <= {"safe", "failure", "boot_fail"}
    assert set(json.loads((tmp_path / "frontiers.json").read_text())) == {"30", "60"}


def test_heatmap_mode(tmp_path):
    run_scenario({"schema_version": 1, "mode": "heatmap"}, tmp_path)
    header, *rows = (tmp_path / "heatmap.csv").read_text().splitlines()
    assert header.startswith("cooling,model,undervolt_mv,")
    assert len(rows) == 6


def test_throttle_trace_ramp_crosses_limits(tmp_path):
    run_scenario(load_scenario(SCENARIOS / "throttle_3bplus_ramp.yaml"), tmp_path)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "throttle_trace.csv").read_text())))
    regimes = [r["regime"] for r in rows]
    assert regimes[0] == "Normal" and "SoftLimited" in regimes and regimes[-1] == "HardLimited"
    hard = [int(r["freq_mhz"]) for r in rows if r["regime"] == "HardLimited"]
    assert hard == sorted(hard, reverse=True)


def test_cli_exit_codes(tmp_path, capsys):
    base = ["--profile", "3B", "--seed", "3", "--out-dir", str(tmp_path)]
    assert main(["detect", *base, "--duration", "300"]) == 0
    assert main(["detect", *base, "--level", "-3", "--duration", "900"]) == 10
    assert main(["detect", "--seed", "1", "--out-dir", str(tmp_path)]) == 2
    assert main(["detect", *base, "--level", "-3", "--tick", "-1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_cli_inconclusive_exit(tmp_path):
    d = yaml.safe_load((Path(__file__).parent / "data" / "slow_escalation_3b.yaml").read_text())
    prof = tmp_path / "slow.yaml"
    prof.write_text(yaml.safe_dump(d))
    codes = set()
    for seed in range(20):
        codes.add(main(["detect", "--profile", str(prof), "--seed", str(seed), "--level", "-3",
                        "--hold-temperature", "60", "--duration", "4", "--out-dir", str(tmp_path / str(seed))]))
    assert 11 in codes


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "--profile", "3B", "--profile", "4B", *map(str, SCENARIOS.glob("*.yaml"))]) == 0
    bad = tmp_path / "bad.yaml"
    d = yaml.safe_load((Path(__file__).parent / "data" / "slow_escalation_3b.yaml").read_text())
    d["table"]["softlimit"] = {0: [1100, 1.5]}
    bad.write_text(yaml.safe_dump(d))
    assert main(["validate", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "table.softlimit[0]" in err
    assert main(["validate"]) == 2


def test_cli_scenario_mode_mismatch(tmp_path):
    assert main(["campaign", "--scenario", str(SCENARIOS / "heatmap.yaml"), "--out-dir", str(tmp_path)]) == 2
