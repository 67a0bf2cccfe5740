"""Scenario documents and their execution.

A scenario is a YAML mapping with an explicit ``schema_version``. Every mode
writes its artifacts atomically into an output directory and returns an
exit status (see ``EXIT_CODES`` in :mod:`scrooge_sim.detection`).
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import yaml

from .detection import DetectionConfig, boot_failure_report, run_campaign, run_detection
from .errors import ConfigurationError, SchemaError
from .guardband import guardband_csv, recover_frontiers, run_guardband_analysis
from .instance import Phase, throttle_trace
from .profiles import load_profile
from .provider import ProviderConfig, SpoofMode, boot_instance
from .thermal import etr_heatmap, load_replication_runs

SCHEMA_VERSION = 1
MODES = ("detect", "campaign", "guardband", "heatmap", "throttle-trace")
STOCHASTIC = {"detect", "campaign", "guardband"}
DEFAULT_TICK = 0.1

SCENARIO_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "mode"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "profile": {"type": "string"},
        "mode": {"enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "tick": {"type": "number", "exclusiveMinimum": 0},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "provider": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "undervolt_level": {"type": "integer", "maximum": 0},
                "attack_enabled": {"type": "boolean"},
                "spoof_mode": {"enum": [m.value for m in SpoofMode]},
                "tamper_logs": {"type": "boolean"},
            },
        },
        "detection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "thread_count": {"type": "integer", "minimum": 1},
                "max_duration": {"type": "number", "exclusiveMinimum": 0},
                "target_temperature": {"type": ["number", "null"]},
                "hold_temperature": {"type": ["number", "null"]},
                "deployment": {"enum": ["bare_metal", "container"]},
                "cooling": {"enum": ["active", "passive"]},
                "synchronize": {"type": "boolean"},
            },
        },
        "campaign": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trials": {"type": "integer", "minimum": 1},
                "runtime_bin_s": {"type": "number", "exclusiveMinimum": 0},
                "temp_bin_c": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "guardband": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "temperatures": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                "level_start": {"type": "integer", "maximum": 0},
            },
        },
        "heatmap": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"manifest": {"type": "string"}},
        },
        "throttle_trace": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ramp_start_c": {"type": "number"},
                "ramp_rate_c_per_s": {"type": "number"},
            },
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


@dataclass(frozen=True)
class Scenario:
    mode: str
    profile: str | None = None
    seed: int | None = None
    tick: float = DEFAULT_TICK
    duration: float | None = None
    provider: ProviderConfig = ProviderConfig()
    detection: DetectionConfig | None = None
    trials: int = 1
    runtime_bin_s: float = 5.0
    temp_bin_c: float = 1.0
    temperatures: tuple[float, ...] = (20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0)
    level_start: int = 0
    manifest: str | None = None
    ramp_start_c: float | None = None
    ramp_rate_c_per_s: float | None = None


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def parse_scenario(document: Mapping) -> Scenario:
    """Validate a scenario mapping and build a :class:`Scenario`."""
    errors = sorted(_VALIDATOR.iter_errors(document), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise SchemaError(_path(err), err.message)
    doc = dict(document)
    mode = doc["mode"]
    if mode in STOCHASTIC and "seed" not in doc:
        raise SchemaError("seed", f"required for mode {mode!r}")
    if mode != "heatmap" and "profile" not in doc:
        raise SchemaError("profile", f"required for mode {mode!r}")
    tick = float(doc.get("tick", DEFAULT_TICK))
    duration = doc.get("duration")
    if duration is not None and duration < tick:
        raise SchemaError("duration", "must be >= tick")
    det = doc.get("detection")
    detection = None
    if det is not None or mode in ("detect", "campaign"):
        det = dict(det or {})
        if duration is not None:
            det.setdefault("max_duration", float(duration))
        detection = DetectionConfig(**det)
    camp = doc.get("campaign", {})
    gb = doc.get("guardband", {})
    tt = doc.get("throttle_trace", {})
    return Scenario(
        mode=mode,
        profile=doc.get("profile"),
        seed=doc.get("seed"),
        tick=tick,
        duration=None if duration is None else float(duration),
        provider=ProviderConfig(**doc.get("provider", {})),
        detection=detection,
        trials=camp.get("trials", 1),
        runtime_bin_s=float(camp.get("runtime_bin_s", 5.0)),
        temp_bin_c=float(camp.get("temp_bin_c", 1.0)),
        temperatures=tuple(float(t) for t in gb.get("temperatures", Scenario.temperatures)),
        level_start=gb.get("level_start", 0),
        manifest=doc.get("heatmap", {}).get("manifest"),
        ramp_start_c=tt.get("ramp_start_c"),
        ramp_rate_c_per_s=tt.get("ramp_rate_c_per_s"),
    )


def load_scenario(path) -> Scenario:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SchemaError("<root>", f"not a YAML document ({exc})") from exc
    if not isinstance(doc, Mapping):
        raise SchemaError("<root>", "scenario must be a mapping")
    return parse_scenario(doc)


# -- output -----------------------------------------------------------------

def write_atomic(path: Path, data: str | bytes) -> None:
    """Write via a temporary sibling file and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _events_jsonl(instance) -> str:
    lines = [json.dumps({"time": r.time, "kind": r.kind, **r.payload}, sort_keys=True) for r in instance.log]
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class RunResult:
    exit_code: int
    summary: str
    artifacts: dict[str, Path] = field(default_factory=dict)


def _report_doc(report) -> dict:
    return {
        "verdict": report.verdict.value,
        "crash_time_s": report.crash_time,
        "crash_temperature_c": report.crash_temperature,
        "failure_events_observed": report.failure_events_observed,
        "trials": report.trials,
        "crashes": report.crashes,
        "boot_crash": report.boot_crash,
        "products_checked": report.products_checked,
        "product_mismatches": report.product_mismatches,
        "samples": [list(s) for s in report.samples],
    }


def _run_detect(sc: Scenario, profile, out: Path) -> RunResult:
    cfg = sc.detection
    inst = boot_instance(sc.provider, profile, seed=sc.seed, index=0, label="detect",
                         deployment=cfg.deployment, cooling=cfg.cooling)
    if inst.phase is Phase.CRASHED:
        report = boot_failure_report(inst)
    else:
        report = run_detection(inst, cfg, tick=sc.tick)
    doc = {"mode": "detect", "profile": profile.model, "seed": sc.seed, **_report_doc(report)}
    arts = {"report": out / "report.json", "events": out / "events.jsonl"}
    write_atomic(arts["report"], _json(doc))
    write_atomic(arts["events"], _events_jsonl(inst))
    t = "-" if report.crash_time is None else f"{report.crash_time:.1f}s"
    return RunResult(report.exit_code, f"detect {profile.model}: {report.verdict.value} (crash {t})", arts)


def _run_campaign(sc: Scenario, profile, out: Path) -> RunResult:
    res = run_campaign(profile, sc.provider, sc.detection, sc.trials, sc.seed, tick=sc.tick,
                       runtime_bin_s=sc.runtime_bin_s, temp_bin_c=sc.temp_bin_c)
    lo, hi = res.confidence_interval
    doc = {
        "mode": "campaign",
        "profile": profile.model,
        "seed": sc.seed,
        **_report_doc(res.report),
        "crash_probability": res.crash_probability,
        "crash_probability_ci95": [lo, hi],
        "runtime_mode_s": res.runtime_hist.mode,
        "temperature_mode_c": res.temp_hist.mode,
    }
    arts = {"report": out / "report.json", "runtime_hist": out / "runtime_hist.csv", "temp_hist": out / "temp_hist.csv"}
    write_atomic(arts["report"], _json(doc))
    write_atomic(arts["runtime_hist"], res.runtime_csv())
    write_atomic(arts["temp_hist"], res.temp_csv())
    summary = (f"campaign {profile.model}: {res.report.verdict.value}, {res.report.crashes}/{sc.trials} crashed "
               f"(p={res.crash_probability:.3f}, 95% CI [{lo:.3f}, {hi:.3f}])")
    return RunResult(res.report.exit_code, summary, arts)


def _run_guardband(sc: Scenario, profile, out: Path) -> RunResult:
    records = run_guardband_analysis(profile, list(sc.temperatures), sc.level_start, seed=sc.seed, tick=sc.tick)
    fr = recover_frontiers(records)
    arts = {"guardband": out / "guardband.csv", "frontiers": out / "frontiers.json"}
    write_atomic(arts["guardband"], guardband_csv(records))
    write_atomic(arts["frontiers"], _json({f"{t:g}": v for t, v in fr.items()}))
    return RunResult(0, f"guardband {profile.model}: {len(records)} passes over {len(sc.temperatures)} temperatures",
                     arts)


def default_manifest() -> Path:
    return Path(str(resources.files("scrooge_sim") / "data" / "replication" / "runs.csv"))


def _run_heatmap(sc: Scenario, out: Path) -> RunResult:
    manifest = Path(sc.manifest) if sc.manifest else default_manifest()
    heat = etr_heatmap(load_replication_runs(manifest))
    arts = {"heatmap": out / "heatmap.csv"}
    write_atomic(arts["heatmap"], heat.to_csv())
    return RunResult(0, f"heatmap: {len(heat.rows)} rows x {len(heat.stressors)} stressors", arts)


def _run_throttle_trace(sc: Scenario, profile, out: Path) -> RunResult:
    duration = sc.duration or 600.0
    temps = None
    if sc.ramp_rate_c_per_s is not None:
        start = profile.ambient_c if sc.ramp_start_c is None else sc.ramp_start_c
        rate = sc.ramp_rate_c_per_s
        temps = lambda t: start + rate * t  # noqa: E731
    cfg = sc.detection or DetectionConfig()
    rows = throttle_trace(profile, sc.provider.boot_level, duration, sc.tick, temps, cfg.cooling, cfg.deployment)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "temp_c", "regime", "freq_mhz", "voltage_v"])
    for r in rows:
        w.writerow([f"{r.time_s:g}", f"{r.temp_c:.3f}", r.regime, r.freq_mhz, f"{r.voltage_v:.4f}"])
    arts = {"throttle_trace": out / "throttle_trace.csv"}
    write_atomic(arts["throttle_trace"], buf.getvalue())
    return RunResult(0, f"throttle-trace {profile.model}: {len(rows)} samples", arts)


def run_scenario(scenario: Scenario | Mapping, out_dir) -> RunResult:
    """Dispatch a scenario to its pipeline and write the artifacts."""
    sc = scenario if isinstance(scenario, Scenario) else parse_scenario(scenario)
    out = Path(out_dir)
    if sc.mode == "heatmap":
        return _run_heatmap(sc, out)
    profile = load_profile(sc.profile)
    if sc.mode == "detect":
        return _run_detect(sc, profile, out)
    if sc.mode == "campaign":
        return _run_campaign(sc, profile, out)
    if sc.mode == "guardband":
        return _run_guardband(sc, profile, out)
    if sc.mode == "throttle-trace":
        return _run_throttle_trace(sc, profile, out)
    raise ConfigurationError(f"unknown mode {sc.mode!r}")
