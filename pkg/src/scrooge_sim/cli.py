"""Command line entry point: ``scrooge-sim <mode> [options]``.

Exit status: 0 NoEvidence (or success), 10 UndervoltDetected,
11 Inconclusive, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .errors import CalibrationError, ConfigurationError, ProfileValidationError, SchemaError, ScroogeSimError
from .profiles import load_profile, load_profile_file
from .runner import MODES, Scenario, load_scenario, parse_scenario, run_scenario

USAGE_ERROR = 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, help="scenario YAML; flags below override its values")
    p.add_argument("--profile", help="3B, 3B+, 4B or a profile file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--tick", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--level", type=int, help="undervolt level applied by the provider (enables the attack)")
    p.add_argument("--spoof-mode", choices=["TableLookup", "OffsetAddition"])
    p.add_argument("--duration", type=float, help="maximum run time in seconds")
    p.add_argument("--threads", type=int)
    p.add_argument("--deployment", choices=["bare_metal", "container"])
    p.add_argument("--cooling", choices=["active", "passive"])
    p.add_argument("--hold-temperature", type=float)
    p.add_argument("--temperatures", help="comma separated guardband schedule in degC")
    p.add_argument("--manifest", help="replication run manifest for heatmap mode")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scrooge-sim", description="Undervolted cloud instance simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for mode in MODES:
        _add_common(sub.add_parser(mode, help=f"run a {mode} scenario"))
    v = sub.add_parser("validate", help="check scenario or profile documents")
    v.add_argument("paths", nargs="*", type=Path)
    v.add_argument("--profile", action="append", default=[], help="shipped profile id to check")
    return ap


def _document(args, mode: str) -> dict:
    doc: dict = {}
    if args.scenario is not None:
        doc = yaml.safe_load(args.scenario.read_text()) or {}
        if not isinstance(doc, dict):
            raise SchemaError("<root>", "scenario must be a mapping")
        if doc.get("mode", mode) != mode:
            raise SchemaError("mode", f"scenario declares {doc['mode']!r} but command is {mode!r}")
    doc.setdefault("schema_version", 1)
    doc["mode"] = mode
    for flag, key in (("profile", "profile"), ("seed", "seed"), ("tick", "tick"), ("duration", "duration")):
        if getattr(args, flag) is not None:
            doc[key] = getattr(args, flag)
    if args.level is not None:
        prov = doc.setdefault("provider", {})
        prov["undervolt_level"] = args.level
        prov.setdefault("attack_enabled", args.level != 0)
    if args.spoof_mode is not None:
        doc.setdefault("provider", {})["spoof_mode"] = args.spoof_mode
    det = {}
    for flag, key in (("threads", "thread_count"), ("deployment", "deployment"), ("cooling", "cooling"),
                      ("hold_temperature", "hold_temperature")):
        if getattr(args, flag) is not None:
            det[key] = getattr(args, flag)
    if det:
        doc.setdefault("detection", {}).update(det)
    if args.trials is not None:
        doc.setdefault("campaign", {})["trials"] = args.trials
    if args.temperatures:
        try:
            temps = [float(t) for t in args.temperatures.split(",")]
        except ValueError:
            raise SchemaError("guardband.temperatures", "expected comma separated numbers") from None
        doc.setdefault("guardband", {})["temperatures"] = temps
    if args.manifest:
        doc.setdefault("heatmap", {})["manifest"] = args.manifest
    return doc


def _validate(args) -> int:
    status = 0
    targets = [(str(p), p) for p in args.paths] + [(name, None) for name in args.profile]
    if not targets:
        print("validate: nothing to check", file=sys.stderr)
        return USAGE_ERROR
    for label, path in targets:
        try:
            if path is None:
                load_profile(label)
                kind = "profile"
            else:
                doc = yaml.safe_load(path.read_text())
                if isinstance(doc, dict) and "mode" in doc:
                    parse_scenario(doc)
                    kind = "scenario"
                else:
                    load_profile_file(path)
                    kind = "profile"
            print(f"{label}: valid {kind}")
        except ProfileValidationError as exc:
            status = USAGE_ERROR
            print(f"{label}: invalid profile", file=sys.stderr)
            for problem in exc.problems:
                print(f"  {problem}", file=sys.stderr)
        except (ScroogeSimError, OSError, yaml.YAMLError) as exc:
            status = USAGE_ERROR
            print(f"{label}: {exc}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "validate":
        return _validate(args)
    try:
        scenario: Scenario = parse_scenario(_document(args, args.command))
        result = run_scenario(scenario, args.out_dir)
    except (SchemaError, ConfigurationError, CalibrationError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    print(result.summary)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
