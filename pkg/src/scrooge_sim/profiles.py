"""Device calibration profiles: loading, validation and lookup.

A profile is a YAML document holding the OPP tables, thermal constants,
guardband frontiers and failure anchors for one board model. Shipped
profiles live in ``scrooge_sim/data/profiles``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .device import AvsParams, Opp, ProtectionBand, VoltageTable, volts_to_uv
from .errors import CalibrationError, ConfigurationError, ProfileValidationError
from .guardband import FailureRateModel, GuardbandFrontiers, PiecewiseLinear
from .thermal import Cooling, Deployment, ThermalParams

PROFILE_SCHEMA_VERSION = 1

# profile id -> shipped file stem
SHIPPED = {"3B": "3b", "3B+": "3bplus", "4B": "4b"}


@dataclass(frozen=True, slots=True)
class ThrottleLimits:
    soft_limit_c: float = 60.0
    soft_release_c: float = 55.0
    hard_limit_c: float = 85.0
    hard_release_c: float = 80.0


@dataclass(frozen=True, slots=True)
class Escalation:
    crash_after_failures: int = 1
    kernel_panic_probability: float = 0.5


@dataclass(frozen=True, slots=True)
class BootTiming:
    boot_time_s: float = 20.0
    boot_freeze_time_s: float = 120.0


@dataclass(frozen=True, slots=True)
class PopulationSize:
    user_count: int = 40
    kernel_count: int = 60


@dataclass(frozen=True)
class DeviceProfile:
    model: str
    cores: int
    table: VoltageTable
    limits: ThrottleLimits
    avs: AvsParams
    protection: ProtectionBand | None
    thermal: Mapping[tuple[Cooling, Deployment], ThermalParams]
    container_utilization_floor: float
    frontiers: GuardbandFrontiers
    failure_model: FailureRateModel
    escalation: Escalation = Escalation()
    boot: BootTiming = BootTiming()
    population: PopulationSize = PopulationSize()
    ambient_c: float = 24.0
    source: str | None = None
    # memo for derived quantities (boundary temperatures); not part of identity
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    def offset_for_level(self, level: int) -> float:
        try:
            return self.table.offset_mv[level]
        except KeyError:
            raise ConfigurationError(f"{self.model}: unknown overvoltage level {level}") from None

    def level_for_offset(self, offset_mv: float) -> int:
        for level, off in self.table.offset_mv.items():
            if math.isclose(off, offset_mv, abs_tol=1e-9):
                return level
        raise CalibrationError(f"{self.model}: no level with offset {offset_mv:g} mV")

    def thermal_params(self, cooling: Cooling | str = Cooling.ACTIVE,
                       deployment: Deployment | str = Deployment.BARE_METAL) -> ThermalParams:
        key = (Cooling(cooling), Deployment(deployment))
        try:
            return self.thermal[key]
        except KeyError:
            raise CalibrationError(
                f"{self.model}: no thermal calibration for {key[0].value}/{key[1].value}"
            ) from None


# -- parsing ----------------------------------------------------------------

class _Collector:
    """Accumulates problems so that validation reports all of them at once."""

    def __init__(self):
        self.problems: list[str] = []

    def add(self, where: str, msg: str) -> None:
        self.problems.append(f"{where}: {msg}")

    def need(self, doc: Mapping, key: str, where: str, default: Any = ...):
        if not isinstance(doc, Mapping):
            self.add(where, "expected a mapping")
            return None
        if key not in doc:
            if default is ...:
                self.add(f"{where}.{key}" if where else key, "missing")
                return None
            return default
        return doc[key]

    def number(self, value, where: str, positive=False, nonneg=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.add(where, f"expected a finite number, got {value!r}")
            return None
        if positive and value <= 0:
            self.add(where, f"must be > 0, got {value}")
        if nonneg and value < 0:
            self.add(where, f"must be >= 0, got {value}")
        return float(value)


def _opp(c: _Collector, raw, where: str) -> Opp | None:
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        c.add(where, "expected [frequency_mhz, voltage_v]")
        return None
    mhz, volts = raw
    if isinstance(mhz, bool) or not isinstance(mhz, int) or mhz <= 0:
        c.add(where, f"frequency must be a positive integer MHz, got {mhz!r}")
        return None
    if c.number(volts, where + ".voltage", positive=True) is None:
        return None
    try:
        return Opp(mhz, volts_to_uv(volts))
    except ConfigurationError as exc:
        c.add(where, str(exc))
        return None


def _opp_map(c: _Collector, raw, where: str) -> dict[int, Opp]:
    out: dict[int, Opp] = {}
    if not isinstance(raw, Mapping):
        c.add(where, "expected a mapping level -> [MHz, V]")
        return out
    for k, v in raw.items():
        try:
            level = int(k)
        except (TypeError, ValueError):
            c.add(f"{where}[{k!r}]", "level must be an integer")
            continue
        if level > 0:
            c.add(f"{where}[{level}]", "only nominal and undervolt levels (<= 0) are modelled")
        opp = _opp(c, v, f"{where}[{level}]")
        if opp is not None:
            out[level] = opp
    return out


def _curve(c: _Collector, raw, where: str) -> PiecewiseLinear | None:
    if not isinstance(raw, list) or not raw:
        c.add(where, "expected a non-empty list of [temp_c, volts]")
        return None
    pts = []
    for i, p in enumerate(raw):
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            c.add(f"{where}[{i}]", "expected [temp_c, volts]")
            continue
        t = c.number(p[0], f"{where}[{i}].temp_c")
        v = c.number(p[1], f"{where}[{i}].volts", nonneg=True)
        if t is not None and v is not None:
            pts.append((t, v))
    temps = [p[0] for p in pts]
    if temps != sorted(temps) or len(set(temps)) != len(temps):
        c.add(where, "temperatures must be strictly increasing")
        return None
    return PiecewiseLinear(pts) if pts else None


def _check_table(c: _Collector, table: VoltageTable) -> None:
    nominal = table.nominal_opps
    if 0 not in nominal:
        c.add("table.nominal[0]", "level 0 is required")
    levels = sorted(nominal, reverse=True)
    if levels and levels != list(range(0, levels[-1] - 1, -1)):
        c.add("table.nominal", f"levels must be contiguous from 0, got {levels}")
    for hi, lo in zip(levels, levels[1:]):
        if nominal[lo].voltage_uv >= nominal[hi].voltage_uv:
            c.add(f"table.nominal[{lo}]", "voltage must be below that of level " f"{hi}")
    if table.softlimit_opps:
        for level, sl in sorted(table.softlimit_opps.items(), reverse=True):
            if level not in nominal:
                c.add(f"table.softlimit[{level}]", "no matching nominal level")
                continue
            if sl.voltage_uv >= nominal[level].voltage_uv:
                c.add(f"table.softlimit[{level}]",
                      f"soft-limit voltage {sl.voltage:.4f} V must be below nominal {nominal[level].voltage:.4f} V")
            if sl.frequency_mhz >= nominal[level].frequency_mhz:
                c.add(f"table.softlimit[{level}]", "soft-limit frequency must be below nominal")
        missing = set(nominal) - set(table.softlimit_opps)
        if missing:
            c.add("table.softlimit", f"missing levels {sorted(missing, reverse=True)}")
    steps = table.limit_frequency_steps
    if not steps:
        c.add("table.limit_frequency_steps_mhz", "must not be empty")
    for i in range(1, len(steps) - 1):
        if steps[i + 1] >= steps[i]:
            c.add(f"table.limit_frequency_steps_mhz[{i + 1}]", "must be strictly decreasing after the first entry")
    if len(steps) > 1 and steps[1] > steps[0]:
        c.add("table.limit_frequency_steps_mhz[1]", "must not exceed the first entry")
    cores = table.limit_core_frequency_steps
    if not cores or any(b > a for a, b in zip(cores, cores[1:])):
        c.add("table.limit_core_frequency_steps_mhz", "must be a non-empty descending list")
    if set(table.offset_mv) != set(nominal):
        c.add("table.offsets_mv", "must list exactly the nominal levels")
    elif table.offset_mv.get(0) != 0.0:
        c.add("table.offsets_mv[0]", "level 0 must have offset 0")
    else:
        offs = [table.offset_mv[lv] for lv in levels]
        if any(b >= a for a, b in zip(offs, offs[1:])):
            c.add("table.offsets_mv", "offsets must decrease with the level")


def _check_frontiers(c: _Collector, fr: GuardbandFrontiers, span: tuple[float, float]) -> None:
    knots = sorted(set(fr.lower_frontier.xs + fr.upper_frontier.xs + fr.nominal_curve.xs
                       + [span[0], span[1]]))
    for t in knots:
        lo, up, nom = fr.lower_frontier(t), fr.upper_frontier(t), fr.nominal_curve(t)
        if lo > up + 1e-12:
            c.add(f"frontiers@{t:g}C", f"lower {lo:.4f} V above upper {up:.4f} V")
        if up > nom + 1e-12:
            c.add(f"frontiers@{t:g}C", f"upper {up:.4f} V above nominal {nom:.4f} V")


def _failure_model(c: _Collector, raw, table: VoltageTable | None, model: str) -> FailureRateModel | None:
    window = c.number(c.need(raw, "reference_window_s", "failure_model"), "failure_model.reference_window_s",
                      positive=True)
    drop = c.need(raw, "softlimit_drop_c", "failure_model", None)
    span_raw = c.need(raw, "span_c", "failure_model", [20.0, 85.0])
    rows = c.need(raw, "anchors", "failure_model")
    anchors: dict[float, list[tuple[float, float]]] = {}
    if not isinstance(rows, list):
        c.add("failure_model.anchors", "expected a list of rows")
        rows = []
    for i, row in enumerate(rows):
        where = f"failure_model.anchors[{i}]"
        if not isinstance(row, Mapping):
            c.add(where, "expected {offset_mv, temp_c, probability}")
            continue
        off = c.number(c.need(row, "offset_mv", where), where + ".offset_mv")
        t = c.number(c.need(row, "temp_c", where), where + ".temp_c")
        p = c.number(c.need(row, "probability", where), where + ".probability")
        if None in (off, t, p):
            continue
        if not 0.0 <= p <= 1.0:
            c.add(where, f"probability {p} outside [0, 1]")
        if off >= 0:
            c.add(where, "anchors are only defined for undervolt offsets")
        anchors.setdefault(off, []).append((t, p))
    for off, pts in anchors.items():
        temps = [p[0] for p in pts]
        if temps != sorted(temps) or len(set(temps)) != len(temps):
            c.add(f"failure_model.anchors[offset={off:g}]", "temperatures must be strictly increasing")
    if table is not None:
        known = set(table.offset_mv.values())
        for off in anchors:
            if off not in known:
                c.add(f"failure_model.anchors[offset={off:g}]", "offset is not a level of this model")
    if window is None:
        return None
    span = tuple(float(x) for x in span_raw)
    return FailureRateModel(anchors, window, None if drop is None else float(drop), span)


def validate_profile(document: Mapping, source: str | None = None) -> DeviceProfile:
    """Build an immutable profile, reporting every violated invariant."""
    c = _Collector()
    if not isinstance(document, Mapping):
        raise ProfileValidationError(["<root>: expected a mapping"])
    version = document.get("schema_version")
    if version != PROFILE_SCHEMA_VERSION:
        c.add("schema_version", f"expected {PROFILE_SCHEMA_VERSION}, got {version!r}")
    model = str(c.need(document, "model", ""))
    cores = c.need(document, "cores", "", 4)
    if not isinstance(cores, int) or cores < 1:
        c.add("cores", "must be a positive integer")

    raw_t = c.need(document, "table", "") or {}
    nominal = _opp_map(c, c.need(raw_t, "nominal", "table") or {}, "table.nominal")
    soft_raw = c.need(raw_t, "softlimit", "table", None)
    softlimit = _opp_map(c, soft_raw, "table.softlimit") if soft_raw else None
    lv = c.need(raw_t, "limit_voltage_v", "table")
    limit_uv = 0
    if c.number(lv, "table.limit_voltage_v", positive=True) is not None:
        try:
            limit_uv = volts_to_uv(lv)
        except ConfigurationError as exc:
            c.add("table.limit_voltage_v", str(exc))
    steps = tuple(c.need(raw_t, "limit_frequency_steps_mhz", "table") or ())
    cores_steps = tuple(c.need(raw_t, "limit_core_frequency_steps_mhz", "table") or ())
    offsets_raw = c.need(raw_t, "offsets_mv", "table") or {}
    offsets = {}
    for k, v in offsets_raw.items():
        val = c.number(v, f"table.offsets_mv[{k}]")
        if val is not None:
            offsets[int(k)] = val
    idle = _opp(c, c.need(raw_t, "idle_opp", "table"), "table.idle_opp")
    core_mhz = c.need(raw_t, "core_frequency_mhz", "table")
    table = None
    if idle is not None and isinstance(core_mhz, int) and nominal:
        table = VoltageTable(nominal, softlimit, limit_uv, steps, cores_steps, offsets, idle, core_mhz)
        _check_table(c, table)

    lim = c.need(document, "limits", "", {}) or {}
    limits = ThrottleLimits(**{k: float(v) for k, v in lim.items()}) if isinstance(lim, Mapping) else ThrottleLimits()
    if limits.soft_release_c >= limits.soft_limit_c:
        c.add("limits.soft_release_c", "must be below soft_limit_c")
    if limits.hard_release_c >= limits.hard_limit_c:
        c.add("limits.hard_release_c", "must be below hard_limit_c")

    raw_avs = c.need(document, "avs", "", {}) or {}
    avs = AvsParams()
    try:
        avs = AvsParams(float(raw_avs.get("slope_mv_per_c", 0.0)), float(raw_avs.get("reference_temp_c", 40.0)))
    except ConfigurationError as exc:
        c.add("avs.slope_mv_per_c", str(exc))

    prot = None
    raw_p = c.need(document, "protection", "", None)
    if raw_p:
        prot = ProtectionBand(float(raw_p["low_c"]), float(raw_p["high_c"]), float(raw_p["drop_mv"]))
        if prot.low_c > prot.high_c or prot.drop_mv < 0:
            c.add("protection", "band must have low_c <= high_c and drop_mv >= 0")

    power = c.need(document, "power", "") or {}
    idle_w = c.number(c.need(power, "idle_w", "power"), "power.idle_w", nonneg=True)
    cap = c.number(c.need(power, "capacitance_f", "power"), "power.capacitance_f", positive=True)
    thermal: dict[tuple[Cooling, Deployment], ThermalParams] = {}
    for i, row in enumerate(c.need(document, "thermal", "") or []):
        where = f"thermal[{i}]"
        try:
            key = (Cooling(row["cooling"]), Deployment(row["deployment"]))
            params = ThermalParams(float(row["resistance_c_per_w"]), float(row["time_constant_s"]),
                                   key[0], idle_w or 0.0, cap or 1e-9)
        except (KeyError, TypeError, ValueError) as exc:
            c.add(where, f"invalid thermal entry ({exc})")
            continue
        if key in thermal:
            c.add(where, f"duplicate entry for {key[0].value}/{key[1].value}")
        thermal[key] = params
    floor = c.number(c.need(document, "container_utilization_floor", "", 0.0),
                     "container_utilization_floor", nonneg=True)
    if floor is not None and floor > 1:
        c.add("container_utilization_floor", "must lie in [0, 1]")

    raw_f = c.need(document, "frontiers", "") or {}
    lower = _curve(c, c.need(raw_f, "lower", "frontiers"), "frontiers.lower")
    upper = _curve(c, c.need(raw_f, "upper", "frontiers"), "frontiers.upper")
    nom = _curve(c, c.need(raw_f, "nominal", "frontiers"), "frontiers.nominal")
    fmodel = _failure_model(c, c.need(document, "failure_model", "") or {}, table, model)
    frontiers = None
    if None not in (lower, upper, nom):
        frontiers = GuardbandFrontiers(lower, upper, nom)
        _check_frontiers(c, frontiers, fmodel.span_c if fmodel else (20.0, 85.0))

    esc_raw = c.need(document, "escalation", "", {}) or {}
    esc = Escalation(int(esc_raw.get("crash_after_failures", 1)),
                     float(esc_raw.get("kernel_panic_probability", 0.5)))
    if esc.crash_after_failures < 1:
        c.add("escalation.crash_after_failures", "must be >= 1")
    if not 0.0 <= esc.kernel_panic_probability <= 1.0:
        c.add("escalation.kernel_panic_probability", "must lie in [0, 1]")
    boot = BootTiming(**{k: float(v) for k, v in (c.need(document, "boot", "", {}) or {}).items()})
    pop = PopulationSize(**{k: int(v) for k, v in (c.need(document, "population", "", {}) or {}).items()})
    if pop.user_count < 1 or pop.kernel_count < 1:
        c.add("population", "user and kernel counts must be >= 1")
    ambient = c.number(c.need(document, "ambient_c", "", 24.0), "ambient_c")

    if c.problems:
        raise ProfileValidationError(c.problems)
    return DeviceProfile(
        model=model,
        cores=cores,
        table=table,
        limits=limits,
        avs=avs,
        protection=prot,
        thermal=thermal,
        container_utilization_floor=floor,
        frontiers=frontiers,
        failure_model=fmodel,
        escalation=esc,
        boot=boot,
        population=pop,
        ambient_c=ambient,
        source=source,
    )


def load_profile_file(path) -> DeviceProfile:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not a valid YAML document ({exc})") from exc
    return validate_profile(doc, source=str(path))


_LOADED: dict[str, DeviceProfile] = {}


def load_profile(name: str) -> DeviceProfile:
    """Load a shipped profile by id (``3B``, ``3B+``, ``4B``) or a file path."""
    key = str(name)
    stem = SHIPPED.get(key) or SHIPPED.get(key.upper())
    if stem is None:
        if Path(key).is_file():
            return load_profile_file(key)
        raise ConfigurationError(f"unknown profile {name!r}; expected one of {sorted(SHIPPED)} or a file path")
    if stem not in _LOADED:
        ref = resources.files("scrooge_sim") / "data" / "profiles" / f"{stem}.yaml"
        doc = yaml.safe_load(ref.read_text())
        _LOADED[stem] = validate_profile(doc, source=f"{stem}.yaml")
    return _LOADED[stem]


def profile_document(name: str) -> dict:
    """Raw YAML document of a shipped profile (for tests that mutate it)."""
    stem = SHIPPED[name]
    ref = resources.files("scrooge_sim") / "data" / "profiles" / f"{stem}.yaml"
    return yaml.safe_load(ref.read_text())
