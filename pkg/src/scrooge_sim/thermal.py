"""Power, temperature and energy-to-throughput accounting."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    PairingError,
    TraceFormatError,
    TraceRangeError,
    UndefinedMetricError,
)


class Cooling(enum.Enum):
    ACTIVE = "active"
    PASSIVE = "passive"


class Deployment(enum.Enum):
    BARE_METAL = "bare_metal"
    CONTAINER = "container"


@dataclass(frozen=True, slots=True)
class ThermalState:
    temperature: float
    ambient: float = 24.0
    time: float = 0.0


@dataclass(frozen=True, slots=True)
class ThermalParams:
    thermal_resistance: float  # degC per W
    time_constant: float  # s
    cooling: Cooling = Cooling.ACTIVE
    idle_power: float = 0.0  # W, static + board
    capacitance_eff: float = 1e-9  # F-equivalent

    def __post_init__(self):
        if self.thermal_resistance <= 0 or self.time_constant <= 0:
            raise ConfigurationError("thermal resistance and time constant must be positive")
        if self.idle_power < 0 or self.capacitance_eff <= 0:
            raise ConfigurationError("idle power must be >= 0 and capacitance > 0")

    def equilibrium(self, ambient: float, power: float) -> float:
        return ambient + self.thermal_resistance * power


def dynamic_power(capacitance_eff: float, voltage: float, frequency: float, utilization: float = 1.0) -> float:
    """Switching power ``C * V**2 * f * u`` in watts (frequency in hertz)."""
    if capacitance_eff < 0 or voltage < 0 or frequency < 0:
        raise ValueError("power inputs must be non-negative")
    if not 0.0 <= utilization <= 1.0:
        raise ValueError(f"utilization must lie in [0, 1], got {utilization}")
    return capacitance_eff * voltage * voltage * frequency * utilization


def total_power(params: ThermalParams, voltage: float, frequency_hz: float, utilization: float) -> float:
    return params.idle_power + dynamic_power(params.capacitance_eff, voltage, frequency_hz, utilization)


def step_thermal(state: ThermalState, power: float, dt: float, params: ThermalParams) -> ThermalState:
    """First-order lumped RC step, solved exactly over ``dt``.

    The exponential form never overshoots the equilibrium ``ambient + R*P``
    regardless of the step size.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    target = state.ambient + params.thermal_resistance * power
    temp = target + (state.temperature - target) * math.exp(-dt / params.time_constant)
    return ThermalState(temp, state.ambient, state.time + dt)


def time_to_reach(start: float, target: float, equilibrium: float, time_constant: float) -> float:
    """Closed-form time for the RC response to go from ``start`` to ``target``."""
    if not min(start, equilibrium) <= target <= max(start, equilibrium) or target == equilibrium:
        return math.inf
    return -time_constant * math.log((equilibrium - target) / (equilibrium - start))


# -- traces -----------------------------------------------------------------

POWER_CONSISTENCY_TOL = 0.02


@dataclass(frozen=True)
class PowerTrace:
    timestamps: np.ndarray
    power: np.ndarray
    source: str = "simulated"

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.power, dtype=float)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "power", p)
        if t.ndim != 1 or t.shape != p.shape or t.size < 2:
            raise TraceFormatError("a trace needs at least two (timestamp, power) samples")
        if np.any(np.diff(t) <= 0):
            raise TraceFormatError("timestamps must be strictly increasing")
        if np.any(p < 0):
            raise TraceFormatError("power samples must be non-negative")
        if self.source not in ("simulated", "ingested"):
            raise TraceFormatError(f"unknown trace source {self.source!r}")

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, float]], source: str = "simulated") -> "PowerTrace":
        rows = list(samples)
        return cls(np.array([r[0] for r in rows]), np.array([r[1] for r in rows]), source)

    @property
    def start(self) -> float:
        return float(self.timestamps[0])

    @property
    def end(self) -> float:
        return float(self.timestamps[-1])


def read_trace_csv(path) -> PowerTrace:
    """Load a ``timestamp_s,power_w[,voltage_v,current_a]`` CSV file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if fields[:2] != ["timestamp_s", "power_w"]:
            raise TraceFormatError(f"{path}: header must start with timestamp_s,power_w")
        has_vi = "voltage_v" in fields and "current_a" in fields
        ts, ps = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                t = float(row["timestamp_s"])
                p = float(row["power_w"])
            except (TypeError, ValueError):
                raise TraceFormatError(f"{path}:{lineno}: non-numeric sample") from None
            if has_vi and row.get("voltage_v") and row.get("current_a"):
                vi = float(row["voltage_v"]) * float(row["current_a"])
                if abs(p - vi) > POWER_CONSISTENCY_TOL * max(abs(p), 1e-12):
                    raise TraceFormatError(
                        f"{path}:{lineno}: power {p} W disagrees with V*I = {vi:.4f} W by more than 2%"
                    )
            ts.append(t)
            ps.append(p)
    try:
        return PowerTrace(np.array(ts), np.array(ps), source="ingested")
    except TraceFormatError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None


def write_trace_csv(trace: PowerTrace, path, voltage: Sequence[float] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if voltage is None:
            w.writerow(["timestamp_s", "power_w"])
            for t, p in zip(trace.timestamps, trace.power):
                w.writerow([f"{t:.3f}", f"{p:.6f}"])
        else:
            w.writerow(["timestamp_s", "power_w", "voltage_v", "current_a"])
            for t, p, v in zip(trace.timestamps, trace.power, voltage):
                w.writerow([f"{t:.3f}", f"{p:.6f}", f"{v:.4f}", f"{p / v:.6f}"])


def integrate_energy(trace: PowerTrace, t0: float | None = None, t1: float | None = None) -> float:
    """Trapezoidal energy in joules over ``[t0, t1]``.

    Window edges falling between samples are linearly interpolated, which
    keeps the integral additive over adjacent windows.
    """
    t, p = trace.timestamps, trace.power
    t0 = trace.start if t0 is None else float(t0)
    t1 = trace.end if t1 is None else float(t1)
    if not t0 < t1:
        raise TraceRangeError(f"empty window [{t0}, {t1}]")
    if t0 < t[0] or t1 > t[-1]:
        raise TraceRangeError(f"window [{t0}, {t1}] outside trace span [{t[0]}, {t[-1]}]")
    inner = (t > t0) & (t < t1)
    xs = np.concatenate(([t0], t[inner], [t1]))
    ys = np.concatenate(([np.interp(t0, t, p)], p[inner], [np.interp(t1, t, p)]))
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) * 0.5))


# -- energy to throughput ---------------------------------------------------

@dataclass(frozen=True, slots=True)
class EtrRecord:
    energy: float
    operations: int
    etr: float
    normalized: float = 1.0


def compute_etr(energy: float, operations: int) -> float:
    if operations <= 0:
        raise UndefinedMetricError("ETR is undefined for zero operations")
    return energy / operations


def etr_record(energy: float, operations: int) -> EtrRecord:
    return EtrRecord(energy, operations, compute_etr(energy, operations))


def normalize(record: EtrRecord, baseline: EtrRecord) -> EtrRecord:
    if record.etr == baseline.etr:
        ratio = 1.0
    elif baseline.etr <= 0 or record.etr <= 0:
        raise UndefinedMetricError("normalized ETR needs positive energies")
    else:
        ratio = record.etr / baseline.etr
    return EtrRecord(record.energy, record.operations, record.etr, ratio)


@dataclass(frozen=True, slots=True)
class EtrRun:
    stressor: str
    cooling: str
    model: str
    undervolt_mv: float
    record: EtrRecord


COOLING_ORDER = ("active", "passive")
MODEL_ORDER = ("3B", "3B+", "4B")


@dataclass
class HeatMap:
    stressors: list[str]
    rows: dict[tuple[str, str, float], dict[str, float]] = field(default_factory=dict)

    def cell(self, cooling: str, model: str, stressor: str) -> float:
        for (c, m, _), values in self.rows.items():
            if c == cooling and m == model:
                return values[stressor]
        raise KeyError((cooling, model, stressor))

    def to_csv(self) -> str:
        lines = [",".join(["cooling", "model", "undervolt_mv", *self.stressors])]
        for (cooling, model, mv), values in self.rows.items():
            cells = [f"{values[s]:.2f}" if s in values else "" for s in self.stressors]
            lines.append(",".join([cooling, model, _fmt_mv(mv), *cells]))
        return "\n".join(lines) + "\n"


def _fmt_mv(mv: float) -> str:
    return str(int(mv)) if float(mv).is_integer() else f"{mv:g}"


def _row_key(key):
    cooling, model, mv = key
    c = COOLING_ORDER.index(cooling) if cooling in COOLING_ORDER else len(COOLING_ORDER)
    m = MODEL_ORDER.index(model) if model in MODEL_ORDER else len(MODEL_ORDER)
    return (c, cooling, m, model, mv)


def etr_heatmap(runs: Iterable[EtrRun]) -> HeatMap:
    """Pair undervolted runs with their nominal baselines.

    Each undervolted run (``undervolt_mv < 0``) needs a nominal run with the
    same stressor, cooling and model; the cell value is the ratio of the two
    ETRs. Nominal runs without an undervolted partner are ignored.
    """
    runs = list(runs)
    baselines = {(r.stressor, r.cooling, r.model): r.record for r in runs if r.undervolt_mv == 0}
    stressors: list[str] = []
    rows: dict[tuple[str, str, float], dict[str, float]] = {}
    for r in runs:
        if r.undervolt_mv == 0:
            continue
        base = baselines.get((r.stressor, r.cooling, r.model))
        if base is None:
            raise PairingError(
                f"no nominal baseline for cell (cooling={r.cooling}, model={r.model}, "
                f"undervolt={_fmt_mv(r.undervolt_mv)} mV, stressor={r.stressor})"
            )
        rows.setdefault((r.cooling, r.model, r.undervolt_mv), {})[r.stressor] = normalize(r.record, base).normalized
        if r.stressor not in stressors:
            stressors.append(r.stressor)
    ordered = {k: rows[k] for k in sorted(rows, key=_row_key)}
    return HeatMap(sorted(stressors), ordered)


def load_replication_runs(manifest) -> list[EtrRun]:
    """Read a run manifest (``stressor,cooling,model,undervolt_mv,trace,operations``).

    Trace paths are resolved relative to the manifest. Energy is integrated
    over each trace's full span.
    """
    manifest = Path(manifest)
    runs = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            trace = read_trace_csv(manifest.parent / row["trace"])
            energy = integrate_energy(trace)
            runs.append(
                EtrRun(
                    row["stressor"],
                    row["cooling"],
                    row["model"],
                    float(row["undervolt_mv"]),
                    etr_record(energy, int(row["operations"])),
                )
            )
    return runs
