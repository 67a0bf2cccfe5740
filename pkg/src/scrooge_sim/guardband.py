"""Guardband regions and the non-selective process-failure model.

A profile carries two voltage frontiers over temperature. Above the upper
frontier the SoC is safe, between the two it is critical and occasionally
fails processes, below the lower one it cannot boot or run at all.
Failure probabilities in the critical band come from per-offset anchor
points, each valid for one reference exposure window (a full benchmark
pass); shorter exposures use ``1 - (1 - p) ** (dt / window)``.
"""
from __future__ import annotations

import bisect
import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

from .device import Regime, effective_voltage, resolve_opp
from .errors import CalibrationError


class Region(enum.IntEnum):
    # ordered by voltage at fixed temperature
    FAILURE = 0
    CRITICAL = 1
    SAFE = 2


class FailureKind(enum.Enum):
    PAGING_REQUEST = "PagingRequest"
    BOOT_FREEZE = "BootFreeze"
    NULL_DEREFERENCE = "NullDereference"
    UNREADABLE_READ = "UnreadableRead"
    READ_ONLY_WRITE = "ReadOnlyWrite"


class Victim(enum.Enum):
    USER = "UserProcess"
    KERNEL = "KernelProcess"
    UNKNOWN = "Unknown"


# Observed shares over 407 process failures. They add up to 99.7 %, so the
# sampler renormalises.
KIND_WEIGHTS = {
    FailureKind.PAGING_REQUEST: 46.4,
    FailureKind.BOOT_FREEZE: 26.7,
    FailureKind.NULL_DEREFERENCE: 20.3,
    FailureKind.UNREADABLE_READ: 5.4,
    FailureKind.READ_ONLY_WRITE: 0.9,
}
VICTIM_WEIGHTS = {Victim.USER: 34.0, Victim.KERNEL: 15.0, Victim.UNKNOWN: 51.0}

WORKLOAD_PROCESS = "multbench"


def kind_distribution(booting: bool) -> dict[FailureKind, float]:
    weights = {k: w for k, w in KIND_WEIGHTS.items() if booting or k is not FailureKind.BOOT_FREEZE}
    total = sum(weights.values())
    return {k: w / total for k, w in weights.items()}


def victim_distribution() -> dict[Victim, float]:
    total = sum(VICTIM_WEIGHTS.values())
    return {k: w / total for k, w in VICTIM_WEIGHTS.items()}


class _Categorical:
    def __init__(self, dist):
        self.values = list(dist)
        acc, cum = 0.0, []
        for v in self.values:
            acc += dist[v]
            cum.append(acc)
        cum[-1] = 1.0
        self.cum = cum

    def draw(self, u: float):
        return self.values[bisect.bisect_right(self.cum, u)]


_KINDS_BOOT = _Categorical(kind_distribution(True))
_KINDS_RUN = _Categorical(kind_distribution(False))
_VICTIMS = _Categorical(victim_distribution())


class PiecewiseLinear:
    """Piecewise-linear function of temperature, clamped outside its knots."""

    __slots__ = ("xs", "ys")

    def __init__(self, points: Sequence[tuple[float, float]]):
        pts = sorted((float(x), float(y)) for x, y in points)
        if not pts:
            raise CalibrationError("piecewise-linear map needs at least one point")
        self.xs = [p[0] for p in pts]
        self.ys = [p[1] for p in pts]

    def __call__(self, x: float) -> float:
        xs, ys = self.xs, self.ys
        if x <= xs[0]:
            return ys[0]
        if x >= xs[-1]:
            return ys[-1]
        i = bisect.bisect_right(xs, x)
        x0, x1 = xs[i - 1], xs[i]
        return ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)

    def shifted(self, dy: float) -> "PiecewiseLinear":
        return PiecewiseLinear([(x, y + dy) for x, y in zip(self.xs, self.ys)])

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.xs, self.ys))


@dataclass(frozen=True)
class GuardbandFrontiers:
    lower_frontier: PiecewiseLinear
    upper_frontier: PiecewiseLinear
    nominal_curve: PiecewiseLinear


@dataclass(frozen=True)
class FailureRateModel:
    """Anchor points ``offset_mv -> [(temp_c, probability), ...]``."""

    anchors: dict[float, list[tuple[float, float]]]
    reference_window_s: float
    softlimit_drop_c: float | None = None
    span_c: tuple[float, float] = (20.0, 85.0)
    _curves: dict = field(default_factory=dict, compare=False, repr=False)

    def curve(self, model: str, offset_mv: float) -> PiecewiseLinear:
        c = self._curves.get(offset_mv)
        if c is None:
            c = self._curves[offset_mv] = PiecewiseLinear(self.anchors_for(model, offset_mv))
        return c

    def anchors_for(self, model: str, offset_mv: float) -> list[tuple[float, float]]:
        try:
            return self.anchors[float(offset_mv)]
        except KeyError:
            raise CalibrationError(f"{model}: no failure anchors for offset {offset_mv:g} mV") from None


@dataclass(frozen=True, slots=True)
class FailureEvent:
    kind: FailureKind
    victim: Victim
    fatal: bool
    timestamp: float
    temperature: float
    process: str | None = None


@dataclass
class ProcessPopulation:
    user_count: int = 40
    kernel_count: int = 60
    failed: list[FailureEvent] = field(default_factory=list)


# -- regions ----------------------------------------------------------------

def frontier_shift(profile, regime: Regime) -> float:
    """Voltage offset of the frontiers in a throttled regime.

    Soft-limit throttling lowers voltage and frequency together, so the
    frontiers move down by the same amount as the level-0 OPP.
    """
    table = profile.table
    if table.softlimit_opps and regime is not Regime.NORMAL:
        return (table.softlimit_opps[0].voltage_uv - table.nominal_opps[0].voltage_uv) / 1e6
    return 0.0


def classify_region(profile, effective_voltage: float, temperature: float, regime: Regime = Regime.NORMAL) -> Region:
    fr = profile.frontiers
    shift = frontier_shift(profile, regime) if regime is not Regime.NORMAL else 0.0
    if effective_voltage < fr.lower_frontier(temperature) + shift:
        return Region.FAILURE
    if effective_voltage < fr.upper_frontier(temperature) + shift:
        return Region.CRITICAL
    return Region.SAFE


def steady_regime(profile, temperature: float) -> Regime:
    """Regime a heating instance would be in at ``temperature``."""
    limits = profile.limits
    if temperature >= limits.hard_limit_c:
        return Regime.HARD_LIMITED
    if profile.table.softlimit_opps and temperature >= limits.soft_limit_c:
        return Regime.SOFT_LIMITED
    return Regime.NORMAL


def level_region(profile, level: int, temperature: float, regime: Regime | None = None) -> Region:
    regime = steady_regime(profile, temperature) if regime is None else regime
    opp = resolve_opp(profile, level, regime)
    v = effective_voltage(opp, temperature, profile.avs, profile)
    return classify_region(profile, v, temperature, regime)


def _boundary_temperature(profile, level: int, below: float, regime: Regime | None) -> float | None:
    """Highest temperature under ``below`` at which ``level`` is still safe."""
    key = ("boundary", level, below, regime)
    cache = profile.cache
    if key in cache:
        return cache[key]
    lo_span = profile.failure_model.span_c[0] - 20.0
    t = below
    step = 0.25
    found = None
    while t > lo_span:
        t -= step
        if level_region(profile, level, t, regime) is Region.SAFE:
            found = t
            break
    if found is not None:
        lo, hi = found, min(found + step, below)
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if level_region(profile, level, mid, regime) is Region.SAFE:
                lo = mid
            else:
                hi = mid
        found = lo
    cache[key] = found
    return found


def anchor_probability(profile, offset_mv: float, temperature: float, regime: Regime | None = None) -> float:
    """Per-window failure probability in the critical band (no region gate)."""
    model = profile.failure_model
    anchors = model.anchors_for(profile.model, offset_mv)
    temps = [a[0] for a in anchors]
    probs = [a[1] for a in anchors]
    if temperature >= temps[0]:
        return model.curve(profile.model, offset_mv)(temperature)
    boundary = _boundary_temperature(profile, profile.level_for_offset(offset_mv), temps[0], regime)
    if boundary is None:
        return probs[0]
    if temperature <= boundary:
        return 0.0
    return probs[0] * (temperature - boundary) / (temps[0] - boundary)


def window_probability(p_window: float, exposure: float, window: float) -> float:
    if p_window <= 0.0:
        return 0.0
    if p_window >= 1.0:
        return 1.0
    return -math.expm1(math.log1p(-p_window) * exposure / window)


def failure_probability(
    profile,
    offset_mv: float,
    temperature: float,
    exposure: float | None = None,
    regime: Regime | None = None,
) -> float:
    """Probability of at least one process failure during ``exposure`` seconds.

    ``exposure`` defaults to the profile's reference window, in which case the
    anchor value is returned unchanged. The offset is the nominal undervolt
    label (e.g. -75 for level -3 on the 3B/3B+).
    """
    model = profile.failure_model
    window = model.reference_window_s
    exposure = window if exposure is None else exposure
    if exposure <= 0:
        raise ValueError("exposure must be positive")
    offset_mv = float(offset_mv)
    if offset_mv == 0.0:
        return 0.0
    model.anchors_for(profile.model, offset_mv)  # unknown offsets are a calibration error
    level = profile.level_for_offset(offset_mv)
    region = level_region(profile, level, temperature, regime)
    if region is Region.SAFE:
        return 0.0
    if region is Region.FAILURE:
        return 1.0
    p = anchor_probability(profile, offset_mv, temperature, regime)
    return window_probability(p, exposure, window)


# -- sampling ---------------------------------------------------------------

def draw_event(rng, booting: bool, timestamp: float, temperature: float, panic_probability: float,
               forced_fatal: bool = False, population: ProcessPopulation | None = None) -> FailureEvent:
    kind = (_KINDS_BOOT if booting else _KINDS_RUN).draw(rng.random())
    victim = _VICTIMS.draw(rng.random())
    fatal = forced_fatal or kind is FailureKind.BOOT_FREEZE
    if victim is Victim.KERNEL:
        # an oops inside an interrupt handler escalates to a panic
        fatal = (rng.random() < panic_probability) or fatal
    process = None
    if population is not None and victim is not Victim.UNKNOWN:
        n = population.user_count if victim is Victim.USER else population.kernel_count
        prefix = "user" if victim is Victim.USER else "kworker"
        process = f"{prefix}-{int(rng.integers(0, max(n, 1)))}"
    return FailureEvent(kind, victim, fatal, timestamp, temperature, process)


def sample_failures(instance, dt: float, rng) -> list[FailureEvent]:
    """Draw the failures that hit ``instance`` during the next ``dt`` seconds.

    Exactly one uniform is consumed for the occurrence test on every call so
    that runs with different conditions stay coupled on the same stream.
    """
    from .instance import Phase  # local: instance imports this module

    u = rng.random()
    phase = instance.phase
    if phase not in (Phase.BOOTING, Phase.RUNNING):
        return []
    profile = instance.profile
    if instance.offset_mv == 0.0:
        return []
    regime = instance.throttle.regime
    temperature = instance.temperature
    if instance.reduced_frequency:
        return []
    region = classify_region(profile, instance.effective_voltage, temperature, regime)
    if region is Region.SAFE:
        return []
    if region is Region.FAILURE:
        p = 1.0
    else:
        p = window_probability(
            anchor_probability(profile, instance.offset_mv, temperature, regime),
            dt,
            profile.failure_model.reference_window_s,
        )
    if u >= p:
        return []
    event = draw_event(
        rng,
        booting=phase is Phase.BOOTING,
        timestamp=instance.clock + dt,
        temperature=temperature,
        panic_probability=profile.escalation.kernel_panic_probability,
        forced_fatal=region is Region.FAILURE,
        population=instance.population,
    )
    return [event]


# -- guardband analysis -----------------------------------------------------

OUTCOME_SAFE = "safe"
OUTCOME_FAILURE = "failure"
OUTCOME_BOOT_FAIL = "boot_fail"


@dataclass(frozen=True, slots=True)
class GuardbandRecord:
    temp_c: float
    level: int
    outcome: str
    voltage_v: float


def run_guardband_analysis(
    profile,
    temperature_schedule: Sequence[float],
    level_start: int = 0,
    seed: int = 0,
    tick: float = 1.0,
) -> list[GuardbandRecord]:
    """Temperature-based guardband sweep.

    For every scheduled temperature: boot at the level, condition the SoC to
    the temperature, run one reference pass of the multiplication benchmark
    under the performance governor, then lower the level and repeat. The
    sweep at a temperature ends when the system fails to boot or crashes,
    or when the firmware has no lower level.
    """
    from .detection import DetectionConfig, run_detection
    from .instance import Phase
    from .provider import ProviderConfig, boot_instance

    if not temperature_schedule:
        raise ValueError("temperature schedule must not be empty")
    window = profile.failure_model.reference_window_s
    records: list[GuardbandRecord] = []
    for ti, temp in enumerate(temperature_schedule):
        level = level_start
        while level in profile.table.nominal_opps:
            provider = ProviderConfig(undervolt_level=level, attack_enabled=level != 0)
            inst = boot_instance(provider, profile, seed=seed, index=ti * 1000 - level, label="guardband")
            regime = steady_regime(profile, temp)
            volts = effective_voltage(resolve_opp(profile, level, regime), temp, profile.avs, profile)
            if inst.phase is Phase.CRASHED or level_region(profile, level, temp, regime) is Region.FAILURE:
                records.append(GuardbandRecord(float(temp), level, OUTCOME_BOOT_FAIL, volts))
                break
            cfg = DetectionConfig(thread_count=1, max_duration=window, hold_temperature=float(temp))
            report = run_detection(inst, cfg, tick=tick)
            if report.crashed:
                records.append(GuardbandRecord(float(temp), level, OUTCOME_FAILURE, volts))
                break
            outcome = OUTCOME_FAILURE if inst.failures else OUTCOME_SAFE
            records.append(GuardbandRecord(float(temp), level, outcome, volts))
            level -= 1
    return records


def guardband_csv(records: Sequence[GuardbandRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["temp_c", "level", "outcome"])
    for r in records:
        w.writerow([f"{r.temp_c:g}", r.level, r.outcome])
    return buf.getvalue()


def recover_frontiers(records: Sequence[GuardbandRecord]) -> dict[float, dict[str, float | None]]:
    """Estimate the frontiers from a sweep.

    ``upper`` is the voltage of the lowest level that ran clean; ``lower`` is
    the voltage of the level at which the sweep stopped (``None`` if the
    sweep ran out of firmware levels first).
    """
    out: dict[float, dict[str, float | None]] = {}
    for r in records:
        entry = out.setdefault(r.temp_c, {"upper": None, "lower": None})
        if r.outcome == OUTCOME_SAFE:
            entry["upper"] = r.voltage_v if entry["upper"] is None else min(entry["upper"], r.voltage_v)
        else:
            entry["lower"] = r.voltage_v if entry["lower"] is None else min(entry["lower"], r.voltage_v)
    return out


def calibrated_upper_frontier(profile, temperature: float) -> float:
    """Upper frontier in the regime the SoC runs at ``temperature``."""
    regime = steady_regime(profile, temperature)
    return profile.frontiers.upper_frontier(temperature) + frontier_shift(profile, regime)
