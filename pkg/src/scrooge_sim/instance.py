"""Simulated cloud instance: lifecycle, event log and the per-tick step."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

from .device import (
    Governor,
    Opp,
    Regime,
    ThrottleState,
    actual_opp,
    apply_throttling,
    effective_voltage,
    initial_throttle_state,
    requested_opp,
)
from .errors import LifecycleError
from .guardband import FailureEvent, ProcessPopulation, Region, classify_region, sample_failures
from .rng import Streams
from .thermal import Cooling, Deployment, ThermalParams, ThermalState, step_thermal, total_power


class Phase(enum.Enum):
    OFF = "Off"
    BOOTING = "BootingUndervolted"
    RUNNING = "RunningSpoofed"
    SHUTTING_DOWN = "ShuttingDown"
    CRASHED = "Crashed"


# Edges of the provider lifecycle machine. Crashed only leaves through an
# explicit shutdown (followed by a fresh boot).
TRANSITIONS = frozenset(
    {
        (Phase.OFF, Phase.BOOTING),
        (Phase.BOOTING, Phase.RUNNING),
        (Phase.BOOTING, Phase.CRASHED),
        (Phase.RUNNING, Phase.CRASHED),
        (Phase.RUNNING, Phase.SHUTTING_DOWN),
        (Phase.CRASHED, Phase.SHUTTING_DOWN),
        (Phase.SHUTTING_DOWN, Phase.OFF),
    }
)


@dataclass(frozen=True, slots=True)
class LogRecord:
    time: float
    kind: str
    payload: dict


class EventLog:
    """Append-only, time-ordered record of everything the simulator did."""

    def __init__(self):
        self._records: list[LogRecord] = []

    def append(self, time: float, record_kind: str, /, **payload: Any) -> LogRecord:
        if self._records and time < self._records[-1].time:
            raise ValueError(f"event at t={time} precedes t={self._records[-1].time}")
        if "time" in payload or "kind" in payload:
            raise ValueError("payload keys 'time' and 'kind' are reserved")
        rec = LogRecord(float(time), record_kind, payload)
        self._records.append(rec)
        return rec

    def __iter__(self):
        return iter(self._records)

    def __len__(self):
        return len(self._records)

    def __getitem__(self, i):
        return self._records[i]

    def of_kind(self, kind: str) -> list[LogRecord]:
        return [r for r in self._records if r.kind == kind]


@dataclass
class InstanceState:
    profile: Any
    level: int
    thermal_params: ThermalParams
    thermal: ThermalState
    throttle: ThrottleState
    deployment: Deployment = Deployment.BARE_METAL
    cooling: Cooling = Cooling.ACTIVE
    instance_id: str = "i-0"
    phase: Phase = Phase.OFF
    governor: Governor = Governor.ONDEMAND
    utilization: float = 0.0
    requested_opp: Opp | None = None
    population: ProcessPopulation = field(default_factory=ProcessPopulation)
    failures: list[FailureEvent] = field(default_factory=list)
    nonfatal_failures: int = 0
    clock: float = 0.0
    crash_time: float | None = None
    crash_temperature: float | None = None
    boot_duration: float = 0.0
    log: EventLog = field(default_factory=EventLog)
    streams: Streams = field(default_factory=lambda: Streams(0))
    provider: Any = None
    filesystem: Any = None

    @property
    def offset_mv(self) -> float:
        return self.profile.offset_for_level(self.level)

    @property
    def temperature(self) -> float:
        return self.thermal.temperature

    @property
    def opp(self) -> Opp:
        """OPP currently applied by the firmware."""
        req = self.requested_opp or self.throttle.active_opp
        return actual_opp(req, self.throttle)

    @property
    def reduced_frequency(self) -> bool:
        # below the level's top OPP the timing margin is restored
        return self.opp.frequency_mhz < self.throttle.active_opp.frequency_mhz

    @property
    def effective_voltage(self) -> float:
        return effective_voltage(self.opp, self.thermal.temperature, self.profile.avs, self.profile)

    @property
    def region(self) -> Region:
        return classify_region(self.profile, self.effective_voltage, self.temperature, self.throttle.regime)

    @property
    def effective_utilization(self) -> float:
        floor = self.profile.container_utilization_floor if self.deployment is Deployment.CONTAINER else 0.0
        return max(floor, self.utilization)

    def set_phase(self, phase: Phase) -> None:
        if (self.phase, phase) not in TRANSITIONS:
            raise LifecycleError(f"illegal transition {self.phase.value} -> {phase.value}")
        self.log.append(self.clock, "phase", old=self.phase.value, new=phase.value)
        self.phase = phase

    def power(self) -> float:
        opp = self.opp
        return total_power(self.thermal_params, self.effective_voltage, opp.frequency_hz, self.effective_utilization)

    def set_utilization(self, utilization: float) -> None:
        self.utilization = max(0.0, min(1.0, utilization))
        if self.governor is Governor.ONDEMAND:
            self.requested_opp = requested_opp(self.profile, self.level, self.governor, self.utilization)


def create_instance(
    profile,
    level: int = 0,
    cooling: Cooling | str = Cooling.ACTIVE,
    deployment: Deployment | str = Deployment.BARE_METAL,
    seed: int = 0,
    index: int = 0,
    label: str = "instance",
    ambient: float | None = None,
) -> InstanceState:
    cooling = Cooling(cooling)
    deployment = Deployment(deployment)
    params = profile.thermal_params(cooling, deployment)
    ambient = profile.ambient_c if ambient is None else ambient
    throttle = initial_throttle_state(profile, level)
    inst = InstanceState(
        profile=profile,
        level=level,
        thermal_params=params,
        thermal=ThermalState(ambient, ambient, 0.0),
        throttle=throttle,
        deployment=deployment,
        cooling=cooling,
        instance_id=f"{label}-{index}",
        streams=Streams(seed, owner=label, index=index),
        population=ProcessPopulation(profile.population.user_count, profile.population.kernel_count),
    )
    inst.requested_opp = requested_opp(profile, level, inst.governor, inst.utilization)
    return inst


def record_failures(inst: InstanceState, events: list[FailureEvent]) -> bool:
    """Log failures, apply crash escalation and return True if the instance crashed."""
    crashed = False
    k = inst.profile.escalation.crash_after_failures
    for ev in events:
        inst.failures.append(ev)
        inst.population.failed.append(ev)
        inst.log.append(
            ev.timestamp,
            "failure",
            failure_kind=ev.kind.value,
            victim=ev.victim.value,
            fatal=ev.fatal,
            temperature=ev.temperature,
            process=ev.process,
        )
        if not ev.fatal:
            inst.nonfatal_failures += 1
            # unknown victims count as user processes (slower path to a crash)
            if ev.victim.value == "KernelProcess":
                inst.population.kernel_count = max(0, inst.population.kernel_count - 1)
            else:
                inst.population.user_count = max(0, inst.population.user_count - 1)
        exhausted = inst.population.user_count < 1 or inst.population.kernel_count < 1
        if ev.fatal or inst.nonfatal_failures >= k or exhausted:
            crashed = True
            inst.crash_time = ev.timestamp
            inst.crash_temperature = ev.temperature
            inst.log.append(ev.timestamp, "crash", temperature=ev.temperature, cause=ev.kind.value, fatal=ev.fatal)
            break
    return crashed


def advance(inst: InstanceState, dt: float, rng=None, hold_temperature: float | None = None) -> list[FailureEvent]:
    """One simulation tick: heat, throttle, then draw failures at the new state."""
    th = inst.thermal
    if hold_temperature is not None:
        inst.thermal = ThermalState(hold_temperature, th.ambient, th.time + dt)
    else:
        inst.thermal = step_thermal(th, inst.power(), dt, inst.thermal_params)

    old = inst.throttle
    new = apply_throttling(old, inst.thermal.temperature, inst.profile)
    if new is not old:
        inst.throttle = new
        if new.regime is not old.regime:
            inst.log.append(inst.clock + dt, "regime", old=old.regime.value, new=new.regime.value,
                            temperature=inst.thermal.temperature)
        inst.log.append(inst.clock + dt, "opp", frequency_mhz=new.active_opp.frequency_mhz,
                        voltage_v=new.active_opp.voltage, core_mhz=new.core_frequency_mhz)

    events = sample_failures(inst, dt, rng if rng is not None else inst.streams.get("failure"))
    inst.clock += dt
    if events and record_failures(inst, events):
        inst.set_phase(Phase.CRASHED)
    return events


def heat_up_time(profile, level: int, target: float, cooling: Cooling | str = Cooling.ACTIVE,
                 deployment: Deployment | str = Deployment.BARE_METAL, tick: float = 0.1,
                 limit: float = 3600.0) -> float:
    """Seconds of full load, after an idle boot, until ``target`` degC is reached.

    Failures are not sampled. Returns ``inf`` if the target is never reached
    within ``limit`` seconds.
    """
    inst = create_instance(profile, level, cooling, deployment)
    inst.set_utilization(0.0)

    def step():
        inst.thermal = step_thermal(inst.thermal, inst.power(), tick, inst.thermal_params)
        inst.throttle = apply_throttling(inst.throttle, inst.thermal.temperature, profile)

    for _ in range(max(1, round(profile.boot.boot_time_s / tick))):
        step()
    inst.governor = Governor.PERFORMANCE
    inst.set_utilization(1.0)
    inst.requested_opp = inst.throttle.active_opp
    elapsed = 0.0
    prev = inst.temperature
    while elapsed < limit:
        step()
        elapsed += tick
        cur = inst.temperature
        if cur >= target:
            return elapsed - tick * (cur - target) / (cur - prev)
        prev = cur
    return math.inf


@dataclass(frozen=True, slots=True)
class TraceRow:
    time_s: float
    temp_c: float
    regime: str
    freq_mhz: int
    voltage_v: float


def throttle_trace(profile, level: int, duration: float, tick: float = 0.1,
                   temperatures=None, cooling: Cooling | str = Cooling.ACTIVE,
                   deployment: Deployment | str = Deployment.BARE_METAL) -> list[TraceRow]:
    """Firmware OPP over time under full load, without failure injection.

    ``temperatures`` may be a callable ``t -> degC`` that pins the SoC
    temperature; otherwise the thermal model drives it.
    """
    if not tick > 0 or duration < tick:
        raise ValueError("need tick > 0 and duration >= tick")
    inst = create_instance(profile, level, cooling, deployment)
    inst.governor = Governor.PERFORMANCE
    inst.set_utilization(1.0)
    inst.requested_opp = requested_opp(profile, level, Governor.PERFORMANCE)
    rows = []
    for k in range(1, round(duration / tick) + 1):
        t = k * tick
        if temperatures is None:
            inst.thermal = step_thermal(inst.thermal, inst.power(), tick, inst.thermal_params)
        else:
            inst.thermal = ThermalState(float(temperatures(t)), inst.thermal.ambient, t)
        inst.throttle = apply_throttling(inst.throttle, inst.thermal.temperature, profile)
        opp = inst.opp
        rows.append(TraceRow(round(t, 9), inst.temperature, inst.throttle.regime.value, opp.frequency_mhz, opp.voltage))
    return rows
