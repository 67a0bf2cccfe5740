"""Electrical model of the SoC: OPP tables, throttling and AVS.

Voltages are stored as integer microvolts so that table values compare
bit-exactly; every table entry is a multiple of 100 uV (0.1 mV).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import ConfigurationError


class Regime(enum.Enum):
    NORMAL = "Normal"
    SOFT_LIMITED = "SoftLimited"
    HARD_LIMITED = "HardLimited"


class Governor(enum.Enum):
    PERFORMANCE = "performance"
    ONDEMAND = "ondemand"

    @classmethod
    def parse(cls, name) -> "Governor":
        if isinstance(name, Governor):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigurationError(f"unknown governor {name!r}") from None


def volts_to_uv(volts: float) -> int:
    """Convert a table voltage (4 decimal places) to integer microvolts."""
    uv = round(float(volts) * 1_000_000)
    if uv % 100:
        raise ConfigurationError(f"voltage {volts!r} is not a multiple of 0.1 mV")
    return uv


@dataclass(frozen=True, slots=True)
class Opp:
    frequency_mhz: int
    voltage_uv: int

    def __post_init__(self):
        if self.frequency_mhz <= 0:
            raise ConfigurationError(f"OPP frequency must be positive, got {self.frequency_mhz}")
        if self.voltage_uv <= 0:
            raise ConfigurationError("OPP voltage must be positive for a running frequency")
        if self.voltage_uv % 100:
            raise ConfigurationError(f"OPP voltage {self.voltage_uv} uV is finer than 0.1 mV")

    @property
    def voltage(self) -> float:
        return self.voltage_uv / 1_000_000

    @property
    def frequency_hz(self) -> float:
        return self.frequency_mhz * 1e6

    @classmethod
    def of(cls, frequency_mhz: int, voltage_v: float) -> "Opp":
        return cls(int(frequency_mhz), volts_to_uv(voltage_v))


@dataclass(frozen=True)
class VoltageTable:
    nominal_opps: dict[int, Opp]
    softlimit_opps: dict[int, Opp] | None
    limit_voltage_uv: int
    limit_frequency_steps: tuple[int, ...]
    limit_core_frequency_steps: tuple[int, ...]
    offset_mv: dict[int, float]
    idle_opp: Opp
    core_frequency_mhz: int

    @property
    def levels(self) -> list[int]:
        return sorted(self.nominal_opps, reverse=True)

    @property
    def lowest_level(self) -> int:
        return min(self.nominal_opps)

    @property
    def limit_voltage(self) -> float:
        return self.limit_voltage_uv / 1_000_000


@dataclass(frozen=True, slots=True)
class AvsParams:
    slope_mv_per_c: float = 0.0
    reference_temp_c: float = 40.0

    def __post_init__(self):
        if self.slope_mv_per_c < 0:
            raise ConfigurationError("AVS slope must be non-negative")


@dataclass(frozen=True, slots=True)
class ProtectionBand:
    """Temperature band in which the firmware trims the nominal voltage (4B)."""

    low_c: float
    high_c: float
    drop_mv: float


@dataclass(frozen=True, slots=True)
class ThrottleState:
    regime: Regime
    active_opp: Opp
    hard_step_index: int = 0
    level: int = 0
    core_frequency_mhz: int = 0


def resolve_opp(profile, level: int, regime: Regime = Regime.NORMAL) -> Opp:
    """Exact table lookup; no interpolation between levels.

    Hard-limited lookups return the voltage held by the firmware together with
    the first frequency of the limit step list.
    """
    table = profile.table
    if level not in table.nominal_opps:
        raise ConfigurationError(f"{profile.model}: unknown overvoltage level {level}")
    if regime is Regime.NORMAL:
        return table.nominal_opps[level]
    if regime is Regime.SOFT_LIMITED:
        if not table.softlimit_opps:
            raise ConfigurationError(f"{profile.model} has no soft-limit throttling")
        if level not in table.softlimit_opps:
            raise ConfigurationError(f"{profile.model}: no soft-limit entry for level {level}")
        return table.softlimit_opps[level]
    return _hard_opp(profile, level, 0)


def _hard_base(profile, level: int) -> Opp:
    # soft limit engages first, so a soft-limited model holds its SL voltage
    table = profile.table
    if table.softlimit_opps:
        return table.softlimit_opps[level]
    return table.nominal_opps[level]


def _hard_opp(profile, level: int, index: int) -> Opp:
    steps = profile.table.limit_frequency_steps
    index = min(index, len(steps) - 1)
    return Opp(steps[index], _hard_base(profile, level).voltage_uv)


def initial_throttle_state(profile, level: int) -> ThrottleState:
    return ThrottleState(
        regime=Regime.NORMAL,
        active_opp=resolve_opp(profile, level, Regime.NORMAL),
        hard_step_index=0,
        level=level,
        core_frequency_mhz=profile.table.core_frequency_mhz,
    )


def apply_throttling(state: ThrottleState, temperature: float, profile) -> ThrottleState:
    """Advance the firmware throttle state machine by one tick.

    Soft limit first, hard limit overrides. While over the hard limit the ARM
    frequency steps down one entry per call and then holds at the last entry.
    """
    table = profile.table
    limits = profile.limits
    has_soft = bool(table.softlimit_opps)
    level = state.level

    if temperature >= limits.hard_limit_c:
        steps = table.limit_frequency_steps
        if state.regime is Regime.HARD_LIMITED:
            index = min(state.hard_step_index + 1, len(steps) - 1)
        else:
            index = min(1, len(steps) - 1)
        cores = table.limit_core_frequency_steps
        return ThrottleState(
            Regime.HARD_LIMITED,
            _hard_opp(profile, level, index),
            index,
            level,
            cores[min(index, len(cores) - 1)],
        )

    if state.regime is Regime.HARD_LIMITED:
        if temperature >= limits.hard_release_c:
            return state
        regime = Regime.NORMAL
        if has_soft and temperature >= limits.soft_release_c:
            regime = Regime.SOFT_LIMITED
    else:
        regime = state.regime
        if has_soft:
            if regime is Regime.NORMAL and temperature >= limits.soft_limit_c:
                regime = Regime.SOFT_LIMITED
            elif regime is Regime.SOFT_LIMITED and temperature < limits.soft_release_c:
                regime = Regime.NORMAL

    if regime is state.regime and state.regime is not Regime.HARD_LIMITED:
        return state
    return ThrottleState(regime, resolve_opp(profile, level, regime), 0, level, table.core_frequency_mhz)


def effective_voltage(opp: Opp, temperature: float, avs: AvsParams, profile=None) -> float:
    """Voltage seen by the die after AVS correction and firmware protection."""
    v = opp.voltage + avs.slope_mv_per_c * 1e-3 * max(0.0, temperature - avs.reference_temp_c)
    band = getattr(profile, "protection", None)
    if band is not None and band.low_c <= temperature <= band.high_c:
        v -= band.drop_mv * 1e-3
    return max(0.0, v)


def available_opps(profile, level: int) -> list[Opp]:
    """OPPs the governor may request at ``level``, ascending by frequency."""
    top = resolve_opp(profile, level)
    idle = profile.table.idle_opp
    if idle.frequency_mhz >= top.frequency_mhz:
        return [top]
    return [idle, top]


def requested_opp(profile, level: int, governor, utilization: float = 1.0) -> Opp:
    governor = Governor.parse(governor)
    opps = available_opps(profile, level)
    if governor is Governor.PERFORMANCE:
        return opps[-1]
    target = max(0.0, min(1.0, utilization)) * opps[-1].frequency_mhz
    for opp in opps:
        if opp.frequency_mhz >= target:
            return opp
    return opps[-1]


def actual_opp(requested: Opp, throttle: ThrottleState) -> Opp:
    """OPP actually applied by the firmware.

    The OS request is honoured when it is at or below the throttle ceiling;
    otherwise the firmware's throttled OPP wins, which is why the requested
    frequency can differ from the actual one.
    """
    if throttle.regime is Regime.NORMAL or requested.frequency_mhz < throttle.active_opp.frequency_mhz:
        return requested
    return throttle.active_opp


def set_governor(instance, governor):
    """Select a CPUFreq governor on a booted instance and refresh its request."""
    governor = Governor.parse(governor)
    instance.governor = governor
    instance.requested_opp = requested_opp(instance.profile, instance.level, governor, instance.utilization)
    return instance

