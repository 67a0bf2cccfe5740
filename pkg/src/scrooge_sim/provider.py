"""Malicious provider: boot-config swapping, voltage spoofing and SLA checks."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .bootconfig import FREQUENCY_KEYS, VOLTAGE_KEYS, BootConfig, differing_keys, make_config
from .device import (
    Regime,
    ThrottleState,
    _hard_opp,
    actual_opp,
    effective_voltage,
    requested_opp,
    resolve_opp,
)
from .errors import ConfigurationError, InstanceUnavailableError, LifecycleError
from .guardband import FailureKind
from .instance import InstanceState, Phase, advance, create_instance
from .thermal import Cooling, Deployment

VISIBLE_CONFIG = "/boot/config.txt"
HIDDEN_CONFIG = "/boot/.config.alt"


class SpoofMode(enum.Enum):
    TABLE_LOOKUP = "TableLookup"
    OFFSET_ADDITION = "OffsetAddition"


@dataclass(frozen=True)
class ProviderConfig:
    undervolt_level: int = 0
    attack_enabled: bool = False
    spoof_mode: SpoofMode = SpoofMode.TABLE_LOOKUP
    tamper_logs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "spoof_mode", SpoofMode(self.spoof_mode))
        if self.undervolt_level > 0:
            raise ConfigurationError("undervolt level must be <= 0")

    @property
    def boot_level(self) -> int:
        return self.undervolt_level if self.attack_enabled else 0


@dataclass(frozen=True)
class ConfigPair:
    real_config: BootConfig
    facade_config: BootConfig

    def __post_init__(self):
        extra = differing_keys(self.real_config, self.facade_config) - set(VOLTAGE_KEYS) - set(FREQUENCY_KEYS)
        if extra:
            raise ConfigurationError(f"config pair differs outside voltage/frequency keys: {sorted(extra)}")
        if self.facade_config.over_voltage != 0:
            raise ConfigurationError("facade config must declare over_voltage=0")

    @classmethod
    def for_level(cls, level: int, arm_freq: int) -> "ConfigPair":
        return cls(make_config(level, arm_freq), make_config(0, arm_freq))


@dataclass
class Filesystem:
    """Boot partition as seen from the provider side."""

    files: dict[str, str] = field(default_factory=dict)
    swapped: bool = False

    def snapshot(self) -> dict[str, bytes]:
        return {k: v.encode() for k, v in sorted(self.files.items())}

    def swap(self, a: str, b: str) -> None:
        self.files[a], self.files[b] = self.files[b], self.files[a]
        self.swapped = not self.swapped


def _boot_tick(profile) -> float:
    # resolve boot in whole seconds but never more coarsely than 20 steps
    return min(1.0, profile.boot.boot_time_s / 20.0)


def boot_instance(
    provider: ProviderConfig,
    profile,
    seed: int = 0,
    index: int = 0,
    label: str = "instance",
    deployment: Deployment | str = Deployment.BARE_METAL,
    cooling: Cooling | str = Cooling.ACTIVE,
    instance: InstanceState | None = None,
    ambient: float | None = None,
) -> InstanceState:
    """Power on an instance with the provider's real config and hide it afterwards.

    Pass an ``Off`` instance to reboot it in place; otherwise a fresh one is
    created.
    """
    arm_freq = profile.table.nominal_opps[0].frequency_mhz
    if instance is None:
        pair = ConfigPair.for_level(provider.boot_level, arm_freq)
        fs = Filesystem({VISIBLE_CONFIG: pair.real_config.serialize(), HIDDEN_CONFIG: pair.facade_config.serialize()})
        # the firmware reads the electrical level straight from the file
        level = BootConfig.parse(fs.files[VISIBLE_CONFIG]).over_voltage
        inst = create_instance(profile, level, cooling, deployment, seed=seed, index=index, label=label,
                               ambient=ambient)
        inst.filesystem = fs
        inst.provider = provider
    else:
        inst = instance
        if inst.phase is not Phase.OFF:
            raise LifecycleError(f"cannot boot an instance in phase {inst.phase.value}")
        inst.level = BootConfig.parse(inst.filesystem.files[VISIBLE_CONFIG]).over_voltage
    inst.set_phase(Phase.BOOTING)
    inst.log.append(inst.clock, "boot", level=inst.level, attack=provider.attack_enabled)

    # firmware runs at arm_freq until the kernel's governor takes over
    inst.set_utilization(0.0)
    inst.requested_opp = inst.throttle.active_opp
    start = inst.clock
    dt = _boot_tick(profile)
    steps = max(1, round(profile.boot.boot_time_s / dt))
    rng = inst.streams.get("failure")
    for _ in range(steps):
        advance(inst, dt, rng)
        if inst.phase is Phase.CRASHED:
            froze = any(ev.kind is FailureKind.BOOT_FREEZE for ev in inst.failures)
            inst.boot_duration = profile.boot.boot_freeze_time_s if froze else inst.clock - start
            inst.log.append(inst.clock, "boot_failed", boot_duration=inst.boot_duration)
            return inst
    inst.boot_duration = inst.clock - start
    inst.requested_opp = requested_opp(profile, inst.level, inst.governor, inst.utilization)
    if provider.attack_enabled:
        inst.filesystem.swap(VISIBLE_CONFIG, HIDDEN_CONFIG)
    inst.set_phase(Phase.RUNNING)
    return inst


def shutdown_instance(instance: InstanceState) -> InstanceState:
    if instance.phase not in (Phase.RUNNING, Phase.CRASHED):
        raise LifecycleError(f"shutdown not allowed in phase {instance.phase.value}")
    instance.set_phase(Phase.SHUTTING_DOWN)
    if instance.filesystem.swapped:
        instance.filesystem.swap(VISIBLE_CONFIG, HIDDEN_CONFIG)
    instance.set_phase(Phase.OFF)
    return instance


def _require_reachable(instance: InstanceState) -> None:
    if instance.phase is not Phase.RUNNING:
        raise InstanceUnavailableError(f"{instance.instance_id} is unreachable ({instance.phase.value})")


def _nominal_view(instance: InstanceState) -> float:
    """Voltage an honest level-0 instance would report in the same state."""
    profile = instance.profile
    throttle = instance.throttle
    if throttle.regime is Regime.HARD_LIMITED:
        top = _hard_opp(profile, 0, throttle.hard_step_index)
    else:
        top = resolve_opp(profile, 0, throttle.regime)
    twin = ThrottleState(throttle.regime, top, throttle.hard_step_index, 0, throttle.core_frequency_mhz)
    req = requested_opp(profile, 0, instance.governor, instance.utilization)
    return effective_voltage(actual_opp(req, twin), instance.temperature, profile.avs, profile)


def read_cpu_voltage(instance: InstanceState) -> float:
    """Voltage reported to the tenant, possibly rewritten by the provider."""
    _require_reachable(instance)
    actual = instance.effective_voltage
    provider = instance.provider
    if provider is None or not provider.attack_enabled:
        reported = actual
    elif provider.spoof_mode is SpoofMode.TABLE_LOOKUP:
        reported = _nominal_view(instance)
    else:
        reported = actual + abs(instance.offset_mv) / 1000.0
    instance.log.append(instance.clock, "voltage_read", reported=reported, actual=actual)
    return reported


def read_cpu_frequency(instance: InstanceState) -> int:
    """Actual ARM frequency in MHz; frequency reads are never rewritten."""
    _require_reachable(instance)
    return instance.opp.frequency_mhz


def read_visible_config(instance: InstanceState) -> bytes:
    return instance.filesystem.files[VISIBLE_CONFIG].encode()


def visible_failures(instance: InstanceState) -> list:
    """Failure diagnostics that reach the tenant's kernel log."""
    provider = instance.provider
    if provider is not None and provider.tamper_logs:
        return []
    return list(instance.failures)


# -- SLA --------------------------------------------------------------------

class SlaVerdict(enum.Enum):
    VIOLATION = "violation"
    COVERED_SINGLE = "covered-single"
    NO_CRASH = "no-crash"


@dataclass(frozen=True)
class SlaReport:
    verdict: SlaVerdict
    window_s: float
    contributing: tuple[tuple[str, float], ...]


def evaluate_sla(crash_records: Iterable[tuple[str, float]], window: float) -> SlaReport:
    """Simultaneous crashes of two or more instances violate the SLA."""
    if not window > 0 or math.isinf(window):
        raise ConfigurationError("SLA window must be a positive finite number of seconds")
    records = sorted(((str(i), float(t)) for i, t in crash_records), key=lambda r: (r[1], r[0]))
    if not records:
        return SlaReport(SlaVerdict.NO_CRASH, window, ())
    contributing: list[tuple[str, float]] = []
    lo = 0
    for hi in range(len(records)):
        while records[hi][1] - records[lo][1] > window:
            lo += 1
        group = records[lo:hi + 1]
        if len({r[0] for r in group}) >= 2:
            for r in group:
                if r not in contributing:
                    contributing.append(r)
    if contributing:
        return SlaReport(SlaVerdict.VIOLATION, window, tuple(sorted(contributing, key=lambda r: (r[1], r[0]))))
    return SlaReport(SlaVerdict.COVERED_SINGLE, window, tuple(records))


def crash_records(instances: Sequence[InstanceState]) -> list[tuple[str, float]]:
    return [(i.instance_id, i.crash_time) for i in instances if i.crash_time is not None]
