"""Tenant-side detection: run a multiplication workload at full load until
the instance crashes, and aggregate crash statistics over many trials."""
from __future__ import annotations

import csv
import enum
import io
import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .device import Governor, set_governor
from .errors import ConfigurationError, LifecycleError
from .instance import InstanceState, Phase, advance
from .provider import ProviderConfig, SlaReport, boot_instance, crash_records, evaluate_sla, visible_failures
from .thermal import Cooling, Deployment

WORD_MASK = (1 << 64) - 1
BATCH_SIZE = 8  # multiplications per simulated tick


class Verdict(enum.Enum):
    DETECTED = "UndervoltDetected"
    NO_EVIDENCE = "NoEvidence"
    INCONCLUSIVE = "Inconclusive"


EXIT_CODES = {Verdict.NO_EVIDENCE: 0, Verdict.DETECTED: 10, Verdict.INCONCLUSIVE: 11}


@dataclass(frozen=True)
class DetectionConfig:
    thread_count: int = 4
    max_duration: float = 600.0
    target_temperature: float | None = None
    deployment: Deployment = Deployment.BARE_METAL
    synchronize: bool = False
    # pin the SoC temperature (conditioning runs) instead of simulating heat-up
    hold_temperature: float | None = None
    cooling: Cooling = Cooling.ACTIVE

    def __post_init__(self):
        object.__setattr__(self, "deployment", Deployment(self.deployment))
        object.__setattr__(self, "cooling", Cooling(self.cooling))
        if not isinstance(self.thread_count, int) or self.thread_count < 1:
            raise ConfigurationError("thread_count must be an integer >= 1")
        if not self.max_duration > 0:
            raise ConfigurationError("max_duration must be > 0")


@dataclass
class MultiplicationWorkload:
    """Two random 64-bit words multiplied with alternating operand order."""

    operand_a: int
    operand_b: int
    reference_product: int
    alternate_flag: bool = False
    checked: int = 0
    mismatches: int = 0

    @classmethod
    def from_rng(cls, rng) -> "MultiplicationWorkload":
        a, b = (int(x) for x in rng.integers(0, 1 << 64, size=2, dtype=np.uint64))
        return cls(a, b, (a * b) & WORD_MASK)

    def run_batch(self, n: int = BATCH_SIZE) -> int:
        for _ in range(n):
            if self.alternate_flag:
                product = (self.operand_b * self.operand_a) & WORD_MASK
            else:
                product = (self.operand_a * self.operand_b) & WORD_MASK
            self.alternate_flag = not self.alternate_flag
            self.checked += 1
            if product != self.reference_product:
                self.mismatches += 1
        return self.mismatches


@dataclass
class DetectionReport:
    verdict: Verdict
    crash_time: float | None = None
    crash_temperature: float | None = None
    failure_events_observed: int = 0
    samples: list[tuple[int, float | None, float | None]] = field(default_factory=list)
    duration: float = 0.0
    trials: int = 1
    crashes: int = 0
    products_checked: int = 0
    product_mismatches: int = 0
    boot_crash: bool = False

    @property
    def crashed(self) -> bool:
        return self.verdict is Verdict.DETECTED

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]


def utilization_for_threads(thread_count: int, cores: int) -> float:
    return min(1.0, thread_count / cores)


def _verdict(crashed: bool, observed: int) -> Verdict:
    if crashed:
        return Verdict.DETECTED
    return Verdict.INCONCLUSIVE if observed else Verdict.NO_EVIDENCE


def run_detection(instance: InstanceState, config: DetectionConfig, rng=None, tick: float = 0.1,
                  run_id: int = 0) -> DetectionReport:
    """Drive ``instance`` at maximum load until it crashes or time runs out."""
    if instance.phase is not Phase.RUNNING:
        raise LifecycleError(f"detection needs a running instance, got {instance.phase.value}")
    if not tick > 0:
        raise ConfigurationError("tick must be > 0")
    set_governor(instance, Governor.PERFORMANCE)
    instance.set_utilization(utilization_for_threads(config.thread_count, instance.profile.cores))
    workload = MultiplicationWorkload.from_rng(instance.streams.get("workload"))
    rng = instance.streams.get("failure") if rng is None else rng
    start = instance.clock
    steps = max(1, math.ceil(config.max_duration / tick - 1e-9))
    instance.log.append(start, "workload_start", threads=config.thread_count)
    for _ in range(steps):
        workload.run_batch()
        advance(instance, tick, rng, hold_temperature=config.hold_temperature)
        if instance.phase is Phase.CRASHED:
            break
        if config.target_temperature is not None and instance.temperature >= config.target_temperature:
            break
    crashed = instance.phase is Phase.CRASHED
    observed = len(visible_failures(instance))
    crash_time = instance.crash_time - start if crashed else None
    crash_temp = instance.crash_temperature if crashed else None
    instance.log.append(instance.clock, "workload_end", crashed=crashed, checked=workload.checked)
    return DetectionReport(
        verdict=_verdict(crashed, observed),
        crash_time=crash_time,
        crash_temperature=crash_temp,
        failure_events_observed=observed,
        samples=[(run_id, crash_time, crash_temp)],
        duration=instance.clock - start,
        crashes=int(crashed),
        products_checked=workload.checked,
        product_mismatches=workload.mismatches,
    )


# -- campaigns --------------------------------------------------------------

@dataclass(frozen=True)
class Histogram:
    bin_width: float
    bin_starts: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def mode(self) -> float | None:
        """Centre of the most populated bin (first one on ties)."""
        if not self.counts or max(self.counts) == 0:
            return None
        i = self.counts.index(max(self.counts))
        return self.bin_starts[i] + self.bin_width / 2

    def to_csv(self, header: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([header, "count"])
        for start, n in zip(self.bin_starts, self.counts):
            w.writerow([f"{start:g}", n])
        return buf.getvalue()


def histogram(values: Sequence[float], bin_width: float) -> Histogram:
    if not bin_width > 0:
        raise ConfigurationError("bin width must be > 0")
    if not values:
        return Histogram(bin_width, (), ())
    idx = [math.floor(v / bin_width) for v in values]
    lo, hi = min(idx), max(idx)
    counts = [0] * (hi - lo + 1)
    for i in idx:
        counts[i - lo] += 1
    starts = tuple(round((lo + k) * bin_width, 9) for k in range(len(counts)))
    return Histogram(bin_width, starts, tuple(counts))


@dataclass
class CampaignResult:
    report: DetectionReport
    runtime_hist: Histogram
    temp_hist: Histogram
    crash_probability: float
    confidence_interval: tuple[float, float]
    reports: list[DetectionReport] = field(default_factory=list, repr=False)

    def runtime_csv(self) -> str:
        return self.runtime_hist.to_csv("bin_start_s")

    def temp_csv(self) -> str:
        return self.temp_hist.to_csv("bin_start_c")


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def aggregate(reports: Sequence[DetectionReport]) -> DetectionReport:
    """Combine per-trial reports; crash time and temperature become medians."""
    if len(reports) == 1:
        return reports[0]
    crashed = [r for r in reports if r.crashed]
    observed = sum(r.failure_events_observed for r in reports)
    return DetectionReport(
        verdict=_verdict(bool(crashed), observed),
        crash_time=statistics.median(r.crash_time for r in crashed) if crashed else None,
        crash_temperature=statistics.median(r.crash_temperature for r in crashed) if crashed else None,
        failure_events_observed=observed,
        samples=[s for r in reports for s in r.samples],
        duration=sum(r.duration for r in reports),
        trials=len(reports),
        crashes=len(crashed),
        products_checked=sum(r.products_checked for r in reports),
        product_mismatches=sum(r.product_mismatches for r in reports),
        boot_crash=any(r.boot_crash for r in reports),
    )


def run_trial(profile, provider: ProviderConfig, config: DetectionConfig, seed: int, index: int,
              tick: float = 0.1) -> DetectionReport:
    inst = boot_instance(provider, profile, seed=seed, index=index, label="trial",
                         deployment=config.deployment, cooling=config.cooling)
    if inst.phase is Phase.CRASHED:
        return boot_failure_report(inst, index)
    return run_detection(inst, config, tick=tick, run_id=index)


def boot_failure_report(instance: InstanceState, run_id: int = 0) -> DetectionReport:
    """An instance that never comes up counts as a crash at workload start."""
    observed = len(visible_failures(instance))
    return DetectionReport(Verdict.DETECTED, 0.0, instance.crash_temperature, observed,
                           [(run_id, 0.0, instance.crash_temperature)], 0.0, 1, 1, boot_crash=True)


def run_campaign(profile, provider: ProviderConfig, config: DetectionConfig, trials: int, seed: int,
                 tick: float = 0.1, runtime_bin_s: float = 5.0, temp_bin_c: float = 1.0) -> CampaignResult:
    """Independent seeded trials, each with its own instance and random streams."""
    if not isinstance(trials, int) or trials < 1:
        raise ConfigurationError("trials must be an integer >= 1")
    reports = [run_trial(profile, provider, config, seed, i, tick) for i in range(trials)]
    agg = aggregate(reports)
    times = [r.crash_time for r in reports if r.crashed]
    temps = [r.crash_temperature for r in reports if r.crashed]
    return CampaignResult(
        report=agg,
        runtime_hist=histogram(times, runtime_bin_s),
        temp_hist=histogram(temps, temp_bin_c),
        crash_probability=agg.crashes / trials,
        confidence_interval=wilson_interval(agg.crashes, trials),
        reports=reports,
    )


# -- coordinated crashes ----------------------------------------------------

@dataclass
class SyncResult:
    reports: list[DetectionReport]
    crash_records: list[tuple[str, float]]
    sla: SlaReport


def coordinated_utilization(temperatures: Sequence[float], gain: float = 0.5, tolerance: float = 0.5,
                            floor: float = 0.05) -> list[float]:
    """Proportional throttle: instances ahead of the coolest one back off."""
    coolest = min(temperatures)
    return [min(1.0, max(floor, 1.0 - gain * max(0.0, t - coolest - tolerance))) for t in temperatures]


def synchronize_crashes(instances: Sequence[InstanceState], config: DetectionConfig, window_s: float,
                        tick: float = 0.1, gain: float = 0.5, tolerance: float = 0.5) -> SyncResult:
    """Run the workload on several instances in lock step.

    With ``config.synchronize`` the hotter instances reduce their load until
    the coolest one catches up; without it every instance runs flat out.
    """
    if len(instances) < 2:
        raise ConfigurationError("synchronised crashes need at least two instances")
    for inst in instances:
        if inst.phase is not Phase.RUNNING:
            raise LifecycleError(f"{inst.instance_id} is not running")
        set_governor(inst, Governor.PERFORMANCE)
    workloads = [MultiplicationWorkload.from_rng(i.streams.get("workload")) for i in instances]
    rngs = [i.streams.get("failure") for i in instances]
    starts = [i.clock for i in instances]
    full = [utilization_for_threads(config.thread_count, i.profile.cores) for i in instances]
    steps = max(1, math.ceil(config.max_duration / tick - 1e-9))
    for _ in range(steps):
        running = [k for k, i in enumerate(instances) if i.phase is Phase.RUNNING]
        if not running:
            break
        if config.synchronize and len(running) > 1:
            utils = coordinated_utilization([instances[k].temperature for k in running], gain, tolerance)
        else:
            utils = [1.0] * len(running)
        for k, u in zip(running, utils):
            inst = instances[k]
            inst.set_utilization(u * full[k])
            workloads[k].run_batch()
            advance(inst, tick, rngs[k])
    reports = []
    for k, inst in enumerate(instances):
        crashed = inst.phase is Phase.CRASHED
        observed = len(visible_failures(inst))
        ct = inst.crash_time - starts[k] if crashed else None
        reports.append(DetectionReport(_verdict(crashed, observed), ct, inst.crash_temperature if crashed else None,
                                       observed, [(k, ct, inst.crash_temperature)], inst.clock - starts[k], 1,
                                       int(crashed), workloads[k].checked, workloads[k].mismatches))
    records = crash_records(instances)
    return SyncResult(reports, records, evaluate_sla(records, window_s))

