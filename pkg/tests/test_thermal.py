import csv
import math
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scrooge_sim.errors import PairingError, TraceFormatError, TraceRangeError, UndefinedMetricError
from scrooge_sim.thermal import (
    EtrRun,
    PowerTrace,
    ThermalParams,
    ThermalState,
    dynamic_power,
    etr_heatmap,
    etr_record,
    integrate_energy,
    load_replication_runs,
    normalize,
    read_trace_csv,
    step_thermal,
    time_to_reach,
    write_trace_csv,
)

REPLICATION = Path(str(resources.files("scrooge_sim") / "data" / "replication"))


def test_dynamic_power_exact_on_rationals():
    c, v, f, u = Fraction(1, 10**9), Fraction(12938, 10000), Fraction(1_400_000_000), Fraction(1)
    expected = c * v * v * f * u
    assert dynamic_power(1e-9, 1.2938, 1.4e9, 1.0) == pytest.approx(float(expected), rel=1e-12)


def test_dynamic_power_rejects_bad_utilization():
    with pytest.raises(ValueError):
        dynamic_power(1e-9, 1.0, 1e9, 1.2)


def test_rc_step_matches_closed_form():
    params = ThermalParams(10.0, 100.0)
    state = ThermalState(30.0, ambient=20.0)
    out = step_thermal(state, 5.0, 37.0, params)
    # T(t) = Teq + (T0 - Teq) e^{-t/tau}, Teq = 20 + 10*5
    assert out.temperature == pytest.approx(70.0 - 40.0 * math.exp(-0.37), rel=1e-12)
    assert out.time == 37.0


def test_time_to_reach_inverts_step():
    params = ThermalParams(10.0, 100.0)
    t = time_to_reach(30.0, 60.0, 70.0, 100.0)
    assert step_thermal(ThermalState(30.0, 20.0), 5.0, t, params).temperature == pytest.approx(60.0)
    assert time_to_reach(30.0, 75.0, 70.0, 100.0) == math.inf


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 120), st.floats(0, 10), st.floats(1e-3, 1e4), st.floats(1, 50), st.floats(1, 2000))
def test_rc_step_contracts_toward_equilibrium(t0, power, dt, r, tau):
    params = ThermalParams(r, tau)
    state = ThermalState(t0, ambient=24.0)
    eq = params.equilibrium(24.0, power)
    out = step_thermal(state, power, dt, params)
    assert abs(out.temperature - eq) <= abs(t0 - eq) + 1e-9
    assert min(t0, eq) - 1e-9 <= out.temperature <= max(t0, eq) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 120), st.floats(0, 10), st.floats(0.01, 100), st.floats(0.01, 100))
def test_rc_steps_compose(t0, power, a, b):
    params = ThermalParams(12.0, 150.0)
    s = ThermalState(t0)
    two = step_thermal(step_thermal(s, power, a, params), power, b, params)
    one = step_thermal(s, power, a + b, params)
    assert two.temperature == pytest.approx(one.temperature, abs=1e-9)


def ramp(n=11):
    t = np.arange(n, dtype=float)
    return PowerTrace(t, 2.0 + 0.1 * t)


def test_integrate_linear_trace_exactly():
    # integral of 2 + 0.1 t over [0, 10] is 20 + 5
    assert integrate_energy(ramp()) == pytest.approx(25.0, rel=1e-12)
    assert integrate_energy(ramp(), 2.5, 7.5) == pytest.approx(2 * 5 + 0.05 * (7.5**2 - 2.5**2), rel=1e-12)


def test_integrate_rejects_bad_windows():
    with pytest.raises(TraceRangeError):
        integrate_energy(ramp(), 5, 5)
    with pytest.raises(TraceRangeError):
        integrate_energy(ramp(), -1, 5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=3, max_size=30), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_energy_is_additive(powers, f1, f2):
    trace = PowerTrace(np.arange(len(powers), dtype=float), np.array(powers))
    lo, hi = sorted((f1, f2))
    if hi - lo < 1e-6:
        return
    a = trace.start + lo * (trace.end - trace.start)
    b = trace.start + hi * (trace.end - trace.start)
    total = integrate_energy(trace)
    parts = integrate_energy(trace, trace.start, a) + integrate_energy(trace, a, b) + integrate_energy(trace, b, trace.end)
    assert parts == pytest.approx(total, rel=1e-9, abs=1e-9)


def test_trace_validation():
    with pytest.raises(TraceFormatError):
        PowerTrace(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(TraceFormatError):
        PowerTrace(np.array([0.0, 1.0]), np.array([1.0, -1.0]))
    with pytest.raises(TraceFormatError):
        PowerTrace(np.array([0.0]), np.array([1.0]))


def test_trace_csv_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_trace_csv(ramp(), path, voltage=[5.0] * 11)
    back = read_trace_csv(path)
    assert back.source == "ingested"
    assert integrate_energy(back) == pytest.approx(25.0, rel=1e-9)


def test_trace_csv_bad_header(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("time,watts\n0,1\n1,1\n")
    with pytest.raises(TraceFormatError):
        read_trace_csv(path)


def test_reference_energies_match():
    with open(REPLICATION / "reference_energy.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    cache = {}
    for row in rows:
        trace = cache.setdefault(row["trace"], read_trace_csv(REPLICATION / row["trace"]))
        got = integrate_energy(trace, float(row["t0_s"]), float(row["t1_s"]))
        assert got == pytest.approx(float(row["energy_j"]), rel=1e-9), row


def test_etr_undefined_for_zero_operations():
    with pytest.raises(UndefinedMetricError):
        etr_record(10.0, 0)


def test_normalized_self_is_one():
    rec = etr_record(12.5, 1000)
    assert normalize(rec, rec).normalized == 1.0
    zero = etr_record(0.0, 10)
    assert normalize(zero, zero).normalized == 1.0


def test_heatmap_missing_baseline():
    runs = [EtrRun("pipe", "active", "4B", -15, etr_record(1.0, 10))]
    with pytest.raises(PairingError, match="pipe"):
        etr_heatmap(runs)


def test_heatmap_csv_layout():
    runs = [
        EtrRun("b", "passive", "3B", 0, etr_record(2.0, 10)),
        EtrRun("b", "passive", "3B", -75, etr_record(1.0, 10)),
        EtrRun("a", "passive", "3B", 0, etr_record(2.0, 10)),
        EtrRun("a", "passive", "3B", -75, etr_record(1.5, 10)),
    ]
    assert etr_heatmap(runs).to_csv() == "cooling,model,undervolt_mv,a,b\npassive,3B,-75,0.75,0.50\n"


def test_bundled_heatmap_cells():
    heat = etr_heatmap(load_replication_runs(REPLICATION / "runs.csv"))
    assert f"{heat.cell('passive', '3B', 'hrtimers'):.2f}" == "0.63"
    assert f"{heat.cell('active', '4B', 'pipe'):.2f}" == "0.70"
