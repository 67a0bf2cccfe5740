from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scrooge_sim.device import (
    AvsParams,
    Governor,
    Opp,
    Regime,
    actual_opp,
    apply_throttling,
    available_opps,
    effective_voltage,
    initial_throttle_state,
    requested_opp,
    resolve_opp,
    set_governor,
    volts_to_uv,
)
from scrooge_sim.errors import ConfigurationError
from scrooge_sim.instance import create_instance

# Soft-limit table of the 3B+, copied from the measurement tables:
# level -> (V, MHz, V_SL, MHz_SL)
SOFTLIMIT_TABLE = {
    0: ("1.3750", 1400, "1.2688", 1200),
    -1: ("1.3500", 1400, "1.2375", 1200),
    -2: ("1.3188", 1400, "1.2125", 1200),
    -3: ("1.2938", 1400, "1.1875", 1200),
}


def tenths_mv(text):
    return int(Fraction(text) * 10000)


def drive(state, temp, profile, n):
    seen = []
    for _ in range(n):
        state = apply_throttling(state, temp, profile)
        seen.append(state)
    return seen


@pytest.mark.parametrize("level", sorted(SOFTLIMIT_TABLE))
def test_softlimit_table_cells(pi3bplus, level):
    v, f, v_sl, f_sl = SOFTLIMIT_TABLE[level]
    nominal = resolve_opp(pi3bplus, level, Regime.NORMAL)
    limited = resolve_opp(pi3bplus, level, Regime.SOFT_LIMITED)
    assert (nominal.voltage_uv // 100, nominal.frequency_mhz) == (tenths_mv(v), f)
    assert (limited.voltage_uv // 100, limited.frequency_mhz) == (tenths_mv(v_sl), f_sl)


def test_irregular_steps_are_kept(pi3bplus):
    nom = pi3bplus.table.nominal_opps
    sl = pi3bplus.table.softlimit_opps
    assert nom[-1].voltage_uv - nom[-2].voltage_uv == 31_200
    assert sl[0].voltage_uv - sl[-1].voltage_uv == 31_300


def test_resolve_is_deterministic(pi3bplus):
    assert resolve_opp(pi3bplus, 0) == resolve_opp(pi3bplus, 0)


def test_resolve_errors(pi3b, pi3bplus):
    with pytest.raises(ConfigurationError):
        resolve_opp(pi3bplus, -42)
    with pytest.raises(ConfigurationError):
        resolve_opp(pi3b, 0, Regime.SOFT_LIMITED)


def test_opp_rejects_sub_tenth_millivolt():
    with pytest.raises(ConfigurationError):
        volts_to_uv(1.23456)
    with pytest.raises((ConfigurationError, ValueError)):
        Opp(1200, 0)


def test_3b_first_hard_limit_step(pi3b):
    s = apply_throttling(initial_throttle_state(pi3b, 0), 86.0, pi3b)
    assert s.regime is Regime.HARD_LIMITED
    assert s.active_opp.voltage_uv == 1_281_300
    assert s.active_opp.frequency_mhz == 1195


def test_3b_hard_limit_sequence_then_hold(pi3b):
    start = initial_throttle_state(pi3b, 0)
    freqs = [start.active_opp.frequency_mhz] + [s.active_opp.frequency_mhz for s in drive(start, 90.0, pi3b, 6)]
    assert freqs == [1200, 1195, 1141, 1087, 1034, 1034, 1034]


def test_4b_hard_limit_sequence_with_core(pi4b):
    start = initial_throttle_state(pi4b, 0)
    seen = drive(start, 88.0, pi4b, 3)
    assert [start.active_opp.frequency_mhz] + [s.active_opp.frequency_mhz for s in seen] == [1500, 1000, 1000, 1000]
    assert [start.core_frequency_mhz] + [s.core_frequency_mhz for s in seen] == [500, 333, 333, 333]
    assert all(s.active_opp.voltage_uv == 850_000 for s in seen)


def test_3bplus_soft_limit_entry_level_minus_one(pi3bplus):
    s = apply_throttling(initial_throttle_state(pi3bplus, -1), 61.0, pi3bplus)
    assert s.regime is Regime.SOFT_LIMITED
    assert (s.active_opp.voltage_uv, s.active_opp.frequency_mhz) == (1_237_500, 1200)


def test_4b_below_thresholds_unchanged(pi4b):
    s = initial_throttle_state(pi4b, 0)
    assert apply_throttling(s, 25.0, pi4b) is s


def test_hysteresis_release(pi3bplus):
    s = apply_throttling(initial_throttle_state(pi3bplus, 0), 60.0, pi3bplus)
    assert apply_throttling(s, 57.0, pi3bplus).regime is Regime.SOFT_LIMITED
    assert apply_throttling(s, 54.9, pi3bplus).regime is Regime.NORMAL
    hard = apply_throttling(s, 85.0, pi3bplus)
    assert apply_throttling(hard, 81.0, pi3bplus) is hard
    back = apply_throttling(hard, 79.0, pi3bplus)
    assert back.regime is Regime.SOFT_LIMITED


def test_avs_examples(pi4b):
    avs = AvsParams(0.5, 40.0)
    assert effective_voltage(Opp.of(1400, 1.3750), 40.0, avs) == pytest.approx(1.3750, abs=1e-12)
    # oracle: 1.2938 + 0.5 mV * 10
    assert effective_voltage(Opp.of(1400, 1.2938), 50.0, avs) == pytest.approx(1.2938 + 0.0005 * 10, abs=1e-12)
    assert effective_voltage(resolve_opp(pi4b, 0), 60.0, pi4b.avs, pi4b) == pytest.approx(0.8375, abs=1e-12)
    assert effective_voltage(resolve_opp(pi4b, 0), 71.0, pi4b.avs, pi4b) == pytest.approx(0.8500, abs=1e-12)


def test_avs_slope_must_be_non_negative():
    with pytest.raises(ConfigurationError):
        AvsParams(-0.1)


def test_governors(pi3b):
    inst = create_instance(pi3b, -3)
    inst.set_utilization(0.0)
    assert inst.requested_opp == available_opps(pi3b, -3)[0]
    set_governor(inst, "performance")
    top = resolve_opp(pi3b, -3)
    assert inst.requested_opp == top
    snapshot = (inst.governor, inst.requested_opp)
    set_governor(inst, Governor.PERFORMANCE)
    assert (inst.governor, inst.requested_opp) == snapshot
    with pytest.raises(ConfigurationError):
        set_governor(inst, "schedutil")


def test_ondemand_law(pi3b):
    # lowest OPP whose frequency covers utilization * f_max
    assert requested_opp(pi3b, 0, "ondemand", 0.5).frequency_mhz == 600
    assert requested_opp(pi3b, 0, "ondemand", 0.51).frequency_mhz == 1200


def test_requested_differs_from_actual_when_throttled(pi3bplus):
    s = apply_throttling(initial_throttle_state(pi3bplus, 0), 62.0, pi3bplus)
    req = requested_opp(pi3bplus, 0, "performance")
    assert req.frequency_mhz == 1400
    assert actual_opp(req, s).frequency_mhz == 1200


temps = st.floats(min_value=-20.0, max_value=120.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["3B", "3B+", "4B"]), st.lists(temps, min_size=1, max_size=40), st.data())
def test_throttle_state_stays_consistent(profiles, model, trace, data):
    profile = profiles[model]
    level = data.draw(st.sampled_from(profile.table.levels))
    s = initial_throttle_state(profile, level)
    for t in trace:
        s = apply_throttling(s, t, profile)
        if s.regime is Regime.SOFT_LIMITED:
            assert profile.table.softlimit_opps
            assert s.active_opp == resolve_opp(profile, level, Regime.SOFT_LIMITED)
        elif s.regime is Regime.NORMAL:
            assert s.active_opp == resolve_opp(profile, level)
        else:
            assert s.active_opp.frequency_mhz in profile.table.limit_frequency_steps


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["3B", "3B+", "4B"]), st.integers(1, 12))
def test_hard_limit_voltage_is_constant(profiles, model, n):
    profile = profiles[model]
    seen = drive(initial_throttle_state(profile, 0), 90.0, profile, n)
    assert len({s.active_opp.voltage_uv for s in seen}) == 1
    freqs = [s.active_opp.frequency_mhz for s in seen]
    assert freqs == sorted(freqs, reverse=True)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 5), st.floats(0, 100), temps, temps)
def test_avs_monotone_outside_protection(slope, ref, t1, t2):
    avs = AvsParams(slope, ref)
    opp = Opp.of(1200, 1.2)
    lo, hi = sorted((t1, t2))
    assert effective_voltage(opp, lo, avs) <= effective_voltage(opp, hi, avs)


def test_soft_limit_monotonicity(pi3bplus):
    for level in range(0, -4, -1):
        n, s = resolve_opp(pi3bplus, level), resolve_opp(pi3bplus, level, Regime.SOFT_LIMITED)
        assert s.voltage_uv < n.voltage_uv and s.frequency_mhz < n.frequency_mhz
