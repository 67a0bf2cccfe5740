import copy

import pytest
import yaml

from scrooge_sim.errors import CalibrationError, ConfigurationError, ProfileValidationError
from scrooge_sim.profiles import load_profile, load_profile_file, profile_document, validate_profile
from scrooge_sim.thermal import Cooling, Deployment


def test_shipped_3bplus_level0(pi3bplus):
    top = pi3bplus.table.nominal_opps[0]
    assert (top.voltage_uv, top.frequency_mhz) == (1_375_000, 1400)


def test_shipped_4b_has_single_level(pi4b):
    assert sorted(pi4b.table.nominal_opps) == [-1, 0]
    assert pi4b.offset_for_level(-1) == -15
    assert pi4b.level_for_offset(-15) == -1


def test_load_by_id_is_cached():
    assert load_profile("3B") is load_profile("3B")
    assert load_profile("3b+") is load_profile("3B+")


def test_unknown_profile():
    with pytest.raises(ConfigurationError):
        load_profile("5")


def test_every_thermal_cell_present(profiles):
    for p in profiles.values():
        for c in Cooling:
            for d in Deployment:
                assert p.thermal_params(c, d).time_constant > 0


def test_softlimit_above_nominal_rejected():
    doc = profile_document("3B+")
    doc["table"]["softlimit"][-3] = [1200, 1.4000]
    with pytest.raises(ProfileValidationError) as info:
        validate_profile(doc)
    assert any(p.startswith("table.softlimit[-3]") for p in info.value.problems)


def test_all_problems_reported_at_once():
    doc = profile_document("3B")
    doc["schema_version"] = 2
    doc["table"]["nominal"][-2] = [1200, 1.5]
    doc["failure_model"]["anchors"][0]["probability"] = 1.5
    with pytest.raises(ProfileValidationError) as info:
        validate_profile(doc)
    where = " ".join(info.value.problems)
    assert "schema_version" in where and "table.nominal[-2]" in where and "failure_model.anchors[0]" in where


def test_frontier_order_checked():
    doc = profile_document("4B")
    doc["frontiers"]["lower"] = [[20, 0.84], [85, 0.84]]
    with pytest.raises(ProfileValidationError, match="frontiers"):
        validate_profile(doc)


def test_anchor_offset_must_be_a_level():
    doc = profile_document("4B")
    doc["failure_model"]["anchors"].append({"offset_mv": -30, "temp_c": 40, "probability": 0.1})
    with pytest.raises(ProfileValidationError, match="offset=-30"):
        validate_profile(doc)


def test_profile_file_round_trip(tmp_path):
    doc = profile_document("3B")
    path = tmp_path / "custom.yaml"
    path.write_text(yaml.safe_dump(doc))
    custom = load_profile_file(path)
    assert custom.table == load_profile("3B").table
    assert load_profile(str(path)).model == "3B"


def test_broken_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("table: [unclosed\n")
    with pytest.raises(ConfigurationError):
        load_profile_file(path)


def test_documents_are_independent_copies():
    a = profile_document("3B")
    b = copy.deepcopy(a)
    a["model"] = "mutated"
    assert profile_document("3B") == b


def test_level_lookup_errors(pi3b):
    with pytest.raises(ConfigurationError):
        pi3b.offset_for_level(-40)
    with pytest.raises(CalibrationError):
        pi3b.level_for_offset(-13)
