import json
import math

import pytest

from dgprotect.errors import (
    DanglingReferenceError,
    DuplicateIdError,
    NetworkParseError,
    NetworkValidationError,
    ScenarioError,
    ZeroImpedanceError,
)
from dgprotect.netmodel import (
    apply_scenario,
    dump_network,
    load_network,
    parse_network,
    to_per_unit,
    validate,
)


def kinds(violations):
    return [v.kind for v in violations]


# --- Example network ---

def test_example_network_loads_clean(example_network):
    assert len(example_network.buses) == 13
    assert len(example_network.relays) == 18
    assert len(example_network.pairs) == 18
    assert [s.name for s in example_network.scenarios] == ["off", "dg-at-8"]
    assert validate(example_network) == []


def test_example_network_dump_parses_back(example_network):
    assert parse_network(dump_network(example_network)) == example_network


def test_relay_1_is_non_directional(example_network):
    assert not example_network.relay(1).directional
    assert example_network.relay(35).directional


# --- Parsing ---

def test_malformed_json_reports_line():
    with pytest.raises(NetworkParseError) as info:
        parse_network('{\n  "schema": 1,\n  "buses": [\n')
    assert info.value.line is not None
    assert "line" in str(info.value)


def test_schema_error_reports_field(single_bus_document):
    single_bus_document["buses"][0]["nominal_kv"] = -30
    with pytest.raises(NetworkParseError) as info:
        parse_network(json.dumps(single_bus_document))
    assert info.value.field == "buses.0.nominal_kv"


def test_unknown_schema_version_rejected(single_bus_document):
    single_bus_document["schema"] = 2
    with pytest.raises(NetworkParseError):
        parse_network(json.dumps(single_bus_document))


def test_branch_to_itself_rejected(chain_document):
    chain_document["branches"][0]["to_bus"] = 1
    with pytest.raises(NetworkParseError):
        parse_network(json.dumps(chain_document))


def test_transformer_needs_its_fields(chain_document):
    chain_document["branches"][0] = {"id": 1, "from_bus": 1, "to_bus": 2, "kind": "transformer", "rated_mva": 10}
    with pytest.raises(NetworkParseError, match="missing"):
        parse_network(json.dumps(chain_document))


def test_duplicate_bus_id(chain_document):
    chain_document["buses"].append({"id": 2, "nominal_kv": 30.0})
    with pytest.raises(DuplicateIdError):
        load_network(json.dumps(chain_document))
    assert "duplicate-id" in kinds(validate(parse_network(json.dumps(chain_document))))


def test_dangling_bus_names_the_id(chain_document):
    chain_document["branches"][2]["to_bus"] = 99
    with pytest.raises(DanglingReferenceError, match="99"):
        load_network(json.dumps(chain_document))


# --- Validation ---

def test_validate_no_grid(chain_document):
    chain_document["sources"] = []
    assert "grid" in kinds(validate(parse_network(json.dumps(chain_document))))


def test_validate_multiple_grids(chain_document):
    chain_document["sources"].append({"id": 2, "bus": 4, "kind": "grid", "sc_capacity_mva": 100, "x_over_r": 5})
    violations = validate(parse_network(json.dumps(chain_document)))
    assert [v.message for v in violations] == ["multiple grid sources"]


def test_validate_cable_voltage_mismatch(chain_document):
    chain_document["buses"][3]["nominal_kv"] = 11.0
    assert kinds(validate(parse_network(json.dumps(chain_document)))) == ["voltage-level"]


def test_validate_isolated_bus(chain_document):
    chain_document["buses"].append({"id": 5, "nominal_kv": 30.0})
    violations = validate(parse_network(json.dumps(chain_document)))
    assert kinds(violations) == ["connectivity"]
    assert "[5]" in violations[0].message


def test_validate_relay_not_at_branch_end(chain_document):
    chain_document["relays"][0]["located_at_bus"] = 3
    assert kinds(validate(parse_network(json.dumps(chain_document)))) == ["dangling-reference"]


def test_validate_scenario_enabling_grid(chain_document):
    chain_document["scenarios"] = [{"name": "bad", "enabled_dg_ids": [1]}]
    violations = validate(parse_network(json.dumps(chain_document)))
    assert len(violations) == 1 and "not a DG source" in violations[0].message


def test_validate_reports_every_problem(chain_document):
    chain_document["branches"][2]["to_bus"] = 99
    chain_document["pairs"] = [{"fault_bus": 4, "primary_relay": 42}]
    assert len(validate(parse_network(json.dumps(chain_document)))) >= 2


# --- Scenarios ---

def test_apply_scenario_switches_dg(example_network):
    with_dg = apply_scenario(example_network, "dg-at-8")
    without_dg = apply_scenario(example_network, "off")
    assert [s.id for s in with_dg.active_sources()] == [1, 2]
    assert [s.id for s in without_dg.active_sources()] == [1]
    assert with_dg.active_scenario == "dg-at-8"
    # Input is never mutated
    assert not example_network.source(2).in_service


def test_unknown_scenario(example_network):
    with pytest.raises(ScenarioError):
        apply_scenario(example_network, "dg-at-27")


# --- Per unit ---

def test_cable_per_unit_impedance(chain_network):
    model = to_per_unit(chain_network, base_mva=100)
    z_base = 30.0 ** 2 / 100
    assert model.branch_z[2] == pytest.approx(3.0 * complex(0.1, 0.2) / z_base)
    assert model.branch_ohms(2) == pytest.approx(complex(0.3, 0.6))


def test_transformer_and_grid_per_unit(example_network):
    model = to_per_unit(example_network, base_mva=100)
    t1 = model.branch_z[1]
    assert abs(t1) == pytest.approx(0.10)
    assert t1.imag / t1.real == pytest.approx(15.0)
    grid = model.source_z[1]
    assert abs(grid) == pytest.approx(100 / 200)
    assert grid.imag / grid.real == pytest.approx(10.0)


def test_dg_reactance_on_machine_base(example_network):
    model = to_per_unit(apply_scenario(example_network, "dg-at-8"), base_mva=100)
    assert model.source_z[2] == pytest.approx(complex(0, 0.2 * 100 / 31.25))


def test_base_current(chain_network):
    model = to_per_unit(chain_network)
    assert model.base_current_a(1) == pytest.approx(100e3 / (math.sqrt(3) * 30))


def test_zero_impedance_cable(chain_document, build_network):
    chain_document["branches"][0]["r_ohm_per_km"] = 0
    chain_document["branches"][0]["x_ohm_per_km"] = 0
    with pytest.raises(ZeroImpedanceError):
        to_per_unit(build_network(chain_document))


def test_invalid_network_not_converted(chain_document):
    chain_document["buses"].append({"id": 5, "nominal_kv": 30.0})
    with pytest.raises(NetworkValidationError) as info:
        to_per_unit(parse_network(json.dumps(chain_document)))
    assert len(info.value.violations) == 1
