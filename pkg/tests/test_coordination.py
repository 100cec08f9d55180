import json

import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from dgprotect.coordination import (
    REPORT_COLUMNS,
    SETTINGS_COLUMNS,
    CtiPolicy,
    SettingsSet,
    design_settings,
    dump_settings,
    enumerate_pairs,
    load_settings,
    miscoordinated_relays,
    pair_elements,
    report_frame,
    settings_frame,
    verify,
)
from dgprotect.errors import MissingFaultCurrentError, MissingSettingError, NetworkParseError, TopologyError
from dgprotect.netmodel import PairDecl
from dgprotect.relay import CurveKind, RelaySetting, TripOutcome, operating_time, solve_tms
from dgprotect.shortcircuit import Direction, FaultResult, FaultStudy, RelayContribution, run_fault_study

NI = CurveKind.NORMAL_INVERSE


def bare_study(currents, scenario="synthetic"):
    """Fault study where every relay sees the whole fault current."""
    return FaultStudy(scenario, {bus: FaultResult(bus, amps) for bus, amps in currents.items()})


def by_bus(report):
    return {(row.fault_bus, row.primary_relay, row.backup_relay): row for row in report.rows}


def test_threshold_is_requirement_minus_tolerance():
    assert CtiPolicy().threshold_ms == 190.0
    assert CtiPolicy(requirement_ms=300, tolerance_ms=0).threshold_ms == 300.0


def test_pair_elements_expand_backups(example_pairs):
    elements = pair_elements(example_pairs)
    assert len(elements) == 23
    assert (8, 37, None) in elements
    assert (28, 36, 16) in elements and (28, 36, 18) in elements


# --- Pair enumeration ---

def test_declared_pairs_are_used_verbatim(example_network, example_pairs):
    assert example_pairs == list(example_network.pairs)
    assert (example_pairs[0].fault_bus, example_pairs[0].primary_relay, example_pairs[0].backup_relays) == (23, 35, (32,))


def test_pairs_derived_from_radial_chain(chain_network):
    pairs = [(p.fault_bus, p.primary_relay, tuple(p.backup_relays)) for p in enumerate_pairs(chain_network)]
    assert pairs == [(2, 1, ()), (3, 2, (1,)), (4, 3, (2,))]


def test_single_relay_feeder_has_no_backup(chain_document, build_network):
    network = build_network(chain_document, relays=chain_document["relays"][:1])
    pairs = enumerate_pairs(network)
    assert {p.primary_relay for p in pairs} == {1}
    assert all(not p.backup_relays for p in pairs)


def test_meshed_network_needs_declared_pairs(chain_document, build_network):
    meshed = build_network(chain_document, branches=[
        *chain_document["branches"],
        {"id": 4, "from_bus": 4, "to_bus": 1, "kind": "cable", "length_km": 5,
         "r_ohm_per_km": 0.1, "x_ohm_per_km": 0.2},
    ])
    with pytest.raises(TopologyError):
        enumerate_pairs(meshed)


# --- Design ---

def test_leaf_then_backup_worked_chain(example_network):
    pairs = [PairDecl(fault_bus=23, primary_relay=35, backup_relays=(32,))]
    designed = design_settings(example_network, bare_study({23: 6110.0}), pairs,
                               load_currents={35: 574.08, 32: 264.0})
    assert designed.get(35).tms == 0.05
    assert designed.get(35).plug_setting == pytest.approx(0.598)
    assert designed.get(32).plug_setting == pytest.approx(0.275)
    assert designed.get(32).tms == pytest.approx(0.15, abs=0.005)
    assert designed.violations == ()


def test_hand_cascade_on_three_relay_chain(chain_network):
    loads = {1: 300.0, 2: 200.0, 3: 100.0}
    study = bare_study({2: 5000.0, 3: 4000.0, 4: 3000.0})
    designed = design_settings(chain_network, study, enumerate_pairs(chain_network), load_currents=loads)

    ps = {r: 1.25 * amps / 400 for r, amps in loads.items()}
    t3 = operating_time(RelaySetting(relay_id=3, plug_setting=ps[3], tms=0.05, ct_ratio=400), 3000.0).seconds
    tms2 = max(0.05, solve_tms(NI, t3 + 0.2, ps[2], 400, 3000.0))
    t2 = operating_time(RelaySetting(relay_id=2, plug_setting=ps[2], tms=tms2, ct_ratio=400), 4000.0).seconds
    tms1 = max(0.05, solve_tms(NI, t2 + 0.2, ps[1], 400, 4000.0))

    assert designed.get(3).tms == 0.05
    assert designed.get(2).tms == pytest.approx(tms2, rel=1e-9)
    assert designed.get(1).tms == pytest.approx(tms1, rel=1e-9)

    report = verify(designed, study, enumerate_pairs(chain_network))
    assert report.clean
    assert [row.cti_ms for row in report.rows if row.backup_relay is not None] == [
        pytest.approx(200.0, abs=1e-6), pytest.approx(200.0, abs=1e-6),
    ]


def test_design_from_computed_currents_coordinates(chain_network):
    pairs = enumerate_pairs(chain_network)
    study = run_fault_study(chain_network, None, [2, 3, 4])
    designed = design_settings(chain_network, study, pairs)
    assert designed.violations == ()
    assert sorted(designed.settings) == [1, 2, 3]
    assert verify(designed, study, pairs).clean


def test_single_relay_design_uses_floor(chain_document, build_network):
    network = build_network(chain_document, relays=chain_document["relays"][:1])
    designed = design_settings(network, bare_study({2: 3000.0, 3: 2500.0, 4: 2000.0}), enumerate_pairs(network),
                               load_currents={1: 300.0}, tms_floor=0.1)
    assert list(designed.settings) == [1]
    assert designed.get(1).tms == 0.1


def test_design_without_pairs_is_empty(chain_network):
    assert len(design_settings(chain_network, bare_study({2: 1000.0}), [])) == 0


def test_design_reports_tms_out_of_range(chain_network):
    pairs = [PairDecl(fault_bus=3, primary_relay=2, backup_relays=(1,))]
    # Leaf floor below the relay's minimum TMS
    designed = design_settings(chain_network, bare_study({3: 4000.0}), pairs, tms_floor=0.01,
                               load_currents={1: 300.0, 2: 300.0})
    assert any("relay 2: TMS" in v for v in designed.violations)
    clipped = design_settings(chain_network, bare_study({3: 4000.0}), pairs, tms_floor=0.01,
                              load_currents={1: 300.0, 2: 300.0}, clip=True)
    assert clipped.get(2).tms == 0.025


def test_design_reports_backup_without_pickup(chain_network):
    pairs = [PairDecl(fault_bus=3, primary_relay=2, backup_relays=(1,))]
    study = FaultStudy("partial", {3: FaultResult(3, 4000.0, {})})
    designed = design_settings(chain_network, study, pairs, load_currents={1: 300.0, 2: 300.0})
    assert designed.violations == ()

    study = FaultStudy("partial", {3: FaultResult(3, 4000.0, {
        2: RelayContribution(2, 4000.0, Direction.FORWARD),
        1: RelayContribution(1, 100.0, Direction.FORWARD),
    })})
    designed = design_settings(chain_network, study, pairs, load_currents={1: 300.0, 2: 300.0})
    assert any("backup relay 1 does not pick up" in v for v in designed.violations)


def test_design_needs_load_current_for_every_relay(chain_network):
    with pytest.raises(MissingSettingError):
        design_settings(chain_network, bare_study({2: 1000.0, 3: 1000.0, 4: 1000.0}),
                        enumerate_pairs(chain_network), load_currents={1: 300.0, 2: 200.0})


def test_backup_cycle_rejected(chain_network):
    pairs = [PairDecl(fault_bus=2, primary_relay=1, backup_relays=(2,)),
             PairDecl(fault_bus=3, primary_relay=2, backup_relays=(1,))]
    with pytest.raises(TopologyError):
        design_settings(chain_network, bare_study({2: 3000.0, 3: 3000.0}), pairs, load_currents={1: 300.0, 2: 300.0})


def test_design_needs_fault_current(chain_network):
    pairs = enumerate_pairs(chain_network)
    with pytest.raises(MissingFaultCurrentError):
        design_settings(chain_network, bare_study({2: 3000.0, 3: 2500.0}), pairs,
                        load_currents={1: 300.0, 2: 200.0, 3: 100.0})


# --- Verification ---

def test_baseline_settings_coordinate_without_dg(example_settings, example_studies, example_pairs):
    report = verify(example_settings, example_studies[0], example_pairs)
    assert report.clean
    row = by_bus(report)[(27, 32, 29)]
    assert row.tp_ms == pytest.approx(506, abs=2)
    assert row.tb_ms == pytest.approx(719, abs=2)
    assert row.cti_ms == pytest.approx(213, abs=2)


def test_dg_flags_exactly_buses_26_and_27(example_settings, example_studies, example_pairs):
    report = verify(example_settings, example_studies[1], example_pairs)
    assert report.flagged_buses() == [26, 27]
    row = by_bus(report)[(26, 29, 10)]
    assert row.tp_ms == pytest.approx(528, abs=2)
    assert row.tb_ms == pytest.approx(640, abs=2)
    assert row.cti_ms == pytest.approx(112, abs=2)
    assert row.miscoordination
    assert all(r.cti_ms < 190 for r in report.flagged_rows())
    assert miscoordinated_relays(report) == {32, 29, 10}


def test_rows_without_backup(example_settings, example_studies, example_pairs):
    rows = by_bus(verify(example_settings, example_studies[0], example_pairs))
    relay_1 = rows[(2, 1, None)]
    assert relay_1.tp_ms is not None
    assert relay_1.tb_ms is None and relay_1.cti_ms is None
    assert not relay_1.miscoordination
    # Relay 37 sees nothing at bus 8 without DG
    relay_37 = rows[(8, 37, None)]
    assert relay_37.primary_outcome is TripOutcome.NO_PICKUP
    assert not relay_37.miscoordination


def test_relay_1_gives_no_backup_on_computed_faults(example_settings, computed_studies, example_pairs):
    report = verify(example_settings, computed_studies[0], example_pairs)
    row = by_bus(report)[(6, 14, 1)]
    # Relay 1 sits on the 220 kV side of T1
    fault_current = computed_studies[0][6].fault_current_a
    assert row.backup_current_a == pytest.approx(fault_current * 30 / 220, rel=1e-6)
    assert row.backup_current_a < example_settings.get(1).pickup_a
    assert row.backup_outcome is TripOutcome.NO_PICKUP
    assert row.cti_ms is None and not row.miscoordination
    frame = report_frame(report)
    mc = frame[(frame["Bus"] == 6) & (frame["Rb"] == 1)]["MC"]
    assert list(mc) == ["Nil"]


def test_verify_is_pure(example_settings, example_studies, example_pairs):
    first = verify(example_settings, example_studies[1], example_pairs)
    second = verify(example_settings, example_studies[1], example_pairs)
    assert first == second


def test_custom_policy_changes_flags(example_settings, example_studies, example_pairs):
    strict = verify(example_settings, example_studies[0], example_pairs, CtiPolicy(requirement_ms=300, tolerance_ms=0))
    assert 27 in strict.flagged_buses()


def test_missing_setting(example_settings, example_studies, example_pairs):
    partial = SettingsSet(settings={k: v for k, v in example_settings.settings.items() if k != 29})
    with pytest.raises(MissingSettingError):
        verify(partial, example_studies[0], example_pairs)


def test_missing_fault_bus(example_settings, example_pairs):
    with pytest.raises(MissingFaultCurrentError):
        verify(example_settings, bare_study({23: 6110.0}), example_pairs)


def test_miscoordinated_relays_synthetic():
    pairs = [PairDecl(fault_bus=1, primary_relay=7, backup_relays=(8,))]
    settings = SettingsSet(settings={
        7: RelaySetting(relay_id=7, plug_setting=1.0, tms=0.1, ct_ratio=100),
        8: RelaySetting(relay_id=8, plug_setting=1.0, tms=0.1, ct_ratio=100),
    })
    report = verify(settings, bare_study({1: 1000.0}), pairs)
    assert miscoordinated_relays(report) == {7, 8}
    assert miscoordinated_relays([]) == set()


def test_all_normal_inverse_is_identity(example_settings, example_studies, example_pairs):
    same = example_settings.with_curves({r: NI for r in example_settings.settings})
    assert verify(same, example_studies[1], example_pairs) == verify(example_settings, example_studies[1], example_pairs)


@hyp_settings(max_examples=50, deadline=None)
@given(k=st.floats(1.0, 3.0))
def test_scaling_every_tms_scales_every_time(example_settings, example_studies, example_pairs, k):
    scaled = SettingsSet(settings={
        r: s.model_copy(update={"tms": s.tms * k}) for r, s in example_settings.settings.items()
    })
    base = verify(example_settings, example_studies[0], example_pairs)
    other = verify(scaled, example_studies[0], example_pairs)
    for a, b in zip(base.rows, other.rows):
        if a.cti_ms is not None:
            assert b.cti_ms == pytest.approx(k * a.cti_ms, rel=1e-9)


# --- Export ---

def test_report_frame(example_settings, example_studies, example_pairs):
    frame = report_frame(verify(example_settings, example_studies[1], example_pairs))
    assert list(frame.columns) == REPORT_COLUMNS
    row = frame[(frame["Bus"] == 26) & (frame["Rp"] == 29)].iloc[0]
    assert row["MC"] == "Yes"
    assert float(row["CTI"]) == pytest.approx(112, abs=2)
    no_backup = frame[frame["Rp"] == 1].iloc[0]
    assert no_backup["Rb"] == "" and no_backup["MC"] == "Nil"


def test_settings_frame(example_settings):
    frame = settings_frame(example_settings)
    assert list(frame.columns) == SETTINGS_COLUMNS
    assert len(frame) == 18
    relay_1 = frame[frame["Relay"] == 1].iloc[0]
    assert relay_1["Type"] == "ND"
    assert relay_1["Curve"] == "NormalInverse"


def test_settings_document(example_settings):
    assert len(example_settings) == 18
    assert load_settings(dump_settings(example_settings)).settings == example_settings.settings
    assert json.loads(dump_settings(example_settings))["schema"] == 1


def test_settings_document_rejects_duplicates():
    document = {"schema": 1, "settings": [
        {"relay_id": 1, "plug_setting": 1.0, "tms": 0.1, "ct_ratio": 100},
        {"relay_id": 1, "plug_setting": 1.0, "tms": 0.2, "ct_ratio": 100},
    ]}
    with pytest.raises(NetworkParseError):
        load_settings(json.dumps(document))
