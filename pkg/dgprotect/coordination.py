"""
Relay setting design along primary/backup chains and CTI verification.

A pair element is one (fault bus, primary, backup) triple; a PairDecl with
two backups contributes two elements. Design walks the backup graph in
topological order so every backup is timed after its primaries.
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Set, Tuple, Union

import networkx as nx
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from dgprotect.errors import (
    MissingFaultCurrentError,
    MissingSettingError,
    NetworkParseError,
    NoPickupError,
    TopologyError,
)
from dgprotect.loadflow import relay_load_currents
from dgprotect.netmodel import DEFAULT_BASE_MVA, Network, PairDecl, network_graph
from dgprotect.relay import (
    OVERLOAD_FACTOR,
    CurveKind,
    RelaySetting,
    TmsBounds,
    TripOutcome,
    operating_time,
    pickup_from_load,
    plug_setting,
    solve_tms,
)
from dgprotect.shortcircuit import FaultResult, FaultStudy, relay_current

logger = logging.getLogger(__name__)

DEFAULT_TMS_FLOOR = 0.05
# Absorbs float noise when a designed CTI lands exactly on the threshold
CTI_EPSILON_MS = 1e-6


class CtiPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    requirement_ms: float = Field(200.0, ge=0)
    tolerance_ms: float = Field(10.0, ge=0)

    @property
    def threshold_ms(self) -> float:
        return self.requirement_ms - self.tolerance_ms


class SettingsSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    settings: Dict[int, RelaySetting] = {}
    scenario: Optional[str] = None
    violations: Tuple[str, ...] = ()
    requires_communication: bool = False
    notes: Tuple[str, ...] = ()

    def __contains__(self, relay_id: int) -> bool:
        return relay_id in self.settings

    def __len__(self) -> int:
        return len(self.settings)

    def get(self, relay_id: int) -> RelaySetting:
        try:
            return self.settings[relay_id]
        except KeyError:
            raise MissingSettingError(f"relay {relay_id} has no setting") from None

    def curves(self) -> Dict[int, CurveKind]:
        return {relay_id: s.curve for relay_id, s in sorted(self.settings.items())}

    def with_curves(self, curves: Mapping[int, CurveKind]) -> "SettingsSet":
        """Copy with the given relays' curves replaced; PS, TMS and CTR are untouched."""
        updated = dict(self.settings)
        for relay_id, curve in curves.items():
            updated[relay_id] = self.get(relay_id).with_curve(curve)
        return self.model_copy(update={"settings": updated})


@dataclass(frozen=True)
class CoordinationRow:
    fault_bus: int
    primary_relay: int
    backup_relay: Optional[int]
    tp_ms: Optional[float]
    tb_ms: Optional[float]
    cti_ms: Optional[float]
    miscoordination: bool
    primary_outcome: TripOutcome = TripOutcome.TRIP
    backup_outcome: Optional[TripOutcome] = None
    primary_current_a: float = 0.0
    backup_current_a: Optional[float] = None


@dataclass(frozen=True)
class CoordinationReport:
    scenario: Optional[str]
    rows: Tuple[CoordinationRow, ...]
    cti_requirement_ms: float
    tolerance_ms: float

    def flagged_rows(self) -> List[CoordinationRow]:
        return [row for row in self.rows if row.miscoordination]

    @property
    def miscoordination_count(self) -> int:
        return len(self.flagged_rows())

    def flagged_buses(self) -> List[int]:
        return sorted({row.fault_bus for row in self.flagged_rows()})

    @property
    def clean(self) -> bool:
        return self.miscoordination_count == 0


def pair_elements(pairs: Iterable[PairDecl]) -> List[Tuple[int, int, Optional[int]]]:
    elements = []
    for pair in pairs:
        if not pair.backup_relays:
            elements.append((pair.fault_bus, pair.primary_relay, None))
        for backup in pair.backup_relays:
            elements.append((pair.fault_bus, pair.primary_relay, backup))
    return elements


# --- Pair Enumeration ---

def enumerate_pairs(network: Network) -> List[PairDecl]:
    """
    Declared pairs verbatim, or pairs derived from a radial walk toward the grid.

    For a derived pair the primary is the first relay met walking from the
    fault bus to the grid (on the upstream end of its branch) and the backup
    is the next one.
    """
    if network.pairs:
        return list(network.pairs)

    grids = network.grid_sources()
    if not grids:
        raise TopologyError("cannot derive pairs without a grid source")
    graph = network_graph(network)
    if not nx.is_tree(graph):
        raise TopologyError("network is not radial; declare primary/backup pairs explicitly")

    root = grids[0].bus
    parent = {child: up for child, up in nx.bfs_predecessors(graph, root)}
    parent_branch = {}
    for branch in network.branches:
        if parent.get(branch.to_bus) == branch.from_bus:
            parent_branch[branch.to_bus] = branch
        elif parent.get(branch.from_bus) == branch.to_bus:
            parent_branch[branch.from_bus] = branch

    # Relay guarding the branch into each bus, seated at the upstream end
    guard = {}
    for relay in sorted(network.relays, key=lambda r: r.id):
        for bus, branch in parent_branch.items():
            if branch.id == relay.branch and relay.located_at_bus == parent[bus]:
                guard.setdefault(bus, relay.id)

    pairs = []
    for bus in sorted(parent):
        chain = []
        walk = bus
        while walk in parent and len(chain) < 2:
            if walk in guard:
                chain.append(guard[walk])
            walk = parent[walk]
        if chain:
            pairs.append(PairDecl(fault_bus=bus, primary_relay=chain[0], backup_relays=tuple(chain[1:])))
    logger.info(f"Derived {len(pairs)} primary/backup pairs from radial topology")
    return pairs


# --- Design ---

def _relay_currents(study: FaultStudy, supplementary: Optional[FaultStudy], directional: Dict[int, bool]):
    def current(bus: int, relay_id: int) -> float:
        value = 0.0
        if bus in study:
            value = relay_current(study[bus], relay_id, directional[relay_id])
        if value == 0.0 and supplementary is not None and bus in supplementary:
            value = relay_current(supplementary[bus], relay_id, directional[relay_id])
        elif bus not in study and (supplementary is None or bus not in supplementary):
            raise MissingFaultCurrentError(f"fault study has no result for bus {bus}")
        return value
    return current


def design_settings(
    network: Network,
    fault_study: FaultStudy,
    pairs: Sequence[PairDecl],
    policy: CtiPolicy = CtiPolicy(),
    tms_floor: float = DEFAULT_TMS_FLOOR,
    load_currents: Optional[Mapping[int, float]] = None,
    supplementary_study: Optional[FaultStudy] = None,
    overload_factor: float = OVERLOAD_FACTOR,
    tms_bounds: TmsBounds = TmsBounds(),
    clip: bool = False,
    curve: CurveKind = CurveKind.NORMAL_INVERSE,
    base_mva: float = DEFAULT_BASE_MVA,
    load_current_mode: Literal["base", "max"] = "base",
) -> SettingsSet:
    """
    Pickup and TMS for every relay named in pairs.

    Leaves get tms_floor. Each backup takes the largest TMS any of its
    primaries demands: its time at its own fault current equals the
    primary's time plus requirement_ms. Relays that see nothing in
    fault_study fall back to supplementary_study. Out-of-range TMS values
    and backups that cannot pick up are collected as violations.
    """
    elements = pair_elements(pairs)
    relay_ids = sorted({r for _, p, b in elements for r in (p, b) if r is not None})
    if not relay_ids:
        return SettingsSet(scenario=fault_study.scenario)

    specs = {relay_id: network.relay(relay_id) for relay_id in relay_ids}
    if load_currents is None:
        load_currents = relay_load_currents(network, base_mva, load_current_mode)

    plug = {}
    for relay_id in relay_ids:
        if relay_id not in load_currents:
            raise MissingSettingError(f"relay {relay_id} has no load current")
        pickup = pickup_from_load(load_currents[relay_id], overload_factor)
        if pickup <= 0:
            raise MissingSettingError(f"relay {relay_id} carries no load current; pickup cannot be set")
        plug[relay_id] = plug_setting(pickup, specs[relay_id].ct_ratio)

    current = _relay_currents(fault_study, supplementary_study, {r: specs[r].directional for r in relay_ids})
    violations = []

    graph = nx.DiGraph()
    graph.add_nodes_from(relay_ids)
    for bus, primary, backup in elements:
        if backup is None:
            continue
        if backup == primary:
            raise TopologyError(f"relay {primary} is listed as its own backup at bus {bus}")
        if graph.has_edge(primary, backup):
            graph[primary][backup]["buses"].append(bus)
        else:
            graph.add_edge(primary, backup, buses=[bus])
    try:
        order = list(nx.lexicographical_topological_sort(graph))
    except nx.NetworkXUnfeasible:
        cycle = nx.find_cycle(graph)
        raise TopologyError(f"primary/backup relations form a cycle: {cycle}") from None

    settings: Dict[int, RelaySetting] = {}
    for relay_id in order:
        spec = specs[relay_id]
        tms = tms_floor
        for primary in sorted(graph.predecessors(relay_id)):
            for bus in graph[primary][relay_id]["buses"]:
                tp = operating_time(settings[primary], current(bus, primary))
                if not tp.trips:
                    violations.append(f"bus {bus}: primary relay {primary} does not pick up")
                    continue
                try:
                    needed = solve_tms(curve, tp.seconds + policy.requirement_ms / 1000.0,
                                       plug[relay_id], spec.ct_ratio, current(bus, relay_id))
                except NoPickupError as e:
                    violations.append(f"bus {bus}: backup relay {relay_id} does not pick up ({e})")
                    continue
                tms = max(tms, needed)

        if not tms_bounds.contains(tms):
            violations.append(
                f"relay {relay_id}: TMS {tms:.4f} outside [{tms_bounds.minimum}, {tms_bounds.maximum}]"
            )
            if clip:
                tms = tms_bounds.clip(tms)
        settings[relay_id] = RelaySetting(
            relay_id=relay_id,
            curve=curve,
            plug_setting=plug[relay_id],
            tms=tms,
            ct_ratio=spec.ct_ratio,
            directional=spec.directional,
        )

    for violation in violations:
        logger.warning(f"Design '{fault_study.scenario}': {violation}")
    logger.info(f"Designed {len(settings)} relay settings for scenario '{fault_study.scenario}'")
    return SettingsSet(
        settings=dict(sorted(settings.items())),
        scenario=fault_study.scenario,
        violations=tuple(violations),
    )


# --- Verification ---

def evaluate_element(
    element: Tuple[int, int, Optional[int]],
    result: FaultResult,
    primary_setting: RelaySetting,
    backup_setting: Optional[RelaySetting],
    threshold_ms: float,
) -> CoordinationRow:
    """One report row; its verdict depends only on these two settings and this fault."""
    bus, primary, backup = element
    ip = relay_current(result, primary, primary_setting.directional)
    tp = operating_time(primary_setting, ip)
    if backup is None:
        return CoordinationRow(bus, primary, None, tp.ms, None, None, False,
                               primary_outcome=tp.outcome, primary_current_a=ip)

    ib = relay_current(result, backup, backup_setting.directional)
    tb = operating_time(backup_setting, ib)
    cti = tb.ms - tp.ms if tp.trips and tb.trips else None
    flagged = cti is not None and cti < threshold_ms - CTI_EPSILON_MS
    return CoordinationRow(
        bus, primary, backup, tp.ms, tb.ms, cti, flagged,
        primary_outcome=tp.outcome,
        backup_outcome=tb.outcome,
        primary_current_a=ip,
        backup_current_a=ib,
    )


def verify(
    settings: SettingsSet,
    fault_study: FaultStudy,
    pairs: Sequence[PairDecl],
    policy: CtiPolicy = CtiPolicy(),
) -> CoordinationReport:
    rows = []
    for element in pair_elements(pairs):
        bus, primary, backup = element
        if bus not in fault_study:
            raise MissingFaultCurrentError(f"fault study '{fault_study.scenario}' has no result for bus {bus}")
        b_setting = None if backup is None else settings.get(backup)
        rows.append(evaluate_element(element, fault_study[bus], settings.get(primary), b_setting,
                                     policy.threshold_ms))
    return CoordinationReport(
        scenario=fault_study.scenario,
        rows=tuple(rows),
        cti_requirement_ms=policy.requirement_ms,
        tolerance_ms=policy.tolerance_ms,
    )


def miscoordinated_relays(report: Union[CoordinationReport, Iterable[CoordinationReport]]) -> Set[int]:
    reports = [report] if isinstance(report, CoordinationReport) else list(report)
    relays = set()
    for r in reports:
        for row in r.flagged_rows():
            relays.add(row.primary_relay)
            if row.backup_relay is not None:
                relays.add(row.backup_relay)
    return relays


# --- Export ---

REPORT_COLUMNS = ["Bus", "Rp", "Rb", "Tp", "Tb", "CTI", "MC"]
SETTINGS_COLUMNS = ["Relay", "Curve", "CTR", "PS", "TMS", "Type"]


def _time_cell(value: Optional[float], outcome: Optional[TripOutcome]) -> str:
    if value is not None:
        return f"{value:.1f}"
    if outcome is None:
        return ""
    return outcome.value


def report_frame(report: CoordinationReport) -> pd.DataFrame:
    records = []
    for row in report.rows:
        records.append([
            row.fault_bus,
            row.primary_relay,
            "" if row.backup_relay is None else row.backup_relay,
            _time_cell(row.tp_ms, row.primary_outcome),
            _time_cell(row.tb_ms, row.backup_outcome),
            "" if row.cti_ms is None else f"{row.cti_ms:.1f}",
            "Yes" if row.miscoordination else "Nil",
        ])
    return pd.DataFrame(records, columns=REPORT_COLUMNS)


def settings_frame(settings: SettingsSet) -> pd.DataFrame:
    records = []
    for relay_id, s in sorted(settings.settings.items()):
        records.append([relay_id, s.curve.value, f"{s.ct_ratio:g}", f"{s.plug_setting:.3f}",
                        f"{s.tms:.4f}", "Dir" if s.directional else "ND"])
    return pd.DataFrame(records, columns=SETTINGS_COLUMNS)


class SettingsDocument(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    scenario: Optional[str] = None
    settings: List[RelaySetting]


def load_settings(document: Union[str, bytes]) -> SettingsSet:
    try:
        data = json.loads(document)
    except json.JSONDecodeError as e:
        raise NetworkParseError(e.msg, line=e.lineno, column=e.colno) from e
    try:
        parsed = SettingsDocument.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise NetworkParseError(first["msg"], field=".".join(str(p) for p in first["loc"])) from e

    settings = {}
    for s in parsed.settings:
        if s.relay_id in settings:
            raise NetworkParseError(f"relay {s.relay_id} has two settings")
        settings[s.relay_id] = s
    return SettingsSet(settings=dict(sorted(settings.items())), scenario=parsed.scenario)


def read_settings(path: str) -> SettingsSet:
    with open(path, "r", encoding="utf-8") as f:
        return load_settings(f.read())


def dump_settings(settings: SettingsSet) -> str:
    document = SettingsDocument(scenario=settings.scenario,
                                settings=[s for _, s in sorted(settings.settings.items())])
    return document.model_dump_json(by_alias=True, indent=2) + "\n"
