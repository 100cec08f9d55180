"""
Network description: buses, branches, sources, loads, relays, declared
primary/backup pairs and DG scenarios.

Documents are JSON (``"schema": 1``). ``load_network`` parses and checks
cross-references, ``validate`` reports every remaining problem as data and
``to_per_unit`` builds the per-unit model the solvers work on.
"""

import json
import math
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple, Union

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from dgprotect.errors import (
    DanglingReferenceError,
    DuplicateIdError,
    NetworkParseError,
    NetworkValidationError,
    ScenarioError,
    ZeroImpedanceError,
)

logger = logging.getLogger(__name__)

DEFAULT_BASE_MVA = 100.0
DEFAULT_DG_REACTANCE_PU = 0.2
DEFAULT_LOAD_POWER_FACTOR = 0.85


class _Element(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# --- Domain Types ---

class Bus(_Element):
    id: int
    name: str = ""
    nominal_kv: float = Field(gt=0)


class Branch(_Element):
    id: int
    name: str = ""
    from_bus: int
    to_bus: int
    kind: Literal["cable", "transformer"]
    # cable
    length_km: Optional[float] = Field(None, gt=0)
    r_ohm_per_km: Optional[float] = Field(None, ge=0)
    x_ohm_per_km: Optional[float] = Field(None, ge=0)
    # transformer
    rated_mva: Optional[float] = Field(None, gt=0)
    primary_kv: Optional[float] = Field(None, gt=0)
    secondary_kv: Optional[float] = Field(None, gt=0)
    z_percent: Optional[float] = Field(None, gt=0)
    x_over_r: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.id} connects bus {self.from_bus} to itself")
        if self.kind == "cable":
            required = ("length_km", "r_ohm_per_km", "x_ohm_per_km")
        else:
            required = ("rated_mva", "primary_kv", "secondary_kv", "z_percent", "x_over_r")
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} branch {self.id} is missing {', '.join(missing)}")
        return self

    def other_end(self, bus_id: int) -> int:
        return self.to_bus if bus_id == self.from_bus else self.from_bus


class Source(_Element):
    id: int
    name: str = ""
    bus: int
    kind: Literal["grid", "dg"]
    # grid
    sc_capacity_mva: Optional[float] = Field(None, gt=0)
    x_over_r: Optional[float] = Field(None, gt=0)
    # dg
    rated_mw: Optional[float] = Field(None, gt=0)
    subtransient_reactance_pu: Optional[float] = Field(None, gt=0)
    machine_base_mva: Optional[float] = Field(None, gt=0)
    power_factor: Optional[float] = Field(None, gt=0, le=1)
    in_service: bool = True

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind == "grid":
            if self.sc_capacity_mva is None or self.x_over_r is None:
                raise ValueError(f"grid source {self.id} needs sc_capacity_mva and x_over_r")
        elif self.rated_mw is None:
            raise ValueError(f"dg source {self.id} needs rated_mw")
        return self

    @property
    def machine_base(self) -> float:
        return self.machine_base_mva if self.machine_base_mva is not None else self.rated_mw


class LoadPoint(_Element):
    bus: int
    name: str = ""
    apparent_power_mva: float = Field(ge=0)
    power_factor: float = Field(DEFAULT_LOAD_POWER_FACTOR, gt=0, le=1)

    @property
    def complex_power_mva(self) -> complex:
        p = self.apparent_power_mva * self.power_factor
        q = self.apparent_power_mva * math.sqrt(1.0 - self.power_factor ** 2)
        return complex(p, q)


class RelaySpec(_Element):
    id: int
    name: str = ""
    branch: int
    located_at_bus: int
    ct_ratio: float = Field(gt=0)
    directional: bool = True
    # Metered normal load current; overrides the power-flow value when set
    load_current_a: Optional[float] = Field(None, ge=0)


class PairDecl(_Element):
    fault_bus: int
    primary_relay: int
    backup_relays: Tuple[int, ...] = ()


class Scenario(_Element):
    name: str
    enabled_dg_ids: Tuple[int, ...] = ()


class Network(_Element):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    name: str = ""
    notes: Tuple[str, ...] = ()
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...] = ()
    sources: Tuple[Source, ...] = ()
    loads: Tuple[LoadPoint, ...] = ()
    relays: Tuple[RelaySpec, ...] = ()
    pairs: Tuple[PairDecl, ...] = ()
    scenarios: Tuple[Scenario, ...] = ()
    active_scenario: Optional[str] = None

    @property
    def bus_ids(self) -> List[int]:
        return sorted(b.id for b in self.buses)

    def bus(self, bus_id: int) -> Bus:
        return _find(self.buses, bus_id, "bus")

    def branch(self, branch_id: int) -> Branch:
        return _find(self.branches, branch_id, "branch")

    def source(self, source_id: int) -> Source:
        return _find(self.sources, source_id, "source")

    def relay(self, relay_id: int) -> RelaySpec:
        return _find(self.relays, relay_id, "relay")

    def grid_sources(self) -> List[Source]:
        return [s for s in self.sources if s.kind == "grid"]

    def dg_sources(self) -> List[Source]:
        return [s for s in self.sources if s.kind == "dg"]

    def active_sources(self) -> List[Source]:
        return [s for s in self.sources if s.in_service]

    def scenario(self, name: str) -> Scenario:
        for scenario in self.scenarios:
            if scenario.name == name:
                return scenario
        raise ScenarioError(f"unknown scenario '{name}'")


def _find(items, item_id: int, label: str):
    for item in items:
        if item.id == item_id:
            return item
    raise DanglingReferenceError(f"unknown {label} {item_id}")


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str

    def __str__(self) -> str:
        return self.message


# --- Parsing ---

def parse_network(document: Union[str, bytes]) -> Network:
    """Schema-level parse only; cross-references are not checked."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as e:
        raise NetworkParseError(e.msg, line=e.lineno, column=e.colno) from e
    if not isinstance(data, dict):
        raise NetworkParseError("network document must be a JSON object", line=1, column=1)
    try:
        return Network.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        message = first["msg"]
        if e.error_count() > 1:
            message = f"{message} (+{e.error_count() - 1} more)"
        raise NetworkParseError(message, field=location) from e


def load_network(document: Union[str, bytes]) -> Network:
    network = parse_network(document)
    for violation in _reference_violations(network):
        if violation.kind == "duplicate-id":
            raise DuplicateIdError(violation.message)
        raise DanglingReferenceError(violation.message)
    logger.info(f"Loaded network '{network.name}' with {len(network.buses)} buses and {len(network.relays)} relays")
    return network


def read_network(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        return load_network(f.read())


def dump_network(network: Network) -> str:
    data = network.model_dump(mode="json", by_alias=True, exclude_none=True)
    return json.dumps(data, indent=2) + "\n"


# --- Validation ---

def _duplicates(ids) -> List:
    return sorted(i for i, n in Counter(ids).items() if n > 1)


def _reference_violations(network: Network) -> List[Violation]:
    violations = []
    for label, items in (("bus", network.buses), ("branch", network.branches),
                         ("source", network.sources), ("relay", network.relays)):
        for dup in _duplicates(item.id for item in items):
            violations.append(Violation("duplicate-id", f"duplicate {label} id {dup}"))
    for dup in _duplicates(s.name for s in network.scenarios):
        violations.append(Violation("duplicate-id", f"duplicate scenario name '{dup}'"))

    bus_ids = {b.id for b in network.buses}
    branches = {b.id: b for b in network.branches}
    relay_ids = {r.id for r in network.relays}
    sources = {s.id: s for s in network.sources}

    def dangling(message):
        violations.append(Violation("dangling-reference", message))

    for branch in network.branches:
        for end in (branch.from_bus, branch.to_bus):
            if end not in bus_ids:
                dangling(f"branch {branch.id} references absent bus {end}")
    for source in network.sources:
        if source.bus not in bus_ids:
            dangling(f"source {source.id} references absent bus {source.bus}")
    for load in network.loads:
        if load.bus not in bus_ids:
            dangling(f"load '{load.name}' references absent bus {load.bus}")
    for relay in network.relays:
        branch = branches.get(relay.branch)
        if branch is None:
            dangling(f"relay {relay.id} references absent branch {relay.branch}")
        elif relay.located_at_bus not in (branch.from_bus, branch.to_bus):
            dangling(f"relay {relay.id} is located at bus {relay.located_at_bus}, not an end of branch {branch.id}")
    for pair in network.pairs:
        if pair.fault_bus not in bus_ids:
            dangling(f"pair at bus {pair.fault_bus} references absent bus {pair.fault_bus}")
        for relay_id in (pair.primary_relay, *pair.backup_relays):
            if relay_id not in relay_ids:
                dangling(f"pair at bus {pair.fault_bus} references absent relay {relay_id}")
    for scenario in network.scenarios:
        for source_id in scenario.enabled_dg_ids:
            source = sources.get(source_id)
            if source is None:
                dangling(f"scenario '{scenario.name}' references absent source {source_id}")
            elif source.kind != "dg":
                dangling(f"scenario '{scenario.name}' enables source {source_id}, which is not a DG source")
    return violations


def validate(network: Network) -> List[Violation]:
    violations = _reference_violations(network)

    grids = network.grid_sources()
    if not grids:
        violations.append(Violation("grid", "no grid source"))
    elif len(grids) > 1:
        violations.append(Violation("grid", "multiple grid sources"))

    kv = {b.id: b.nominal_kv for b in network.buses}
    for branch in network.branches:
        if branch.kind != "cable" or branch.from_bus not in kv or branch.to_bus not in kv:
            continue
        if not math.isclose(kv[branch.from_bus], kv[branch.to_bus]):
            violations.append(Violation(
                "voltage-level",
                f"cable {branch.id} joins buses at {kv[branch.from_bus]} kV and {kv[branch.to_bus]} kV",
            ))

    if grids and grids[0].bus in kv:
        graph = network_graph(network)
        reachable = nx.node_connected_component(graph, grids[0].bus)
        isolated = sorted(set(kv) - reachable)
        if isolated:
            violations.append(Violation("connectivity", f"buses not connected to the grid source: {isolated}"))
    return violations


def network_graph(network: Network) -> nx.MultiGraph:
    graph = nx.MultiGraph()
    graph.add_nodes_from(b.id for b in network.buses)
    for branch in network.branches:
        if branch.from_bus in graph and branch.to_bus in graph:
            graph.add_edge(branch.from_bus, branch.to_bus, key=branch.id)
    return graph


# --- Scenarios ---

def apply_scenario(network: Network, scenario: Union[Scenario, str]) -> Network:
    """Copy of the network with exactly the scenario's DG sources in service."""
    if isinstance(scenario, str):
        scenario = network.scenario(scenario)
    enabled = set(scenario.enabled_dg_ids)
    known = {s.id: s for s in network.sources}
    for source_id in sorted(enabled):
        if source_id not in known:
            raise ScenarioError(f"scenario '{scenario.name}': unknown dg id {source_id}")
        if known[source_id].kind != "dg":
            raise ScenarioError(f"scenario '{scenario.name}': source {source_id} is not a DG source")

    sources = tuple(
        s if s.kind == "grid" else s.model_copy(update={"in_service": s.id in enabled})
        for s in network.sources
    )
    return network.model_copy(update={"sources": sources, "active_scenario": scenario.name})


# --- Per Unit ---

@dataclass(frozen=True, eq=False)
class PerUnitModel:
    network: Network
    base_mva: float
    bus_ids: Tuple[int, ...]
    bus_index: Dict[int, int]
    base_kv: Dict[int, float]
    branch_z: Dict[int, complex]
    source_z: Dict[int, complex]
    ybus: np.ndarray = field(repr=False)

    def base_impedance_ohm(self, bus_id: int) -> float:
        return self.base_kv[bus_id] ** 2 / self.base_mva

    def base_current_a(self, bus_id: int) -> float:
        return self.base_mva * 1e3 / (math.sqrt(3) * self.base_kv[bus_id])

    def branch_ohms(self, branch_id: int) -> complex:
        """Series impedance in ohms, referred to the branch's from-bus voltage level."""
        branch = self.network.branch(branch_id)
        return self.branch_z[branch_id] * self.base_impedance_ohm(branch.from_bus)


def _split_impedance(magnitude: float, x_over_r: float) -> complex:
    r = magnitude / math.sqrt(1.0 + x_over_r ** 2)
    return complex(r, r * x_over_r)


def to_per_unit(network: Network, base_mva: float = DEFAULT_BASE_MVA,
                dg_reactance_pu: float = DEFAULT_DG_REACTANCE_PU) -> PerUnitModel:
    if base_mva <= 0:
        raise ValueError(f"base MVA must be positive, got {base_mva}")
    violations = validate(network)
    if violations:
        raise NetworkValidationError(violations)

    bus_ids = tuple(network.bus_ids)
    bus_index = {bus_id: i for i, bus_id in enumerate(bus_ids)}
    base_kv = {b.id: b.nominal_kv for b in network.buses}

    branch_z = {}
    for branch in network.branches:
        if branch.kind == "cable":
            z_ohm = branch.length_km * complex(branch.r_ohm_per_km, branch.x_ohm_per_km)
            z = z_ohm / (base_kv[branch.from_bus] ** 2 / base_mva)
        else:
            z = _split_impedance(branch.z_percent / 100.0 * base_mva / branch.rated_mva, branch.x_over_r)
        if z == 0 or not np.isfinite(z):
            raise ZeroImpedanceError(f"branch {branch.id} has zero or non-finite impedance")
        branch_z[branch.id] = z

    source_z = {}
    for source in network.active_sources():
        if source.kind == "grid":
            source_z[source.id] = _split_impedance(base_mva / source.sc_capacity_mva, source.x_over_r)
        else:
            reactance = source.subtransient_reactance_pu or dg_reactance_pu
            source_z[source.id] = complex(0.0, reactance * base_mva / source.machine_base)

    n = len(bus_ids)
    ybus = np.zeros((n, n), dtype=complex)
    for branch in network.branches:
        y = 1.0 / branch_z[branch.id]
        i, j = bus_index[branch.from_bus], bus_index[branch.to_bus]
        ybus[i, i] += y
        ybus[j, j] += y
        ybus[i, j] -= y
        ybus[j, i] -= y
    ybus.setflags(write=False)

    return PerUnitModel(
        network=network,
        base_mva=base_mva,
        bus_ids=bus_ids,
        bus_index=bus_index,
        base_kv=base_kv,
        branch_z=branch_z,
        source_z=source_z,
        ybus=ybus,
    )
