"""
Three-phase bolted fault analysis with the bus impedance matrix.

Zbus is the inverse of the bus admittance matrix with every active source's
internal admittance added to its bus diagonal. A fault at bus k draws
I_f = V / (Z_kk + Z_f); post-fault voltages follow from column k of Zbus.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg

from dgprotect.errors import BusNotFoundError, SingularNetworkError
from dgprotect.netmodel import (
    DEFAULT_BASE_MVA,
    DEFAULT_DG_REACTANCE_PU,
    Network,
    PerUnitModel,
    Scenario,
    apply_scenario,
    to_per_unit,
)

logger = logging.getLogger(__name__)

DIRECTION_THRESHOLD_PU = 1e-6
# Condition number above which the admittance matrix is treated as singular
SINGULAR_CONDITION = 1e12


class Direction(str, Enum):
    FORWARD = "forward"
    REVERSE = "reverse"
    NONE = "none"


@dataclass(frozen=True, eq=False)
class BusImpedanceMatrix:
    bus_ids: Tuple[int, ...]
    z: np.ndarray = field(repr=False)
    scenario: Optional[str]
    model: PerUnitModel = field(repr=False)

    def index(self, bus_id: int) -> int:
        try:
            return self.model.bus_index[bus_id]
        except KeyError:
            raise BusNotFoundError(f"bus {bus_id} is not in the impedance matrix") from None

    def entry(self, bus_i: int, bus_j: int) -> complex:
        return complex(self.z[self.index(bus_i), self.index(bus_j)])


@dataclass(frozen=True)
class RelayContribution:
    relay_id: int
    current_a: float
    direction: Direction
    current_pu: Optional[complex] = None


@dataclass(frozen=True)
class FaultResult:
    fault_bus: int
    fault_current_a: float
    contributions: Dict[int, RelayContribution] = field(default_factory=dict)
    fault_current_pu: Optional[complex] = None
    source_contributions_pu: Dict[int, complex] = field(default_factory=dict)
    voltages_pu: Dict[int, complex] = field(default_factory=dict)

    def __post_init__(self):
        if not self.fault_current_a > 0:
            raise ValueError(f"fault current at bus {self.fault_bus} must be positive, got {self.fault_current_a}")


@dataclass(frozen=True)
class FaultStudy:
    scenario: Optional[str]
    results: Dict[int, FaultResult] = field(default_factory=dict)

    @property
    def buses(self):
        return list(self.results)

    def __contains__(self, bus_id: int) -> bool:
        return bus_id in self.results

    def __getitem__(self, bus_id: int) -> FaultResult:
        return self.results[bus_id]


def build_zbus(pu_model: PerUnitModel) -> BusImpedanceMatrix:
    if not pu_model.source_z:
        raise SingularNetworkError("no active source: the admittance matrix is singular")

    y = np.array(pu_model.ybus, dtype=complex)
    network = pu_model.network
    for source_id, z_source in pu_model.source_z.items():
        k = pu_model.bus_index[network.source(source_id).bus]
        y[k, k] += 1.0 / z_source

    if np.linalg.cond(y) > SINGULAR_CONDITION:
        raise SingularNetworkError("admittance matrix is singular: some bus has no path to a source")

    n = len(pu_model.bus_ids)
    lu, piv = scipy.linalg.lu_factor(y)
    z = scipy.linalg.lu_solve((lu, piv), np.eye(n, dtype=complex))
    # Symmetric by construction; remove round-off asymmetry
    z = (z + z.T) / 2.0
    z.setflags(write=False)
    return BusImpedanceMatrix(bus_ids=pu_model.bus_ids, z=z, scenario=network.active_scenario, model=pu_model)


def _classify(current: complex, reference: complex, threshold: float) -> Direction:
    if abs(current) < threshold:
        return Direction.NONE
    if (current * reference.conjugate()).real > 0:
        return Direction.FORWARD
    return Direction.REVERSE


def fault_at_bus(
    zbus: BusImpedanceMatrix,
    bus: int,
    prefault_voltage_pu: float = 1.0,
    fault_impedance_pu: complex = 0.0,
    direction_threshold_pu: float = DIRECTION_THRESHOLD_PU,
) -> FaultResult:
    model = zbus.model
    network = model.network
    k = zbus.index(bus)

    i_fault = prefault_voltage_pu / (zbus.z[k, k] + fault_impedance_pu)
    voltages = prefault_voltage_pu - zbus.z[:, k] * i_fault
    v = {bus_id: complex(voltages[model.bus_index[bus_id]]) for bus_id in model.bus_ids}

    contributions = {}
    for relay in network.relays:
        branch = network.branch(relay.branch)
        near, far = relay.located_at_bus, branch.other_end(relay.located_at_bus)
        current = (v[near] - v[far]) / model.branch_z[branch.id]
        contributions[relay.id] = RelayContribution(
            relay_id=relay.id,
            current_a=abs(current) * model.base_current_a(near),
            direction=_classify(current, i_fault, direction_threshold_pu),
            current_pu=current,
        )

    sources = {}
    for source_id, z_source in model.source_z.items():
        source_bus = network.source(source_id).bus
        sources[source_id] = (prefault_voltage_pu - v[source_bus]) / z_source

    return FaultResult(
        fault_bus=bus,
        fault_current_a=abs(i_fault) * model.base_current_a(bus),
        contributions=contributions,
        fault_current_pu=complex(i_fault),
        source_contributions_pu=sources,
        voltages_pu=v,
    )


def run_fault_study(
    network: Network,
    scenario: Union[Scenario, str, None],
    buses: Iterable[int],
    base_mva: float = DEFAULT_BASE_MVA,
    prefault_voltage_pu: float = 1.0,
    fault_impedance_pu: complex = 0.0,
    dg_reactance_pu: float = DEFAULT_DG_REACTANCE_PU,
    direction_threshold_pu: float = DIRECTION_THRESHOLD_PU,
) -> FaultStudy:
    if scenario is not None:
        network = apply_scenario(network, scenario)
    label = network.active_scenario

    requested = list(dict.fromkeys(buses))
    if not requested:
        return FaultStudy(scenario=label)

    zbus = build_zbus(to_per_unit(network, base_mva, dg_reactance_pu))
    results = {}
    for bus in requested:
        results[bus] = fault_at_bus(zbus, bus, prefault_voltage_pu, fault_impedance_pu, direction_threshold_pu)
    logger.info(f"Fault study '{label}': {len(results)} buses")
    return FaultStudy(scenario=label, results=results)


def relay_current(result: FaultResult, relay_id: int, directional: bool = True) -> float:
    """
    Current seen by a relay for this fault.

    A result without per-relay data gives every relay the bus fault current.
    Otherwise unlisted relays see nothing, and a directional relay sees
    nothing unless its contribution flows forward.
    """
    if not result.contributions:
        return result.fault_current_a
    contribution = result.contributions.get(relay_id)
    if contribution is None or contribution.direction is Direction.NONE:
        return 0.0
    if directional and contribution.direction is Direction.REVERSE:
        return 0.0
    return contribution.current_a


def study_frame(study: FaultStudy) -> pd.DataFrame:
    rows = []
    for bus, result in study.results.items():
        if not result.contributions:
            rows.append([bus, study.scenario or "", result.fault_current_a, None, None, None])
            continue
        for relay_id in sorted(result.contributions):
            c = result.contributions[relay_id]
            rows.append([bus, study.scenario or "", result.fault_current_a, relay_id, c.current_a, c.direction.value])
    frame = pd.DataFrame(rows, columns=["fault_bus", "scenario", "if_amps", "relay_id", "contribution_amps", "direction"])
    return frame.astype({"relay_id": "Int64"})
