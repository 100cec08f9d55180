"""
Newton-Raphson power flow, loss evaluation and DG siting sweeps.

The grid bus is the slack at 1.0 pu, 0 degrees. Every other bus is PQ.
DG units are fixed-P negative loads (unity power factor unless the source
or the caller says otherwise).
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dgprotect.errors import ConvergenceError, InfeasibleSiteError
from dgprotect.netmodel import (
    DEFAULT_BASE_MVA,
    Network,
    PerUnitModel,
    Scenario,
    Source,
    apply_scenario,
    to_per_unit,
)

logger = logging.getLogger(__name__)

TOLERANCE_PU = 1e-8
MAX_ITERATIONS = 50
DG_POWER_FACTOR = 1.0
# Base-case currents below this are treated as "relay carries no load"
MIN_LOAD_CURRENT_A = 1e-6


@dataclass(frozen=True)
class BranchFlow:
    from_pu: complex
    to_pu: complex

    @property
    def losses_pu(self) -> complex:
        return self.from_pu + self.to_pu


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    voltages: Dict[int, complex]
    branch_flows: Dict[int, BranchFlow]
    total_losses_kw: float
    converged: bool
    iterations: int
    mismatch_pu: float
    injections_pu: Dict[int, complex] = field(default_factory=dict)
    model: Optional[PerUnitModel] = field(default=None, repr=False)


def _injections(model: PerUnitModel, dg_power_factor: float) -> np.ndarray:
    network = model.network
    s = np.zeros(len(model.bus_ids), dtype=complex)
    for load in network.loads:
        s[model.bus_index[load.bus]] -= load.complex_power_mva / model.base_mva
    for source in network.active_sources():
        if source.kind != "dg":
            continue
        pf = source.power_factor or dg_power_factor
        p = source.rated_mw
        q = p * math.tan(math.acos(pf))
        s[model.bus_index[source.bus]] += complex(p, q) / model.base_mva
    return s


def solve(
    pu_model: PerUnitModel,
    scenario: Union[Scenario, str, None] = None,
    tolerance: float = TOLERANCE_PU,
    max_iterations: int = MAX_ITERATIONS,
    dg_power_factor: float = DG_POWER_FACTOR,
) -> PowerFlowSolution:
    if scenario is not None:
        pu_model = to_per_unit(apply_scenario(pu_model.network, scenario), pu_model.base_mva)

    network = pu_model.network
    slack = pu_model.bus_index[network.grid_sources()[0].bus]
    n = len(pu_model.bus_ids)
    pq = np.array([i for i in range(n) if i != slack], dtype=int)
    y = np.asarray(pu_model.ybus)
    s_spec = _injections(pu_model, dg_power_factor)

    vm = np.ones(n)
    va = np.zeros(n)
    v = vm * np.exp(1j * va)

    def mismatch(v):
        s_calc = v * np.conj(y @ v)
        f = s_calc[pq] - s_spec[pq]
        return np.concatenate([f.real, f.imag])

    f = mismatch(v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    iterations = 0
    while norm >= tolerance and iterations < max_iterations:
        i_bus = y @ v
        v_norm = v / np.abs(v)
        ds_dvm = np.diag(v) @ np.conj(y @ np.diag(v_norm)) + np.conj(np.diag(i_bus)) @ np.diag(v_norm)
        ds_dva = 1j * np.diag(v) @ np.conj(np.diag(i_bus) - y @ np.diag(v))
        jacobian = np.block([
            [ds_dva[np.ix_(pq, pq)].real, ds_dvm[np.ix_(pq, pq)].real],
            [ds_dva[np.ix_(pq, pq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = np.linalg.solve(jacobian, -f)
        except np.linalg.LinAlgError:
            break
        va[pq] += dx[:len(pq)]
        vm[pq] += dx[len(pq):]
        v = vm * np.exp(1j * va)
        iterations += 1
        f = mismatch(v)
        norm = float(np.max(np.abs(f)))
        if not np.isfinite(norm):
            break

    solution = _solution(pu_model, v, iterations, norm, converged=bool(norm < tolerance))
    if not solution.converged:
        logger.warning(f"Power flow did not converge: mismatch {norm:.3e} pu after {iterations} iterations")
        raise ConvergenceError(norm, iterations, solution)
    return solution


def _solution(model: PerUnitModel, v: np.ndarray, iterations: int, norm: float, converged: bool) -> PowerFlowSolution:
    network = model.network
    voltages = {bus_id: complex(v[model.bus_index[bus_id]]) for bus_id in model.bus_ids}
    flows = {}
    for branch in network.branches:
        v_from, v_to = voltages[branch.from_bus], voltages[branch.to_bus]
        current = (v_from - v_to) / model.branch_z[branch.id]
        flows[branch.id] = BranchFlow(from_pu=v_from * current.conjugate(), to_pu=-v_to * current.conjugate())
    losses_pu = sum(flow.losses_pu.real for flow in flows.values())
    s_calc = v * np.conj(np.asarray(model.ybus) @ v)
    injections = {bus_id: complex(s_calc[model.bus_index[bus_id]]) for bus_id in model.bus_ids}
    return PowerFlowSolution(
        voltages=voltages,
        branch_flows=flows,
        total_losses_kw=losses_pu * model.base_mva * 1000.0,
        converged=converged,
        iterations=iterations,
        mismatch_pu=norm,
        injections_pu=injections,
        model=model,
    )


def voltage_profile(solution: PowerFlowSolution) -> Dict[int, float]:
    if not solution.converged:
        raise ConvergenceError(solution.mismatch_pu, solution.iterations, solution)
    return {bus_id: abs(solution.voltages[bus_id]) for bus_id in sorted(solution.voltages)}


def branch_current_a(solution: PowerFlowSolution, branch_id: int, at_bus: int) -> float:
    model = solution.model
    branch = model.network.branch(branch_id)
    other = branch.other_end(at_bus)
    current = (solution.voltages[at_bus] - solution.voltages[other]) / model.branch_z[branch_id]
    return abs(current) * model.base_current_a(at_bus)


# --- Relay load currents ---

def _without_dg(network: Network) -> Network:
    return apply_scenario(network, Scenario(name="base", enabled_dg_ids=()))


def relay_load_currents(
    network: Network,
    base_mva: float = DEFAULT_BASE_MVA,
    mode: str = "base",
    tolerance: float = TOLERANCE_PU,
    max_iterations: int = MAX_ITERATIONS,
    dg_power_factor: float = DG_POWER_FACTOR,
) -> Dict[int, float]:
    """
    Normal load current of every relay.

    Metered values on the relay spec win. Otherwise ``base`` takes the no-DG
    power flow and fills relays that carry nothing there (DG branches) with
    their maximum over the declared scenarios; ``max`` takes the maximum
    over the no-DG case and every declared scenario.
    """
    if mode not in ("base", "max"):
        raise ValueError(f"unknown load current mode '{mode}'")
    currents = {r.id: r.load_current_a for r in network.relays if r.load_current_a is not None}
    pending = [r for r in network.relays if r.id not in currents]
    if not pending:
        return currents

    def relay_currents(net: Network) -> Dict[int, float]:
        solution = solve(to_per_unit(net, base_mva), tolerance=tolerance,
                         max_iterations=max_iterations, dg_power_factor=dg_power_factor)
        return {r.id: branch_current_a(solution, r.branch, r.located_at_bus) for r in pending}

    base = relay_currents(_without_dg(network))
    scenario_currents = [relay_currents(apply_scenario(network, s)) for s in network.scenarios]

    for relay in pending:
        observed = [c[relay.id] for c in scenario_currents]
        if mode == "max":
            currents[relay.id] = max([base[relay.id], *observed])
        elif base[relay.id] > MIN_LOAD_CURRENT_A or not observed:
            currents[relay.id] = base[relay.id]
        else:
            currents[relay.id] = max(observed)
            logger.info(f"Relay {relay.id} carries no load without DG; using {currents[relay.id]:.1f} A from scenarios")
    return currents


# --- DG sweep ---

@dataclass(frozen=True)
class SweepRow:
    bus: int
    dg_size_mw: float
    losses_kw: Optional[float]
    converged: bool = True
    message: str = ""


@dataclass(frozen=True)
class SweepTable:
    rows: Tuple[SweepRow, ...]
    baseline_losses_kw: float

    def delta_pct(self, row: SweepRow) -> Optional[float]:
        if row.losses_kw is None or self.baseline_losses_kw == 0:
            return None
        return (row.losses_kw - self.baseline_losses_kw) / self.baseline_losses_kw * 100.0

    def frame(self) -> pd.DataFrame:
        records = [[None, 0.0, self.baseline_losses_kw, 0.0]]
        for row in self.rows:
            records.append([row.bus, row.dg_size_mw, row.losses_kw, self.delta_pct(row)])
        frame = pd.DataFrame(records, columns=["bus", "dg_size_mw", "losses_kw", "delta_vs_baseline_pct"])
        return frame.astype({"bus": "Int64"})


def _with_dg(network: Network, bus: int, size_mw: float, power_factor: float) -> Network:
    source_id = max((s.id for s in network.sources), default=0) + 1
    dg = Source(id=source_id, name=f"sweep DG {size_mw:g} MW", bus=bus, kind="dg",
                rated_mw=size_mw, power_factor=power_factor)
    return network.model_copy(update={"sources": network.sources + (dg,), "active_scenario": f"sweep@{bus}"})


def sweep_dg(
    network: Network,
    candidate_buses: Iterable[int],
    sizes_mw: Sequence[float],
    base_mva: float = DEFAULT_BASE_MVA,
    tolerance: float = TOLERANCE_PU,
    max_iterations: int = MAX_ITERATIONS,
    dg_power_factor: float = DG_POWER_FACTOR,
) -> SweepTable:
    sizes = list(sizes_mw)
    if any(size <= 0 for size in sizes):
        raise ValueError(f"DG sizes must be positive, got {sizes}")

    base_network = _without_dg(network)
    baseline = solve(to_per_unit(base_network, base_mva), tolerance=tolerance,
                     max_iterations=max_iterations, dg_power_factor=dg_power_factor)
    logger.info(f"Sweep baseline losses {baseline.total_losses_kw:.1f} kW")

    rows = []
    for bus in candidate_buses:
        for size in sizes:
            candidate = _with_dg(base_network, bus, size, dg_power_factor)
            try:
                solution = solve(to_per_unit(candidate, base_mva), tolerance=tolerance,
                                 max_iterations=max_iterations, dg_power_factor=dg_power_factor)
                rows.append(SweepRow(bus, size, solution.total_losses_kw))
            except ConvergenceError as e:
                rows.append(SweepRow(bus, size, None, converged=False, message=str(e)))
    return SweepTable(rows=tuple(rows), baseline_losses_kw=baseline.total_losses_kw)


def select_site(sweep_table: SweepTable, infeasible_buses: Iterable[int] = ()) -> Tuple[int, float]:
    if not sweep_table.rows:
        raise ValueError("sweep table has no candidate rows")
    excluded = set(infeasible_buses)
    feasible = [r for r in sweep_table.rows if r.converged and r.bus not in excluded]
    if not feasible:
        raise InfeasibleSiteError(f"no feasible DG site (excluded buses {sorted(excluded)})")
    best = min(feasible, key=lambda r: (r.losses_kw, r.bus, r.dg_size_mw))
    return best.bus, best.dg_size_mw
