import json
import logging
from typing import Any, Dict, List, Optional, Sequence

from dgprotect.config import AppConfig
from dgprotect.coordination import CoordinationReport, SettingsSet, load_settings
from dgprotect.faulttable import load_fault_tables
from dgprotect.netmodel import Network, load_network
from dgprotect.shortcircuit import FaultStudy, run_fault_study
from dgprotect.errors import DgProtectError


def network_from_body(document: Dict[str, Any]) -> Network:
    """Request bodies carry the network as a JSON object; the engine parses text."""
    return load_network(json.dumps(document))


def settings_from_body(document: Dict[str, Any]) -> SettingsSet:
    return load_settings(json.dumps(document))


def studies_for(
    network: Network,
    scenarios: Sequence[str],
    buses: Sequence[int],
    fault_tables: Optional[Dict[str, Any]] = None,
    config: Optional[AppConfig] = None,
) -> List[FaultStudy]:
    """Fault studies per scenario, from supplied tables when given, computed otherwise."""
    if fault_tables is not None:
        tables = load_fault_tables(json.dumps(fault_tables))
        missing = [s for s in scenarios if s not in tables]
        if missing:
            raise DgProtectError(f"fault tables have no study for scenario(s) {missing}")
        return [tables[s] for s in scenarios]
    logging.info(f"Computing fault studies for {list(scenarios)} at {len(buses)} buses")
    config = config or AppConfig()
    system = config.system
    return [
        run_fault_study(network, s, buses, system.base_mva,
                        prefault_voltage_pu=system.prefault_voltage_pu,
                        fault_impedance_pu=system.fault_impedance_pu,
                        dg_reactance_pu=config.dg_defaults.subtransient_reactance_pu,
                        direction_threshold_pu=system.direction_threshold_pu)
        for s in scenarios
    ]


def study_rows(study: FaultStudy) -> List[Dict[str, Any]]:
    rows = []
    for bus, result in study.results.items():
        if not result.contributions:
            rows.append({"fault_bus": bus, "if_amps": result.fault_current_a})
        for relay_id in sorted(result.contributions):
            c = result.contributions[relay_id]
            rows.append({
                "fault_bus": bus,
                "if_amps": result.fault_current_a,
                "relay_id": relay_id,
                "contribution_amps": c.current_a,
                "direction": c.direction.value,
            })
    return rows


def report_to_dict(report: CoordinationReport) -> Dict[str, Any]:
    return {
        "scenario": report.scenario,
        "flagged_buses": report.flagged_buses(),
        "miscoordination_count": report.miscoordination_count,
        "rows": [
            {
                "fault_bus": row.fault_bus,
                "primary_relay": row.primary_relay,
                "backup_relay": row.backup_relay,
                "tp_ms": row.tp_ms,
                "tb_ms": row.tb_ms,
                "cti_ms": row.cti_ms,
                "miscoordination": row.miscoordination,
            }
            for row in report.rows
        ],
    }
