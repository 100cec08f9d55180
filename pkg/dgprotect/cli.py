"""
Command-line surface: validate, study, tcc, sweep, design, verify, restore.

Exit status 0 on success, 1 on a domain violation, 2 on unreadable or
malformed input.
"""

import os
import sys
import time
import logging
import argparse
from typing import List, Optional, Sequence

from dgprotect import __version__
from dgprotect.config import AppConfig, load_config, setup_logging
from dgprotect.coordination import (
    CtiPolicy,
    SettingsSet,
    design_settings,
    dump_settings,
    enumerate_pairs,
    read_settings,
    report_frame,
    settings_frame,
    verify,
)
from dgprotect.errors import DgProtectError, NetworkParseError, NetworkValidationError
from dgprotect.faulttable import read_fault_tables
from dgprotect.loadflow import select_site, sweep_dg
from dgprotect.netmodel import Network, parse_network, read_network, validate
from dgprotect.relay import CurveKind, TmsBounds, curve_samples, samples_frame
from dgprotect.shortcircuit import FaultStudy, run_fault_study, study_frame
from dgprotect.strategy import (
    assignment_frame,
    compare_strategies,
    dual_report_frame,
    restore_by_curve_selection,
)
from dgprotect.tables import FORMATS, write_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2
BASE_LABEL = "base"


class Session:
    """Parsed arguments resolved against the configuration file."""

    def __init__(self, args: argparse.Namespace, config: AppConfig):
        self.args = args
        self.config = config
        self.out = args.out or config.output_dir
        self.fmt = args.format
        self.base_mva = args.base_mva or config.system.base_mva
        self.policy = CtiPolicy(
            requirement_ms=config.coordination.cti_ms if args.cti_ms is None else args.cti_ms,
            tolerance_ms=config.coordination.tolerance_ms if args.cti_tol_ms is None else args.cti_tol_ms,
        )
        self.tms_floor = config.relay.tms_floor if args.tms_floor is None else args.tms_floor
        self._network = None

    @property
    def network(self) -> Network:
        if self._network is None:
            network = read_network(self.args.network)
            violations = validate(network)
            if violations:
                raise NetworkValidationError(violations)
            self._network = network
        return self._network

    def scenario_names(self) -> List[Optional[str]]:
        names = self.args.scenario or [s.name for s in self.network.scenarios]
        for name in names:
            self.network.scenario(name)
        return names or [None]

    def studies(self, buses: Sequence[int]) -> List[FaultStudy]:
        names = self.scenario_names()
        if self.args.fault_table:
            tables = read_fault_tables(self.args.fault_table)
            missing = [name for name in names if name not in tables]
            if missing:
                raise DgProtectError(f"fault table has no study for scenario(s) {missing}")
            return [tables[name] for name in names]
        system = self.config.system
        return [
            run_fault_study(self.network, name, buses, self.base_mva,
                            prefault_voltage_pu=system.prefault_voltage_pu,
                            fault_impedance_pu=system.fault_impedance_pu,
                            dg_reactance_pu=self.config.dg_defaults.subtransient_reactance_pu,
                            direction_threshold_pu=system.direction_threshold_pu)
            for name in names
        ]

    def settings(self, studies: Sequence[FaultStudy], pairs) -> SettingsSet:
        if self.args.settings:
            return read_settings(self.args.settings)
        relay = self.config.relay
        supplementary = studies[1] if len(studies) > 1 else None
        return design_settings(
            self.network, studies[0], pairs, self.policy,
            tms_floor=self.tms_floor,
            supplementary_study=supplementary,
            overload_factor=relay.overload_factor,
            tms_bounds=TmsBounds(relay.tms_min, relay.tms_max),
            base_mva=self.base_mva,
            load_current_mode=self.config.coordination.load_current_source,
        )

    def curve_order(self) -> List[CurveKind]:
        return [CurveKind.parse(name) for name in self.config.strategy.curve_order]

    def write(self, frame, stem: str, float_format: str = "%.3f") -> str:
        return write_table(frame, self.out, stem, self.fmt, float_format)


def _label(study: FaultStudy) -> str:
    return study.scenario or BASE_LABEL


def _error(message: str):
    print(message, file=sys.stderr)


# --- Commands ---

def cmd_validate(session: Session) -> int:
    with open(session.args.network, "r", encoding="utf-8") as f:
        network = parse_network(f.read())
    violations = validate(network)
    for violation in violations:
        _error(str(violation))
    logger.info(f"Validated {session.args.network}: {len(violations)} violations")
    return EXIT_VIOLATION if violations else EXIT_OK


def cmd_study(session: Session) -> int:
    network = session.network
    pairs = enumerate_pairs(network)
    studies = session.studies(network.bus_ids)
    for study in studies:
        session.write(study_frame(study), f"fault_{_label(study)}")

    settings = session.settings(studies, pairs)
    session.write(settings_frame(settings), "settings")
    reports = [verify(settings, study, pairs, session.policy) for study in studies]
    for report, study in zip(reports, studies):
        session.write(report_frame(report), f"verify_{_label(study)}")
        logger.info(f"Scenario '{_label(study)}': flagged buses {report.flagged_buses()}")

    if len(studies) > 1 and any(not report.clean for report in reports):
        dual = restore_by_curve_selection(settings, studies[0], studies[1], pairs, session.policy,
                                          session.curve_order(), session.config.strategy.max_changes)
        session.write(assignment_frame(dual.assignment), "assignment")
        session.write(dual_report_frame(dual), "restored")
        if dual.exhausted:
            _error(f"curve selection could not restore coordination; {dual.miscoordination_count} rows remain flagged")
            return EXIT_VIOLATION
    return EXIT_OK


def cmd_tcc(session: Session) -> int:
    args = session.args
    if args.settings:
        settings = read_settings(args.settings)
    else:
        pairs = enumerate_pairs(session.network)
        buses = sorted({p.fault_bus for p in pairs})
        settings = session.settings(session.studies(buses), pairs)

    relay_ids = args.relay or sorted(settings.settings)
    points = args.points or session.config.relay.tcc_points
    for relay_id in relay_ids:
        setting = settings.get(relay_id)
        stem = f"tcc_{relay_id}"
        if args.curve:
            setting = setting.with_curve(CurveKind.parse(args.curve))
            stem += f"_{setting.curve.short_name}"
        low, high = args.current_range or (1.1 * setting.pickup_a, 20.0 * setting.pickup_a)
        samples = curve_samples(setting, (low, high), points)
        session.write(samples_frame(samples), stem, float_format="%.6f")
    return EXIT_OK


def cmd_sweep(session: Session) -> int:
    args = session.args
    network = session.network
    loadflow = session.config.loadflow
    candidates = args.candidates or network.bus_ids
    table = sweep_dg(network, candidates, args.sizes, session.base_mva,
                     tolerance=loadflow.tolerance_pu, max_iterations=loadflow.max_iterations,
                     dg_power_factor=session.config.dg_defaults.power_factor)
    session.write(table.frame(), "sweep")
    if not table.rows:
        return EXIT_OK
    if not any(row.converged for row in table.rows):
        _error("no sweep case converged")
        return EXIT_VIOLATION
    bus, size = select_site(table, args.infeasible)
    print(f"selected site: bus {bus}, {size:g} MW")
    return EXIT_OK


def cmd_design(session: Session) -> int:
    network = session.network
    pairs = enumerate_pairs(network)
    studies = session.studies(sorted({p.fault_bus for p in pairs}))
    settings = session.settings(studies, pairs)
    os.makedirs(session.out, exist_ok=True)
    with open(os.path.join(session.out, "settings.json"), "w", encoding="utf-8", newline="") as f:
        f.write(dump_settings(settings))
    session.write(settings_frame(settings), "settings")
    for violation in settings.violations:
        _error(violation)
    return EXIT_VIOLATION if settings.violations else EXIT_OK


def cmd_verify(session: Session) -> int:
    network = session.network
    pairs = enumerate_pairs(network)
    studies = session.studies(sorted({p.fault_bus for p in pairs}))
    settings = session.settings(studies, pairs)
    for study in studies:
        report = verify(settings, study, pairs, session.policy)
        session.write(report_frame(report), f"verify_{_label(study)}")
        print(f"{_label(study)}: {report.miscoordination_count} miscoordinated rows "
              f"at buses {report.flagged_buses()}")
    return EXIT_OK


def cmd_restore(session: Session) -> int:
    network = session.network
    pairs = enumerate_pairs(network)
    studies = session.studies(sorted({p.fault_bus for p in pairs}))
    if len(studies) != 2:
        _error("restore needs exactly two scenarios: without DG, then with DG")
        return EXIT_INPUT
    settings = session.settings(studies, pairs)
    curve_order = session.curve_order()
    max_changes = session.config.strategy.max_changes

    dual = restore_by_curve_selection(settings, studies[0], studies[1], pairs, session.policy,
                                      curve_order, max_changes)
    session.write(assignment_frame(dual.assignment), "assignment")
    session.write(dual_report_frame(dual), "restored")

    summary = compare_strategies(network, tuple(s.scenario for s in studies), pairs, session.policy,
                                 studies=tuple(studies), baseline=settings, base_mva=session.base_mva,
                                 curve_order=curve_order, max_changes=max_changes,
                                 tms_floor=session.tms_floor)
    write_table(summary.frame(), session.out, "strategies", "text")

    changes = ", ".join(f"{r}: {c.short_name}" for r, c in dual.assignment.changes().items()) or "none"
    print(f"curve changes: {changes}")
    if dual.exhausted:
        _error(f"curve selection could not restore coordination; {dual.miscoordination_count} rows remain flagged")
        return EXIT_VIOLATION
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "study": cmd_study,
    "tcc": cmd_tcc,
    "sweep": cmd_sweep,
    "design": cmd_design,
    "verify": cmd_verify,
    "restore": cmd_restore,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgprotect", description="Protection coordination studies for networks with DG.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--network", required=True, help="network JSON document")
    parser.add_argument("--scenario", action="append", help="scenario name; repeat for several (default: all declared)")
    parser.add_argument("--cti-ms", type=float, help="required coordination time interval")
    parser.add_argument("--cti-tol-ms", type=float, help="accepted shortfall below the CTI")
    parser.add_argument("--tms-floor", type=float, help="TMS of relays without primaries")
    parser.add_argument("--base-mva", type=float, help="system MVA base")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--format", choices=FORMATS, default="csv")
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--settings", help="settings JSON document to use instead of designing")
    parser.add_argument("--fault-table", help="fault-table JSON document to use instead of computing studies")
    parser.add_argument("--log-dir", help="directory for dgprotect.log")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("validate", help="list network violations")
    commands.add_parser("study", help="fault study, design, verify and restore")
    commands.add_parser("design", help="design relay settings")
    commands.add_parser("verify", help="verify coordination per scenario")
    commands.add_parser("restore", help="restore coordination by curve selection")

    tcc = commands.add_parser("tcc", help="time-current curve samples")
    tcc.add_argument("--relay", type=int, action="append", help="relay id; repeat for several (default: all)")
    tcc.add_argument("--current-range", type=float, nargs=2, metavar=("LO", "HI"))
    tcc.add_argument("--points", type=int)
    tcc.add_argument("--curve", help="evaluate on this curve instead of the set one")

    sweep = commands.add_parser("sweep", help="DG size and location loss sweep")
    sweep.add_argument("--sizes", type=float, nargs="*", default=[25.0, 50.0], help="DG sizes in MW")
    sweep.add_argument("--candidates", type=int, nargs="*", help="candidate buses (default: all)")
    sweep.add_argument("--infeasible", type=int, nargs="*", default=[], help="buses excluded from selection")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config = load_config(args.config)
    setup_logging(args.log_dir or config.log_dir)

    started = time.monotonic()
    logger.info(f"dgprotect {args.command}: network={args.network} scenarios={args.scenario}")
    try:
        status = COMMANDS[args.command](Session(args, config))
    except NetworkValidationError as e:
        for violation in e.violations:
            _error(str(violation))
        status = EXIT_VIOLATION
    except (NetworkParseError, OSError, ValueError) as e:
        _error(f"error: {e}")
        status = EXIT_INPUT
    except DgProtectError as e:
        _error(f"error: {e}")
        status = EXIT_VIOLATION
    logger.info(f"dgprotect {args.command} finished with status {status} in {time.monotonic() - started:.2f}s")
    return status


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
