"""
Remedies for DG-induced miscoordination.

adaptive_redesign retimes every relay for the with-DG currents, which
needs a second settings group and a link to switch it. Curve selection
keeps one setting group and only swaps the characteristic of a few relays
until both operating states coordinate.
"""

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import pandas as pd

from dgprotect.coordination import (
    CoordinationReport,
    CtiPolicy,
    SettingsSet,
    design_settings,
    evaluate_element,
    miscoordinated_relays,
    pair_elements,
    report_frame,
    verify,
)
from dgprotect.netmodel import DEFAULT_BASE_MVA, Network, PairDecl, Scenario
from dgprotect.relay import CurveKind
from dgprotect.shortcircuit import FaultStudy, run_fault_study

logger = logging.getLogger(__name__)

DEFAULT_CURVE_ORDER = (CurveKind.VERY_INVERSE, CurveKind.EXTREMELY_INVERSE, CurveKind.LONG_INVERSE)
# Most curve changes tried by default; None lifts the bound
DEFAULT_MAX_CHANGES = 4
COMMUNICATION_NOTE = "two settings groups: switching between them needs a communication link"


@dataclass(frozen=True)
class CurveAssignment:
    curves: Dict[int, CurveKind]
    changed_relays: FrozenSet[int] = frozenset()

    @classmethod
    def from_changes(cls, baseline: SettingsSet, changes: Dict[int, CurveKind]) -> "CurveAssignment":
        curves = baseline.curves()
        curves.update(changes)
        original = baseline.curves()
        changed = frozenset(r for r, curve in curves.items() if curve != original[r])
        return cls(curves=dict(sorted(curves.items())), changed_relays=changed)

    def changes(self) -> Dict[int, CurveKind]:
        return {r: self.curves[r] for r in sorted(self.changed_relays)}


@dataclass(frozen=True)
class DualReport:
    report_without_dg: CoordinationReport
    report_with_dg: CoordinationReport
    assignment: CurveAssignment
    exhausted: bool = False
    evaluated: int = 0

    @property
    def miscoordination_count(self) -> int:
        return self.report_without_dg.miscoordination_count + self.report_with_dg.miscoordination_count

    @property
    def clean(self) -> bool:
        return self.miscoordination_count == 0


def _dual(settings: SettingsSet, assignment: CurveAssignment, studies: Tuple[FaultStudy, FaultStudy],
          pairs: Sequence[PairDecl], policy: CtiPolicy, **extra) -> DualReport:
    candidate = settings.with_curves(assignment.changes())
    return DualReport(
        report_without_dg=verify(candidate, studies[0], pairs, policy),
        report_with_dg=verify(candidate, studies[1], pairs, policy),
        assignment=assignment,
        **extra,
    )


def adaptive_redesign(
    network: Network,
    fault_study_with_dg: FaultStudy,
    pairs: Sequence[PairDecl],
    policy: CtiPolicy = CtiPolicy(),
    **design_options,
) -> SettingsSet:
    """design_settings on the with-DG currents, flagged as needing communication."""
    designed = design_settings(network, fault_study_with_dg, pairs, policy, **design_options)
    logger.info(f"Adaptive redesign for '{fault_study_with_dg.scenario}': {len(designed)} relays")
    return designed.model_copy(update={
        "requires_communication": True,
        "notes": designed.notes + (COMMUNICATION_NOTE,),
    })


def uniform_curve_trial(
    settings: SettingsSet,
    curve: CurveKind,
    studies: Tuple[FaultStudy, FaultStudy],
    pairs: Sequence[PairDecl],
    policy: CtiPolicy = CtiPolicy(),
) -> DualReport:
    assignment = CurveAssignment.from_changes(settings, {r: curve for r in settings.settings})
    return _dual(settings, assignment, studies, pairs, policy, evaluated=1)


def _candidates(flagged: set, pairs: Sequence[PairDecl]) -> List[int]:
    candidates = set(flagged)
    for _, primary, backup in pair_elements(pairs):
        if primary in flagged or backup in flagged:
            candidates.add(primary)
            if backup is not None:
                candidates.add(backup)
    return sorted(candidates)


class _ElementFlags:
    """
    Flagged-row count of each pair element, summed over both studies, for
    any curve pair of its primary and backup. Computed once per curve pair.
    """

    def __init__(self, settings: SettingsSet, studies: Tuple[FaultStudy, FaultStudy],
                 pairs: Sequence[PairDecl], policy: CtiPolicy):
        self.settings = settings
        self.studies = studies
        self.threshold_ms = policy.threshold_ms
        # Rows without a backup are never flagged
        self.elements = [e for e in pair_elements(pairs) if e[2] is not None]
        self.by_relay: Dict[int, List[int]] = defaultdict(list)
        for index, (_, primary, backup) in enumerate(self.elements):
            self.by_relay[primary].append(index)
            self.by_relay[backup].append(index)
        self._counts: Dict[Tuple[int, CurveKind, CurveKind], int] = {}
        self.baseline = [self.count(i, {}) for i in range(len(self.elements))]

    def other(self, index: int, relay_id: int) -> int:
        _, primary, backup = self.elements[index]
        return backup if primary == relay_id else primary

    def count(self, index: int, changes: Dict[int, CurveKind]) -> int:
        element = self.elements[index]
        bus, primary, backup = element
        p_setting, b_setting = self.settings.get(primary), self.settings.get(backup)
        key = (index, changes.get(primary, p_setting.curve), changes.get(backup, b_setting.curve))
        if key not in self._counts:
            p_setting, b_setting = p_setting.with_curve(key[1]), b_setting.with_curve(key[2])
            self._counts[key] = sum(
                evaluate_element(element, study[bus], p_setting, b_setting, self.threshold_ms).miscoordination
                for study in self.studies
            )
        return self._counts[key]

    def residual(self, changes: Dict[int, CurveKind]) -> int:
        touched = {i for relay_id in changes for i in self.by_relay[relay_id]}
        return sum(self.baseline) + sum(self.count(i, changes) - self.baseline[i] for i in touched)


class _CurveSearch:
    """Depth-first curve assignment over one relay subset at a time."""

    def __init__(self, settings: SettingsSet, flags: _ElementFlags, curve_order: Sequence[CurveKind]):
        self.settings = settings
        self.flags = flags
        self.curve_order = list(curve_order)
        self.flagged_pairs = [
            (primary, backup) for (_, primary, backup), n in zip(flags.elements, flags.baseline) if n
        ]
        self.evaluated = 1
        self.best: Tuple[Tuple[int, int], Dict[int, CurveKind]] = ((sum(flags.baseline), 0), {})

    def covers(self, subset: Tuple[int, ...]) -> bool:
        """A flagged row with neither relay in the subset stays flagged."""
        chosen = set(subset)
        return all(primary in chosen or backup in chosen for primary, backup in self.flagged_pairs)

    def run(self, subset: Tuple[int, ...]) -> Optional[Dict[int, CurveKind]]:
        return self._extend(subset, 0, {})

    def _remember(self, changes: Dict[int, CurveKind]):
        key = (self.flags.residual(changes), len(changes))
        if key < self.best[0]:
            self.best = (key, changes)

    def _extend(self, subset: Tuple[int, ...], depth: int, changes: Dict[int, CurveKind]):
        relay_id = subset[depth]
        pending = set(subset[depth + 1:])
        # Rows whose relays are all decided once this one is
        settled = [i for i in self.flags.by_relay[relay_id] if self.flags.other(i, relay_id) not in pending]
        current = self.settings.get(relay_id).curve
        for curve in self.curve_order:
            if curve == current:
                continue
            trial = {**changes, relay_id: curve}
            self.evaluated += 1
            if any(self.flags.count(i, trial) for i in settled):
                self._remember(trial)
                continue
            if not pending:
                return trial
            self._remember(trial)
            found = self._extend(subset, depth + 1, trial)
            if found is not None:
                return found
        return None


def restore_by_curve_selection(
    settings: SettingsSet,
    study_without_dg: FaultStudy,
    study_with_dg: FaultStudy,
    pairs: Sequence[PairDecl],
    policy: CtiPolicy = CtiPolicy(),
    curve_order: Sequence[CurveKind] = DEFAULT_CURVE_ORDER,
    max_changes: Optional[int] = DEFAULT_MAX_CHANGES,
) -> DualReport:
    """
    Smallest set of curve swaps that coordinates both operating states.

    Candidates are the relays of every flagged row plus their immediate
    primary/backup neighbours. Change counts grow from one up to max_changes
    (None: every candidate); within a count, relay subsets go in relay-id
    order and curves in curve_order. A subset must touch every flagged row,
    and a branch is dropped as soon as a row whose relays are all decided is
    still flagged. PS and TMS never change.

    evaluated counts the baseline check plus every curve choice tried. When
    nothing coordinates both states the result is marked exhausted and
    carries the tried assignment with the fewest residual flagged rows, then
    the fewest changes.
    """
    studies = (study_without_dg, study_with_dg)
    started = time.monotonic()
    baseline = _dual(settings, CurveAssignment.from_changes(settings, {}), studies, pairs, policy, evaluated=1)
    if baseline.clean:
        return baseline

    flagged = miscoordinated_relays([baseline.report_without_dg, baseline.report_with_dg])
    candidates = [r for r in _candidates(flagged, pairs) if r in settings]
    limit = len(candidates) if max_changes is None else min(max_changes, len(candidates))
    logger.info(f"Curve selection: flagged {sorted(flagged)}, candidates {candidates}, up to {limit} changes")

    search = _CurveSearch(settings, _ElementFlags(settings, studies, pairs, policy), curve_order)
    for k in range(1, limit + 1):
        for subset in combinations(candidates, k):
            if not search.covers(subset):
                continue
            changes = search.run(subset)
            if changes is None:
                continue
            assignment = CurveAssignment.from_changes(settings, changes)
            logger.info(
                f"Coordination restored by {assignment.changes()} after {search.evaluated} evaluations "
                f"({time.monotonic() - started:.3f}s)"
            )
            return _dual(settings, assignment, studies, pairs, policy, evaluated=search.evaluated)

    best = _dual(settings, CurveAssignment.from_changes(settings, search.best[1]), studies, pairs, policy,
                 exhausted=True, evaluated=search.evaluated)
    logger.warning(
        f"Curve selection exhausted after {search.evaluated} evaluations ({time.monotonic() - started:.3f}s); "
        f"best leaves {best.miscoordination_count} flagged rows with {best.assignment.changes()}"
    )
    return best


# --- Strategy Comparison ---

@dataclass(frozen=True)
class StrategyRow:
    strategy: str
    without_dg: CoordinationReport
    with_dg: CoordinationReport
    requires_communication: bool
    settings: Optional[SettingsSet] = field(default=None, repr=False)


@dataclass(frozen=True)
class StrategySummary:
    rows: Tuple[StrategyRow, ...]

    def frame(self) -> pd.DataFrame:
        records = []
        for row in self.rows:
            records.append([
                row.strategy,
                row.without_dg.miscoordination_count,
                row.with_dg.miscoordination_count,
                " ".join(str(b) for b in row.without_dg.flagged_buses()),
                " ".join(str(b) for b in row.with_dg.flagged_buses()),
                "yes" if row.requires_communication else "no",
            ])
        return pd.DataFrame(records, columns=[
            "Strategy", "MC without DG", "MC with DG",
            "Flagged buses without DG", "Flagged buses with DG", "Communication",
        ])


def compare_strategies(
    network: Network,
    scenarios: Tuple[Union[Scenario, str], Union[Scenario, str]],
    pairs: Sequence[PairDecl],
    policy: CtiPolicy = CtiPolicy(),
    studies: Optional[Tuple[FaultStudy, FaultStudy]] = None,
    baseline: Optional[SettingsSet] = None,
    base_mva: float = DEFAULT_BASE_MVA,
    curve_order: Sequence[CurveKind] = DEFAULT_CURVE_ORDER,
    max_changes: Optional[int] = DEFAULT_MAX_CHANGES,
    **design_options,
) -> StrategySummary:
    """
    Original settings, adaptive redesign and curve selection side by side.

    scenarios is (without DG, with DG). Without studies, both are computed
    at every pair fault bus; without a baseline, one is designed on the
    without-DG study.
    """
    if studies is None:
        buses = sorted({p.fault_bus for p in pairs})
        studies = tuple(run_fault_study(network, s, buses, base_mva) for s in scenarios)
    without_dg, with_dg = studies

    if baseline is None:
        baseline = design_settings(network, without_dg, pairs, policy, supplementary_study=with_dg,
                                   base_mva=base_mva, **design_options)
    original = verify(baseline, without_dg, pairs, policy), verify(baseline, with_dg, pairs, policy)

    adaptive = adaptive_redesign(network, with_dg, pairs, policy, supplementary_study=without_dg,
                                 base_mva=base_mva, **design_options)
    # One group everywhere; switching groups per state is what the link would buy
    redesigned = verify(adaptive, without_dg, pairs, policy), verify(adaptive, with_dg, pairs, policy)

    restored = restore_by_curve_selection(baseline, without_dg, with_dg, pairs, policy, curve_order, max_changes)
    restored_settings = baseline.with_curves(restored.assignment.changes())

    return StrategySummary(rows=(
        StrategyRow("original settings", *original, requires_communication=False, settings=baseline),
        StrategyRow("adaptive redesign", *redesigned, requires_communication=True, settings=adaptive),
        StrategyRow("curve selection", restored.report_without_dg, restored.report_with_dg,
                    requires_communication=False, settings=restored_settings),
    ))


def assignment_frame(assignment: CurveAssignment) -> pd.DataFrame:
    return pd.DataFrame([[r, c.value] for r, c in assignment.curves.items()], columns=["relay_id", "curve"])


def dual_report_frame(dual: DualReport) -> pd.DataFrame:
    frames = []
    for report in (dual.report_without_dg, dual.report_with_dg):
        frame = report_frame(report)
        frame.insert(0, "Scenario", report.scenario or "")
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
