"""
Exogenous fault tables: published fault currents used in place of a
computed study.

    {"schema": 1,
     "studies": [{"scenario": "off",
                  "faults": [{"bus": 23, "if_amps": 6110,
                              "relays": {"35": 6026.3, "32": 2206.8}}]}]}

Listed relay currents are forward contributions; 0 means the relay sees
no current for that fault. A relay current above the bus fault current is
refused unless the row is marked "fitted": true (currents back-solved from
known operating times rather than read off a study).
"""

import json
import logging
from typing import Dict, List, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from dgprotect.errors import NetworkParseError
from dgprotect.shortcircuit import Direction, FaultResult, FaultStudy, RelayContribution

logger = logging.getLogger(__name__)


class FaultRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bus: int
    if_amps: float = Field(gt=0)
    relays: Dict[int, float] = {}
    fitted: bool = False


class StudyTable(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: str
    faults: List[FaultRow] = []


class FaultTableDocument(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    notes: List[str] = []
    studies: List[StudyTable]


def _to_study(table: StudyTable) -> FaultStudy:
    results = {}
    fitted = []
    for row in table.faults:
        if row.bus in results:
            raise NetworkParseError(f"scenario '{table.scenario}' lists bus {row.bus} twice")
        contributions = {}
        for relay_id, current in sorted(row.relays.items()):
            if current < 0:
                raise NetworkParseError(f"negative current for relay {relay_id} at bus {row.bus}")
            direction = Direction.FORWARD if current > 0 else Direction.NONE
            contributions[relay_id] = RelayContribution(relay_id, current, direction)
        over = sorted(r for r, current in row.relays.items() if current > row.if_amps)
        if over and not row.fitted:
            raise NetworkParseError(
                f"scenario '{table.scenario}': relays {over} carry more than the {row.if_amps:g} A fault current "
                f"at bus {row.bus}; mark the row fitted if the currents are back-solved"
            )
        if over:
            fitted.append(row.bus)
        results[row.bus] = FaultResult(row.bus, row.if_amps, contributions)
    if fitted:
        logger.warning(f"Scenario '{table.scenario}': fitted relay currents exceed the bus fault current at buses {sorted(fitted)}")
    return FaultStudy(scenario=table.scenario, results=results)


def load_fault_tables(document: Union[str, bytes]) -> Dict[str, FaultStudy]:
    try:
        data = json.loads(document)
    except json.JSONDecodeError as e:
        raise NetworkParseError(e.msg, line=e.lineno, column=e.colno) from e
    try:
        parsed = FaultTableDocument.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise NetworkParseError(first["msg"], field=".".join(str(p) for p in first["loc"])) from e

    studies = {}
    for table in parsed.studies:
        if table.scenario in studies:
            raise NetworkParseError(f"scenario '{table.scenario}' appears twice")
        studies[table.scenario] = _to_study(table)
    logger.info(f"Loaded fault tables for scenarios {list(studies)}")
    return studies


def read_fault_tables(path: str) -> Dict[str, FaultStudy]:
    with open(path, "r", encoding="utf-8") as f:
        return load_fault_tables(f.read())
