import json
import logging
import time
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from dgprotect import __version__
from dgprotect.config import AppConfig, load_config, setup_logging
from dgprotect.coordination import CtiPolicy, enumerate_pairs, verify
from dgprotect.errors import DgProtectError, NetworkParseError
from dgprotect.netmodel import parse_network, validate
from dgprotect.relay import CurveKind
from dgprotect.strategy import restore_by_curve_selection
from server.tasks import sweep_task
from server.utils import network_from_body, report_to_dict, settings_from_body, studies_for, study_rows

# Configure Logging (Shared Volume, Rotation)
# Note: Uvicorn configures root logger, so basicConfig is ignored. setup_logging attaches the handler explicitly.
config = load_config()
setup_logging(config.log_dir)

logger = logging.getLogger(__name__)
logger.info(f"SYSTEM: Server module initialized at {datetime.now()}")

# --- App ---
app = FastAPI(title="dgprotect", version=__version__)


# --- Request / Response Models ---

class ViolationResponse(BaseModel):
    kind: str
    message: str


class ValidateResponse(BaseModel):
    valid: bool
    violations: List[ViolationResponse] = []


class FaultStudyRequest(BaseModel):
    network: Dict[str, Any]
    scenario: Optional[str] = None
    buses: Optional[List[int]] = None


class FaultStudyResponse(BaseModel):
    scenario: Optional[str] = None
    rows: List[Dict[str, Any]] = []


class VerifyRequest(BaseModel):
    network: Dict[str, Any]
    settings: Dict[str, Any]
    scenarios: List[str] = []
    fault_tables: Optional[Dict[str, Any]] = None
    cti_ms: Optional[float] = None
    cti_tol_ms: Optional[float] = None


class VerifyResponse(BaseModel):
    reports: List[Dict[str, Any]] = []


class RestoreRequest(BaseModel):
    network: Dict[str, Any]
    settings: Dict[str, Any]
    scenarios: List[str]
    fault_tables: Optional[Dict[str, Any]] = None
    max_changes: Optional[int] = None


class RestoreResponse(BaseModel):
    changes: Dict[int, str] = {}
    exhausted: bool
    evaluated: int
    report_without_dg: Dict[str, Any]
    report_with_dg: Dict[str, Any]


class SweepRequest(BaseModel):
    network: Dict[str, Any]
    sizes: List[float] = [25.0, 50.0]
    candidates: Optional[List[int]] = None
    infeasible: List[int] = []


class JobResponse(BaseModel):
    job_id: str
    status: str
    result: Optional[Dict[str, Any]] = None


# --- Helpers ---

@contextmanager
def engine_errors():
    """Maps engine errors onto HTTP statuses: malformed input 400, domain errors 422."""
    try:
        yield
    except NetworkParseError as e:
        logger.warning(f"Rejected document: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except DgProtectError as e:
        logger.warning(f"Request failed: {e}")
        raise HTTPException(status_code=422, detail=str(e))


def policy_for(cti_ms: Optional[float] = None, cti_tol_ms: Optional[float] = None) -> CtiPolicy:
    return CtiPolicy(
        requirement_ms=config.coordination.cti_ms if cti_ms is None else cti_ms,
        tolerance_ms=config.coordination.tolerance_ms if cti_tol_ms is None else cti_tol_ms,
    )


# --- Endpoints ---

@app.get("/api/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/api/system/config", response_model=AppConfig)
def get_system_config():
    return config


@app.post("/api/network/validate", response_model=ValidateResponse)
def validate_network(document: Dict[str, Any]):
    with engine_errors():
        network = parse_network(json.dumps(document))
        violations = validate(network)
    return {
        "valid": not violations,
        "violations": [{"kind": v.kind, "message": v.message} for v in violations],
    }


@app.post("/api/study/fault", response_model=FaultStudyResponse)
def fault_study(request: FaultStudyRequest):
    with engine_errors():
        network = network_from_body(request.network)
        scenario = request.scenario
        buses = request.buses if request.buses is not None else network.bus_ids
        study = studies_for(network, [scenario], buses, config=config)[0]
    return {"scenario": study.scenario, "rows": study_rows(study)}


@app.post("/api/coordination/verify", response_model=VerifyResponse)
def verify_coordination(request: VerifyRequest):
    with engine_errors():
        network = network_from_body(request.network)
        settings = settings_from_body(request.settings)
        pairs = enumerate_pairs(network)
        scenarios = request.scenarios or [s.name for s in network.scenarios]
        buses = sorted({p.fault_bus for p in pairs})
        studies = studies_for(network, scenarios, buses, request.fault_tables, config)
        policy = policy_for(request.cti_ms, request.cti_tol_ms)
        reports = [report_to_dict(verify(settings, study, pairs, policy)) for study in studies]
    return {"reports": reports}


@app.post("/api/strategy/restore", response_model=RestoreResponse)
def restore(request: RestoreRequest):
    if len(request.scenarios) != 2:
        raise HTTPException(status_code=422, detail="restore needs two scenarios: without DG, then with DG")
    started = time.monotonic()
    with engine_errors():
        network = network_from_body(request.network)
        settings = settings_from_body(request.settings)
        pairs = enumerate_pairs(network)
        buses = sorted({p.fault_bus for p in pairs})
        without_dg, with_dg = studies_for(network, request.scenarios, buses, request.fault_tables, config)
        curve_order = [CurveKind.parse(name) for name in config.strategy.curve_order]
        max_changes = config.strategy.max_changes if request.max_changes is None else request.max_changes
        dual = restore_by_curve_selection(settings, without_dg, with_dg, pairs, policy_for(),
                                          curve_order, max_changes)
    logger.info(f"Restore finished in {time.monotonic() - started:.3f}s after {dual.evaluated} evaluations")
    return {
        "changes": {r: c.value for r, c in dual.assignment.changes().items()},
        "exhausted": dual.exhausted,
        "evaluated": dual.evaluated,
        "report_without_dg": report_to_dict(dual.report_without_dg),
        "report_with_dg": report_to_dict(dual.report_with_dg),
    }


@app.post("/api/jobs/sweep", response_model=JobResponse)
def submit_sweep(request: SweepRequest):
    with engine_errors():
        network_from_body(request.network)
    result = sweep_task.delay(request.network, request.sizes, request.candidates, request.infeasible)
    logger.info(f"Queued sweep job {result.id}")
    return {"job_id": result.id, "status": result.state}


@app.get("/api/jobs/{job_id}", response_model=JobResponse)
def get_job(job_id: str):
    # Read from the result backend; ids it has never seen report PENDING
    result = sweep_task.AsyncResult(job_id)
    payload = result.result if result.ready() and isinstance(result.result, dict) else None
    return {"job_id": job_id, "status": result.state, "result": payload}
