import os
import logging
from logging.handlers import RotatingFileHandler
from typing import List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "config.yml")
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_FILE_NAME = "dgprotect.log"


# --- Configuration Sections ---

class SystemConfig(BaseModel):
    base_mva: float = Field(100.0, gt=0)
    prefault_voltage_pu: float = Field(1.0, gt=0)
    fault_impedance_pu: float = Field(0.0, ge=0)
    direction_threshold_pu: float = Field(1e-6, ge=0)


class DgDefaults(BaseModel):
    subtransient_reactance_pu: float = Field(0.2, gt=0)
    power_factor: float = Field(1.0, gt=0, le=1)


class LoadFlowConfig(BaseModel):
    tolerance_pu: float = Field(1e-8, gt=0)
    max_iterations: int = Field(50, gt=0)


class RelayConfig(BaseModel):
    overload_factor: float = Field(1.25, gt=0)
    tms_min: float = Field(0.025, ge=0)
    tms_max: float = Field(1.2, gt=0)
    tms_floor: float = Field(0.05, gt=0)
    tcc_points: int = Field(200, gt=0)


class CoordinationConfig(BaseModel):
    cti_ms: float = Field(200.0, ge=0)
    tolerance_ms: float = Field(10.0, ge=0)
    load_current_source: Literal["base", "max"] = "base"


class StrategyConfig(BaseModel):
    curve_order: List[str] = ["VeryInverse", "ExtremelyInverse", "LongInverse"]
    max_changes: Optional[int] = Field(4, ge=0)


class AppConfig(BaseModel):
    output_dir: str = "output"
    log_dir: str = "logs"
    system: SystemConfig = SystemConfig()
    dg_defaults: DgDefaults = DgDefaults()
    loadflow: LoadFlowConfig = LoadFlowConfig()
    relay: RelayConfig = RelayConfig()
    coordination: CoordinationConfig = CoordinationConfig()
    strategy: StrategyConfig = StrategyConfig()


def config_path() -> str:
    return os.getenv("DGPROTECT_CONFIG", DEFAULT_CONFIG_PATH)


def load_config(path: Optional[str] = None) -> AppConfig:
    """
    Loads the YAML configuration.
    Falls back to built-in defaults when the file is missing or invalid,
    and applies DGPROTECT_LOG_DIR from the environment last.
    """
    path = path or config_path()
    data = {}
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError:
        logger.warning(f"Config file {path} not found, using defaults")
    except yaml.YAMLError as e:
        logger.error(f"Failed to parse config {path}: {e}")

    try:
        config = AppConfig.model_validate(data)
    except ValidationError as e:
        logger.error(f"Invalid config {path}, using defaults: {e}")
        config = AppConfig()

    log_dir = os.getenv("DGPROTECT_LOG_DIR")
    if log_dir:
        config = config.model_copy(update={"log_dir": log_dir})
    return config


def log_file_path(log_dir: str) -> str:
    return os.path.abspath(os.path.join(log_dir, LOG_FILE_NAME))


def attach_file_handler(target: logging.Logger, log_file: str, level: int = logging.INFO):
    """Rotating handler on target, once per file."""
    os.makedirs(os.path.dirname(log_file), exist_ok=True)
    target.setLevel(level)
    # Avoid adding handler multiple times on reload
    if not any(isinstance(h, RotatingFileHandler) and h.baseFilename == log_file for h in target.handlers):
        handler = RotatingFileHandler(log_file, maxBytes=5*1024*1024, backupCount=3)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        target.addHandler(handler)


def setup_logging(log_dir: str, level: int = logging.INFO) -> str:
    """Attaches the rotating file handler to the root logger; returns the log file path."""
    log_file = log_file_path(log_dir)
    attach_file_handler(logging.getLogger(), log_file, level)
    return log_file
