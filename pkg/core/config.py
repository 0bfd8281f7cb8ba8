"""
Core configuration for hazard-dantzig
Handles runtime settings, environment fallbacks and logging setup.
"""

import os
import json
import logging
from pathlib import Path
from typing import Optional

import psutil
from dotenv import load_dotenv
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

CONFIG_ENV = "HAZARD_DANTZIG_CONFIG"
JOBS_ENV = "HAZARD_DANTZIG_JOBS"
LOG_LEVEL_ENV = "HAZARD_DANTZIG_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

VERSION = "1.0.0"
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "data" / "app_config.json"


class AppConfig(BaseModel):
    """Main application configuration"""
    log_level: str = "INFO"

    # Parallelism; None means "ask the environment, then the machine"
    jobs: Optional[int] = Field(default=None, ge=1)

    # Solver defaults
    max_outer: int = 50
    outer_tol: float = 1e-6
    lp_tol: float = 1e-8
    feasibility_slack: float = 1e-6

    # Factor optimizer defaults
    factor_preset: str = "default"


def resolve_jobs(jobs: Optional[int] = None) -> int:
    """Resolve the worker count: flag, then env variable, then core count"""
    if jobs is not None:
        return max(1, int(jobs))
    env_value = os.environ.get(JOBS_ENV)
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logger.warning(f"Ignoring non-integer {JOBS_ENV}={env_value!r}")
    return psutil.cpu_count() or 1


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging once for the process"""
    level_name = (level or os.environ.get(LOG_LEVEL_ENV) or config.log_level).upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


def load_config_from_file(config_path=DEFAULT_CONFIG_PATH) -> AppConfig:
    """Load configuration from JSON file; defaults when the file is missing"""
    config_file = Path(config_path)
    if config_file.exists():
        with open(config_file, 'r') as f:
            return AppConfig(**json.load(f))
    logger.debug(f"No config file at {config_file}; using defaults")
    return AppConfig()


# .env may carry HAZARD_DANTZIG_* overrides
load_dotenv()

# Global instance
config = load_config_from_file(os.environ.get(CONFIG_ENV) or DEFAULT_CONFIG_PATH)


def get_config() -> AppConfig:
    """Get application configuration"""
    return config
