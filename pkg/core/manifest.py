"""
Run manifests
Every CLI run records what it did next to its outputs.
"""

import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

from core.config import VERSION
from utils.io import read_json, write_json

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


class RunManifest(BaseModel):
    """Command, config echo, seeds and outputs of one run"""
    command: str
    argv: List[str] = []
    config: Dict[str, Any] = {}
    seeds: List[int] = []
    version: str = VERSION
    started_at: str
    duration_seconds: float = 0.0
    outputs: List[str] = []
    status: str = "running"
    error: Optional[str] = None


def manifest_path_for(output: Path) -> Path:
    """report/ -> report/manifest.json, fit.json -> fit.json.manifest.json"""
    output = Path(output)
    if output.is_dir() or output.suffix == "":
        return output / "manifest.json"
    return output.with_name(output.name + MANIFEST_SUFFIX)


def load_manifest(path) -> RunManifest:
    return RunManifest(**read_json(path))


class ManifestRecorder:
    """Context manager timing a run and writing its manifest on exit"""

    def __init__(self, command: str, argv: List[str], path: Path):
        self.path = Path(path)
        self.manifest = RunManifest(command=command, argv=list(argv), started_at=datetime.now().isoformat())
        self._start = 0.0

    def record_config(self, config: Dict[str, Any], seeds: Optional[List[int]] = None) -> None:
        self.manifest.config = config
        if seeds is not None:
            self.manifest.seeds = [int(seed) for seed in seeds]

    def add_output(self, path) -> None:
        self.manifest.outputs.append(str(path))

    def __enter__(self) -> "ManifestRecorder":
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        self.manifest.duration_seconds = time.perf_counter() - self._start
        if exc is None:
            self.manifest.status = "completed"
        else:
            self.manifest.status = "failed"
            self.manifest.error = f"{exc_type.__name__}: {exc}"
        try:
            write_json(self.path, self.manifest.model_dump(mode="json"))
            logger.info(f"Manifest written to {self.path}")
        except Exception as e:
            logger.error(f"Failed to write manifest {self.path}: {e}")
        return False
