"""
File helpers: atomic writes, canonical JSON and dense matrix I/O
"""

import os
import json
import tempfile
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write text to a sibling temp file, then rename over the target"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return target


def dumps_json(payload: Any) -> str:
    """Canonical JSON: sorted keys, no NaN, trailing newline"""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, dumps_json(payload))


def read_json(path: PathLike) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_frame_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def read_matrix(path: PathLike) -> np.ndarray:
    """Read a dense matrix from headerless row-major CSV or JSON"""
    path = Path(path)
    if path.suffix.lower() == ".json":
        data = read_json(path)
        if isinstance(data, dict):
            data = data["matrix"]
        matrix = np.asarray(data, dtype=float)
    else:
        matrix = pd.read_csv(path, header=None).to_numpy(dtype=float)
    if matrix.ndim != 2:
        raise ValueError(f"Matrix in {path} is not two-dimensional")
    return matrix


def write_matrix(path: PathLike, matrix: np.ndarray) -> Path:
    path = Path(path)
    matrix = np.asarray(matrix, dtype=float)
    if path.suffix.lower() == ".json":
        return write_json(path, {"matrix": matrix.tolist()})
    frame = pd.DataFrame(matrix)
    return atomic_write_text(path, frame.to_csv(index=False, header=False, lineterminator="\n"))
