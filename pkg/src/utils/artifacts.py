import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from src.utils.error_handling import AnalysisError
from src.utils.logging_utils import get_logger

# Logging configuration
logger = get_logger("Artifacts")

FLOAT_FORMAT = "%.12g"

PathLike = Union[str, Path]


# =========================
# SAVE & OPEN CSV TABLES
# =========================
def save_csv(data: np.ndarray, columns: Sequence[str], csv_path: PathLike, fmt: str = FLOAT_FORMAT) -> Path:
    # Fixed formatting keeps re-runs byte-identical
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    data = np.atleast_2d(np.asarray(data, dtype=float)) if np.size(data) else np.empty((0, len(columns)))
    np.savetxt(csv_path, data, fmt=fmt, delimiter=",", header=",".join(columns), comments="")
    logger.info(f"Saved table to: {csv_path}")
    logger.debug(f"Table data: {data.shape[0]} rows x {len(columns)} columns")
    return csv_path


def open_csv(csv_path: PathLike) -> Tuple[List[str], np.ndarray]:
    csv_path = Path(csv_path)
    with open(csv_path, "r", encoding="utf-8") as f:
        columns = f.readline().strip().split(",")
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    logger.info(f"Loaded table from: {csv_path}")
    logger.debug(f"Table data: {data.shape[0]} rows x {len(columns)} columns")
    return columns, data


def csv_column(csv_path: PathLike, column: str) -> np.ndarray:
    columns, data = open_csv(csv_path)
    if column not in columns:
        raise AnalysisError(f"Column '{column}' not in {csv_path} (has {', '.join(columns)}).")
    return data[:, columns.index(column)] if data.size else np.empty(0)


# =========================
# SAVE JSON REPORTS
# =========================
def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def save_json(payload: Dict[str, Any], json_path: PathLike) -> Path:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info(f"Saved report to: {json_path}")
    return json_path


def save_jsonl(records: Iterable[Dict[str, Any]], jsonl_path: PathLike) -> Path:
    # One event per line
    jsonl_path = Path(jsonl_path)
    jsonl_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(jsonl_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")
            count += 1
    logger.info(f"Saved {count} event(s) to: {jsonl_path}")
    return jsonl_path
