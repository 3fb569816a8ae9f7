"""Input validation and small execution helpers shared across modules."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
import pandas as pd
from sklearn.utils.validation import check_array, check_consistent_length

T = TypeVar("T")
R = TypeVar("R")


def check_strike_arrays(X, y) -> tuple[np.ndarray, np.ndarray]:
    """Coerce strikes and synthetic forwards into matching 1-d float arrays."""
    strikes = check_array(np.asarray(X, dtype=float).reshape(-1, 1), ensure_min_samples=2).ravel()
    g = check_array(np.asarray(y, dtype=float).reshape(-1, 1), ensure_min_samples=2).ravel()
    check_consistent_length(strikes, g)
    if np.any(strikes <= 0):
        raise ValueError("strikes must be positive")
    return strikes, g


def check_positive(name: str, value: float, *, strict: bool = True) -> float:
    value = float(value)
    ok = value > 0 if strict else value >= 0
    if not (ok and math.isfinite(value)):
        op = ">" if strict else ">="
        raise ValueError(f"{name} must be finite and {op} 0, got {value!r}")
    return value


def check_columns(frame: pd.DataFrame, required: Sequence[str], what: str = "frame") -> None:
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValueError(f"{what} is missing columns {missing}; has {list(frame.columns)}")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], *, workers: int = 1,
                 chunksize: int = 64) -> list[R]:
    """Ordered map, optionally across processes. Results never depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, chunksize)))
