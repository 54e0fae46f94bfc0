import hashlib
import json
import os
from itertools import islice
from typing import Any

import numpy as np

THREADS_ENV = "CONSTEL_THREADS"


def batched(iterable, n):
    """Like itertools.batched in Python 3.12"""
    if n < 1:
        raise ValueError('n must be at least one')
    it = iter(iterable)
    while batch := tuple(islice(it, n)):
        yield batch


def gray_bits(start: int, stop: int, nbits: int) -> np.ndarray:
    """Rows start..stop-1 of the reflected Gray-code sequence, as a 0/1 matrix (one column per bit)."""
    idx = np.arange(start, stop, dtype=np.int64)
    codes = idx ^ (idx >> 1)
    return ((codes[:, None] >> np.arange(nbits, dtype=np.int64)) & 1).astype(np.int8)


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def config_hash(config: Any) -> str:
    text = json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def worker_count() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1
