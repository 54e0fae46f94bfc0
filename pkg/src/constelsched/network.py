"""
Time-varying undirected communication graph between satellites, one adjacency frame per iteration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np

from .errors import ConfigurationError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

EDGE_THRESHOLD = 0.2
MAX_TRIES = 100


@dataclass(frozen=True, eq=False)
class GraphTimeline:
    n: int
    frames: np.ndarray  # (T, n, n) of 0/1
    delta: int          # joint-connectivity window, in iterations

    def __post_init__(self) -> None:
        frames = np.array(self.frames, dtype=np.uint8)
        if frames.ndim != 3 or frames.shape[1:] != (self.n, self.n):
            raise ValidationError(f"frames: expected shape (T, {self.n}, {self.n}), got {frames.shape}")
        if self.n < 1:
            raise ValidationError(f"n: need at least one agent, got {self.n}")
        if self.delta < 1:
            raise ValidationError(f"delta: window must be >= 1, got {self.delta}")
        if (frames > 1).any():
            raise ValidationError("frames: entries must be 0 or 1")
        if (frames != frames.transpose(0, 2, 1)).any():
            raise ValidationError("frames: adjacency must be symmetric")
        if frames.diagonal(axis1=1, axis2=2).any():
            raise ValidationError("frames: diagonal must be zero")
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphTimeline):
            return NotImplemented
        return self.n == other.n and self.delta == other.delta and np.array_equal(self.frames, other.frames)

    def __str__(self) -> str:
        return f"GraphTimeline: {self.n} agents, {len(self)} frames, delta {self.delta}"

    def frame(self, t: int) -> np.ndarray:
        """Adjacency at iteration t; the timeline repeats after its last frame."""
        return self.frames[t % len(self.frames)]

    def cycled(self, length: int) -> GraphTimeline:
        return GraphTimeline(self.n, self.frames[np.arange(length) % len(self.frames)], self.delta)

    @staticmethod
    def static(n: int, frames: int = 1, delta: int = 1) -> GraphTimeline:
        """Complete graph at every iteration."""
        complete = np.ones((n, n), dtype=np.uint8) - np.eye(n, dtype=np.uint8)
        return GraphTimeline(n, np.broadcast_to(complete, (frames, n, n)), delta)

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "delta": self.delta, "frames": self.frames.tolist()}

    @staticmethod
    def from_dict(data: dict[str, Any]) -> GraphTimeline:
        for key in ("n", "delta", "frames"):
            if key not in data:
                raise SchemaError(key, "missing field")
        return GraphTimeline(int(data["n"]), np.array(data["frames"]).reshape(-1, data["n"], data["n"]),
                             int(data["delta"]))


def random_frame(rng: np.random.Generator | int, n: int) -> np.ndarray:
    """Sum of three rounded uniform matrices, symmetrized from the upper triangle, clamped to 0/1
    and with the diagonal cleared."""
    rng = np.random.default_rng(rng)
    N = np.round(rng.random((n, n))) + np.round(rng.random((n, n))) + np.round(rng.random((n, n)))
    N = np.triu(N) + np.triu(N, 1).T
    N[N > EDGE_THRESHOLD] = 1
    N -= np.diag(np.diag(N))
    return N.astype(np.uint8)


@dataclass(frozen=True)
class ConnectivityReport:
    ok: bool
    first_bad_window: int | None = None


def check_joint_connectivity(tl: GraphTimeline, horizon: int) -> ConnectivityReport:
    """Is the union graph over frames T..T+delta-1 connected for every window start T <= horizon?"""
    if len(tl) < horizon + tl.delta:
        raise ValidationError(f"timeline has {len(tl)} frames, windows up to {horizon} need {horizon + tl.delta}")
    counts = np.concatenate([np.zeros((1, tl.n, tl.n), dtype=np.int64), np.cumsum(tl.frames, axis=0, dtype=np.int64)])
    for T in range(horizon + 1):
        union = (counts[T + tl.delta] - counts[T]) > 0
        if not nx.is_connected(nx.from_numpy_array(union.astype(np.uint8))):
            logger.debug(f"union graph of window {T}..{T + tl.delta - 1} is disconnected")
            return ConnectivityReport(False, T)
    return ConnectivityReport(True)


def neighbours(tl: GraphTimeline, i: int, t: int) -> set[int]:
    if not 0 <= t < len(tl):
        raise IndexError(f"frame {t} out of range for {len(tl)} frames")
    if not 0 <= i < tl.n:
        raise IndexError(f"agent {i} out of range for {tl.n} agents")
    return {int(j) for j in np.flatnonzero(tl.frames[t][i]) if j != i}


def generate_timeline(seed: int, n: int, frames: int, delta: int = 1, max_tries: int = MAX_TRIES) -> GraphTimeline:
    """Random frames, redrawn until every delta-window is jointly connected, including the windows
    that wrap around when the timeline repeats."""
    if frames < delta:
        raise ConfigurationError(f"need at least delta={delta} frames, got {frames}")
    rng = np.random.default_rng(seed)
    for attempt in range(max_tries):
        tl = GraphTimeline(n, np.stack([random_frame(rng, n) for _ in range(frames)]), delta)
        report = check_joint_connectivity(tl.cycled(frames + delta - 1), frames - 1)
        if report.ok:
            logger.info(f"Generated {tl} (seed {seed}, attempt {attempt + 1})")
            return tl
        logger.debug(f"attempt {attempt + 1}: window {report.first_bad_window} disconnected, redrawing")
    raise ConfigurationError(f"no jointly connected timeline after {max_tries} attempts (n={n}, delta={delta})")


def save(tl: GraphTimeline, path: Path | str, provenance: dict[str, Any] | None = None) -> None:
    Path(path).write_text(json.dumps({**tl.to_dict(), **(provenance or {})}))
    logger.info(f"Wrote timeline to {path}")


def load(path: Path | str) -> GraphTimeline:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError("<root>", f"{path}: {e}") from None
    return GraphTimeline.from_dict(data)
