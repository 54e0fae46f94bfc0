"""
Problem data of the Earth-observation scheduling model.

All times are hours from the start of the scheduling horizon. Opportunity
arrays are ragged and nested [i][j][k] (acquisitions) or [i][j][r]
(downlinks), exactly as they appear in the instance JSON file.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigurationError, SchemaError, ValidationError

logger = logging.getLogger(__name__)

HOURS_PER_DAY = 24.0
TIE_STEP = 1e-6  # hours added to break equal opportunity times

PAPER_EXAMPLE_SEED = 2024
PAPER_EXAMPLE_THETA = ((1, 2, 0), (3, 1, 1))
PAPER_EXAMPLE_OMEGA = (1, 2)


@dataclass(frozen=True)
class Weights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float | None = None  # None: 3 * horizon * m, so every acquisition pays off

    def resolve_gamma(self, horizon: float, m: int) -> float:
        return 3.0 * horizon * m if self.gamma is None else self.gamma


@dataclass(frozen=True)
class GeneratorConfig:
    n: int
    m: int
    theta_max: int
    omega_max: int
    days: int = 3
    # acquisition times g11 * rand + g12, downlink times g21 * rand + g22 (None: derived from the horizon)
    g11: float | None = None
    g12: float | None = None
    g21: float | None = None
    g22: float | None = None
    prep_max: float = 0.5
    window: tuple[float, float] = (0.2, 1.0)
    memory_need: tuple[float, float] = (50.0, 500.0)
    memory_capacity: tuple[float, float] = (500.0, 2000.0)
    data_rate: float = 1000.0
    weights: Weights = field(default_factory=Weights)

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ConfigurationError(f"need at least one satellite and one target, got n={self.n}, m={self.m}")
        if self.theta_max < 0:
            raise ConfigurationError(f"theta_max must be >= 0, got {self.theta_max}")
        if self.omega_max < 1:
            raise ConfigurationError(f"omega_max must be >= 1, got {self.omega_max}")
        if self.days < 1:
            raise ConfigurationError(f"days must be >= 1, got {self.days}")
        w = self.weights
        gamma = w.resolve_gamma(self.horizon, self.m)
        if not (w.alpha > 0 and w.beta > 0 and gamma > 0):
            raise ConfigurationError(f"weights must be positive, got alpha={w.alpha}, beta={w.beta}, gamma={gamma}")
        if self.data_rate <= 0:
            raise ConfigurationError(f"data_rate must be positive, got {self.data_rate}")
        for name, (lo, hi) in (("window", self.window), ("memory_need", self.memory_need),
                               ("memory_capacity", self.memory_capacity)):
            if not 0 < lo <= hi:
                raise ConfigurationError(f"{name} range must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.prep_max < 0:
            raise ConfigurationError(f"prep_max must be >= 0, got {self.prep_max}")
        for lo, hi, name in (self.acquisition_range + ("acquisition",), self.downlink_range + ("downlink",)):
            if not 0 < lo <= hi <= self.horizon:
                raise ConfigurationError(f"{name} times [{lo}, {hi}] must lie in (0, {self.horizon}]")

    @property
    def horizon(self) -> float:
        return HOURS_PER_DAY * self.days

    @property
    def acquisition_range(self) -> tuple[float, float]:
        g12 = 0.25 if self.g12 is None else self.g12
        g11 = 0.6 * self.horizon if self.g11 is None else self.g11
        return g12, g12 + g11

    @property
    def downlink_range(self) -> tuple[float, float]:
        g22 = 0.5 if self.g22 is None else self.g22
        g21 = self.horizon - 1.0 if self.g21 is None else self.g21
        return g22, g22 + g21


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _ragged(name: str, data: Any, shape: Sequence[Sequence[int]]) -> tuple[tuple[np.ndarray, ...], ...]:
    """Convert nested lists [i][j][k] to tuples of frozen float arrays, checking lengths against shape[i][j]."""
    if len(data) != len(shape):
        raise ValidationError(f"{name}: expected {len(shape)} satellites, got {len(data)}")
    rows = []
    for i, (row, lengths) in enumerate(zip(data, shape)):
        if len(row) != len(lengths):
            raise ValidationError(f"{name}[{i}]: expected {len(lengths)} targets, got {len(row)}")
        cells = []
        for j, (cell, length) in enumerate(zip(row, lengths)):
            arr = np.array(cell, dtype=float).reshape(-1)
            if len(arr) != length:
                raise ValidationError(f"{name}[{i}][{j}]: expected {length} entries, got {len(arr)}")
            cells.append(_freeze(arr))
        rows.append(tuple(cells))
    return tuple(rows)


@dataclass(frozen=True, eq=False)
class Instance:
    n: int
    m: int
    theta: np.ndarray        # (n, m) acquisition-opportunity counts
    omega: np.ndarray        # (n,) downlink-opportunity counts
    t: tuple                 # t[i][j] -> (theta[i][j],) acquisition times
    s: tuple                 # s[i][j] -> (omega[i],) downlink availability times
    p: tuple                 # p[i][j] -> (theta[i][j],) preparation times
    d: tuple                 # d[i] -> (omega[i],) downlink window durations
    q: np.ndarray            # (n, m) memory need [MB]
    q_max: np.ndarray        # (n,) onboard memory [MB]
    data_rate: float         # [MB/h]
    alpha: float
    beta: float
    gamma: float
    horizon: float

    def __post_init__(self) -> None:
        n, m = int(self.n), int(self.m)
        if n < 1 or m < 1:
            raise ValidationError(f"n, m: need n >= 1 and m >= 1, got n={n}, m={m}")
        theta = np.array(self.theta, dtype=np.int64)
        omega = np.array(self.omega, dtype=np.int64).reshape(-1)
        if theta.shape != (n, m):
            raise ValidationError(f"theta: expected shape {(n, m)}, got {theta.shape}")
        if omega.shape != (n,):
            raise ValidationError(f"omega: expected shape {(n,)}, got {omega.shape}")
        if (theta < 0).any() or (omega < 0).any():
            raise ValidationError("theta, omega: opportunity counts must be >= 0")

        t = _ragged("t", self.t, theta.tolist())
        p = _ragged("p", self.p, theta.tolist())
        s = _ragged("s", self.s, [[int(omega[i])] * m for i in range(n)])
        if len(self.d) != n:
            raise ValidationError(f"d: expected {n} satellites, got {len(self.d)}")
        d = tuple(_freeze(np.array(di, dtype=float).reshape(-1)) for di in self.d)
        for i in range(n):
            if len(d[i]) != omega[i]:
                raise ValidationError(f"d[{i}]: expected {omega[i]} entries, got {len(d[i])}")
        q = np.array(self.q, dtype=float)
        q_max = np.array(self.q_max, dtype=float).reshape(-1)
        if q.shape != (n, m):
            raise ValidationError(f"q: expected shape {(n, m)}, got {q.shape}")
        if q_max.shape != (n,):
            raise ValidationError(f"qM: expected shape {(n,)}, got {q_max.shape}")

        if not self.data_rate > 0:
            raise ValidationError(f"DR: data rate must be positive, got {self.data_rate}")
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValidationError(f"{name}: weight must be finite and >= 0, got {value}")
        if not self.horizon > 0:
            raise ValidationError(f"horizon: must be positive, got {self.horizon}")
        if not (q > 0).all():
            raise ValidationError("q: memory needs must be positive")
        if not (q_max > 0).all():
            raise ValidationError("qM: memory capacities must be positive")

        for i in range(n):
            if not (d[i] > 0).all():
                raise ValidationError(f"d[{i}]: window durations must be positive")
            for j in range(m):
                self._check_times("t", i, j, t[i][j])
                self._check_times("s", i, j, s[i][j])
                if not (p[i][j] >= 0).all():
                    raise ValidationError(f"p[{i}][{j}]: preparation times must be >= 0")

        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "theta", _freeze(theta))
        object.__setattr__(self, "omega", _freeze(omega))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "q", _freeze(q))
        object.__setattr__(self, "q_max", _freeze(q_max))
        for name in ("data_rate", "alpha", "beta", "gamma", "horizon"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def _check_times(self, name: str, i: int, j: int, times: np.ndarray) -> None:
        if len(times) == 0:
            return
        if times.min() < 0 or times.max() > self.horizon:
            raise ValidationError(f"{name}[{i}][{j}]: times must lie in [0, {self.horizon}]")
        if (np.diff(times) <= 0).any():
            raise ValidationError(f"{name}[{i}][{j}]: times must be strictly increasing")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __str__(self) -> str:
        layout = VariableLayout.from_instance(self)
        return (f"Instance: {self.n} satellites, {self.m} targets, {self.horizon:g} h, "
                f"{layout.nx} acquisition / {layout.ny} downlink variables")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "m": self.m,
            "theta": self.theta.tolist(),
            "omega": self.omega.tolist(),
            "t": [[tij.tolist() for tij in ti] for ti in self.t],
            "s": [[sij.tolist() for sij in si] for si in self.s],
            "p": [[pij.tolist() for pij in pi] for pi in self.p],
            "d": [di.tolist() for di in self.d],
            "q": self.q.tolist(),
            "qM": self.q_max.tolist(),
            "DR": self.data_rate,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "horizon": self.horizon,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> Instance:
        if not isinstance(data, dict):
            raise SchemaError("<root>", "expected a JSON object")
        values = {}
        for key in INSTANCE_FIELDS:
            if key not in data:
                raise SchemaError(key, "missing field")
            values[key] = data[key]
        for key in ("n", "m"):
            if not isinstance(values[key], int) or isinstance(values[key], bool):
                raise SchemaError(key, f"expected an integer, got {values[key]!r}")
        for key in ("DR", "alpha", "beta", "gamma", "horizon"):
            if not isinstance(values[key], (int, float)) or isinstance(values[key], bool):
                raise SchemaError(key, f"expected a number, got {values[key]!r}")
        for key in ("theta", "omega", "t", "s", "p", "d", "q", "qM"):
            if not isinstance(values[key], list):
                raise SchemaError(key, f"expected a nested list, got {type(values[key]).__name__}")
            try:
                _check_numeric(values[key])
            except TypeError as e:
                raise SchemaError(key, str(e)) from None

        return Instance(n=values["n"], m=values["m"], theta=values["theta"], omega=values["omega"],
                        t=values["t"], s=values["s"], p=values["p"], d=values["d"], q=values["q"],
                        q_max=values["qM"], data_rate=values["DR"], alpha=values["alpha"],
                        beta=values["beta"], gamma=values["gamma"], horizon=values["horizon"])


INSTANCE_FIELDS = ("n", "m", "theta", "omega", "t", "s", "p", "d", "q", "qM", "DR",
                   "alpha", "beta", "gamma", "horizon")


def _check_numeric(value: Any) -> None:
    if isinstance(value, list):
        for v in value:
            _check_numeric(v)
    elif isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"expected numbers, got {value!r}")


@dataclass(frozen=True)
class VariableLayout:
    """Positions of x_{i,j}^k in the stacked X vector and of y_{i,j}^r in the stacked Y vector.

    The full decision vector is z = (X, Y); agent i owns the contiguous range x_slices[i] of X and
    y_slices[i] of Y. Within an agent, variables are ordered by target j, then occurrence.
    """
    n: int
    m: int
    x_index: dict[tuple[int, int, int], int]
    y_index: dict[tuple[int, int, int], int]
    x_slices: tuple[slice, ...]
    y_slices: tuple[slice, ...]
    nx: int
    ny: int

    @staticmethod
    def from_instance(inst: Instance) -> VariableLayout:
        return VariableLayout.from_counts(inst.theta, inst.omega)

    @staticmethod
    def from_counts(theta: np.ndarray, omega: np.ndarray) -> VariableLayout:
        theta = np.asarray(theta)
        n, m = theta.shape
        x_index: dict[tuple[int, int, int], int] = {}
        y_index: dict[tuple[int, int, int], int] = {}
        x_slices = []
        y_slices = []
        for i in range(n):
            start = len(x_index)
            for j in range(m):
                for k in range(int(theta[i, j])):
                    x_index[(i, j, k)] = len(x_index)
            x_slices.append(slice(start, len(x_index)))
            start = len(y_index)
            for j in range(m):
                for r in range(int(omega[i])):
                    y_index[(i, j, r)] = len(y_index)
            y_slices.append(slice(start, len(y_index)))
        return VariableLayout(n, m, x_index, y_index, tuple(x_slices), tuple(y_slices), len(x_index), len(y_index))

    @property
    def nz(self) -> int:
        return self.nx + self.ny

    def agent_size(self, i: int) -> int:
        xs, ys = self.x_slices[i], self.y_slices[i]
        return (xs.stop - xs.start) + (ys.stop - ys.start)

    def agent_nx(self, i: int) -> int:
        return self.x_slices[i].stop - self.x_slices[i].start

    def agent_columns(self, i: int) -> np.ndarray:
        """Global z-columns of agent i, in local order (X_i then Y_i)."""
        xs, ys = self.x_slices[i], self.y_slices[i]
        return np.concatenate([np.arange(xs.start, xs.stop), self.nx + np.arange(ys.start, ys.stop)])

    def local_x(self, i: int, j: int, k: int) -> int:
        return self.x_index[(i, j, k)] - self.x_slices[i].start

    def local_y(self, i: int, j: int, r: int) -> int:
        return self.agent_nx(i) + self.y_index[(i, j, r)] - self.y_slices[i].start

    def z_x(self, i: int, j: int, k: int) -> int:
        return self.x_index[(i, j, k)]

    def z_y(self, i: int, j: int, r: int) -> int:
        return self.nx + self.y_index[(i, j, r)]


def _sorted_tie_free(values: np.ndarray) -> np.ndarray:
    values = np.sort(values)
    for k in range(1, len(values)):
        if values[k] <= values[k - 1]:
            values[k] = values[k - 1] + TIE_STEP
    return values


def _draw(rng: np.random.Generator, theta: np.ndarray, omega: np.ndarray, *,
          acquisition: Sequence[tuple[float, float]], downlink: Sequence[tuple[float, float]],
          prep_max: float, window: tuple[float, float], memory_need: tuple[float, float],
          memory_capacity: tuple[float, float], data_rate: float, alpha: float, beta: float,
          gamma: float, horizon: float) -> Instance:
    """Fill every numeric field of an instance with the given opportunity counts.
    acquisition[i], downlink[i] are the (lo, hi) time ranges of satellite i."""
    n, m = theta.shape
    t, s, p, d = [], [], [], []
    for i in range(n):
        a_lo, a_hi = acquisition[i]
        s_lo, s_hi = downlink[i]
        t.append([_sorted_tie_free((a_hi - a_lo) * rng.random(theta[i, j]) + a_lo) for j in range(m)])
        s.append([_sorted_tie_free((s_hi - s_lo) * rng.random(omega[i]) + s_lo) for j in range(m)])
        p.append([rng.uniform(0.0, prep_max, theta[i, j]) for j in range(m)])
        d.append(rng.uniform(*window, omega[i]))
    q = rng.uniform(*memory_need, (n, m))
    q_max = rng.uniform(*memory_capacity, n)
    return Instance(n=n, m=m, theta=theta, omega=omega, t=t, s=s, p=p, d=d, q=q, q_max=q_max,
                    data_rate=data_rate, alpha=alpha, beta=beta, gamma=gamma, horizon=horizon)


def generate(seed: int, cfg: GeneratorConfig) -> Instance:
    """Random scenario: opportunity counts uniform in [0, theta_max] / [1, omega_max], times g * rand + offset."""
    rng = np.random.default_rng(seed)
    theta = rng.integers(0, cfg.theta_max + 1, size=(cfg.n, cfg.m))
    omega = rng.integers(1, cfg.omega_max + 1, size=cfg.n)
    inst = _draw(rng, theta, omega,
                 acquisition=[cfg.acquisition_range] * cfg.n, downlink=[cfg.downlink_range] * cfg.n,
                 prep_max=cfg.prep_max, window=cfg.window, memory_need=cfg.memory_need,
                 memory_capacity=cfg.memory_capacity, data_rate=cfg.data_rate,
                 alpha=cfg.weights.alpha, beta=cfg.weights.beta,
                 gamma=cfg.weights.resolve_gamma(cfg.horizon, cfg.m), horizon=cfg.horizon)
    logger.info(f"Generated {inst} (seed {seed})")
    return inst


def paper_example_instance() -> Instance:
    """Two satellites, three targets, three days.

    Satellite 0 sees targets 0 and 1 early on day one and can downlink before the day ends;
    satellite 1 only acquires on day two, so it is the only candidate for target 2 and
    the more expensive one for the others.
    """
    rng = np.random.default_rng(PAPER_EXAMPLE_SEED)
    horizon = 3 * HOURS_PER_DAY
    return _draw(rng, np.array(PAPER_EXAMPLE_THETA), np.array(PAPER_EXAMPLE_OMEGA),
                 acquisition=[(0.5, 12.0), (24.0, 36.0)], downlink=[(12.5, 24.0), (36.5, 72.0)],
                 prep_max=0.05, window=(1.0, 2.0), memory_need=(50.0, 200.0),
                 memory_capacity=(1000.0, 2000.0), data_rate=1000.0,
                 alpha=1.0, beta=1.0, gamma=3.0 * horizon * 3, horizon=horizon)


def save(inst: Instance, path: Path | str, provenance: dict[str, Any] | None = None) -> None:
    path = Path(path)
    path.write_text(json.dumps({**inst.to_dict(), **(provenance or {})}, indent=1))
    logger.info(f"Wrote instance to {path}")


def load(path: Path | str) -> Instance:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError("<root>", f"{path}: {e}") from None
    inst = Instance.from_dict(data)
    logger.info(f"Loaded {inst} from {path}")
    return inst
