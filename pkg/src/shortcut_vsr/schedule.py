"""Step-size families, timestep grids and the (t, d) training sampler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DomainError
from .flow import TimeGrid

DEDUP_TOL = 1e-12
FEAS_TOL = 1e-12

Mode = Literal["uniform", "nonuniform"]
Orientation = Literal["forward", "reverse"]


@dataclass(frozen=True)
class StepSizeSet:
    """All step sizes ``2**-k * T`` for ``T`` in ``scales`` and ``k`` in ``exponents``."""

    scales: tuple = (0.6, 0.7, 0.8, 0.9, 1.0)
    exponents: tuple = tuple(range(8))

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        exps = tuple(int(k) for k in self.exponents)
        if not scales or not exps:
            raise DomainError("step-size set needs at least one scale and one exponent")
        if any(not (0.0 < s <= 1.0) for s in scales):
            raise DomainError(f"scales must lie in (0, 1], got {scales}")
        if any(k < 0 for k in exps):
            raise DomainError("exponents must be nonnegative")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "exponents", exps)
        raw = np.sort([2.0 ** -k * s for s in scales for k in exps])
        keep = [raw[0]]
        for d in raw[1:]:
            if d - keep[-1] > DEDUP_TOL:
                keep.append(d)
        object.__setattr__(self, "_members", np.array(keep))

    @property
    def members(self) -> np.ndarray:
        return self._members.copy()

    @property
    def d_min(self) -> float:
        return float(self._members[0])

    @property
    def d_max(self) -> float:
        return float(self._members[-1])

    def __len__(self):
        return self._members.size

    def __contains__(self, d) -> bool:
        return bool(np.any(np.abs(self._members - float(d)) <= 1e-9))

    def dyadic(self) -> "StepSizeSet":
        """The ``T = 1`` family with the same exponent range."""
        return StepSizeSet(scales=(1.0,), exponents=self.exponents)


@dataclass(frozen=True)
class ShiftConfig:
    shift: float = 3.0

    def __post_init__(self):
        if not np.isfinite(self.shift) or self.shift < 1.0:
            raise DomainError(f"shift must be >= 1, got {self.shift}")


NO_SHIFT = ShiftConfig(1.0)


def uniform_time_grid(M: int) -> TimeGrid:
    """``{m / M : m = 0..M-1}``."""
    if int(M) != M or M < 1:
        raise DomainError(f"M must be a positive integer, got {M}")
    M = int(M)
    return TimeGrid(np.arange(M) / M)


def shift_time(u, cfg: ShiftConfig = ShiftConfig()):
    """Resolution shift ``s u / (1 + (s - 1) u)``; fixes 0 and 1, moves mass toward 1."""
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(u_arr < 0) or np.any(u_arr > 1) or not np.all(np.isfinite(u_arr)):
        raise DomainError(f"u must lie in [0, 1], got {u}")
    s = cfg.shift
    out = s * u_arr / (1.0 + (s - 1.0) * u_arr)
    return float(out) if out.ndim == 0 else out


def unshift_time(t, cfg: ShiftConfig = ShiftConfig()):
    """Inverse of :func:`shift_time`."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise DomainError(f"t must lie in [0, 1], got {t}")
    s = cfg.shift
    out = t_arr / (s - (s - 1.0) * t_arr)
    return float(out) if out.ndim == 0 else out


def sampling_path(n_steps: int, cfg: ShiftConfig = NO_SHIFT) -> np.ndarray:
    """Decreasing times ``shift(1 - i/n)`` for ``i = 0..n``."""
    if int(n_steps) != n_steps or n_steps < 1:
        raise DomainError(f"n_steps must be a positive integer, got {n_steps}")
    u = 1.0 - np.arange(n_steps + 1) / n_steps
    return np.asarray(shift_time(u, cfg))


def nearest_step(d_req: float, step_set: StepSizeSet) -> float:
    """Closest member to ``d_req``; ties go to the smaller member."""
    members = step_set.members
    if members.size == 0:
        raise DomainError("empty step-size set")
    if not (0.0 < d_req <= 1.0):
        raise DomainError(f"requested step must lie in (0, 1], got {d_req}")
    gaps = np.abs(members - d_req)
    # argmin returns the first minimum, i.e. the smaller member on ties
    best = np.flatnonzero(gaps <= gaps.min() + 1e-15)[0]
    return float(members[best])


def _feasible(t, d, orientation: Orientation):
    if orientation == "forward":
        return t + 2.0 * d <= 1.0 + FEAS_TOL
    return t - 2.0 * d >= -FEAS_TOL


def training_times(mode: Mode, cfg: ShiftConfig, orientation: Orientation, grid_size: int = 128) -> np.ndarray:
    """Candidate bootstrap start times for a sampler mode.

    In the reverse orientation the grid is mirrored so that ``t = 1`` (pure
    noise, where sampling begins) is a candidate and ``t = 0`` is not.
    """
    g = uniform_time_grid(grid_size).times
    u = g if orientation == "forward" else 1.0 - g
    if mode == "uniform":
        return u
    if mode == "nonuniform":
        return np.asarray(shift_time(u, cfg))
    raise DomainError(f"unknown sampler mode {mode!r}")


def sample_t_d(
    rng: np.random.Generator,
    step_set: StepSizeSet = StepSizeSet(),
    cfg: ShiftConfig = ShiftConfig(),
    mode: Mode = "nonuniform",
    orientation: Orientation = "reverse",
    grid_size: int = 128,
    max_retries: int = 1000,
):
    """Draw one bootstrap pair ``(t, d)`` whose ``2d`` shortcut stays inside [0, 1].

    ``d`` is drawn first (uniform over ``k`` for the dyadic set in uniform
    mode; uniform ``T`` then uniform ``k`` in nonuniform mode), then ``t``
    uniformly among the feasible grid times.  A ``d`` with no feasible time
    is rejected and redrawn.
    """
    times = training_times(mode, cfg, orientation, grid_size)
    exps = step_set.exponents
    scales = (1.0,) if mode == "uniform" else step_set.scales
    for _ in range(max_retries):
        T = scales[rng.integers(len(scales))]
        k = exps[rng.integers(len(exps))]
        d = 2.0 ** -k * T
        ok = np.flatnonzero(_feasible(times, d, orientation))
        if ok.size == 0:
            continue
        t = float(times[ok[rng.integers(ok.size)]])
        return t, d
    raise DomainError(f"no feasible (t, d) pair after {max_retries} draws")


def sample_t_d_batch(rng, n: int, step_set=StepSizeSet(), cfg=ShiftConfig(), mode: Mode = "nonuniform",
                     orientation: Orientation = "reverse", grid_size: int = 128, max_retries: int = 1000):
    """Vectorised equivalent of ``n`` :func:`sample_t_d` draws (different stream layout)."""
    times = training_times(mode, cfg, orientation, grid_size)
    scales = np.array((1.0,) if mode == "uniform" else step_set.scales)
    exps = np.array(step_set.exponents)
    d_table = 2.0 ** -exps[None, :] * scales[:, None]
    feas = _feasible(times[None, None, :], d_table[:, :, None], orientation)
    counts = feas.sum(axis=2)
    if not counts.any():
        raise DomainError("no feasible (t, d) pair exists for this configuration")
    # time indices sorted so the j-th feasible time is a single lookup
    order = np.argsort(~feas, axis=2, kind="stable")
    ti = np.empty(n, dtype=int)
    ki = np.empty(n, dtype=int)
    todo = np.arange(n)
    for _ in range(max_retries):
        ti[todo] = rng.integers(scales.size, size=todo.size)
        ki[todo] = rng.integers(exps.size, size=todo.size)
        todo = todo[counts[ti[todo], ki[todo]] == 0]
        if todo.size == 0:
            break
    else:
        raise DomainError(f"no feasible (t, d) pair after {max_retries} draws")
    pick = np.floor(rng.random(n) * counts[ti, ki]).astype(int)
    t = times[order[ti, ki, pick]]
    return t, d_table[ti, ki]


def sample_flow_t(rng: np.random.Generator, n: int, mode: Mode, cfg: ShiftConfig = ShiftConfig()) -> np.ndarray:
    """Continuous timesteps for the flow-matching batches."""
    u = rng.random(n)
    if mode == "uniform":
        return u
    return np.asarray(shift_time(u, cfg))


def grid_from_times(times: Sequence[float]) -> TimeGrid:
    return TimeGrid(np.asarray(times, dtype=np.float64))
