"""Flow-matching primitives.

Convention used throughout the package: ``x0`` is data, ``x1`` is unit
Gaussian noise, ``x_t = (1 - t) x0 + t x1`` and models predict
``x1 - x0``.  Integrating toward the data therefore *subtracts* the
prediction: ``x <- x - d * v(x, t, d)`` while ``t <- t - d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence, Union

import numpy as np

from .errors import DimensionError, DomainError, NumericError


class VelocityModel(Protocol):
    """Anything callable as ``model(x, t, d)`` returning an array shaped like ``x``.

    ``t`` and ``d`` may be scalars or 1-D arrays over the leading batch axis.
    """

    def __call__(self, x: np.ndarray, t, d) -> np.ndarray: ...


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def expand_scalar(s, x: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or per-row vector ``s`` against ``x``."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 0:
        return s
    if s.shape[0] != x.shape[0]:
        raise DimensionError(f"per-row scalar has length {s.shape[0]}, batch is {x.shape[0]}")
    return s.reshape(s.shape + (1,) * (x.ndim - 1))


def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def interpolate(x0, x1, t) -> np.ndarray:
    x0, x1 = _as_array(x0), _as_array(x1)
    _check_same_shape(x0, x1)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1) or not np.all(np.isfinite(t_arr)):
        raise DomainError(f"t must lie in [0, 1], got {t}")
    tt = expand_scalar(t_arr, x0)
    return (1.0 - tt) * x0 + tt * x1


def velocity_target(x0, x1) -> np.ndarray:
    x0, x1 = _as_array(x0), _as_array(x1)
    _check_same_shape(x0, x1)
    return x1 - x0


@dataclass(frozen=True)
class FlowSample:
    """One training tuple.  Arrays may carry a leading batch axis, with ``t`` of matching length."""

    x0: np.ndarray
    x1: np.ndarray
    t: Union[float, np.ndarray]
    xt: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        x0, x1 = _as_array(self.x0), _as_array(self.x1)
        _check_same_shape(x0, x1)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)
        if self.xt is None:
            object.__setattr__(self, "xt", interpolate(x0, x1, self.t))
        if self.v is None:
            object.__setattr__(self, "v", velocity_target(x0, x1))


def stack_samples(batch: Sequence[FlowSample]):
    """Stack single samples into ``(xt, t, v)`` arrays with a leading batch axis."""
    xt = np.stack([s.xt for s in batch])
    t = np.array([float(s.t) for s in batch])
    v = np.stack([s.v for s in batch])
    return xt, t, v


def _default_d_min() -> float:
    from .schedule import StepSizeSet

    return StepSizeSet().d_min


def flow_loss(model: VelocityModel, batch, d: float | None = None) -> float:
    """Mean squared error between ``model(x_t, t, d)`` and ``x1 - x0``.

    ``batch`` is either a list of single ``FlowSample`` or one batched
    ``FlowSample``. ``d`` defaults to the smallest member of the default
    step-size set, i.e. the flow-matching branch of a shortcut model.
    """
    if isinstance(batch, FlowSample):
        xt, t, v = batch.xt, batch.t, batch.v
    else:
        if len(batch) == 0:
            raise DomainError("flow_loss needs a nonempty batch")
        xt, t, v = stack_samples(batch)
    if d is None:
        d = _default_d_min()
    pred = np.asarray(model(xt, t, d), dtype=np.float64)
    _check_same_shape(pred, v)
    return float(np.mean((pred - v) ** 2))


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing timesteps in [0, 1]."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).ravel()
        if times.size == 0:
            raise DomainError("empty time grid")
        if np.any(times < 0) or np.any(times > 1):
            raise DomainError("grid times must lie in [0, 1]")
        if np.any(np.diff(times) <= 0):
            raise DomainError("grid times must be strictly increasing")
        object.__setattr__(self, "times", times)

    def __len__(self):
        return self.times.size

    def sampling_path(self) -> np.ndarray:
        """Decreasing traversal from 1 to 0 through every grid point."""
        pts = self.times
        if pts[-1] < 1.0:
            pts = np.append(pts, 1.0)
        if pts[0] > 0.0:
            pts = np.insert(pts, 0, 0.0)
        return pts[::-1].copy()


def _as_path(grid) -> np.ndarray:
    if isinstance(grid, TimeGrid):
        return grid.sampling_path()
    path = np.asarray(grid, dtype=np.float64).ravel()
    if path.size < 2:
        raise DomainError("a sampling path needs at least two times")
    if np.any(np.diff(path) >= 0):
        raise DomainError("sampling path must be strictly decreasing")
    if path[0] > 1.0 or path[-1] < 0.0:
        raise DomainError("sampling path must stay within [0, 1]")
    return path


def euler_sample(model: VelocityModel, x1, grid, return_trajectory: bool = False):
    """Integrate from noise toward data along a decreasing time path.

    ``grid`` is a ``TimeGrid`` (traversed from 1 to 0) or an explicit
    decreasing sequence of times.  Each step conditions the model on its
    own width ``d = t_cur - t_next``.
    """
    path = _as_path(grid)
    x = _as_array(x1).copy()
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite initial state", step=0)
    traj = [x.copy()] if return_trajectory else None
    for i in range(path.size - 1):
        t_cur, t_next = path[i], path[i + 1]
        d = t_cur - t_next
        x = x - d * np.asarray(model(x, t_cur, d), dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state after Euler step {i}", step=i)
        if traj is not None:
            traj.append(x.copy())
    if return_trajectory:
        return x, traj
    return x


def constant_model(c) -> Callable:
    """A velocity field that ignores its inputs (handy for exactness checks)."""
    c = np.asarray(c, dtype=np.float64)

    def model(x, t, d):
        return np.broadcast_to(c, np.shape(x)).copy()

    return model


def ignore_step_size(model: VelocityModel, d: float) -> Callable:
    """Wrap ``model`` so every call is conditioned on the fixed step size ``d``."""

    def wrapped(x, t, _d):
        return model(x, t, d)

    return wrapped
