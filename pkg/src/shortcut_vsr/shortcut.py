"""Shortcut-model training and sampling.

A shortcut model ``v(x, t, d)`` predicts the average velocity over a step
of size ``d``.  It is trained by mixing plain flow-matching batches with
self-consistency batches, in which a ``2d`` prediction regresses onto the
(stop-gradient) average of two chained ``d`` predictions.

Two step orientations are supported.  ``"forward"`` chains steps toward
noise, ``x' = x + d v(x, t, d)`` evaluated again at ``t + d``.
``"reverse"`` chains them toward data, ``x' = x - d v(x, t, d)`` evaluated
again at ``t - d``, which is the direction the sampler travels; it is the
default for training so that the learnt shortcuts are the ones the sampler
queries.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal

import numpy as np

from .errors import DomainError, NumericError, ScheduleError
from .flow import VelocityModel, expand_scalar, interpolate
from .schedule import (
    ShiftConfig,
    StepSizeSet,
    nearest_step,
    sample_flow_t,
    sample_t_d_batch,
    shift_time,
    unshift_time,
)
from .toy import Adam, ToyNet, toynet_gradient

Orientation = Literal["forward", "reverse"]
FEAS_TOL = 1e-12


def _check_step(t, d, orientation, span=1.0):
    t = np.asarray(t, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise DomainError("step size must be positive")
    if np.any(t < 0) or np.any(t > 1):
        raise DomainError("t must lie in [0, 1]")
    if orientation == "forward":
        bad = t + span * d > 1.0 + FEAS_TOL
    elif orientation == "reverse":
        bad = t - span * d < -FEAS_TOL
    else:
        raise DomainError(f"unknown orientation {orientation!r}")
    if np.any(bad):
        raise DomainError(f"a step of {span:g} x d leaves [0, 1] (orientation={orientation})")
    return t, d


def _sign(orientation):
    return 1.0 if orientation == "forward" else -1.0


def shortcut_step(model: VelocityModel, x, t, d, orientation: Orientation = "reverse") -> np.ndarray:
    """One shortcut update of size ``d``: ``x + d v`` (forward) or ``x - d v`` (reverse)."""
    t, d = _check_step(t, d, orientation)
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(model(x, t, d), dtype=np.float64)
    return x + _sign(orientation) * expand_scalar(d, x) * v


@dataclass(frozen=True)
class ShortcutTarget:
    """Bootstrap target; a constant with respect to model parameters."""

    v_star: np.ndarray
    t: object
    d: object


def shortcut_target(model: VelocityModel, x, t, d, orientation: Orientation = "reverse",
                    literal_time: bool = False, inner_d=None) -> ShortcutTarget:
    """Average of two chained ``d``-steps, the regression target for the ``2d`` prediction.

    ``literal_time`` evaluates the second step at ``t`` instead of the
    advanced time.  ``inner_d`` optionally overrides the step size the two
    inner evaluations are conditioned on (the step actually taken is ``d``).
    """
    t, d = _check_step(t, d, orientation, span=2.0)
    x = np.asarray(x, dtype=np.float64)
    cond_d = d if inner_d is None else np.asarray(inner_d, dtype=np.float64)
    sign = _sign(orientation)
    dd = expand_scalar(d, x)
    v1 = np.asarray(model(x, t, cond_d), dtype=np.float64)
    x_mid = x + sign * dd * v1
    t_mid = t if literal_time else t + sign * d
    v2 = np.asarray(model(x_mid, t_mid, cond_d), dtype=np.float64)
    v_star = 0.5 * (v1 + v2)
    if not np.all(np.isfinite(v_star)):
        raise NumericError("non-finite shortcut target")
    return ShortcutTarget(v_star=v_star.copy(), t=t, d=d)


def bootstrap_inner_d(d, step_set: StepSizeSet):
    """Finest-tier bootstrap steps fall back to the flow-matching branch (``d_min``)."""
    d = np.asarray(d, dtype=np.float64)
    finest = 2.0 ** -max(step_set.exponents) * max(step_set.scales)
    return np.where(d <= finest + 1e-12, step_set.d_min, d)


def shortcut_loss(model: VelocityModel, rng: np.random.Generator, step_set: StepSizeSet, cfg: ShiftConfig,
                  x0, x1, mode: str = "nonuniform", orientation: Orientation = "reverse",
                  literal_time: bool = False, grid_size: int = 128) -> float:
    """Self-consistency loss on a batch of ``(x0, x1)`` rows with freshly drawn ``(t, d)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape[0] == 0:
        raise DomainError("shortcut_loss needs a nonempty batch")
    t, d = sample_t_d_batch(rng, x0.shape[0], step_set, cfg, mode, orientation, grid_size)
    xt = interpolate(x0, x1, t)
    target = shortcut_target(model, xt, t, d, orientation, literal_time)
    pred = np.asarray(model(xt, t, 2.0 * d), dtype=np.float64)
    return float(np.mean((pred - target.v_star) ** 2))


# losses with parameter gradients for ToyNet


def flow_loss_grad(net: ToyNet, x0, x1, t, d_cond, cond=None):
    """``(loss, grad)`` of the flow-matching MSE."""
    xt = interpolate(x0, x1, t)
    v = np.asarray(x1) - np.asarray(x0)

    def closure(n):
        out, cache = n.forward(xt, t, d_cond, cond, return_cache=True)
        r = out - v
        return np.mean(r * r), [(cache, 2.0 * r / r.size)]

    return toynet_gradient(net, closure)


def shortcut_loss_grad(net: ToyNet, x0, x1, t, d, orientation: Orientation = "reverse",
                       literal_time: bool = False, inner_d=None, cond=None):
    """``(loss, grad)`` of the self-consistency MSE; the target is held constant."""
    xt = interpolate(x0, x1, t)
    model = net if cond is None else (lambda x, tt, dd: net(x, tt, dd, cond))
    v_star = shortcut_target(model, xt, t, d, orientation, literal_time, inner_d).v_star

    def closure(n):
        out, cache = n.forward(xt, t, 2.0 * np.asarray(d), cond, return_cache=True)
        r = out - v_star
        return np.mean(r * r), [(cache, 2.0 * r / r.size)]

    return toynet_gradient(net, closure)


@dataclass
class TrainConfig:
    batch_size: int = 256
    flow_fraction: float = 0.75
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    total_steps: int = 4000
    seed: int = 0
    mode: str = "nonuniform"
    orientation: str = "reverse"
    literal_time: bool = False
    grid_size: int = 128
    # weight averaging; 0 keeps the last iterate
    ema_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 0 or self.lr <= 0:
            raise DomainError("batch_size must be >= 1, total_steps >= 0 and lr > 0")
        # 1.0 means flow matching only (the no-shortcut baseline)
        if not (0.0 < self.flow_fraction <= 1.0):
            raise DomainError("flow_fraction must lie in (0, 1]")
        if self.mode not in ("uniform", "nonuniform"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if not (0.0 <= self.ema_decay < 1.0):
            raise DomainError("ema_decay must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    config: dict
    kinds: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    params: np.ndarray = None
    wall_clock: float = 0.0

    def trace(self, kind: str) -> np.ndarray:
        return np.array([l for k, l in zip(self.kinds, self.losses) if k == kind])


def is_flow_step(i: int, flow_fraction: float) -> bool:
    """Deterministic interleaving that puts ``flow_fraction`` of steps on the flow loss."""
    return np.floor((i + 1) * flow_fraction + 1e-9) > np.floor(i * flow_fraction + 1e-9)


def train(net: ToyNet, data: Callable, cfg: TrainConfig, step_set: StepSizeSet = StepSizeSet(),
          shift: ShiftConfig = ShiftConfig(), callback: Callable | None = None) -> TrainReport:
    """Alternate flow and self-consistency minibatches with Adam.

    ``data(rng, n)`` returns ``n`` data rows.  Updates ``net.params`` in place
    and returns the per-step loss trace.  With ``ema_decay > 0`` the net ends
    on the running average of its weights; bootstrap targets always use the
    live weights.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    report = TrainReport(config=cfg.to_dict())
    start = time.perf_counter()
    d_flow = step_set.d_min
    ema = net.params.copy()
    for i in range(cfg.total_steps):
        x0 = np.asarray(data(rng, cfg.batch_size), dtype=np.float64)
        x1 = rng.standard_normal(x0.shape)
        kind = "flow" if is_flow_step(i, cfg.flow_fraction) else "sc"
        try:
            if kind == "flow":
                t = sample_flow_t(rng, cfg.batch_size, cfg.mode, shift)
                loss, grad = flow_loss_grad(net, x0, x1, t, d_flow)
            else:
                t, d = sample_t_d_batch(rng, cfg.batch_size, step_set, shift, cfg.mode, cfg.orientation,
                                        cfg.grid_size)
                loss, grad = shortcut_loss_grad(net, x0, x1, t, d, cfg.orientation, cfg.literal_time,
                                                inner_d=bootstrap_inner_d(d, step_set))
        except NumericError as err:
            raise NumericError(f"{err} ({kind} loss, step {i})", step=i, kind=kind) from err
        if not np.isfinite(loss):
            raise NumericError(f"non-finite {kind} loss at step {i}", step=i, kind=kind)
        net.params = opt.step(net.params, grad)
        if cfg.ema_decay > 0:
            ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * net.params
        report.kinds.append(kind)
        report.losses.append(float(loss))
        if callback is not None:
            callback(i, kind, loss)
    if cfg.ema_decay > 0 and cfg.total_steps > 0:
        net.params = ema
    report.params = net.params.copy()
    report.wall_clock = time.perf_counter() - start
    return report


def shortcut_sample(model: VelocityModel, x1, n_steps: int, step_set: StepSizeSet = StepSizeSet(),
                    cfg: ShiftConfig = ShiftConfig(), return_steps: bool = False):
    """Few-step sampling from ``t = 1`` to ``t = 0`` with trained step sizes.

    The nominal path is uniform in ``u`` and mapped through the shift.  Each
    requested width snaps to the nearest trained step; after a step the
    remaining time is re-divided over the remaining budget so the path lands
    exactly on 0.
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise DomainError("n_steps must be a positive integer")
    x = np.asarray(x1, dtype=np.float64).copy()
    t = 1.0
    budget = int(n_steps)
    taken = []
    d_smallest = step_set.d_min
    for i in range(4 * int(n_steps)):
        r = max(budget, 1)
        u = unshift_time(t, cfg)
        width = t - shift_time(u * (r - 1) / r, cfg)
        d = nearest_step(min(max(width, d_smallest), 1.0), step_set)
        if r == 1 or d >= t - 1e-12:
            # final or overshooting step: land on 0, conditioned on the nearest trained size
            step, d_cond = t, nearest_step(t, step_set)
        else:
            step, d_cond = d, d
        v = np.asarray(model(x, t, d_cond), dtype=np.float64)
        x = x - step * v
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state after shortcut step {i}", step=i)
        taken.append((t, step, d_cond))
        t = t - step
        budget -= 1
        if t <= 1e-12:
            return (x, taken) if return_steps else x
    raise ScheduleError(f"sampling path did not reach t=0 within {4 * n_steps} selections")
