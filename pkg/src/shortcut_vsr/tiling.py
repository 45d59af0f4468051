"""Tiled denoising with Gaussian blending and overlapping temporal segments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .codec import TEMPORAL_FACTOR, latent_length
from .errors import DomainError, FusionError, NumericError, PlanError

MIN_SEGMENT_OVERLAP = 1 + TEMPORAL_FACTOR


class Tile(NamedTuple):
    y: int
    x: int
    h: int
    w: int

    def crop(self, a: np.ndarray) -> np.ndarray:
        """Crop axes 1 and 2 of a ``(T, H, W, C)`` latent."""
        return a[:, self.y:self.y + self.h, self.x:self.x + self.w]


@dataclass(frozen=True)
class TilePlan:
    tiles: tuple
    extent: tuple
    overlap: tuple

    @property
    def tile_shape(self):
        return self.tiles[0].h, self.tiles[0].w

    def to_dict(self):
        return {"extent": list(self.extent), "overlap": list(self.overlap),
                "tile": list(self.tile_shape), "tiles": [t._asdict() for t in self.tiles]}


def _axis_positions(extent: int, tile: int, overlap: int):
    if tile > extent:
        raise PlanError(f"tile size {tile} exceeds extent {extent}")
    if tile < 1 or not (0 <= overlap < tile):
        raise PlanError(f"overlap must satisfy 0 <= overlap < tile, got {overlap} for tile {tile}")
    stride = tile - overlap
    return list(range(0, extent - tile, stride)) + [extent - tile]


def plan_tiles(extent, tile, min_overlap=(0, 0)) -> TilePlan:
    """Regular grid of fixed-size tiles; the last row/column is pushed inward to end flush."""
    H, W = extent
    h, w = tile
    if np.isscalar(min_overlap):
        min_overlap = (min_overlap, min_overlap)
    ys = _axis_positions(H, h, min_overlap[0])
    xs = _axis_positions(W, w, min_overlap[1])
    tiles = tuple(Tile(y, x, h, w) for y in ys for x in xs)
    return TilePlan(tiles=tiles, extent=(H, W), overlap=tuple(min_overlap))


@dataclass(frozen=True)
class BlendKernel:
    weights: np.ndarray
    sigma: float


def gaussian_kernel(h: int, w: int, sigma: float | None = None) -> BlendKernel:
    """Unnormalised Gaussian bump centred on the tile; ``sigma`` defaults to ``min(h, w) / 4``."""
    if h < 1 or w < 1:
        raise DomainError("kernel extent must be positive")
    if sigma is None:
        sigma = min(h, w) / 4.0
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    yy = np.arange(h) - (h - 1) / 2.0
    xx = np.arange(w) - (w - 1) / 2.0
    wts = np.exp(-(yy[:, None] ** 2 + xx[None, :] ** 2) / (2.0 * sigma ** 2))
    # keep far corners of very narrow kernels from underflowing to zero
    wts = np.maximum(wts, np.finfo(np.float64).tiny)
    return BlendKernel(weights=wts, sigma=float(sigma))


def fusion_weights(plan: TilePlan, kernel: BlendKernel):
    """Per-tile weight maps normalised so they sum to one at every position."""
    den = np.zeros(plan.extent)
    for tl in plan.tiles:
        den[tl.y:tl.y + tl.h, tl.x:tl.x + tl.w] += kernel.weights
    return [kernel.weights / den[tl.y:tl.y + tl.h, tl.x:tl.x + tl.w] for tl in plan.tiles]


def fuse_tiles(tile_values, plan: TilePlan, kernel: BlendKernel) -> np.ndarray:
    """Gaussian-weighted average of overlapping tile tensors ``(T, h, w, C)``.

    ``tile_values`` is a sequence of ``(Tile, array)`` in any order; the
    reduction runs in plan order so the result does not depend on it.
    """
    by_tile = {}
    for tl, val in tile_values:
        tl = Tile(*tl)
        if tl in by_tile:
            raise FusionError(f"duplicate value for tile {tl}")
        by_tile[tl] = np.asarray(val, dtype=np.float64)
    missing = [tl for tl in plan.tiles if tl not in by_tile]
    if missing or len(by_tile) != len(plan.tiles):
        raise FusionError(f"tile values do not match the plan (missing {missing[:3]})")
    first = by_tile[plan.tiles[0]]
    if len(plan.tiles) == 1:
        if first.shape[1:3] != plan.extent:
            raise FusionError(f"value for {plan.tiles[0]} has shape {first.shape}")
        return first.copy()
    H, W = plan.extent
    num = np.zeros((first.shape[0], H, W) + first.shape[3:])
    den = np.zeros((H, W))
    kw = kernel.weights
    for tl in plan.tiles:
        val = by_tile[tl]
        if val.shape[1:3] != (tl.h, tl.w):
            raise FusionError(f"value for {tl} has shape {val.shape}")
        wexp = kw.reshape((1, tl.h, tl.w) + (1,) * (val.ndim - 3))
        num[:, tl.y:tl.y + tl.h, tl.x:tl.x + tl.w] += wexp * val
        den[tl.y:tl.y + tl.h, tl.x:tl.x + tl.w] += kw
    if np.any(den <= 0):
        raise FusionError("plan leaves positions uncovered")
    return num / den.reshape((1, H, W) + (1,) * (num.ndim - 3))


def _call(model, x, t, d, cond):
    return model(x, t, d) if cond is None else model(x, t, d, cond)


def tiled_denoise_step(model, cond, latent, plan: TilePlan, kernel: BlendKernel, fixed_noise_tile, t: float, d: float,
                       order: Sequence[int] | None = None) -> np.ndarray:
    """Advance every tile one step ``x - d v(x, t, d)`` and fuse.

    ``latent`` is the global state ``(T, H, W, C)``; pass ``None`` on the
    first step to start every tile from ``fixed_noise_tile``.  ``cond`` is an
    optional global condition cropped alongside the state.
    """
    if latent is None:
        if fixed_noise_tile is None:
            raise DomainError("the first step needs a fixed noise tile")
        noise = np.asarray(fixed_noise_tile, dtype=np.float64)
        if noise.shape[1:3] != plan.tile_shape:
            raise DomainError(f"noise tile {noise.shape} does not match tile {plan.tile_shape}")
    idx = range(len(plan.tiles)) if order is None else order
    values = []
    for i in idx:
        tl = plan.tiles[i]
        x = noise if latent is None else tl.crop(latent)
        c = None if cond is None else tl.crop(cond)
        out = x - d * np.asarray(_call(model, x, t, d, c), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite output in tile {i}", step=i)
        values.append((tl, out))
    return fuse_tiles(values, plan, kernel)


def tiled_sample(model, plan: TilePlan, kernel: BlendKernel, path, fixed_noise_tile=None, noise_field=None,
                 cond=None, order=None) -> np.ndarray:
    """Run a full decreasing time ``path`` with tiling at every step.

    Exactly one of ``fixed_noise_tile`` (one draw shared by all tiles) or
    ``noise_field`` (a global draw cropped per tile) sets the initial state.
    """
    if (fixed_noise_tile is None) == (noise_field is None):
        raise DomainError("give exactly one of fixed_noise_tile or noise_field")
    path = np.asarray(path, dtype=np.float64)
    latent = None if noise_field is None else np.asarray(noise_field, dtype=np.float64)
    for i in range(path.size - 1):
        latent = tiled_denoise_step(model, cond, latent, plan, kernel, fixed_noise_tile,
                                    path[i], path[i] - path[i + 1], order)
    return latent


# temporal segments


@dataclass(frozen=True)
class SegmentPlan:
    starts: tuple
    length: int
    n_frames: int

    @property
    def segments(self):
        return [(s, s + self.length) for s in self.starts]

    @property
    def overlaps(self):
        return [a + self.length - b for a, b in zip(self.starts, self.starts[1:])]

    def to_dict(self):
        return {"n_frames": self.n_frames, "length": self.length, "starts": list(self.starts),
                "overlaps": self.overlaps}


def plan_segments(n_frames: int, length: int, min_overlap: int = MIN_SEGMENT_OVERLAP) -> SegmentPlan:
    """Fixed-length clips starting on multiples of 8, consecutive overlap ``>= min_overlap``."""
    latent_length(n_frames)
    latent_length(length)
    if n_frames < length:
        raise PlanError(f"video of {n_frames} frames is shorter than the segment length {length}")
    stride = (length - min_overlap) // TEMPORAL_FACTOR * TEMPORAL_FACTOR
    if n_frames > length and stride < TEMPORAL_FACTOR:
        raise PlanError(f"segment length {length} cannot keep an overlap of {min_overlap} frames")
    starts = list(range(0, n_frames - length, stride)) + [n_frames - length] if n_frames > length else [0]
    return SegmentPlan(starts=tuple(starts), length=length, n_frames=n_frames)


def segment_contributions(plan: SegmentPlan):
    """For every global latent position, the ``(segment, local index)`` pairs that feed it.

    Only segment 0 supplies position 0; every other segment's first-frame
    latent is left out.
    """
    n_global = latent_length(plan.n_frames)
    n_local = latent_length(plan.length)
    table = [[] for _ in range(n_global)]
    table[0].append((0, 0))
    for si, start in enumerate(plan.starts):
        if start % TEMPORAL_FACTOR:
            raise FusionError(f"segment start {start} is not aligned to the 8-frame groups")
        base = start // TEMPORAL_FACTOR
        for j in range(1, n_local):
            table[base + j].append((si, j))
    return table


def _segment_weights(plan: SegmentPlan, table, ramp: bool):
    n_local = latent_length(plan.length)
    w = [np.ones(n_local) for _ in plan.starts]
    if not ramp:
        return w
    base = [s // TEMPORAL_FACTOR for s in plan.starts]
    for a in range(len(plan.starts) - 1):
        b = a + 1
        shared = [g for g in range(len(table)) if any(s == a for s, _ in table[g]) and any(s == b for s, _ in table[g])]
        n = len(shared)
        for k, g in enumerate(shared):
            up = (k + 1) / (n + 1)
            w[a][g - base[a]] *= 1.0 - up
            w[b][g - base[b]] *= up
    return w


def fuse_segments(segment_latents, plan: SegmentPlan, ramp: bool = True) -> np.ndarray:
    """Merge per-segment latents into one latent for the whole video.

    Overlapping video latents are averaged with a linear cross-fade
    (``ramp=False`` gives a plain mean).
    """
    lats = [np.asarray(z, dtype=np.float64) for z in segment_latents]
    n_local = latent_length(plan.length)
    if len(lats) != len(plan.starts):
        raise FusionError(f"expected {len(plan.starts)} segment latents, got {len(lats)}")
    for z in lats:
        if z.shape[0] != n_local or z.shape[1:] != lats[0].shape[1:]:
            raise FusionError(f"segment latent shape {z.shape} does not match the plan")
    table = segment_contributions(plan)
    weights = _segment_weights(plan, table, ramp)
    out = np.empty((len(table),) + lats[0].shape[1:])
    for g, contrib in enumerate(table):
        if not contrib:
            raise FusionError(f"latent position {g} has no contributing segment")
        wsum = sum(weights[s][j] for s, j in contrib)
        out[g] = sum(weights[s][j] * lats[s][j] for s, j in contrib) / wsum
    return out


def frame_coverage(plan: SegmentPlan) -> np.ndarray:
    """Number of segments covering each frame."""
    cov = np.zeros(plan.n_frames, dtype=int)
    for a, b in plan.segments:
        cov[a:b] += 1
    return cov
