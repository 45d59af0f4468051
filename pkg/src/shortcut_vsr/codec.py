"""A transparent linear video codec with the 1 + 8 temporal grouping.

Frame 0 maps to latent 0 on its own; frames ``8(k-1)+1 .. 8k`` map to latent
``k``.  Each latent cell summarises one ``tau x s x s`` block (``tau`` = 1 for
the first frame, 8 otherwise) of one pixel channel by its projection onto
up to four orthogonal basis functions: constant, centred row, centred
column and centred time.  Channel 0 of every group is therefore the exact
block mean, and decoding reconstructs the block from those coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainError, ShapeError

TEMPORAL_FACTOR = 8


@dataclass(frozen=True)
class CodecConfig:
    spatial_factor: int = 4
    channel_expand: int = 4
    temporal_factor: int = TEMPORAL_FACTOR

    def __post_init__(self):
        if self.spatial_factor < 1:
            raise DomainError("spatial_factor must be >= 1")
        if not (1 <= self.channel_expand <= 4):
            raise DomainError("channel_expand must be in 1..4")
        if self.temporal_factor != TEMPORAL_FACTOR:
            raise DomainError("temporal_factor is fixed at 8")


def latent_length(n_frames: int) -> int:
    if n_frames < 1 or (n_frames - 1) % TEMPORAL_FACTOR:
        raise ShapeError(f"frame count must be 1 mod 8, got {n_frames}")
    return 1 + (n_frames - 1) // TEMPORAL_FACTOR


def frame_count(n_latents: int) -> int:
    if n_latents < 1:
        raise ShapeError("need at least one latent")
    return 1 + TEMPORAL_FACTOR * (n_latents - 1)


def latent_group(frame: int) -> int:
    """Index of the latent that frame ``frame`` contributes to."""
    return 0 if frame == 0 else (frame - 1) // TEMPORAL_FACTOR + 1


def group_frames(k: int) -> range:
    return range(0, 1) if k == 0 else range(TEMPORAL_FACTOR * (k - 1) + 1, TEMPORAL_FACTOR * k + 1)


def pixels_per_latent(cfg: CodecConfig, video: bool = True) -> int:
    """Pixel positions summarised by one latent position (``s * s * 8`` for video groups)."""
    return cfg.spatial_factor ** 2 * (TEMPORAL_FACTOR if video else 1)


def latent_shape(clip_shape, cfg: CodecConfig):
    F, H, W, C = clip_shape
    s = cfg.spatial_factor
    if H % s or W % s:
        raise ShapeError(f"spatial extent {H}x{W} not divisible by {s}")
    return (latent_length(F), H // s, W // s, C * cfg.channel_expand)


def _basis(tau: int, s: int, n: int):
    """Centred coordinate axes for a ``tau x s x s`` block, first ``n`` functions."""
    tt, yy, xx = np.meshgrid(np.arange(tau), np.arange(s), np.arange(s), indexing="ij")
    funcs = [np.ones((tau, s, s)), yy - (s - 1) / 2, xx - (s - 1) / 2, tt - (tau - 1) / 2]
    out = []
    for f in funcs[:n]:
        f = np.asarray(f, dtype=np.float64)
        norm = np.sum(f * f)
        # degenerate axes (s == 1 or tau == 1) contribute a zero coordinate
        out.append((f, f / norm if norm > 0 else np.zeros_like(f)))
    return out


def _blocks(x: np.ndarray, tau: int, s: int):
    G = x.shape[0] // tau
    _, H, W, C = x.shape
    return x.reshape(G, tau, H // s, s, W // s, s, C)


def _check_clip(clip):
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 4:
        raise ShapeError(f"clips are (frames, height, width, channels); got shape {clip.shape}")
    if not np.all(np.isfinite(clip)):
        raise DomainError("clip contains non-finite values")
    return clip


def encode(clip, cfg: CodecConfig = CodecConfig()) -> np.ndarray:
    clip = _check_clip(clip)
    out_shape = latent_shape(clip.shape, cfg)
    s, E = cfg.spatial_factor, cfg.channel_expand
    C = clip.shape[3]
    latent = np.empty(out_shape)
    for part, tau, sl in ((clip[:1], 1, slice(0, 1)), (clip[1:], TEMPORAL_FACTOR, slice(1, None))):
        if part.shape[0] == 0:
            continue
        blk = _blocks(part, tau, s)
        coords = [np.einsum("gtiyjxc,tyx->gijc", blk, dual) for _, dual in _basis(tau, s, E)]
        stacked = np.stack(coords, axis=-1)                      # (G, h, w, C, E)
        latent[sl] = stacked.reshape(stacked.shape[:3] + (C * E,))
    return latent


def decode(latent, cfg: CodecConfig = CodecConfig()) -> np.ndarray:
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 4 or latent.shape[3] % cfg.channel_expand:
        raise ShapeError(f"latent shape {latent.shape} inconsistent with channel_expand={cfg.channel_expand}")
    s, E = cfg.spatial_factor, cfg.channel_expand
    N, h, w, CE = latent.shape
    C = CE // E
    F = frame_count(N)
    clip = np.empty((F, h * s, w * s, C))
    coeffs = latent.reshape(N, h, w, C, E)
    for tau, sl, fsl in ((1, slice(0, 1), slice(0, 1)), (TEMPORAL_FACTOR, slice(1, None), slice(1, None))):
        c = coeffs[sl]
        if c.shape[0] == 0:
            continue
        blk = sum(np.einsum("gijc,tyx->gtiyjxc", c[..., j], f) for j, (f, _) in enumerate(_basis(tau, s, E)))
        clip[fsl] = blk.reshape(c.shape[0] * tau, h * s, w * s, C)
    return clip


def block_means(clip, cfg: CodecConfig = CodecConfig()) -> np.ndarray:
    """Reference pooling: per-group block averages, computed independently of :func:`encode`."""
    clip = _check_clip(clip)
    F, H, W, C = clip.shape
    s = cfg.spatial_factor
    out = np.empty((latent_length(F), H // s, W // s, C))
    for k in range(out.shape[0]):
        frames = clip[list(group_frames(k))]
        out[k] = frames.reshape(len(frames), H // s, s, W // s, s, C).mean(axis=(0, 2, 4))
    return out


def degrade(clip, strength: float, rng: np.random.Generator, factor: int = 2,
            max_blur: float = 1.5, max_noise: float = 0.05) -> np.ndarray:
    """Blur, downsample by ``factor``, cubic re-upsample and add noise.

    Blur sigma and noise level scale linearly with ``strength``;
    ``strength = 0`` returns the clip unchanged.
    """
    if not (0.0 <= strength <= 1.0):
        raise DomainError(f"strength must lie in [0, 1], got {strength}")
    if factor not in (2, 4):
        raise DomainError("factor must be 2 or 4")
    clip = _check_clip(clip)
    if strength == 0.0:
        return clip.copy()
    F, H, W, C = clip.shape
    if H % factor or W % factor:
        raise ShapeError(f"spatial extent {H}x{W} not divisible by {factor}")
    out = ndimage.gaussian_filter(clip, sigma=(0, strength * max_blur, strength * max_blur, 0), mode="reflect")
    out = out.reshape(F, H // factor, factor, W // factor, factor, C).mean(axis=(2, 4))
    out = ndimage.zoom(out, (1, factor, factor, 1), order=3, mode="reflect", grid_mode=True)
    return out + strength * max_noise * rng.standard_normal(out.shape)


def moving_pattern_clip(rng: np.random.Generator, n_frames: int = 49, size: int = 64, channels: int = 1,
                        n_waves: int = 3, max_speed: float = 0.5) -> np.ndarray:
    """Smooth band-limited pattern translating at a constant random velocity."""
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    vy, vx = rng.uniform(-max_speed, max_speed, size=2)
    clip = np.zeros((n_frames, size, size, channels))
    for c in range(channels):
        for _ in range(n_waves):
            ky, kx = rng.uniform(-1, 1, size=2) * 2 * np.pi * 2 / size
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.3, 1.0)
            f = np.arange(n_frames)[:, None, None]
            clip[..., c] += amp * np.sin(ky * (yy - vy * f) + kx * (xx - vx * f) + phase)
    return clip
