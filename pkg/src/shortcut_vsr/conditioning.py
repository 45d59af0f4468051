"""Condition assembly and injection for super-resolution.

Two jointly trained tasks share one denoiser: ``image_sr`` upscales the
first frame from its degraded latent; ``video_sr`` upscales the clip given
the clean (super-resolved) first-frame latent at position 0 and degraded
latents everywhere else.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .codec import CodecConfig, degrade, encode
from .errors import AssemblyError, DimensionError, DomainError

STD_FLOOR = 1e-8
SQRT2 = np.sqrt(2.0)
DDPM_STEPS = 1000
COSINE_OFFSET = 0.008
MAX_AUGMENT_LEVEL = 300


class DegenerateConditionWarning(RuntimeWarning):
    """Raised (as a warning) when a condition tensor has zero spread."""


@dataclass(frozen=True)
class HiddenStats:
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)) or self.std <= 0:
            raise DomainError(f"hidden statistics must be finite with std > 0, got {self}")

    @classmethod
    def of(cls, hidden) -> "HiddenStats":
        h = np.asarray(hidden, dtype=np.float64)
        return cls(float(h.mean()), max(float(h.std()), STD_FLOOR))


def cross_normalize(cond, stats: HiddenStats) -> np.ndarray:
    """Re-standardise ``cond`` to the hidden state's mean and standard deviation."""
    c = np.asarray(cond, dtype=np.float64)
    sd = float(c.std())
    if sd < STD_FLOOR:
        warnings.warn("constant condition; using std floor", DegenerateConditionWarning, stacklevel=2)
        sd = STD_FLOOR
    return (c - c.mean()) / sd * stats.std + stats.mean


def inject(hidden, cond_normalized, multiply: bool = False) -> np.ndarray:
    """``(hidden + cond) / sqrt(2)``; ``multiply=True`` gives the literal ``* sqrt(2)``."""
    h = np.asarray(hidden, dtype=np.float64)
    c = np.asarray(cond_normalized, dtype=np.float64)
    if h.shape != c.shape:
        raise DimensionError(f"shape mismatch: {h.shape} vs {c.shape}")
    s = h + c
    return s * SQRT2 if multiply else s / SQRT2


@dataclass(frozen=True)
class ConditionPacket:
    """A condition latent plus the provenance of every latent position."""

    cond_latent: np.ndarray
    task: str
    dropped: bool = False
    sources: tuple = ()

    def __post_init__(self):
        if self.task not in ("image_sr", "video_sr", "video_whole"):
            raise DomainError(f"unknown task {self.task!r}")
        n = np.shape(self.cond_latent)[0]
        if self.task == "image_sr" and n != 1:
            raise AssemblyError("image_sr packets hold exactly one latent")
        if self.sources and len(self.sources) != n:
            raise AssemblyError("one source tag per latent position is required")


def _first_frame(frame, like):
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 3:
        f = f[None]
    if f.shape != (1,) + like.shape[1:]:
        raise AssemblyError(f"first frame has shape {f.shape}, expected {(1,) + like.shape[1:]}")
    return f


def assemble_condition(clip, task: str, codec_cfg: CodecConfig = CodecConfig(), predicted_first_frame=None,
                       strength: float = 0.5, rng: np.random.Generator | None = None, factor: int = 2) -> ConditionPacket:
    """Build the condition for one of the factorised tasks.

    During training ``predicted_first_frame`` is the ground-truth first
    frame; at inference it is the ``image_sr`` output.
    """
    clip = np.asarray(clip, dtype=np.float64)
    rng = np.random.default_rng() if rng is None else rng
    if task == "image_sr":
        z = encode(degrade(clip[:1], strength, rng, factor), codec_cfg)
        return ConditionPacket(z, "image_sr", sources=("degraded",))
    if task == "video_sr":
        if predicted_first_frame is None:
            raise AssemblyError("video_sr needs the super-resolved first frame")
        first = _first_frame(predicted_first_frame, clip)
        z_first = encode(first, codec_cfg)
        z_rest = encode(degrade(clip, strength, rng, factor), codec_cfg)
        z = np.concatenate([z_first, z_rest[1:]])
        return ConditionPacket(z, "video_sr", sources=("clean",) + ("degraded",) * (z.shape[0] - 1))
    raise DomainError(f"unknown task {task!r}")


def whole_video_condition(clip, codec_cfg: CodecConfig = CodecConfig(), strength: float = 0.5,
                          rng: np.random.Generator | None = None, factor: int = 2) -> ConditionPacket:
    """Non-factorised baseline: every position comes from the degraded clip."""
    rng = np.random.default_rng() if rng is None else rng
    z = encode(degrade(clip, strength, rng, factor), codec_cfg)
    return ConditionPacket(z, "video_whole", sources=("degraded",) * z.shape[0])


def cosine_alpha_bar(level, n_steps: int = DDPM_STEPS, offset: float = COSINE_OFFSET):
    """Cumulative signal fraction of the cosine DDPM schedule at integer ``level``."""
    f = lambda i: np.cos((np.asarray(i) / n_steps + offset) / (1 + offset) * np.pi / 2) ** 2
    return f(level) / f(0)


def noise_augment(packet: ConditionPacket, level: int, rng: np.random.Generator) -> ConditionPacket:
    """Variance-preserving noising of the condition latent to DDPM step ``level``."""
    if int(level) != level or not (0 <= level <= MAX_AUGMENT_LEVEL):
        raise DomainError(f"level must be an integer in [0, {MAX_AUGMENT_LEVEL}], got {level}")
    if level == 0 or packet.dropped:
        return packet
    ab = float(cosine_alpha_bar(level))
    z = np.asarray(packet.cond_latent)
    noisy = np.sqrt(ab) * z + np.sqrt(1.0 - ab) * rng.standard_normal(z.shape)
    return replace(packet, cond_latent=noisy)


def maybe_drop(packet: ConditionPacket, p: float, rng: np.random.Generator) -> ConditionPacket:
    """With probability ``p`` replace the condition by the all-zero null sentinel."""
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"p must lie in [0, 1], got {p}")
    if rng.random() < p:
        z = np.zeros_like(np.asarray(packet.cond_latent, dtype=np.float64))
        return replace(packet, cond_latent=z, dropped=True, sources=("null",) * z.shape[0])
    return packet
