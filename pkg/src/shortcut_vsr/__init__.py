"""Shortcut flow matching for few-step video super-resolution, on numpy toys."""
__version__ = "0.1.0"

from .codec import CodecConfig, decode, encode
from .conditioning import ConditionPacket, assemble_condition, cross_normalize, inject, noise_augment
from .errors import (
    AssemblyError,
    DimensionError,
    DomainError,
    FusionError,
    NumericError,
    PlanError,
    ScheduleError,
    ShortcutVSRError,
)
from .flow import euler_sample, flow_loss, interpolate, velocity_target
from .schedule import ShiftConfig, StepSizeSet, nearest_step, sample_t_d, shift_time
from .shortcut import TrainConfig, shortcut_loss, shortcut_sample, shortcut_target, train
from .tiling import fuse_segments, fuse_tiles, gaussian_kernel, plan_segments, plan_tiles, tiled_sample
from .toy import GaussianOracle, NetSpec, ToyNet
