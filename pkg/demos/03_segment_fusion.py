"""
Long clips from fixed-length segments
=====================================

Frames group as 1 + 8 + 8 + ... Each segment's first latent covers a single
frame, so it is dropped when segments are merged; the rest are cross-faded.
"""

import numpy as np

from shortcut_vsr.codec import CodecConfig, encode, moving_pattern_clip
from shortcut_vsr.tiling import frame_coverage, fuse_segments, plan_segments, segment_contributions

codec = CodecConfig(spatial_factor=4, channel_expand=4)
clip = moving_pattern_clip(np.random.default_rng(0), 97, 16)
print("clip", clip.shape, "-> latent", encode(clip, codec).shape)

plan = plan_segments(97, 49)
print("segments", plan.segments, "overlaps", plan.overlaps)

table = segment_contributions(plan)
for g, row in enumerate(table):
    print(f"latent {g:2d} <-", row)
print("frames covered at least once:", bool(frame_coverage(plan).min() >= 1))

# the codec is linear and blocks never straddle a segment start, so fusion is exact
lats = [encode(clip[a:b], codec) for a, b in plan.segments]
for ramp in (True, False):
    err = np.abs(fuse_segments(lats, plan, ramp=ramp) - encode(clip, codec)).max()
    print("ramp" if ramp else "mean", "fusion error vs whole-clip encode:", err)
