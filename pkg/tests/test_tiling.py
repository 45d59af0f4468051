import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shortcut_vsr.codec import CodecConfig, encode, latent_group, latent_length
from shortcut_vsr.errors import FusionError, PlanError
from shortcut_vsr.tiling import (
    Tile,
    frame_coverage,
    fuse_segments,
    fuse_tiles,
    fusion_weights,
    gaussian_kernel,
    plan_segments,
    plan_tiles,
    segment_contributions,
    tiled_denoise_step,
    tiled_sample,
)


def pointwise_model(x, t, d):
    # depends only on the per-position value, so it commutes with cropping
    return np.sin(3 * x) * (1 + t) + d * x ** 2


def test_plan_examples():
    assert [(t.y, t.x) for t in plan_tiles((16, 16), (16, 16)).tiles] == [(0, 0)]
    assert [t.y for t in plan_tiles((24, 16), (16, 16), (8, 0)).tiles] == [0, 8]
    assert [t.y for t in plan_tiles((20, 16), (16, 16), (4, 0)).tiles] == [0, 4]
    with pytest.raises(PlanError):
        plan_tiles((8, 8), (16, 16))
    with pytest.raises(PlanError):
        plan_tiles((32, 32), (16, 16), (16, 0))


@settings(max_examples=60)
@given(st.integers(4, 60), st.integers(4, 60), st.integers(1, 20), st.integers(1, 20), st.integers(0, 10), st.integers(0, 10))
def test_plan_invariants(H, W, h, w, oy, ox):
    if h > H or w > W or oy >= h or ox >= w:
        return
    plan = plan_tiles((H, W), (h, w), (oy, ox))
    cov = np.zeros((H, W), dtype=int)
    for t in plan.tiles:
        assert 0 <= t.y and t.y + t.h <= H and 0 <= t.x and t.x + t.w <= W
        assert (t.h, t.w) == (h, w)
        cov[t.y:t.y + h, t.x:t.x + w] += 1
    assert cov.min() >= 1
    ys = sorted({t.y for t in plan.tiles})
    xs = sorted({t.x for t in plan.tiles})
    assert all(a + h - b >= oy for a, b in zip(ys, ys[1:]))
    assert all(a + w - b >= ox for a, b in zip(xs, xs[1:]))


def test_kernel_examples():
    assert np.array_equal(gaussian_kernel(1, 1, 1.0).weights, [[1.0]])
    k = gaussian_kernel(3, 3, 1.0).weights
    assert k[0, 0] / k[1, 1] == pytest.approx(np.exp(-1))
    assert gaussian_kernel(16, 8).sigma == 2.0


@given(st.integers(1, 20), st.integers(1, 20), st.floats(0.1, 10))
def test_kernel_properties(h, w, s):
    k = gaussian_kernel(h, w, s).weights
    assert np.all(k > 0)
    assert k.max() == k[(h - 1) // 2, (w - 1) // 2] or k.max() == pytest.approx(k[h // 2, w // 2])
    assert np.allclose(k, k[::-1]) and np.allclose(k, k[:, ::-1])


def test_weights_partition_of_unity():
    plan = plan_tiles((37, 29), (16, 12), (5, 3))
    total = np.zeros(plan.extent)
    for t, wmap in zip(plan.tiles, fusion_weights(plan, gaussian_kernel(16, 12))):
        total[t.y:t.y + t.h, t.x:t.x + t.w] += wmap
    assert np.max(np.abs(total - 1)) <= 1e-9


def test_fuse_reconstructs_global_tensor():
    G = np.random.default_rng(0).normal(size=(3, 37, 29, 2))
    plan = plan_tiles((37, 29), (16, 12), (5, 3))
    out = fuse_tiles([(t, t.crop(G)) for t in plan.tiles], plan, gaussian_kernel(16, 12))
    assert np.max(np.abs(out - G)) <= 1e-12


def test_fuse_constant_and_two_term_mean():
    plan = plan_tiles((24, 16), (16, 16), (8, 0))
    k = gaussian_kernel(16, 16)
    const = fuse_tiles([(t, np.full((1, 16, 16, 1), 4.0)) for t in plan.tiles], plan, k)
    assert np.allclose(const, 4.0)
    a, b = 1.0, 3.0
    out = fuse_tiles([(plan.tiles[0], np.full((1, 16, 16, 1), a)), (plan.tiles[1], np.full((1, 16, 16, 1), b))],
                     plan, k)
    w1, w2 = k.weights[10, 5], k.weights[2, 5]
    assert out[0, 10, 5, 0] == pytest.approx((w1 * a + w2 * b) / (w1 + w2))


def test_fuse_missing_or_duplicate_tile():
    plan = plan_tiles((24, 16), (16, 16), (8, 0))
    k = gaussian_kernel(16, 16)
    with pytest.raises(FusionError):
        fuse_tiles([(plan.tiles[0], np.zeros((1, 16, 16, 1)))], plan, k)
    with pytest.raises(FusionError):
        fuse_tiles([(plan.tiles[0], np.zeros((1, 16, 16, 1)))] * 2, plan, k)


def test_tiled_step_matches_untiled_and_is_order_free():
    rng = np.random.default_rng(1)
    state = rng.normal(size=(2, 32, 32, 3))
    plan = plan_tiles((32, 32), (16, 16), (4, 4))
    k = gaussian_kernel(16, 16)
    ref = state - 0.25 * pointwise_model(state, 0.75, 0.25)
    out = tiled_denoise_step(pointwise_model, None, state, plan, k, None, 0.75, 0.25)
    assert np.max(np.abs(out - ref)) <= 1e-9
    for perm in itertools.islice(itertools.permutations(range(len(plan.tiles))), 0, 24, 5):
        assert np.array_equal(tiled_denoise_step(pointwise_model, None, state, plan, k, None, 0.75, 0.25, perm), out)


def test_single_tile_plan_is_plain_step():
    state = np.random.default_rng(2).normal(size=(1, 16, 16, 1))
    plan = plan_tiles((16, 16), (16, 16))
    out = tiled_denoise_step(pointwise_model, None, state, plan, gaussian_kernel(16, 16), None, 0.5, 0.5)
    assert np.array_equal(out, state - 0.5 * pointwise_model(state, 0.5, 0.5))


def test_tiled_step_with_condition():
    rng = np.random.default_rng(3)
    state = rng.normal(size=(1, 24, 24, 1))
    cond = rng.normal(size=(1, 24, 24, 1))
    model = lambda x, t, d, c: x * c
    plan = plan_tiles((24, 24), (16, 16), (8, 8))
    out = tiled_denoise_step(model, cond, state, plan, gaussian_kernel(16, 16), None, 0.5, 0.5)
    assert np.allclose(out, state - 0.5 * state * cond, atol=1e-12)


def test_fixed_noise_reuse():
    plan = plan_tiles((24, 24), (16, 16), (8, 8))
    k = gaussian_kernel(16, 16)
    path = [1.0, 0.5, 0.0]
    noise = lambda s: np.random.default_rng(s).normal(size=(1, 16, 16, 1))
    a = tiled_sample(pointwise_model, plan, k, path, fixed_noise_tile=noise(0))
    b = tiled_sample(pointwise_model, plan, k, path, fixed_noise_tile=noise(0))
    c = tiled_sample(pointwise_model, plan, k, path, fixed_noise_tile=noise(1))
    assert np.array_equal(a, b) and not np.allclose(a, c)
    field = np.random.default_rng(2).normal(size=(1, 24, 24, 1))
    d = tiled_sample(pointwise_model, plan, k, path, noise_field=field)
    ref = field
    for t0, t1 in zip(path, path[1:]):
        ref = ref - (t0 - t1) * pointwise_model(ref, t0, t0 - t1)
    assert np.max(np.abs(d - ref)) <= 1e-9


def test_segment_plan_examples():
    assert plan_segments(49, 49).starts == (0,)
    p = plan_segments(89, 49)
    assert p.starts == (0, 40) and p.overlaps == [9]
    p = plan_segments(97, 49)
    assert p.starts == (0, 40, 48) and p.segments[-1] == (48, 97)
    assert min(p.overlaps) >= 9
    with pytest.raises(PlanError):
        plan_segments(41, 49)


@given(st.integers(0, 40), st.integers(1, 8))
def test_segment_plan_invariants(extra, lk):
    L = 8 * lk + 1 + 8
    F = L + 8 * extra
    p = plan_segments(F, L)
    cov = frame_coverage(p)
    assert cov.min() >= 1 and p.segments[0][0] == 0 and p.segments[-1][1] == F
    assert all(s % 8 == 0 for s in p.starts)
    assert all(o >= 9 for o in p.overlaps)


def test_segment_contributions_discard_first_latents():
    p = plan_segments(89, 49)
    table = segment_contributions(p)
    assert len(table) == 12
    assert table[0] == [(0, 0)]
    assert all(j != 0 for row in table[1:] for _, j in row)
    # frames 41..48 form global group 6, seen by both segments
    assert latent_group(41) == latent_group(48) == 6
    assert sorted(s for s, _ in table[6]) == [0, 1]
    assert all(len(row) == 1 for g, row in enumerate(table) if g != 6)


@pytest.mark.parametrize("F", [49, 89, 97])
@pytest.mark.parametrize("ramp", [True, False])
def test_segment_fusion_equals_whole_encode(F, ramp):
    cfg = CodecConfig(spatial_factor=4, channel_expand=4)
    clip = np.random.default_rng(F).normal(size=(F, 8, 8, 1))
    p = plan_segments(F, 49)
    lats = [encode(clip[a:b], cfg) for a, b in p.segments]
    fused = fuse_segments(lats, p, ramp)
    whole = encode(clip, cfg)
    assert fused.shape[0] == latent_length(F)
    assert np.array_equal(fused, whole) or np.max(np.abs(fused - whole)) <= 1e-12


def test_single_segment_fusion_is_identity():
    z = np.random.default_rng(0).normal(size=(7, 2, 2, 4))
    assert np.array_equal(fuse_segments([z], plan_segments(49, 49)), z)


def test_non_initial_first_latent_is_ignored():
    p = plan_segments(89, 49)
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(2, 7, 2, 2, 1))
    base = fuse_segments([a, b], p)
    b2 = b.copy(); b2[0] += 100.0
    assert np.array_equal(fuse_segments([a, b2], p), base)


def test_ramp_weights_cross_fade():
    p = plan_segments(97, 49)
    a, b, c = np.zeros((7, 1, 1, 1)), np.ones((7, 1, 1, 1)), np.full((7, 1, 1, 1), 2.0)
    fused = fuse_segments([a, b, c], p)
    assert np.all(np.isfinite(fused)) and fused[0, 0, 0, 0] == 0.0 and fused[-1, 0, 0, 0] == 2.0
    with pytest.raises(FusionError):
        fuse_segments([a, b], p)
