import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shortcut_vsr.codec import (
    CodecConfig,
    block_means,
    decode,
    degrade,
    encode,
    frame_count,
    group_frames,
    latent_group,
    latent_length,
    moving_pattern_clip,
    pixels_per_latent,
)
from shortcut_vsr.errors import DomainError, ShapeError


def psnr(a, b):
    peak = np.max(np.abs(a))
    return 10 * np.log10(peak ** 2 / np.mean((a - b) ** 2))


def nearest_pooling_reconstruction(clip, s):
    """Piecewise-constant reconstruction from reference block means."""
    m = block_means(clip, CodecConfig(spatial_factor=s, channel_expand=1))
    up = np.repeat(np.repeat(m, s, axis=1), s, axis=2)
    return np.concatenate([up[:1], np.repeat(up[1:], 8, axis=0)])


def test_table_shape_contract():
    clip = np.zeros((49, 64, 64, 1))
    z = encode(clip, CodecConfig(spatial_factor=4))
    assert z.shape[:3] == (7, 16, 16)
    assert pixels_per_latent(CodecConfig(spatial_factor=4)) == 4 * 4 * 8
    assert pixels_per_latent(CodecConfig(spatial_factor=32)) == 8192
    assert pixels_per_latent(CodecConfig(spatial_factor=32), video=False) == 1024


@pytest.mark.parametrize("F", [2, 8, 10, 48, 50])
def test_bad_frame_counts_rejected(F):
    with pytest.raises(ShapeError):
        encode(np.zeros((F, 8, 8, 1)))


def test_indivisible_spatial_extent_rejected():
    with pytest.raises(ShapeError):
        encode(np.zeros((9, 10, 8, 1)), CodecConfig(spatial_factor=4))


def test_single_image_path():
    z = encode(np.ones((1, 8, 8, 2)), CodecConfig(spatial_factor=4, channel_expand=3))
    assert z.shape == (1, 2, 2, 6)


def test_group_mapping():
    assert latent_length(49) == 7 and frame_count(7) == 49
    assert latent_group(0) == 0 and latent_group(1) == 1 and latent_group(8) == 1 and latent_group(9) == 2
    assert list(group_frames(0)) == [0] and list(group_frames(2)) == list(range(9, 17))
    for F in (1, 9, 49, 97):
        frames = sorted(f for k in range(latent_length(F)) for f in group_frames(k))
        assert frames == list(range(F))


@pytest.mark.parametrize("E", [1, 2, 4])
def test_constant_clip_round_trips_and_mean_channel(E):
    cfg = CodecConfig(spatial_factor=4, channel_expand=E)
    clip = np.full((17, 8, 8, 2), 2.5)
    z = encode(clip, cfg)
    assert np.allclose(z.reshape(z.shape[:3] + (2, E))[..., 0], 2.5)
    assert np.allclose(decode(z, cfg), clip, atol=1e-12)


@pytest.mark.parametrize("E", [1, 3, 4])
def test_block_means_preserved_by_round_trip(E):
    cfg = CodecConfig(spatial_factor=4, channel_expand=E)
    clip = np.random.default_rng(0).normal(size=(25, 8, 12, 2))
    rt = decode(encode(clip, cfg), cfg)
    assert rt.shape == clip.shape
    assert np.max(np.abs(block_means(rt, cfg) - block_means(clip, cfg))) <= 1e-12
    z = encode(clip, cfg).reshape(4, 2, 3, 2, E)
    assert np.allclose(z[..., 0], block_means(clip, cfg), atol=1e-12)


def test_decode_is_right_inverse():
    cfg = CodecConfig()
    z = encode(np.random.default_rng(1).normal(size=(17, 8, 8, 1)), cfg)
    assert np.allclose(encode(decode(z, cfg), cfg), z, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_codec_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 9, 8, 8, 1))
    cfg = CodecConfig()
    assert np.allclose(encode(a * x + b * y, cfg), a * encode(x, cfg) + b * encode(y, cfg), atol=1e-10)


def test_round_trip_psnr_beats_reference_pooling():
    rng = np.random.default_rng(2)
    for _ in range(3):
        clip = moving_pattern_clip(rng, 49, 32)
        rt = decode(encode(clip), CodecConfig())
        assert psnr(clip, rt) > psnr(clip, nearest_pooling_reconstruction(clip, 4))


def test_decode_rejects_bad_channels():
    with pytest.raises(ShapeError):
        decode(np.zeros((2, 2, 2, 3)), CodecConfig(channel_expand=4))


def test_config_validation():
    with pytest.raises(DomainError):
        CodecConfig(spatial_factor=0)
    with pytest.raises(DomainError):
        CodecConfig(temporal_factor=4)


def test_degrade_identity_and_determinism():
    clip = np.random.default_rng(3).normal(size=(9, 16, 16, 1))
    assert np.array_equal(degrade(clip, 0.0, np.random.default_rng(0)), clip)
    a = degrade(clip, 0.7, np.random.default_rng(5))
    b = degrade(clip, 0.7, np.random.default_rng(5))
    assert np.array_equal(a, b) and a.shape == clip.shape
    with pytest.raises(DomainError):
        degrade(clip, 1.5, np.random.default_rng(0))


@pytest.mark.parametrize("factor", [2, 4])
def test_degrade_contracts_white_noise_variance(factor):
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(100):
        clip = rng.standard_normal((1, 16, 16, 1))
        ratios.append(degrade(clip, 1.0, rng, factor).var() / clip.var())
    assert max(ratios) < 1.0
