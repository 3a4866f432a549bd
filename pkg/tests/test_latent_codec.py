import numpy as np
import pytest

from bbf.diffusion import weight_map
from bbf.evalkit import psnr
from bbf.latent_codec import (
    InterpMask,
    LatentCodec,
    assemble_boundary_sequence,
    downsample_mask,
    latent_interp_mask,
    pretrain_codec,
)
from bbf.synthdata import Clip, generate_scenes


def random_clip(seed, t=5, h=16, w=16):
    rng = np.random.default_rng(seed)
    return Clip(rng.random((t, h, w, 3)).astype(np.float32), 16.0)


# -- boundary assembly --------------------------------------------------------

def test_assemble_minimal_two_frames():
    rng = np.random.default_rng(0)
    start = rng.random((8, 8, 3)).astype(np.float32)
    end = rng.random((8, 8, 3)).astype(np.float32)
    clip, mask = assemble_boundary_sequence(start, end, 2)
    assert clip.n_frames == 2
    assert np.array_equal(clip.frames[0], start)
    assert np.array_equal(clip.frames[1], end)
    assert mask.sum() == 2 * 8 * 8


def test_assemble_interior_exactly_zero():
    rng = np.random.default_rng(1)
    start = rng.random((8, 8, 3)).astype(np.float32)
    end = rng.random((8, 8, 3)).astype(np.float32)
    clip, mask = assemble_boundary_sequence(start, end, 5)
    assert np.all(clip.frames[1:4] == 0)
    assert np.array_equal(mask[0], np.ones((8, 8), dtype=np.uint8))
    assert np.all(mask[1:4] == 0)


@pytest.mark.parametrize("t", [2, 3, 9])
def test_assemble_mask_sum_invariant(t):
    start = np.zeros((12, 8, 3), dtype=np.float32)
    _, mask = assemble_boundary_sequence(start, start, t)
    assert mask.sum() == 2 * 12 * 8


def test_assemble_rejects_short_sequences():
    f = np.zeros((8, 8, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        assemble_boundary_sequence(f, f, 1)


# -- identity codec -----------------------------------------------------------

def test_identity_round_trip_bit_exact():
    codec = LatentCodec(mode="identity")
    clip = random_clip(2)
    z = codec.encode(clip)
    assert z.z.shape == (5, 4, 4, 48)
    assert np.array_equal(codec.decode(z), clip.frames)


def test_identity_zero_clip_zero_latents():
    codec = LatentCodec(mode="identity")
    z = codec.encode(np.zeros((3, 8, 8, 3), dtype=np.float32))
    assert np.all(z.z == 0)


def test_identity_encode_deterministic():
    codec = LatentCodec(mode="identity")
    clip = random_clip(3)
    assert np.array_equal(codec.encode(clip).z, codec.encode(clip).z)


def test_non_divisible_dims_rejected():
    codec = LatentCodec(mode="identity")
    with pytest.raises(ValueError):
        codec.encode(np.zeros((2, 9, 8, 3), dtype=np.float32))


def test_temporal_stride_fixed():
    with pytest.raises(ValueError):
        LatentCodec(mode="identity", temporal_stride=2)


def test_interp_mask_survives_identity_round_trip():
    codec = LatentCodec(mode="identity")
    start = np.zeros((16, 16, 3), dtype=np.float32)
    clip, pixel_mask = assemble_boundary_sequence(start, start, 4)
    mask = latent_interp_mask(pixel_mask, codec.spatial_stride)
    # temporal stride 1: exactly the first and last latent slices are pinned
    assert np.all(mask.m[0] == 1) and np.all(mask.m[-1] == 1)
    assert np.all(mask.m[1:-1] == 0)
    # decoding and re-encoding the masked clip leaves the mask unchanged
    z = codec.encode(clip)
    again = codec.encode(codec.decode(z))
    mask2 = latent_interp_mask(pixel_mask, codec.spatial_stride)
    assert np.array_equal(mask.m, mask2.m)
    assert np.array_equal(z.z, again.z)


def test_interp_mask_validation():
    with pytest.raises(ValueError):
        InterpMask(np.full((2, 2, 2), 3, dtype=np.uint8))


# -- mask / weight pooling ------------------------------------------------------

def test_downsample_all_ones_weight():
    ones = np.ones((2, 8, 8))
    mask, weights = downsample_mask(np.zeros((2, 8, 8), dtype=np.uint8), ones, 4)
    assert np.all(weights == 1.0)
    assert np.all(mask == 0)


def test_downsample_single_pixel_max_pool():
    pix = np.zeros((1, 8, 8), dtype=np.uint8)
    pix[0, 5, 6] = 1
    mask, _ = downsample_mask(pix, np.ones((1, 8, 8)), 4)
    expect = np.zeros((1, 2, 2), dtype=np.uint8)
    expect[0, 1, 1] = 1
    assert np.array_equal(mask, expect)


def test_downsample_weightmap_lip_patch_value():
    # patch fully inside the lip (and face) region: W = 1 + 1*1 + 2*1 = 4
    face = np.ones((1, 4, 4), dtype=np.uint8)
    lip = np.ones((1, 4, 4), dtype=np.uint8)
    w = weight_map(face, lip, 1.0, 2.0)
    _, pooled = downsample_mask(lip, w.astype(np.float64), 4)
    assert pooled.shape == (1, 1, 1)
    assert pooled[0, 0, 0] == pytest.approx(4.0, abs=1e-12)


def test_downsample_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        downsample_mask(np.zeros((1, 8, 8)), np.ones((1, 8, 4)), 4)


# -- learned codec --------------------------------------------------------------

def test_learned_codec_round_trip_psnr():
    scenes = generate_scenes(12, seed=3, height=32, width=32, n_frames=9)
    codec = LatentCodec(mode="learned", seed=0)
    pretrain_codec(codec, [s.clip for s in scenes], steps=800, lr=2.5e-3, seed=0)
    held = generate_scenes(3, seed=777, height=32, width=32, n_frames=9)
    vals = [psnr(codec.decode(codec.encode(s.clip)), s.clip.frames) for s in held]
    assert float(np.mean(vals)) >= 30.0


def test_learned_codec_state_round_trip():
    codec = LatentCodec(mode="learned", seed=1)
    clip = random_clip(5)
    z = codec.encode(clip).z
    state = codec.state_dict()
    other = LatentCodec(mode="learned", seed=99)
    assert not np.array_equal(other.encode(clip).z, z)
    other.load_state_dict(state)
    assert np.array_equal(other.encode(clip).z, z)
