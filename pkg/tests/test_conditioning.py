import numpy as np
import pytest
import torch

from bbf.conditioning import (
    AudioAdapter,
    ConditionBundle,
    ConditioningStack,
    TextEmbedder,
    extract_audio_features,
    mask_audio,
)
from bbf.synthdata import SceneSpec, synth_audio


def make_bundle(t=9, d_c=32, d_a=9, dropped=False):
    rng = np.random.default_rng(0)
    return ConditionBundle(
        text_tokens=rng.normal(size=(8, d_c)).astype(np.float32),
        audio_feats=rng.normal(size=(t, d_a)).astype(np.float32),
        audio_adapted=rng.normal(size=(t, d_c)).astype(np.float32),
        image_embed=rng.normal(size=(16, d_c)).astype(np.float32),
        latent_diff=rng.normal(size=(48,)).astype(np.float32),
        audio_dropped=dropped,
    )


# -- text ---------------------------------------------------------------------

def test_empty_text_zero_block():
    emb = TextEmbedder(d_cond=32)
    assert np.all(emb("") == 0)


def test_text_determinism():
    emb = TextEmbedder(d_cond=32)
    a = emb("a red ball gliding right")
    b = emb("a red ball gliding right")
    assert np.array_equal(a, b)
    other = TextEmbedder(d_cond=32)
    assert np.array_equal(a, other("a red ball gliding right"))


def test_text_corpus_has_no_collisions():
    emb = TextEmbedder(d_cond=32)
    seen = {}
    for i in range(1000):
        word = f"tok{i}"
        row = emb(word)[0]
        key = row.tobytes()
        assert key not in seen, f"{word} collides with {seen.get(key)}"
        seen[key] = word


def test_text_truncation_and_padding():
    emb = TextEmbedder(d_cond=16, n_tokens=4)
    out = emb("one two three four five six")
    assert out.shape == (4, 16)
    short = emb("one")
    assert np.all(short[1:] == 0)
    assert np.any(short[0] != 0)


# -- audio features -------------------------------------------------------------

def test_silence_hits_floor():
    audio = synth_audio(SceneSpec(seed=0, audio_amp=0.0))
    feats = extract_audio_features(audio, 17)
    assert np.all(feats[:, 0] == 0.0)


def test_tone_dominates_its_band():
    spec = SceneSpec(seed=1, audio_tone_hz=400.0, fps=16.0)
    feats = extract_audio_features(synth_audio(spec), spec.n_frames)
    bands = feats[:, 1:]
    dominant = np.argmax(bands, axis=1)
    assert np.all(dominant == dominant[0])
    assert np.all(bands[np.arange(len(bands)), dominant] >= 0.9)


def test_feature_rows_match_frame_count():
    audio = synth_audio(SceneSpec(seed=2))
    assert extract_audio_features(audio, 17).shape[0] == 17
    assert extract_audio_features(audio, 10).shape[0] == 10


def test_audio_shorter_than_video_rejected():
    audio = synth_audio(SceneSpec(seed=2, n_frames=5))
    with pytest.raises(ValueError):
        extract_audio_features(audio, 17)


# -- audio adapter --------------------------------------------------------------

def test_adapter_zero_at_initialization():
    adapter = AudioAdapter(d_audio=9, d_latent=48, d_cond=32, seed=0)
    rng = np.random.default_rng(0)
    a = torch.from_numpy(rng.normal(size=(2, 9, 9)).astype(np.float32))
    d = torch.from_numpy(rng.normal(size=(2, 48)).astype(np.float32))
    with torch.no_grad():
        out = adapter(a, d)
    assert torch.all(out == 0)


def test_adapter_zero_diff_for_equal_boundaries():
    stack = ConditioningStack(d_cond=32, latent_dim=48)
    z = np.random.default_rng(1).normal(size=(8, 8, 48)).astype(np.float32)
    assert np.all(stack.latent_diff(z, z) == 0)
    assert np.any(stack.latent_diff(z, 2 * z) != 0)


def test_adapter_sensitive_to_frame_order_after_random_init():
    adapter = AudioAdapter(d_audio=9, d_latent=8, d_cond=16, seed=3)
    with torch.no_grad():
        adapter.out.weight.normal_(0.0, 0.2, generator=torch.Generator().manual_seed(5))
    rng = np.random.default_rng(2)
    a = torch.from_numpy(rng.normal(size=(1, 6, 9)).astype(np.float32))
    d = torch.from_numpy(rng.normal(size=(1, 8)).astype(np.float32))
    perm = torch.tensor([5, 4, 3, 2, 1, 0])
    with torch.no_grad():
        out = adapter(a, d)
        out_perm = adapter(a[:, perm], d)
    # order-sensitive: permuting inputs does not just permute outputs
    assert not torch.allclose(out[:, perm], out_perm, atol=1e-6)


# -- reference image -------------------------------------------------------------

def test_image_embed_deterministic():
    stack = ConditioningStack(d_cond=64, latent_dim=48)
    frame = np.random.default_rng(3).random((64, 64, 3)).astype(np.float32)
    a = stack.embed_reference_image(frame)
    b = stack.embed_reference_image(frame)
    assert np.array_equal(a, b)
    fresh = ConditioningStack(d_cond=64, latent_dim=48)
    assert np.array_equal(a, fresh.embed_reference_image(frame))


def test_image_embed_zero_frame_golden_values():
    stack = ConditioningStack(d_cond=64, latent_dim=48)
    emb = stack.embed_reference_image(np.zeros((64, 64, 3), dtype=np.float32))
    assert emb.shape == (16, 64)
    golden = np.array([-0.063948, 0.053538, -0.102966, -0.127644], dtype=np.float32)
    assert np.allclose(emb[0, :4], golden, atol=1e-5)


def test_image_embed_distinguishes_frames():
    stack = ConditioningStack(d_cond=64, latent_dim=48)
    from bbf.synthdata import make_scene

    a = make_scene(SceneSpec(seed=1)).clip.frames[0]
    b = make_scene(SceneSpec(seed=2, ball_start=(30.0, 24.0), ball_velocity=(0.5, 0.5),
                             face_pos=(4, 4))).clip.frames[0]
    ea = stack.embed_reference_image(a)
    eb = stack.embed_reference_image(b)
    assert not np.allclose(ea, eb)


# -- audio masking ---------------------------------------------------------------

def test_mask_audio_never_and_always():
    rng = np.random.default_rng(0)
    bundle = make_bundle()
    for _ in range(50):
        assert mask_audio(bundle, 0.0, rng).audio_dropped is False
    out = mask_audio(bundle, 1.0, rng)
    assert out.audio_dropped is True
    assert np.all(out.audio_adapted == 0)
    assert np.any(bundle.audio_adapted != 0)  # input untouched


def test_mask_audio_rejects_bad_probability():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        mask_audio(make_bundle(), 1.2, rng)
    with pytest.raises(ValueError):
        mask_audio(make_bundle(), -0.1, rng)


def test_mask_audio_empirical_rate():
    rng = np.random.default_rng(123)
    bundle = make_bundle()
    hits = sum(mask_audio(bundle, 0.3, rng).audio_dropped for _ in range(10000))
    assert 0.28 <= hits / 10000 <= 0.32
