"""Deterministic stub encoders and the trainable audio adapter.

Text, reference-image and raw-audio features come from frozen seeded
stubs so every process reproduces them exactly. The audio adapter is the
one learned piece: it fuses per-frame audio features with the pooled
start-end latent difference and runs temporal self-attention, with a
zero-initialized output projection so it contributes nothing until
trained.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn

from .synthdata import AudioTrack, SAMPLES_PER_FRAME

BUILD_SEED = 0xBBF
_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass
class ConditionBundle:
    """Per-sample conditioning: text tokens, audio features (raw and
    adapted), reference-image embedding, and the dropout flag."""

    text_tokens: np.ndarray  # (N_t, D_c)
    audio_feats: np.ndarray  # (T, D_a)
    audio_adapted: np.ndarray  # (T, D_c); all zeros when dropped
    image_embed: np.ndarray  # (N_i, D_c)
    latent_diff: np.ndarray  # (D,) pooled end-start latent difference
    audio_dropped: bool = False


def mask_audio(bundle: ConditionBundle, p: float, rng: np.random.Generator) -> ConditionBundle:
    """Drop the adapted audio with probability p (one Bernoulli draw)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("drop probability must lie in [0, 1]")
    if rng.random() < p:
        return replace(
            bundle,
            audio_adapted=np.zeros_like(bundle.audio_adapted),
            audio_dropped=True,
        )
    return bundle


class TextEmbedder:
    """Hash subword units into a fixed seeded embedding table."""

    def __init__(self, d_cond: int, n_tokens: int = 16, vocab_size: int = 4096,
                 seed: int = BUILD_SEED):
        self.d_cond = d_cond
        self.n_tokens = n_tokens
        self.vocab_size = vocab_size
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E27]))
        self.table = rng.normal(0.0, 1.0, size=(vocab_size, d_cond)).astype(np.float32)

    def __call__(self, text: str) -> np.ndarray:
        out = np.zeros((self.n_tokens, self.d_cond), dtype=np.float32)
        words = _TOKEN_RE.findall(text.lower())
        for i, word in enumerate(words[: self.n_tokens]):
            idx = zlib.crc32(word.encode("utf-8")) % self.vocab_size
            out[i] = self.table[idx]
        return out


def extract_audio_features(audio: AudioTrack, n_frames: int, n_bands: int = 8) -> np.ndarray:
    """Per-frame scaled log-energy plus band energy fractions, (T, K+1).

    Silence hits the floor value 0 in the log-energy column.
    """
    win = SAMPLES_PER_FRAME
    if len(audio.samples) < n_frames * win:
        raise ValueError(
            f"audio has {len(audio.samples)} samples, needs {n_frames * win}"
        )
    frames = audio.samples[: n_frames * win].astype(np.float64).reshape(n_frames, win)
    energy = (frames**2).mean(axis=1)
    log_e = (np.log10(energy + 1e-10) + 10.0) / 10.0
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    edges = np.unique(
        np.round(np.geomspace(1, spec.shape[1] - 1, n_bands + 1)).astype(int)
    )
    while len(edges) < n_bands + 1:  # tiny windows: pad with the top edge
        edges = np.append(edges, edges[-1] + 1)
    bands = np.stack(
        [spec[:, edges[k]: edges[k + 1]].sum(axis=1) for k in range(n_bands)], axis=1
    )
    bands = bands / (bands.sum(axis=1, keepdims=True) + 1e-12)
    return np.concatenate([log_e[:, None], bands], axis=1).astype(np.float32)


def _fill_params(module: nn.Module, seed: int, scale: float = 0.05) -> None:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF111]))
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.from_numpy(
                rng.normal(0.0, scale, size=tuple(p.shape)).astype(np.float32)
            ))


def _sin_positions(n: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32)[:, None]
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half, 1))
    args = pos * freqs[None]
    enc = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if enc.shape[1] < dim:
        enc = torch.cat([enc, torch.zeros(n, dim - enc.shape[1])], dim=1)
    return enc


class AudioAdapter(nn.Module):
    """Refine audio features with the pooled start-end latent difference.

    concat(a_t, diff) -> MLP -> +temporal position encoding -> one
    self-attention block -> zero-init output projection.
    """

    def __init__(self, d_audio: int, d_latent: int, d_cond: int, heads: int = 2,
                 seed: int = 0):
        super().__init__()
        self.d_cond = d_cond
        self.heads = heads
        self.mlp = nn.Sequential(
            nn.Linear(d_audio + d_latent, 2 * d_cond), nn.GELU(),
            nn.Linear(2 * d_cond, d_cond),
        )
        self.norm = nn.LayerNorm(d_cond)
        self.qkv = nn.Linear(d_cond, 3 * d_cond)
        self.attn_out = nn.Linear(d_cond, d_cond)
        self.out = nn.Linear(d_cond, d_cond)
        _fill_params(self, seed)
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.zero_()

    def forward(self, audio_feats: torch.Tensor, latent_diff: torch.Tensor) -> torch.Tensor:
        if audio_feats.ndim != 3:
            raise ValueError("audio features must be (B, T, D_a)")
        b, t, _ = audio_feats.shape
        diff = latent_diff[:, None, :].expand(b, t, latent_diff.shape[-1])
        h = self.mlp(torch.cat([audio_feats, diff], dim=-1))
        h = h + _sin_positions(t, self.d_cond).to(h)
        x = self.norm(h)
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, -1).transpose(1, 2)
        k = k.view(b, t, self.heads, -1).transpose(1, 2)
        v = v.view(b, t, self.heads, -1).transpose(1, 2)
        att = torch.nn.functional.scaled_dot_product_attention(q, k, v)
        att = att.transpose(1, 2).reshape(b, t, self.d_cond)
        h = h + self.attn_out(att)
        return self.out(h)


class RefImageEncoder(nn.Module):
    """Small frozen conv encoder producing N_i x D_c reference tokens."""

    def __init__(self, d_cond: int, channels: int = 3, seed: int = BUILD_SEED):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, 16, kernel_size=4, stride=4)
        self.conv2 = nn.Conv2d(16, 32, kernel_size=2, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.proj = nn.Linear(32, d_cond)
        _fill_params(self, seed, scale=0.12)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, frame: torch.Tensor) -> torch.Tensor:
        x = torch.nn.functional.gelu(self.conv1(frame))
        x = torch.nn.functional.gelu(self.conv2(x))
        x = self.pool(x)  # (B, 32, 4, 4)
        tokens = x.flatten(2).transpose(1, 2)  # (B, 16, 32)
        return self.proj(tokens)


class ConditioningStack:
    """Bundles the frozen stubs and the trainable adapter for one model."""

    def __init__(self, d_cond: int, latent_dim: int, n_text_tokens: int = 16,
                 n_bands: int = 8, adapter_seed: int = 0, build_seed: int = BUILD_SEED):
        self.d_cond = d_cond
        self.latent_dim = latent_dim
        self.n_bands = n_bands
        self.text = TextEmbedder(d_cond, n_text_tokens, seed=build_seed)
        self.image = RefImageEncoder(d_cond, seed=build_seed)
        self.adapter = AudioAdapter(n_bands + 1, latent_dim, d_cond, seed=adapter_seed)

    def embed_reference_image(self, frame: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.asarray(frame, dtype=np.float32)).permute(2, 0, 1)[None]
        with torch.no_grad():
            return self.image(x)[0].numpy()

    def latent_diff(self, z_start: np.ndarray, z_end: np.ndarray) -> np.ndarray:
        """Spatial mean of the end-start latent difference, a (D,) vector."""
        return np.asarray(z_end - z_start, dtype=np.float32).mean(axis=(0, 1))

    def adapt_audio(self, audio_feats: torch.Tensor, latent_diff: torch.Tensor,
                    dropped: torch.Tensor) -> torch.Tensor:
        """Adapter forward with per-sample dropout zeroing, gradient-safe."""
        adapted = self.adapter(audio_feats, latent_diff)
        keep = (~dropped.bool()).to(adapted.dtype)[:, None, None]
        return adapted * keep

    def build_bundle(self, caption: str, audio: AudioTrack | None, n_frames: int,
                     start_frame: np.ndarray, z_start: np.ndarray, z_end: np.ndarray,
                     use_text: bool = True, use_audio: bool = True,
                     use_image: bool = True) -> ConditionBundle:
        text_tokens = self.text(caption) if use_text else self.text("")
        diff = self.latent_diff(z_start, z_end)
        d_a = self.n_bands + 1
        if audio is not None and use_audio:
            feats = extract_audio_features(audio, n_frames, self.n_bands)
            with torch.no_grad():
                adapted = self.adapter(
                    torch.from_numpy(feats)[None], torch.from_numpy(diff)[None]
                )[0].numpy()
            dropped = False
        else:
            feats = np.zeros((n_frames, d_a), dtype=np.float32)
            adapted = np.zeros((n_frames, self.d_cond), dtype=np.float32)
            dropped = True
        if use_image:
            image_embed = self.embed_reference_image(start_frame)
        else:
            image_embed = np.zeros((16, self.d_cond), dtype=np.float32)
        return ConditionBundle(
            text_tokens=text_tokens,
            audio_feats=feats,
            audio_adapted=adapted,
            image_embed=image_embed,
            latent_diff=diff,
            audio_dropped=dropped,
        )
