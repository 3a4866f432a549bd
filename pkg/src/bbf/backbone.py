"""Diffusion-transformer denoiser over patchified latent queries.

Tokens are spatial patches of every latent frame; attention is global over
all spatiotemporal tokens so each denoising position sees the pinned
boundary slices directly. Conditioning is decoupled: timestep drives
adaptive norms, text is injected by the first cross-attention, then the
reference image and adapted audio share the second branch. Cross-attention
output projections start at zero, making predictions independent of the
condition content at initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class BlockConfig:
    depth: int = 6
    d_model: int = 192
    heads: int = 6
    d_cond: int = 64
    patch: int = 2

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even")


def patchify(z: torch.Tensor, patch: int) -> torch.Tensor:
    """(B, T, H, W, D) -> (B, T*(H/p)*(W/p), p*p*D), t-major then y then x."""
    unbatched = z.ndim == 4
    if unbatched:
        z = z[None]
    b, t, h, w, d = z.shape
    p = patch
    if h % p or w % p:
        raise ValueError("latent spatial dims must be divisible by the patch size")
    x = z.reshape(b, t, h // p, p, w // p, p, d)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    x = x.reshape(b, t * (h // p) * (w // p), p * p * d)
    return x[0] if unbatched else x


def unpatchify(tokens: torch.Tensor, grid: tuple[int, int, int], patch: int) -> torch.Tensor:
    """Inverse of `patchify` for a (T, H, W) latent grid."""
    unbatched = tokens.ndim == 2
    if unbatched:
        tokens = tokens[None]
    t, h, w = grid
    p = patch
    b, l, dd = tokens.shape
    if l != t * (h // p) * (w // p) or dd % (p * p):
        raise ValueError("token count does not match the latent grid")
    d = dd // (p * p)
    x = tokens.reshape(b, t, h // p, w // p, p, p, d)
    x = x.permute(0, 1, 2, 4, 3, 5, 6)
    x = x.reshape(b, t, h, w, d)
    return x[0] if unbatched else x


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
              mask: torch.Tensor | None = None) -> torch.Tensor:
    """Scaled dot-product attention; boolean mask True = may attend."""
    return F.scaled_dot_product_attention(q, k, v, attn_mask=mask)


def sinusoidal_features(x: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    """Sinusoidal features of a scalar batch (values in [0, 1])."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=x.dtype, device=x.device) / half
    )
    args = x[:, None] * scale * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _axis_encoding(n: int, dim: int, dtype, device) -> torch.Tensor:
    pos = torch.arange(n, dtype=dtype, device=device)[:, None]
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype, device=device) / max(half, 1)
    )
    args = pos * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def factorized_positions(grid: tuple[int, int, int], dim: int, dtype=torch.float32,
                         device=None) -> torch.Tensor:
    """Concatenated (t, y, x) sinusoidal encodings for every token, (L, dim)."""
    t, hp, wp = grid
    d_t = (dim // 3) & ~1
    d_y = d_t
    d_x = dim - d_t - d_y
    enc_t = _axis_encoding(t, d_t, dtype, device)
    enc_y = _axis_encoding(hp, d_y, dtype, device)
    enc_x = _axis_encoding(wp, d_x, dtype, device)
    out = torch.cat(
        [
            enc_t[:, None, None, :].expand(t, hp, wp, d_t),
            enc_y[None, :, None, :].expand(t, hp, wp, d_y),
            enc_x[None, None, :, :].expand(t, hp, wp, d_x),
        ],
        dim=-1,
    )
    return out.reshape(t * hp * wp, dim)


class TimestepEmbed(nn.Module):
    """Sinusoidal features of t in [0, 1] through a 2-layer map."""

    def __init__(self, d_model: int, freq_dim: int = 64):
        super().__init__()
        self.freq_dim = freq_dim
        self.net = nn.Sequential(
            nn.Linear(freq_dim, d_model), nn.SiLU(), nn.Linear(d_model, d_model)
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        if torch.any(t < 0) or torch.any(t > 1):
            raise ValueError("timestep must lie in [0, 1]")
        return self.net(sinusoidal_features(t, self.freq_dim))


def _zero_init(linear: nn.Linear) -> nn.Linear:
    with torch.no_grad():
        linear.weight.zero_()
        if linear.bias is not None:
            linear.bias.zero_()
    return linear


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        b, l, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, l, self.heads, -1).transpose(1, 2)
        k = k.view(b, l, self.heads, -1).transpose(1, 2)
        v = v.view(b, l, self.heads, -1).transpose(1, 2)
        att = attention(q, k, v, mask)
        return self.out(att.transpose(1, 2).reshape(b, l, d))


class CrossAttention(nn.Module):
    """Queries from the token stream, keys/values from a condition stream.

    Bias-free projections with a zero-initialized output, so all-zero
    condition tokens contribute exactly nothing.
    """

    def __init__(self, d_model: int, d_cond: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.LayerNorm(d_model)
        self.q = nn.Linear(d_model, d_model, bias=False)
        self.k = nn.Linear(d_cond, d_model, bias=False)
        self.v = nn.Linear(d_cond, d_model, bias=False)
        self.out = _zero_init(nn.Linear(d_model, d_model, bias=False))

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        s = cond.shape[1]
        q = self.q(self.norm(x)).view(b, l, self.heads, -1).transpose(1, 2)
        k = self.k(cond).view(b, s, self.heads, -1).transpose(1, 2)
        v = self.v(cond).view(b, s, self.heads, -1).transpose(1, 2)
        att = attention(q, k, v)
        return self.out(att.transpose(1, 2).reshape(b, l, d))


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale[:, None, :]) + shift[:, None, :]


class DiTBlock(nn.Module):
    """One denoiser block, fixed sublayer order:

    adaptive-norm global self-attention -> text cross-attention ->
    shared image+audio cross-attention -> gated MLP.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        d = cfg.d_model
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False)
        self.attn = SelfAttention(d, cfg.heads)
        self.cross_text = CrossAttention(d, cfg.d_cond, cfg.heads)
        self.cross_img_audio = CrossAttention(d, cfg.d_cond, cfg.heads)
        self.mlp = nn.Sequential(
            nn.Linear(d, 4 * d), nn.GELU(approximate="tanh"), nn.Linear(4 * d, d)
        )
        self.ada = nn.Sequential(nn.SiLU(), _zero_init(nn.Linear(d, 6 * d)))

    def forward(self, x: torch.Tensor, t_embed: torch.Tensor, text: torch.Tensor,
                img_audio: torch.Tensor, swap_fusion: bool = False) -> torch.Tensor:
        sh1, sc1, g1, sh2, sc2, g2 = self.ada(t_embed).chunk(6, dim=-1)
        x = x + g1[:, None, :] * self.attn(modulate(self.norm1(x), sh1, sc1))
        if swap_fusion:  # experimental ablation path only
            x = x + self.cross_img_audio(x, img_audio)
            x = x + self.cross_text(x, text)
        else:
            x = x + self.cross_text(x, text)
            x = x + self.cross_img_audio(x, img_audio)
        x = x + g2[:, None, :] * self.mlp(modulate(self.norm2(x), sh2, sc2))
        return x


class Denoiser(nn.Module):
    """Velocity predictor over latent sequences with a condition-mask channel."""

    def __init__(self, cfg: BlockConfig, latent_dim: int, seed: int = 0,
                 head_init_std: float = 0.02):
        super().__init__()
        torch.manual_seed(seed)
        self.cfg = cfg
        self.latent_dim = latent_dim
        p = cfg.patch
        self.patch_embed = nn.Linear(p * p * (latent_dim + 1), cfg.d_model)
        self.t_embed = TimestepEmbed(cfg.d_model)
        self.blocks = nn.ModuleList(DiTBlock(cfg) for _ in range(cfg.depth))
        self.final_norm = nn.LayerNorm(cfg.d_model, elementwise_affine=False)
        self.final_ada = nn.Sequential(
            nn.SiLU(), _zero_init(nn.Linear(cfg.d_model, 2 * cfg.d_model))
        )
        self.head = nn.Linear(cfg.d_model, p * p * latent_dim)
        with torch.no_grad():
            self.head.weight.normal_(0.0, head_init_std)
            self.head.bias.zero_()
        self.swap_fusion = False
        self._pos_cache: dict = {}

    def _positions(self, grid, dtype, device) -> torch.Tensor:
        key = (grid, dtype)
        if key not in self._pos_cache:
            self._pos_cache[key] = factorized_positions(
                grid, self.cfg.d_model, dtype, device
            )
        return self._pos_cache[key]

    def forward(self, z: torch.Tensor, t: torch.Tensor, mask: torch.Tensor,
                text: torch.Tensor, image: torch.Tensor, audio: torch.Tensor) -> torch.Tensor:
        if z.ndim != 5:
            raise ValueError("latents must be (B, T', H', W', D)")
        b, tt, h, w, d = z.shape
        if d != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {d}")
        for cond, name in ((text, "text"), (image, "image"), (audio, "audio")):
            if cond.ndim != 3 or cond.shape[-1] != self.cfg.d_cond:
                raise ValueError(f"{name} conditions must be (B, N, {self.cfg.d_cond})")
        if mask.ndim == 3:
            mask = mask[None].expand(b, *mask.shape)
        p = self.cfg.patch
        grid = (tt, h // p, w // p)
        x = torch.cat([z, mask.to(z.dtype)[..., None]], dim=-1)
        tokens = self.patch_embed(patchify(x, p))
        tokens = tokens + self._positions(grid, z.dtype, z.device)[None]
        temb = self.t_embed(t.to(z.dtype))
        img_audio = torch.cat([image, audio], dim=1)
        for block in self.blocks:
            tokens = block(tokens, temb, text, img_audio, self.swap_fusion)
        sh, sc = self.final_ada(temb).chunk(2, dim=-1)
        tokens = self.head(modulate(self.final_norm(tokens), sh, sc))
        return unpatchify(tokens, (tt, h, w), p)
