"""Spatiotemporal latent codec and boundary-sequence assembly.

Two modes: "identity" is an exact pixel-shuffle (bit-wise invertible, used
by mechanism tests and the default pipeline), "learned" is a tiny frozen
conv autoencoder pretrained on synthetic clips. Temporal stride is fixed
at 1 so each boundary frame maps to exactly one latent slice, which keeps
hard boundary pinning exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .synthdata import Clip


@dataclass
class LatentSeq:
    """Latent tensor (T', H', W', D) with the strides that produced it."""

    z: np.ndarray
    spatial_stride: int
    temporal_stride: int = 1

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float32)
        if self.z.ndim != 4:
            raise ValueError("latents must have shape (T', H', W', D)")
        if not np.isfinite(self.z).all():
            raise ValueError("latents contain NaN/Inf")


@dataclass
class InterpMask:
    """1 on latent positions held as hard conditions, 0 where generated."""

    m: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.uint8)
        if self.m.ndim != 3:
            raise ValueError("mask must have shape (T', H', W')")
        if not np.isin(self.m, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")


def assemble_boundary_sequence(start: np.ndarray, end: np.ndarray, n_frames: int,
                               fps: float = 16.0) -> tuple[Clip, np.ndarray]:
    """Build the conditioning clip: boundary frames plus zero placeholders.

    Returns the T-frame clip (frame 0 = start, frame T-1 = end, interior
    all-zero) and the pixel-resolution condition mask, 1 on both boundary
    frames.
    """
    start = np.asarray(start, dtype=np.float32)
    end = np.asarray(end, dtype=np.float32)
    if n_frames < 2:
        raise ValueError("n_frames must be at least 2")
    if start.shape != end.shape or start.ndim != 3:
        raise ValueError("start/end must be (H, W, C) frames of equal shape")
    frames = np.zeros((n_frames,) + start.shape, dtype=np.float32)
    frames[0] = start
    frames[-1] = end
    mask = np.zeros((n_frames,) + start.shape[:2], dtype=np.uint8)
    mask[0] = 1
    mask[-1] = 1
    return Clip(frames, fps), mask


def downsample_mask(pixel_mask: np.ndarray, weight_map: np.ndarray,
                    spatial_stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Pool pixel-space arrays to the latent grid.

    The binary mask is max-pooled (any marked pixel marks the patch) and
    the weight map is mean-pooled, both over non-overlapping
    spatial_stride x spatial_stride patches.
    """
    pixel_mask = np.asarray(pixel_mask)
    weight_map = np.asarray(weight_map, dtype=np.float64)
    if pixel_mask.shape != weight_map.shape or pixel_mask.ndim != 3:
        raise ValueError("mask and weight map must share shape (T, H, W)")
    t, h, w = pixel_mask.shape
    s = spatial_stride
    if h % s or w % s:
        raise ValueError("spatial dims must be divisible by the stride")
    blocks_m = pixel_mask.reshape(t, h // s, s, w // s, s)
    blocks_w = weight_map.reshape(t, h // s, s, w // s, s)
    return (
        blocks_m.max(axis=(2, 4)).astype(np.uint8),
        blocks_w.mean(axis=(2, 4)).astype(np.float32),
    )


def latent_interp_mask(pixel_mask: np.ndarray, spatial_stride: int) -> InterpMask:
    pooled, _ = downsample_mask(
        pixel_mask, np.ones(pixel_mask.shape, dtype=np.float64), spatial_stride
    )
    return InterpMask(pooled)


class _ConvEncoder(nn.Module):
    def __init__(self, channels: int, dim: int, stride: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(channels, hidden, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv2d(hidden, hidden, kernel_size=stride, stride=stride),
            nn.GELU(),
            nn.Conv2d(hidden, dim, kernel_size=1),
        )

    def forward(self, x):
        return self.net(x)


class _ConvDecoder(nn.Module):
    def __init__(self, channels: int, dim: int, stride: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(dim, hidden, kernel_size=1),
            nn.GELU(),
            nn.ConvTranspose2d(hidden, hidden, kernel_size=stride, stride=stride),
            nn.GELU(),
            nn.Conv2d(hidden, channels, kernel_size=3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class LatentCodec:
    """Frozen per-frame codec between pixel clips and latent sequences."""

    def __init__(self, mode: str = "identity", spatial_stride: int = 4,
                 temporal_stride: int = 1, channels: int = 3, seed: int = 0):
        if mode not in ("identity", "learned"):
            raise ValueError(f"unknown codec mode {mode!r}")
        if temporal_stride != 1:
            raise ValueError("temporal_stride is fixed at 1 in this codec")
        self.mode = mode
        self.spatial_stride = spatial_stride
        self.temporal_stride = temporal_stride
        self.channels = channels
        self.latent_dim = spatial_stride * spatial_stride * channels
        if mode == "learned":
            torch.manual_seed(seed)
            self.encoder = _ConvEncoder(channels, self.latent_dim, spatial_stride)
            self.decoder = _ConvDecoder(channels, self.latent_dim, spatial_stride)
            self.freeze()
        else:
            self.encoder = None
            self.decoder = None

    def freeze(self) -> None:
        if self.mode == "learned":
            for p in list(self.encoder.parameters()) + list(self.decoder.parameters()):
                p.requires_grad_(False)
            self.encoder.eval()
            self.decoder.eval()

    def _check_dims(self, frames: np.ndarray) -> None:
        t, h, w, c = frames.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        if h % self.spatial_stride or w % self.spatial_stride:
            raise ValueError("spatial dims must be divisible by the stride")

    def encode(self, clip) -> LatentSeq:
        frames = clip.frames if isinstance(clip, Clip) else np.asarray(clip, dtype=np.float32)
        self._check_dims(frames)
        t, h, w, c = frames.shape
        s = self.spatial_stride
        if self.mode == "identity":
            z = (
                frames.reshape(t, h // s, s, w // s, s, c)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(t, h // s, w // s, s * s * c)
            )
        else:
            with torch.no_grad():
                x = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2)
                z = self.encoder(x).permute(0, 2, 3, 1).numpy()
        return LatentSeq(z, s, self.temporal_stride)

    def decode(self, latents: LatentSeq) -> np.ndarray:
        z = latents.z
        t, hp, wp, d = z.shape
        if d != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {d}")
        s = self.spatial_stride
        if self.mode == "identity":
            c = self.channels
            return (
                z.reshape(t, hp, wp, s, s, c)
                .transpose(0, 1, 3, 2, 4, 5)
                .reshape(t, hp * s, wp * s, c)
            )
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(z)).permute(0, 3, 1, 2)
            return self.decoder(x).permute(0, 2, 3, 1).numpy()

    def encode_frame(self, frame: np.ndarray) -> np.ndarray:
        """Latent slice (H', W', D) of one frame."""
        return self.encode(np.asarray(frame, dtype=np.float32)[None]).z[0]

    def state_dict(self) -> dict[str, np.ndarray]:
        if self.mode == "identity":
            return {}
        out = {}
        for prefix, mod in (("encoder", self.encoder), ("decoder", self.decoder)):
            for name, p in mod.state_dict().items():
                out[f"{prefix}.{name}"] = p.numpy().astype(np.float32)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if self.mode == "identity":
            return
        for prefix, mod in (("encoder", self.encoder), ("decoder", self.decoder)):
            sd = {
                k[len(prefix) + 1 :]: torch.from_numpy(v.copy())
                for k, v in state.items()
                if k.startswith(prefix + ".")
            }
            mod.load_state_dict(sd)
        self.freeze()


def pretrain_codec(codec: LatentCodec, clips: list, steps: int = 300,
                   lr: float = 2e-3, batch_size: int = 16, seed: int = 0) -> list[float]:
    """Fit the learned codec by frame-reconstruction MSE, then refreeze it."""
    if codec.mode != "learned":
        raise ValueError("only the learned codec can be pretrained")
    frames = np.concatenate(
        [c.frames if isinstance(c, Clip) else np.asarray(c) for c in clips], axis=0
    )
    x_all = torch.from_numpy(frames.astype(np.float32)).permute(0, 3, 1, 2)
    for p in list(codec.encoder.parameters()) + list(codec.decoder.parameters()):
        p.requires_grad_(True)
    codec.encoder.train()
    codec.decoder.train()
    params = list(codec.encoder.parameters()) + list(codec.decoder.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    gen = torch.Generator().manual_seed(seed)
    losses = []
    for _ in range(steps):
        idx = torch.randint(0, x_all.shape[0], (batch_size,), generator=gen)
        x = x_all[idx]
        recon = codec.decoder(codec.encoder(x))
        loss = torch.mean((recon - x) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    codec.freeze()
    return losses
