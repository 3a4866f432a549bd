"""Flow-matching training with region-weighted loss and a pinned sampler.

Training draws t ~ U(0,1) per sample, noises the interior latent slices
along the linear path, keeps the boundary slices clean, and regresses the
velocity (noise minus data) under the face/lip weight map. The sampler
runs deterministic Euler steps from noise to data, overwriting the
conditioned slices with the clean boundary latents at every step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch

from . import container
from .backbone import BlockConfig, Denoiser
from .conditioning import ConditioningStack, extract_audio_features
from .latent_codec import LatentCodec, assemble_boundary_sequence, downsample_mask, latent_interp_mask
from .synthdata import Clip, SceneData


@dataclass
class TrainSchedule:
    """Curriculum and optimizer settings for one training run."""

    total_steps: int = 2000
    audio_mask_phases: tuple = ((0.5, 0.3), (0.5, 0.1))  # (fraction of S, drop prob)
    lambda_face: tuple = ((0.0, 1.0), (1.0, 0.5))  # piecewise-linear (s/S, value)
    lambda_lip: tuple = ((0.0, 0.5), (1.0, 2.0))
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch_size: int = 4
    checkpoint_every: int = 100

    def __post_init__(self):
        self.audio_mask_phases = tuple(tuple(p) for p in self.audio_mask_phases)
        self.lambda_face = tuple(tuple(p) for p in self.lambda_face)
        self.lambda_lip = tuple(tuple(p) for p in self.lambda_lip)
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        fracs = sum(f for f, _ in self.audio_mask_phases)
        if abs(fracs - 1.0) > 1e-9:
            raise ValueError("audio mask phase fractions must partition [0, 1]")
        if any(not 0 <= p <= 1 for _, p in self.audio_mask_phases):
            raise ValueError("audio mask probabilities must lie in [0, 1]")
        for knots in (self.lambda_face, self.lambda_lip):
            if any(v < 0 for _, v in knots):
                raise ValueError("lambda schedule values must be >= 0")


def schedule_lookup(s: int, sched: TrainSchedule) -> tuple[float, float, float, float]:
    """(audio drop prob, lambda_face, lambda_lip, lr) at training step s."""
    if not 0 <= s < sched.total_steps:
        raise ValueError(f"step {s} outside [0, {sched.total_steps})")
    frac = s / sched.total_steps
    cum = 0.0
    audio_p = sched.audio_mask_phases[-1][1]
    for width, prob in sched.audio_mask_phases:
        cum += width
        if frac < cum - 1e-12:
            audio_p = prob
            break
    lam_f = _interp_knots(frac, sched.lambda_face)
    lam_l = _interp_knots(frac, sched.lambda_lip)
    return audio_p, lam_f, lam_l, sched.lr


def _interp_knots(x: float, knots) -> float:
    xs = np.array([k[0] for k in knots], dtype=np.float64)
    ys = np.array([k[1] for k in knots], dtype=np.float64)
    return float(np.interp(x, xs, ys))


def weight_map(face: np.ndarray, lip: np.ndarray, lam_f: float, lam_l: float) -> np.ndarray:
    """Continuous supervision weights: 1 + lam_f*face + lam_l*lip."""
    if lam_f < 0 or lam_l < 0:
        raise ValueError("region weights must be >= 0")
    face = np.asarray(face, dtype=np.float64)
    lip = np.asarray(lip, dtype=np.float64)
    if face.shape != lip.shape:
        raise ValueError("face/lip masks must share a shape")
    return (1.0 + lam_f * face + lam_l * lip).astype(np.float32)


def weighted_rec_loss(z_gt, z_pred, weights):
    """Mean over all elements of the squared weighted residual.

    Weights broadcast across the channel axis when given one dim short.
    Works on numpy arrays and torch tensors alike.
    """
    is_torch = isinstance(z_gt, torch.Tensor)
    if z_gt.shape != z_pred.shape:
        raise ValueError("target/prediction shapes must match")
    w = weights
    if w.ndim == z_gt.ndim - 1:
        w = w[..., None]
    diff = (z_gt - z_pred) * w
    if is_torch:
        return torch.mean(diff**2)
    return float(np.mean(np.asarray(diff, dtype=np.float64) ** 2))


@dataclass
class PreparedScene:
    """Per-scene tensors cached for the training loop."""

    z_gt: torch.Tensor  # (T, H', W', D)
    face_pool: torch.Tensor  # (T, H', W')
    lip_pool: torch.Tensor
    audio_feats: torch.Tensor  # (T, D_a)
    text_tokens: torch.Tensor
    image_embed: torch.Tensor
    latent_diff: torch.Tensor  # (D,)
    has_audio: bool


class InterpolationPipeline:
    """Codec + conditioning + denoiser, with train and sample entry points."""

    def __init__(self, model_cfg: BlockConfig, codec: LatentCodec,
                 cond: ConditioningStack | None = None, seed: int = 0):
        self.model_cfg = model_cfg
        self.codec = codec
        self.cond = cond or ConditioningStack(
            model_cfg.d_cond, codec.latent_dim, adapter_seed=seed
        )
        self.denoiser = Denoiser(model_cfg, codec.latent_dim, seed=seed)
        self._frozen_checksum = self._frozen_sum()

    # -- plumbing ---------------------------------------------------------

    def trainable_parameters(self):
        return list(self.denoiser.parameters()) + list(self.cond.adapter.parameters())

    def _frozen_sum(self) -> float:
        total = float(np.sum(self.cond.text.table, dtype=np.float64))
        with torch.no_grad():
            for p in self.cond.image.parameters():
                total += float(p.double().sum())
        for arr in self.codec.state_dict().values():
            total += float(np.sum(arr, dtype=np.float64))
        return total

    def assert_frozen_intact(self) -> None:
        assert self._frozen_sum() == self._frozen_checksum, (
            "frozen parameters were mutated during training"
        )

    def prepare_scene(self, scene: SceneData, use_text=True, use_audio=True,
                      use_image=True) -> PreparedScene:
        z = self.codec.encode(scene.clip).z
        _, face_pool = downsample_mask(
            scene.masks.face, scene.masks.face.astype(np.float64), self.codec.spatial_stride
        )
        _, lip_pool = downsample_mask(
            scene.masks.lip, scene.masks.lip.astype(np.float64), self.codec.spatial_stride
        )
        caption = scene.caption if use_text else ""
        text = self.cond.text(caption)
        image = (
            self.cond.embed_reference_image(scene.clip.frames[0])
            if use_image
            else np.zeros((16, self.cond.d_cond), dtype=np.float32)
        )
        diff = self.cond.latent_diff(z[0], z[-1])
        t_frames = scene.clip.n_frames
        if use_audio:
            feats = extract_audio_features(scene.audio, t_frames, self.cond.n_bands)
        else:
            feats = np.zeros((t_frames, self.cond.n_bands + 1), dtype=np.float32)
        return PreparedScene(
            z_gt=torch.from_numpy(z),
            face_pool=torch.from_numpy(face_pool.astype(np.float32)),
            lip_pool=torch.from_numpy(lip_pool.astype(np.float32)),
            audio_feats=torch.from_numpy(feats),
            text_tokens=torch.from_numpy(text),
            image_embed=torch.from_numpy(image),
            latent_diff=torch.from_numpy(diff),
            has_audio=use_audio,
        )

    def latent_mask(self, n_frames: int, height: int, width: int) -> torch.Tensor:
        start = np.zeros((height, width, self.codec.channels), dtype=np.float32)
        _, pixel_mask = assemble_boundary_sequence(start, start, n_frames)
        return torch.from_numpy(
            latent_interp_mask(pixel_mask, self.codec.spatial_stride).m.astype(np.float32)
        )

    # -- training ---------------------------------------------------------

    def training_step(self, batch: list[PreparedScene], s: int, sched: TrainSchedule,
                      optimizer: torch.optim.Optimizer,
                      gen: torch.Generator) -> dict:
        audio_p, lam_f, lam_l, lr = schedule_lookup(s, sched)
        for group in optimizer.param_groups:
            group["lr"] = lr
        z_gt = torch.stack([p.z_gt for p in batch])
        b, tt, h, w, d = z_gt.shape
        mask = self.latent_mask(tt, h * self.codec.spatial_stride,
                                w * self.codec.spatial_stride)
        w_lat = 1.0 + lam_f * torch.stack([p.face_pool for p in batch]) \
            + lam_l * torch.stack([p.lip_pool for p in batch])

        t = torch.rand(b, generator=gen)
        eps = torch.randn(z_gt.shape, generator=gen)
        tb = t[:, None, None, None, None]
        z_noisy = (1.0 - tb) * z_gt + tb * eps
        z_noisy[:, 0] = z_gt[:, 0]
        z_noisy[:, -1] = z_gt[:, -1]

        has_audio = torch.tensor([p.has_audio for p in batch])
        dropped = (torch.rand(b, generator=gen) < audio_p) | ~has_audio
        adapted = self.cond.adapt_audio(
            torch.stack([p.audio_feats for p in batch]),
            torch.stack([p.latent_diff for p in batch]),
            dropped,
        )
        v_hat = self.denoiser(
            z_noisy, t, mask,
            torch.stack([p.text_tokens for p in batch]),
            torch.stack([p.image_embed for p in batch]),
            adapted,
        )
        v_target = eps - z_gt
        resid = (v_hat[:, 1:-1] - v_target[:, 1:-1]) * w_lat[:, 1:-1][..., None]
        loss = torch.mean(resid**2)
        if not torch.isfinite(loss):
            raise RuntimeError(f"NaN/Inf loss at training step {s}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        return {
            "s": s,
            "loss": float(loss.detach()),
            "audio_p": audio_p,
            "lambda_f": lam_f,
            "lambda_l": lam_l,
            "drop_rate": float(dropped.float().mean()),
        }

    # -- sampling ---------------------------------------------------------

    def sample(self, start: np.ndarray, end: np.ndarray, caption: str = "",
               audio=None, n_frames: int = 17, steps: int = 50, seed: int = 0,
               fps: float = 16.0, use_text: bool = True, use_audio: bool = True,
               use_image: bool = True) -> Clip:
        if steps < 1:
            raise ValueError("sampler needs at least 1 step")
        if n_frames < 2:
            raise ValueError("need at least 2 frames")
        start = np.asarray(start, dtype=np.float32)
        end = np.asarray(end, dtype=np.float32)
        z_start = self.codec.encode_frame(start)
        z_end = self.codec.encode_frame(end)
        bundle = self.cond.build_bundle(
            caption, audio, n_frames, start, z_start, z_end,
            use_text=use_text, use_audio=use_audio, use_image=use_image,
        )
        mask = self.latent_mask(n_frames, start.shape[0], start.shape[1])
        zs = torch.from_numpy(z_start)
        ze = torch.from_numpy(z_end)
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn((n_frames,) + z_start.shape, generator=gen)
        times = torch.linspace(1.0, 0.0, steps + 1)
        assert times[0] == 1.0 and times[-1] == 0.0

        text = torch.from_numpy(bundle.text_tokens)[None]
        image = torch.from_numpy(bundle.image_embed)[None]
        adapted = torch.from_numpy(bundle.audio_adapted)[None]
        with torch.no_grad():
            for k in range(steps):
                z[0] = zs
                z[-1] = ze
                assert torch.equal(z[0], zs) and torch.equal(z[-1], ze), (
                    "boundary pinning violated inside the sampler loop"
                )
                if n_frames > 2:
                    v_hat = self.denoiser(
                        z[None], times[k : k + 1], mask[None], text, image, adapted
                    )[0]
                    dt = float(times[k] - times[k + 1])
                    z[1:-1] = z[1:-1] - dt * v_hat[1:-1]
        z[0] = zs
        z[-1] = ze
        frames = self.codec.decode(_latent_seq(z.numpy(), self.codec))
        frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
        if self.codec.mode == "identity":
            frames[0] = start
            frames[-1] = end
        return Clip(frames, fps)

    # -- persistence ------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None) -> None:
        records: dict[str, np.ndarray] = {}
        for name, p in self.denoiser.state_dict().items():
            records[f"denoiser/{name}"] = p.detach().numpy().astype(np.float32)
        for name, p in self.cond.adapter.state_dict().items():
            records[f"adapter/{name}"] = p.detach().numpy().astype(np.float32)
        for name, arr in self.codec.state_dict().items():
            records[f"codec/{name}"] = arr
        meta = {
            "kind": "bbf-checkpoint",
            "block_config": asdict(self.model_cfg),
            "codec": {
                "mode": self.codec.mode,
                "spatial_stride": self.codec.spatial_stride,
                "temporal_stride": self.codec.temporal_stride,
                "channels": self.codec.channels,
            },
            "cond": {
                "d_cond": self.cond.d_cond,
                "n_text_tokens": self.cond.text.n_tokens,
                "n_bands": self.cond.n_bands,
            },
        }
        if extra_meta:
            meta.update(extra_meta)
        container.write_archive(path, records, meta)

    @classmethod
    def load(cls, path) -> "InterpolationPipeline":
        records, meta = container.read_archive(path)
        if meta.get("kind") != "bbf-checkpoint":
            raise container.FormatError(f"{path} is not a checkpoint archive")
        cfg = BlockConfig(**meta["block_config"])
        codec = LatentCodec(**meta["codec"])
        cond = ConditioningStack(
            meta["cond"]["d_cond"], codec.latent_dim,
            n_text_tokens=meta["cond"]["n_text_tokens"],
            n_bands=meta["cond"]["n_bands"],
        )
        pipe = cls(cfg, codec, cond)
        den_state = {
            k[len("denoiser/"):]: torch.from_numpy(v.copy())
            for k, v in records.items() if k.startswith("denoiser/")
        }
        pipe.denoiser.load_state_dict(den_state)
        ada_state = {
            k[len("adapter/"):]: torch.from_numpy(v.copy())
            for k, v in records.items() if k.startswith("adapter/")
        }
        pipe.cond.adapter.load_state_dict(ada_state)
        codec_state = {
            k[len("codec/"):]: v for k, v in records.items() if k.startswith("codec/")
        }
        if codec_state:
            codec.load_state_dict(codec_state)
        pipe._frozen_checksum = pipe._frozen_sum()
        return pipe


def _latent_seq(z: np.ndarray, codec: LatentCodec):
    from .latent_codec import LatentSeq

    return LatentSeq(z, codec.spatial_stride, codec.temporal_stride)


def train(pipeline: InterpolationPipeline, scenes: list[SceneData],
          sched: TrainSchedule, seed: int = 0, conditions=("text", "image", "audio"),
          ckpt_dir=None, log_fn=None) -> list[dict]:
    """Run the full curriculum; returns the per-step log records."""
    use_text = "text" in conditions
    use_audio = "audio" in conditions
    use_image = "image" in conditions
    prepared = [
        pipeline.prepare_scene(sc, use_text=use_text, use_audio=use_audio,
                               use_image=use_image)
        for sc in scenes
    ]
    optimizer = torch.optim.AdamW(
        pipeline.trainable_parameters(),
        lr=sched.lr,
        betas=(sched.beta1, sched.beta2),
        weight_decay=sched.weight_decay,
    )
    gen = torch.Generator().manual_seed(seed)
    if ckpt_dir is not None:
        ckpt_dir = Path(ckpt_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    history = []
    for s in range(sched.total_steps):
        idx = torch.randint(0, len(prepared), (sched.batch_size,), generator=gen)
        batch = [prepared[i] for i in idx.tolist()]
        record = pipeline.training_step(batch, s, sched, optimizer, gen)
        history.append(record)
        if log_fn is not None:
            log_fn(record)
        done = s + 1
        if ckpt_dir is not None and done % sched.checkpoint_every == 0 and done < sched.total_steps:
            pipeline.assert_frozen_intact()
            pipeline.save(ckpt_dir / f"checkpoint_step{done:06d}.bbft")
    pipeline.assert_frozen_intact()
    if ckpt_dir is not None:
        pipeline.save(ckpt_dir / "checkpoint_final.bbft")
    return history


def smoothed_loss(history: list[dict], window: int = 100) -> tuple[float, float]:
    """(initial, final) loss means over the first and last `window` steps."""
    losses = [h["loss"] for h in history]
    w = min(window, len(losses))
    return float(np.mean(losses[:w])), float(np.mean(losses[-w:]))
