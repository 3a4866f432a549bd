"""Desk-scale metrics and the ablation harness.

PSNR and SSIM follow the standard definitions on the [0, 1] range (SSIM
with sliding 8x8 uniform windows). Lip sync is proxied by the Pearson
correlation between the rendered lip aperture (vertical extent of dark
pixels inside the lip mask) and the audio amplitude envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .synthdata import AudioTrack, Clip, RegionMasks

PSNR_CAP_DB = 99.0
APERTURE_THRESHOLD = 0.2
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class UndefinedMetricError(Exception):
    """Raised when a metric has no defined value for the given inputs."""


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    sync_r: float
    psnr_series: list = field(default_factory=list)
    ssim_series: list = field(default_factory=list)
    aperture_series: list = field(default_factory=list)


def _frames_of(x) -> np.ndarray:
    arr = x.frames if isinstance(x, Clip) else np.asarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError("expected a clip of shape (T, H, W, C)")
    return arr


def frame_psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def psnr(a, b) -> float:
    """Mean per-frame PSNR in dB on the [0, 1] range, capped at 99."""
    fa, fb = _frames_of(a), _frames_of(b)
    if fa.shape != fb.shape:
        raise ValueError("clips must share a shape")
    return float(np.mean([frame_psnr(x, y) for x, y in zip(fa, fb)]))


def psnr_masked(a, b, valid: np.ndarray) -> float:
    """PSNR restricted to pixels where `valid` is true ((H, W) or (T, H, W))."""
    fa, fb = _frames_of(a), _frames_of(b)
    if fa.shape != fb.shape:
        raise ValueError("clips must share a shape")
    valid = np.asarray(valid, dtype=bool)
    if valid.ndim == 2:
        valid = np.broadcast_to(valid, fa.shape[:3])
    diff = (fa.astype(np.float64) - fb.astype(np.float64)) ** 2
    sel = diff[valid]
    if sel.size == 0:
        raise UndefinedMetricError("no valid pixels to compare")
    mse = float(sel.mean())
    return PSNR_CAP_DB if mse == 0 else min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _ssim_frame(a: np.ndarray, b: np.ndarray, window: int = 8) -> float:
    vals = []
    for c in range(a.shape[-1]):
        wa = sliding_window_view(a[..., c].astype(np.float64), (window, window))
        wb = sliding_window_view(b[..., c].astype(np.float64), (window, window))
        mu_a = wa.mean(axis=(-1, -2))
        mu_b = wb.mean(axis=(-1, -2))
        var_a = (wa**2).mean(axis=(-1, -2)) - mu_a**2
        var_b = (wb**2).mean(axis=(-1, -2)) - mu_b**2
        cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
        num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
        vals.append(float((num / den).mean()))
    return float(np.mean(vals))


def ssim(a, b, window: int = 8) -> float:
    """Mean SSIM over frames, 8x8 uniform windows, constants for [0, 1] data."""
    fa, fb = _frames_of(a), _frames_of(b)
    if fa.shape != fb.shape:
        raise ValueError("clips must share a shape")
    if fa.shape[1] < window or fa.shape[2] < window:
        raise ValueError("frames smaller than the SSIM window")
    return float(np.mean([_ssim_frame(x, y, window) for x, y in zip(fa, fb)]))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; 0.0 by convention when either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("series must have equal length")
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))


def lip_aperture(clip, masks: RegionMasks, threshold: float = APERTURE_THRESHOLD) -> np.ndarray:
    """Per-frame vertical extent of dark (mouth-interior) pixels in the lip mask."""
    frames = _frames_of(clip)
    lip = masks.lip.astype(bool)
    if lip.shape != frames.shape[:3]:
        raise ValueError("lip mask does not match the clip")
    if not lip.any():
        raise UndefinedMetricError("empty lip mask")
    gray = frames.mean(axis=-1)
    extents = np.zeros(frames.shape[0], dtype=np.float64)
    for t in range(frames.shape[0]):
        dark = (gray[t] < threshold) & lip[t]
        rows = np.nonzero(dark.any(axis=1))[0]
        extents[t] = (rows.max() - rows.min() + 1) if rows.size else 0.0
    return extents


def sync_proxy(clip, masks: RegionMasks, audio: AudioTrack,
               threshold: float = APERTURE_THRESHOLD) -> float:
    """Correlation between lip aperture and the audio envelope."""
    frames = _frames_of(clip)
    if len(audio.envelope) != frames.shape[0]:
        raise ValueError("envelope length does not match the clip")
    aperture = lip_aperture(clip, masks, threshold)
    return pearson(aperture, np.asarray(audio.envelope, dtype=np.float64))


def evaluate_clip(pred, gt, masks: RegionMasks, audio: AudioTrack) -> MetricReport:
    fp, fg = _frames_of(pred), _frames_of(gt)
    psnr_series = [frame_psnr(x, y) for x, y in zip(fp, fg)]
    ssim_series = [_ssim_frame(x, y) for x, y in zip(fp, fg)]
    aperture = lip_aperture(pred, masks)
    return MetricReport(
        psnr_db=float(np.mean(psnr_series)),
        ssim=float(np.mean(ssim_series)),
        sync_r=pearson(aperture, np.asarray(audio.envelope, dtype=np.float64)),
        psnr_series=psnr_series,
        ssim_series=ssim_series,
        aperture_series=aperture.tolist(),
    )


def run_ablation(checkpoints: dict[str, object], scenes, sampler_steps: int = 50,
                 seed: int = 0) -> dict:
    """Evaluate trained variants on a fixed held-out scene set.

    `checkpoints` maps variant name -> checkpoint path (or None for a
    missing run, which is listed as absent rather than failing). Each
    variant is sampled on every scene with the variant's own conditioning
    and scored against the ground truth.
    """
    from .diffusion import InterpolationPipeline

    rows = {}
    for name, ckpt in checkpoints.items():
        if ckpt is None:
            rows[name] = {"status": "absent"}
            continue
        pipe = InterpolationPipeline.load(ckpt)
        _, meta = _load_meta(ckpt)
        conditions = tuple(meta.get("conditions", ("text", "image", "audio")))
        reports = []
        for i, sc in enumerate(scenes):
            clip = pipe.sample(
                sc.clip.frames[0], sc.clip.frames[-1], caption=sc.caption,
                audio=sc.audio, n_frames=sc.clip.n_frames, steps=sampler_steps,
                seed=seed + i, fps=sc.clip.fps,
                use_text="text" in conditions,
                use_audio="audio" in conditions,
                use_image="image" in conditions,
            )
            reports.append(evaluate_clip(clip, sc.clip, sc.masks, sc.audio))
        rows[name] = {
            "status": "ok",
            "conditions": list(conditions),
            "psnr_db": float(np.mean([r.psnr_db for r in reports])),
            "ssim": float(np.mean([r.ssim for r in reports])),
            "sync_r": float(np.mean([r.sync_r for r in reports])),
        }
    present = [n for n, r in rows.items() if r.get("status") == "ok"]
    orderings = {}
    for i, a in enumerate(present):
        for b_name in present[i + 1:]:
            for metric in ("psnr_db", "ssim", "sync_r"):
                orderings[f"{a}>={b_name}:{metric}"] = bool(
                    rows[a][metric] >= rows[b_name][metric]
                )
    return {"rows": rows, "orderings": orderings}


def _load_meta(path):
    from . import container

    manifest = container.read_manifest(path)
    return manifest, manifest.get("meta", {})


def format_table(rows: dict) -> str:
    """Plain-text table of ablation rows."""
    lines = [f"{'variant':<18} {'psnr_db':>9} {'ssim':>7} {'sync_r':>7}  status"]
    for name, r in rows.items():
        if r.get("status") != "ok":
            lines.append(f"{name:<18} {'-':>9} {'-':>7} {'-':>7}  absent")
        else:
            lines.append(
                f"{name:<18} {r['psnr_db']:>9.2f} {r['ssim']:>7.4f} "
                f"{r['sync_r']:>7.4f}  ok"
            )
    return "\n".join(lines)
