"""Deterministic synthetic audio-visual scenes.

Each scene is a flat background, a moving ball (the large-motion element),
and a static square "face" whose dark "mouth" rectangle opens with the
audio amplitude envelope. Rendering uses hard edges so region masks, lip
apertures, ground-truth flows and trajectories are exact by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import container

SAMPLES_PER_FRAME = 512

MOTION_KINDS = ("linear", "ballistic", "sinusoidal")

_COLOR_NAMES = {
    "red": (0.85, 0.25, 0.2),
    "orange": (0.9, 0.55, 0.15),
    "yellow": (0.9, 0.85, 0.25),
    "green": (0.25, 0.7, 0.3),
    "teal": (0.2, 0.65, 0.65),
    "blue": (0.25, 0.4, 0.85),
    "purple": (0.6, 0.3, 0.8),
    "pink": (0.9, 0.5, 0.7),
    "white": (0.92, 0.92, 0.92),
}


@dataclass
class AudioTrack:
    """Raw waveform plus a per-video-frame amplitude envelope in [0, 1]."""

    samples: np.ndarray
    sample_rate_hz: int
    envelope: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.envelope = np.asarray(self.envelope, dtype=np.float32)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.envelope.size and (self.envelope.min() < 0 or self.envelope.max() > 1):
            raise ValueError("envelope values must lie in [0, 1]")


@dataclass
class Clip:
    """A frame sequence, values in [0, 1], shape (T, H, W, C)."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4:
            raise ValueError("frames must have shape (T, H, W, C)")
        if self.frames.shape[0] < 2:
            raise ValueError("a clip needs at least 2 frames")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not np.isfinite(self.frames).all():
            raise ValueError("frames contain NaN/Inf")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class RegionMasks:
    """Binary face and lip masks, shape (T, H, W); lip is nested in face."""

    face: np.ndarray
    lip: np.ndarray

    def __post_init__(self):
        self.face = np.asarray(self.face, dtype=np.uint8)
        self.lip = np.asarray(self.lip, dtype=np.uint8)
        if self.face.shape != self.lip.shape:
            raise ValueError("face and lip masks must share a shape")
        if np.any(self.lip > self.face):
            raise ValueError("lip mask must be contained in the face mask")


@dataclass
class SceneSpec:
    """Everything needed to re-render a scene bit-identically."""

    seed: int = 0
    n_frames: int = 17
    height: int = 64
    width: int = 64
    fps: float = 16.0
    motion_kind: str = "linear"
    ball_radius: float = 5.0
    ball_start: tuple = (12.0, 14.0)  # (x, y), pixels
    ball_velocity: tuple = (2.5, 0.5)  # pixels per frame step
    ball_accel: tuple = (0.0, 0.3)  # ballistic kind only
    curve_amp: float = 7.0  # sinusoidal kind only
    curve_axis: tuple = (0.0, 1.0)  # unit direction of the sinusoidal bump
    ball_color: tuple = (0.85, 0.25, 0.2)
    face_pos: tuple = (36, 36)  # top-left (x, y)
    face_size: int = 26
    face_color: tuple = (0.78, 0.62, 0.45)
    mouth_width: int = 10
    mouth_base: int = 2
    mouth_gain: float = 10.0
    mouth_color: tuple = (0.05, 0.05, 0.05)
    background: tuple = (0.12, 0.16, 0.2)
    audio_amp: float = 0.8
    audio_tone_hz: float | None = None

    def validate(self) -> None:
        if self.n_frames < 2:
            raise ValueError("n_frames must be at least 2")
        if self.motion_kind not in MOTION_KINDS:
            raise ValueError(f"unknown motion_kind {self.motion_kind!r}")
        if self.mouth_gain < 0:
            raise ValueError("mouth_gain must be >= 0")
        fx, fy = self.face_pos
        if fx < 0 or fy < 0 or fx + self.face_size > self.width or fy + self.face_size > self.height:
            raise ValueError("face square leaves the canvas")
        mx0, my0, mw, h_max = self._mouth_box()
        if mx0 < fx or mx0 + mw > fx + self.face_size:
            raise ValueError("mouth wider than the face")
        if my0 + h_max > fy + self.face_size - 1:
            raise ValueError("open mouth leaves the face square")
        r = self.ball_radius
        if r > 0:
            for t in range(self.n_frames):
                x, y = self.ball_pos(t)
                if x - r < 0 or y - r < 0 or x + r > self.width - 1 or y + r > self.height - 1:
                    raise ValueError(f"ball leaves the canvas at frame {t}")

    def ball_pos(self, t: float) -> tuple[float, float]:
        """Analytic ball center (x, y) at frame time t (may be fractional)."""
        x0, y0 = self.ball_start
        vx, vy = self.ball_velocity
        x = x0 + vx * t
        y = y0 + vy * t
        if self.motion_kind == "ballistic":
            ax, ay = self.ball_accel
            x += 0.5 * ax * t * t
            y += 0.5 * ay * t * t
        elif self.motion_kind == "sinusoidal":
            ux, uy = self.curve_axis
            bump = self.curve_amp * math.sin(math.pi * t / (self.n_frames - 1))
            x += bump * ux
            y += bump * uy
        return x, y

    def _mouth_box(self) -> tuple[int, int, int, int]:
        """(x0, y0, width, max_height) of the mouth region."""
        fx, fy = self.face_pos
        mx0 = fx + (self.face_size - self.mouth_width) // 2
        my0 = fy + self.face_size // 2
        h_max = self.mouth_base + int(round(self.mouth_gain))
        return mx0, my0, self.mouth_width, h_max

    def mouth_height(self, envelope_value: float) -> int:
        return self.mouth_base + int(round(self.mouth_gain * float(envelope_value)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for key in ("ball_start", "ball_velocity", "ball_accel", "curve_axis",
                    "ball_color", "face_pos", "face_color", "mouth_color", "background"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SceneData:
    """One fully rendered scene with its ground truth."""

    spec: SceneSpec
    clip: Clip
    masks: RegionMasks
    audio: AudioTrack
    flows: list  # per-step FlowField, length n_frames - 1
    traj: "Trajectory"
    caption: str


def synth_audio(spec: SceneSpec) -> AudioTrack:
    """Render the scene's audio as a sum of amplitude-modulated sine bursts.

    The envelope is the per-frame mean absolute amplitude, max-normalized
    to [0, 1] (all zeros for silence).
    """
    if spec.n_frames < 2:
        raise ValueError("n_frames must be at least 2")
    n = SAMPLES_PER_FRAME * spec.n_frames
    sr = int(round(spec.fps * SAMPLES_PER_FRAME))
    t = np.arange(n, dtype=np.float64) / sr
    if spec.audio_amp <= 0:
        wave = np.zeros(n, dtype=np.float64)
    elif spec.audio_tone_hz is not None:
        wave = spec.audio_amp * np.sin(2 * math.pi * spec.audio_tone_hz * t)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xA0D10]))
        duration = spec.n_frames / spec.fps
        n_bursts = int(rng.integers(2, max(3, spec.n_frames // 4) + 1))
        wave = np.zeros(n, dtype=np.float64)
        for _ in range(n_bursts):
            center = rng.uniform(0.05 * duration, 0.95 * duration)
            width = rng.uniform(0.6, 1.6) / spec.fps
            freq = rng.uniform(120.0, 900.0)
            phase = rng.uniform(0.0, 2 * math.pi)
            amp = rng.uniform(0.5, 1.0)
            wave += amp * np.exp(-0.5 * ((t - center) / width) ** 2) * np.sin(
                2 * math.pi * freq * t + phase
            )
        peak = np.abs(wave).max()
        if peak > 0:
            wave *= spec.audio_amp / peak
    per_frame = np.abs(wave).reshape(spec.n_frames, SAMPLES_PER_FRAME).mean(axis=1)
    top = per_frame.max()
    envelope = per_frame / top if top > 0 else np.zeros_like(per_frame)
    return AudioTrack(wave.astype(np.float32), sr, envelope.astype(np.float32))


def ball_footprint(spec: SceneSpec, t: float) -> np.ndarray:
    """Boolean (H, W) mask of pixels covered by the ball at frame time t."""
    if spec.ball_radius <= 0:
        return np.zeros((spec.height, spec.width), dtype=bool)
    cx, cy = spec.ball_pos(t)
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= spec.ball_radius**2


def binary_dilate(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """8-connected dilation via shifted maxima."""
    out = mask.astype(bool).copy()
    for _ in range(iterations):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        out = grown
    return out


def boundary_ring(mask: np.ndarray, width: int = 2) -> np.ndarray:
    """Pixels within `width` of the mask boundary (inside or outside)."""
    grown = binary_dilate(mask, width)
    inner = ~binary_dilate(~mask.astype(bool), width)
    return grown & ~inner


def synth_clip(spec: SceneSpec, audio: AudioTrack):
    """Render frames, masks, per-step ground-truth flows and the trajectory.

    Returns (Clip, RegionMasks, flows, traj) where flows[t] maps frame t
    to frame t+1 (ball pixels carry the step displacement, all else zero)
    and traj holds the analytic ball centers.
    """
    from .flow_baseline import FlowField, Trajectory

    spec.validate()
    if len(audio.envelope) != spec.n_frames:
        raise ValueError(
            f"envelope has {len(audio.envelope)} entries for {spec.n_frames} frames"
        )
    T, H, W = spec.n_frames, spec.height, spec.width
    frames = np.empty((T, H, W, 3), dtype=np.float32)
    face = np.zeros((T, H, W), dtype=np.uint8)
    lip = np.zeros((T, H, W), dtype=np.uint8)

    fx, fy = spec.face_pos
    fs = spec.face_size
    mx0, my0, mw, h_max = spec._mouth_box()
    face_box = np.zeros((H, W), dtype=bool)
    face_box[fy : fy + fs, fx : fx + fs] = True
    lip_box = np.zeros((H, W), dtype=bool)
    lip_box[my0 : my0 + h_max, mx0 : mx0 + mw] = True

    positions = np.array([spec.ball_pos(t) for t in range(T)], dtype=np.float64)
    for t in range(T):
        frame = np.empty((H, W, 3), dtype=np.float32)
        frame[:] = np.asarray(spec.background, dtype=np.float32)
        frame[ball_footprint(spec, t)] = np.asarray(spec.ball_color, dtype=np.float32)
        frame[face_box] = np.asarray(spec.face_color, dtype=np.float32)
        h_t = spec.mouth_height(audio.envelope[t])
        frame[my0 : my0 + h_t, mx0 : mx0 + mw] = np.asarray(
            spec.mouth_color, dtype=np.float32
        )
        frames[t] = frame
        face[t] = face_box
        lip[t] = lip_box

    flows = []
    for t in range(T - 1):
        vectors = np.zeros((H, W, 2), dtype=np.float32)
        moving = ball_footprint(spec, t) & ~face_box
        vectors[moving] = positions[t + 1] - positions[t]
        flows.append(FlowField(vectors))

    steps = T - 1
    traj = Trajectory(
        points=positions,
        target_velocity=(positions[-1] - positions[0]) / steps,
        smoothness=1.0,
    )
    clip = Clip(frames, spec.fps)
    masks = RegionMasks(face, lip)
    return clip, masks, flows, traj


def path_tube(spec: SceneSpec, t0: int, t1: int, pad: int = 1) -> np.ndarray:
    """Union of ball footprints swept from t0 to t1, dilated by `pad`."""
    speed = max(
        float(np.hypot(*(np.subtract(spec.ball_pos(t + 1), spec.ball_pos(t)))))
        for t in range(t0, t1)
    )
    substeps = max(2, int(math.ceil(2 * speed)))
    tube = np.zeros((spec.height, spec.width), dtype=bool)
    n = (t1 - t0) * substeps
    for i in range(n + 1):
        tube |= ball_footprint(spec, t0 + (t1 - t0) * i / n)
    return binary_dilate(tube, pad)


def _disk(spec: SceneSpec, cx: float, cy: float) -> np.ndarray:
    if spec.ball_radius <= 0:
        return np.zeros((spec.height, spec.width), dtype=bool)
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= spec.ball_radius**2


def chord_tube(spec: SceneSpec, t0: int, t1: int, pad: int = 1) -> np.ndarray:
    """Footprints swept along the straight endpoint chord (not the true path)."""
    p0 = np.array(spec.ball_pos(t0))
    p1 = np.array(spec.ball_pos(t1))
    n = max(2, int(math.ceil(2 * float(np.hypot(*(p1 - p0))))))
    tube = np.zeros((spec.height, spec.width), dtype=bool)
    for s in np.linspace(0.0, 1.0, n + 1):
        c = p0 + s * (p1 - p0)
        tube |= _disk(spec, c[0], c[1])
    return binary_dilate(tube, pad)


def flow_between(spec: SceneSpec, t0: int, t1: int):
    """Ground-truth endpoint flow pair for classical interpolation.

    A two-frame matcher only sees the endpoint footprints, so the fields
    carry the endpoint displacement on the straight chord between them
    (negated on the forward field so that backward warping toward any
    intermediate time lands on the correct source pixels) and zero
    elsewhere. On curved paths this reproduces the classical failure mode:
    content is transported along the chord.
    """
    from .flow_baseline import FlowField

    if not 0 <= t0 < t1 < spec.n_frames:
        raise ValueError("need 0 <= t0 < t1 < n_frames")
    d = np.subtract(spec.ball_pos(t1), spec.ball_pos(t0))
    tube = chord_tube(spec, t0, t1)
    fwd = np.zeros((spec.height, spec.width, 2), dtype=np.float32)
    bwd = np.zeros((spec.height, spec.width, 2), dtype=np.float32)
    fwd[tube] = -d
    bwd[tube] = d
    return FlowField(fwd), FlowField(bwd)


def shift_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer-shift a boolean mask with zero fill."""
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def interpolation_sample_region(spec: SceneSpec, t0: int, t1: int, pad: int = 2) -> np.ndarray:
    """Every pixel the classical interpolator may touch between t0 and t1.

    Both warps read at most one endpoint displacement away from the chord
    tube, so the region is that tube swept by +-d, unioned with the true
    path tube (where the moving ball actually renders).
    """
    tube = chord_tube(spec, t0, t1, pad=pad)
    d = np.subtract(spec.ball_pos(t1), spec.ball_pos(t0))
    n = max(2, int(math.ceil(2 * float(np.hypot(*d)))))
    region = tube | path_tube(spec, t0, t1, pad=pad)
    for s in np.linspace(-1.0, 1.0, 2 * n + 1):
        region |= shift_mask(tube, int(round(s * d[0])), int(round(s * d[1])))
    return region


def mouth_region(spec: SceneSpec) -> np.ndarray:
    mx0, my0, mw, h_max = spec._mouth_box()
    box = np.zeros((spec.height, spec.width), dtype=bool)
    box[my0 : my0 + h_max, mx0 : mx0 + mw] = True
    return box


def warp_exclusion(spec: SceneSpec, t: int, ring: int = 2) -> np.ndarray:
    """Pixels to ignore when checking flow[t] reconstruction of frame t.

    Covers the disoccluded strip, the bilinear rim of both footprints,
    and the mouth when it is audio-driven.
    """
    fp_t = ball_footprint(spec, t)
    fp_n = ball_footprint(spec, t + 1)
    excl = (fp_n & ~fp_t) | boundary_ring(fp_t, ring) | boundary_ring(fp_n, ring)
    if spec.mouth_gain > 0:
        excl |= mouth_region(spec)
    return excl


def interp_exclusion(spec: SceneSpec, t0: int, t1: int, t: int, ring: int = 3) -> np.ndarray:
    """Pixels to ignore when scoring an interpolated frame t in (t0, t1)."""
    excl = np.zeros((spec.height, spec.width), dtype=bool)
    for s in (t0, t, t1):
        excl |= boundary_ring(ball_footprint(spec, s), ring)
    if spec.mouth_gain > 0:
        excl |= mouth_region(spec)
    return excl


def _nearest_color_name(rgb) -> str:
    best, best_d = "gray", float("inf")
    for name, ref in _COLOR_NAMES.items():
        d = sum((a - b) ** 2 for a, b in zip(rgb, ref))
        if d < best_d:
            best, best_d = name, d
    return best


def caption_for(spec: SceneSpec) -> str:
    """Deterministic template caption describing the scene layout and motion."""
    fx, fy = spec.face_pos
    cx = fx + spec.face_size / 2
    cy = fy + spec.face_size / 2
    horiz = "left" if cx < spec.width / 2 else "right"
    vert = "upper" if cy < spec.height / 2 else "lower"
    talk = "speaking" if spec.mouth_gain > 0 and spec.audio_amp > 0 else "silent"
    if spec.ball_radius <= 0:
        return f"a square face in the {vert} {horiz}, {talk}"
    color = _nearest_color_name(spec.ball_color)
    vx, vy = spec.ball_velocity
    heading = "right" if vx >= 0 else "left"
    if spec.motion_kind == "linear":
        motion = f"a {color} ball gliding {heading} in a straight line"
    elif spec.motion_kind == "ballistic":
        ax, ay = spec.ball_accel
        fall = "downward" if ay >= 0 else "upward"
        motion = f"a {color} ball arcing {fall} ballistically while moving {heading}"
    else:
        ux, uy = spec.curve_axis
        if abs(uy) >= abs(ux):
            bow = "downward" if uy * spec.curve_amp >= 0 else "upward"
        else:
            bow = "rightward" if ux * spec.curve_amp >= 0 else "leftward"
        motion = f"a {color} ball swaying {heading} along an arc bowed {bow}"
    return f"{motion}; a square face in the {vert} {horiz}, {talk}"


def make_scene(spec: SceneSpec) -> SceneData:
    audio = synth_audio(spec)
    clip, masks, flows, traj = synth_clip(spec, audio)
    return SceneData(spec, clip, masks, audio, flows, traj, caption_for(spec))


def random_scene_spec(rng: np.random.Generator, *, height: int = 64, width: int = 64,
                      n_frames: int = 17, fps: float = 16.0,
                      motion_kind: str | None = None,
                      mouth_gain: float | None = None,
                      face_margin: int | None = None,
                      face_size: int | None = None,
                      mouth_width: int | None = None,
                      speed: float = 1.0,
                      with_ball: bool = True) -> SceneSpec:
    """Draw a valid scene whose ball path stays clear of the face.

    The clearance margin covers the backward-warp reach of the classical
    baseline so that ground-truth flow warps never sample face pixels.
    `speed` scales ball velocity/curvature (talking-head style benchmarks
    use a near-static ball).
    """
    kind = motion_kind or MOTION_KINDS[int(rng.integers(len(MOTION_KINDS)))]
    gain = float(rng.uniform(6.0, 12.0)) if mouth_gain is None else mouth_gain
    small = min(height, width) < 48
    if face_size is None:
        face_size = 14 if small else int(rng.integers(18, 25))
    radius = 3.0 if small else float(rng.uniform(4.0, 6.0))
    if mouth_width is None:
        mouth_width = 8 if small else int(rng.integers(8, 13))
    base = 1 if small else 2
    gain_cap = face_size - face_size // 2 - 1 - base
    gain = min(gain, float(gain_cap))

    if not with_ball:
        radius = 0.0
    span = n_frames - 1
    margin = radius + 1.5
    for attempt in range(200):
        corner = int(rng.integers(4))
        fx = 2 if corner % 2 == 0 else width - face_size - 2
        fy = height - face_size - 2 if corner < 2 else 2
        ball_names = [n for n in _COLOR_NAMES if n != "white"]
        color = _COLOR_NAMES[ball_names[int(rng.integers(len(ball_names)))]]
        scale = max(min(height, width) / 64.0, 0.45) * speed
        vx = float(rng.uniform(0.8, 2.2)) * scale * (1 if rng.random() < 0.5 else -1)
        vy = float(rng.uniform(-0.6, 0.6)) * scale
        amp = float(rng.uniform(0.13, 0.24)) * min(height, width) * min(speed, 1.0)
        axis = (0.0, 1.0 if rng.random() < 0.5 else -1.0)
        accel = (0.0, float(rng.uniform(0.08, 0.22)) * scale
                 * (1 if rng.random() < 0.5 else -1))
        ts = np.arange(span + 1, dtype=np.float64)
        off_x = vx * ts
        off_y = vy * ts
        if kind == "ballistic":
            off_x = off_x + 0.5 * accel[0] * ts * ts
            off_y = off_y + 0.5 * accel[1] * ts * ts
        elif kind == "sinusoidal":
            bump = amp * np.sin(math.pi * ts / span)
            off_x = off_x + bump * axis[0]
            off_y = off_y + bump * axis[1]
        lo_x, hi_x = margin - off_x.min(), width - 1 - margin - off_x.max()
        lo_y, hi_y = margin - off_y.min(), height - 1 - margin - off_y.max()
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        x0 = float(rng.uniform(lo_x, hi_x))
        y0 = float(rng.uniform(lo_y, hi_y))
        spec = SceneSpec(
            seed=int(rng.integers(0, 2**31 - 1)),
            n_frames=n_frames, height=height, width=width, fps=fps,
            motion_kind=kind, ball_radius=radius,
            ball_start=(x0, y0), ball_velocity=(vx, vy),
            ball_accel=accel, curve_amp=amp, curve_axis=axis,
            ball_color=color, face_pos=(fx, fy), face_size=face_size,
            mouth_width=mouth_width, mouth_base=base, mouth_gain=gain,
        )
        try:
            spec.validate()
        except ValueError:
            continue
        if not with_ball:
            return replace(spec, ball_velocity=(0.0, 0.0), ball_accel=(0.0, 0.0),
                           curve_amp=0.0)
        pad = 2 if face_margin is None else face_margin
        region = interpolation_sample_region(spec, 0, span, pad=pad)
        face_box = np.zeros((height, width), dtype=bool)
        face_box[fy : fy + face_size, fx : fx + face_size] = True
        if not (region & face_box).any():
            return spec
    raise RuntimeError("could not place a valid scene in 200 attempts")


def generate_scenes(n: int, seed: int, *, height: int = 64, width: int = 64,
                    n_frames: int = 17, fps: float = 16.0,
                    motion_kinds=MOTION_KINDS, mouth_gain: float | None = None,
                    **scene_kwargs) -> list[SceneData]:
    """Draw n valid random scenes, deterministically from the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    kinds = tuple(motion_kinds)
    scenes = []
    for _ in range(n):
        kind = kinds[int(rng.integers(len(kinds)))]
        spec = random_scene_spec(
            rng, height=height, width=width, n_frames=n_frames, fps=fps,
            motion_kind=kind, mouth_gain=mouth_gain, **scene_kwargs,
        )
        scenes.append(make_scene(spec))
    return scenes


def write_dataset(scenes: list[SceneData], path) -> dict:
    """Serialize scenes to one archive file; returns the manifest."""
    records: dict[str, np.ndarray] = {}
    specs, captions = [], []
    for i, sc in enumerate(scenes):
        records[f"clip/{i}"] = sc.clip.frames
        records[f"face/{i}"] = sc.masks.face
        records[f"lip/{i}"] = sc.masks.lip
        records[f"audio/{i}"] = sc.audio.samples
        records[f"envelope/{i}"] = sc.audio.envelope
        records[f"flow/{i}"] = np.stack([f.vectors for f in sc.flows])
        records[f"traj/{i}"] = sc.traj.points.astype(np.float32)
        specs.append(sc.spec.to_dict())
        captions.append(sc.caption)
    meta = {
        "kind": "bbf-dataset",
        "count": len(scenes),
        "specs": specs,
        "captions": captions,
        "sample_rates": [sc.audio.sample_rate_hz for sc in scenes],
    }
    return container.write_archive(path, records, meta)


def read_dataset(path) -> list[SceneData]:
    from .flow_baseline import FlowField, Trajectory

    records, meta = container.read_archive(path)
    if meta.get("kind") != "bbf-dataset":
        raise container.FormatError(f"{path} is not a dataset archive")
    scenes = []
    for i in range(meta["count"]):
        spec = SceneSpec.from_dict(meta["specs"][i])
        clip = Clip(records[f"clip/{i}"], spec.fps)
        masks = RegionMasks(records[f"face/{i}"], records[f"lip/{i}"])
        audio = AudioTrack(
            records[f"audio/{i}"], meta["sample_rates"][i], records[f"envelope/{i}"]
        )
        flows = [FlowField(v) for v in records[f"flow/{i}"]]
        pts = records[f"traj/{i}"].astype(np.float64)
        steps = spec.n_frames - 1
        traj = Trajectory(pts, (pts[-1] - pts[0]) / steps, 1.0)
        scenes.append(SceneData(spec, clip, masks, audio, flows, traj, meta["captions"][i]))
    return scenes
