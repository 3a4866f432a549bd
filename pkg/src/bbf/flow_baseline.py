"""Classical flow-based interpolation and trajectory-energy analysis.

The interpolator backward-warps both boundary frames with scaled endpoint
flows and composites them with forward-backward validity weights. The
trajectory tools expose the quadratic path energy (velocity deviation from
a target plus discrete acceleration), its analytic gradient, and the exact
banded-system minimizer with clamped endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class FlowField:
    """Dense displacement field, shape (H, W, 2) ordered (dx, dy)."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 3 or self.vectors.shape[-1] != 2:
            raise ValueError("flow must have shape (H, W, 2)")
        if not np.isfinite(self.vectors).all():
            raise ValueError("flow contains NaN/Inf")

    @property
    def shape(self):
        return self.vectors.shape[:2]


@dataclass
class Trajectory:
    """Point path p_0..p_T with a target velocity and smoothness weight."""

    points: np.ndarray
    target_velocity: np.ndarray
    smoothness: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.target_velocity = np.asarray(self.target_velocity, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 points of shape (T+1, dims)")
        if self.target_velocity.shape != (self.points.shape[1],):
            raise ValueError("target velocity dimensionality mismatch")
        if self.smoothness < 0:
            raise ValueError("smoothness must be >= 0")
        if not (np.isfinite(self.points).all() and np.isfinite(self.target_velocity).all()):
            raise ValueError("trajectory contains NaN/Inf")

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1


def _as_frame(frame: np.ndarray) -> tuple[np.ndarray, bool]:
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim == 2:
        return frame[..., None], True
    if frame.ndim == 3:
        return frame, False
    raise ValueError("frame must be (H, W) or (H, W, C)")


def _bilinear(frame: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) at float coords with border clamp."""
    h, w = frame.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0).astype(np.float32)[..., None]
    fy = (ys - y0).astype(np.float32)[..., None]
    top = frame[y0, x0] * (1.0 - fx) + frame[y0, x1] * fx
    bot = frame[y1, x0] * (1.0 - fx) + frame[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def backward_warp(frame: np.ndarray, flow: FlowField) -> np.ndarray:
    """Sample `frame` at x + flow(x) with bilinear filtering, border clamped."""
    arr, squeeze = _as_frame(frame)
    if arr.shape[:2] != flow.shape:
        raise ValueError(f"frame {arr.shape[:2]} vs flow {flow.shape} size mismatch")
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    out = _bilinear(arr, xs + flow.vectors[..., 0], ys + flow.vectors[..., 1])
    return out[..., 0] if squeeze else out


def scale_flow(flow: FlowField, factor: float) -> FlowField:
    return FlowField(flow.vectors * np.float32(factor))


def _fb_validity(fwd: FlowField, bwd: FlowField, tol: float) -> np.ndarray:
    """1 where the round trip fwd(x) + bwd(x + fwd(x)) stays within tol px."""
    h, w = fwd.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    back = _bilinear(bwd.vectors, xs + fwd.vectors[..., 0], ys + fwd.vectors[..., 1])
    err = np.linalg.norm(fwd.vectors + back, axis=-1)
    return (err <= tol).astype(np.float32)


def interpolate_classical(
    i0: np.ndarray,
    i1: np.ndarray,
    f01: FlowField,
    f10: FlowField,
    alpha: float,
    consistency_tol: float = 1.0,
) -> np.ndarray:
    """Composite the two warped boundary frames at normalized time alpha.

    Candidates are weighted by (1-alpha) and alpha times their
    forward-backward validity and renormalized; where both candidates are
    invalid the plain (1-alpha, alpha) blend is used.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    a0, squeeze = _as_frame(i0)
    a1, _ = _as_frame(i1)
    if a0.shape != a1.shape or a0.shape[:2] != f01.shape or f01.shape != f10.shape:
        raise ValueError("frame/flow shapes are inconsistent")
    warp0 = _bilinear_warp_scaled(a0, f01, alpha)
    warp1 = _bilinear_warp_scaled(a1, f10, 1.0 - alpha)
    v0 = _fb_validity(f01, f10, consistency_tol)
    v1 = _fb_validity(f10, f01, consistency_tol)
    w0 = np.float32(1.0 - alpha) * v0
    w1 = np.float32(alpha) * v1
    total = w0 + w1
    blend = np.float32(1.0 - alpha) * warp0 + np.float32(alpha) * warp1
    safe = np.where(total > 0, total, 1.0)[..., None]
    weighted = (w0[..., None] * warp0 + w1[..., None] * warp1) / safe
    out = np.where((total > 0)[..., None], weighted, blend)
    return out[..., 0] if squeeze else out


def _bilinear_warp_scaled(arr: np.ndarray, flow: FlowField, factor: float) -> np.ndarray:
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    fac = np.float32(factor)
    return _bilinear(arr, xs + fac * flow.vectors[..., 0], ys + fac * flow.vectors[..., 1])


def flow_smoothness(flow: FlowField) -> float:
    """Sum of squared forward differences, zero-padded at the last row/col."""
    v = flow.vectors.astype(np.float64)
    dx = v[:, 1:, :] - v[:, :-1, :]
    dy = v[1:, :, :] - v[:-1, :, :]
    return float((dx**2).sum() + (dy**2).sum())


def reprojection_loss(gt_frames, pred_frames, flow: FlowField, lam: float) -> float:
    """Sum of squared frame errors plus lam times the flow-smoothness term."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    gt = np.asarray(gt_frames, dtype=np.float64)
    pred = np.asarray(pred_frames, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError("gt/pred frame stacks must match in shape")
    data = float(((gt - pred) ** 2).sum())
    return data + lam * flow_smoothness(flow)


def reprojection_loss_grad(gt_frames, pred_frames, flow: FlowField, lam: float):
    """Analytic gradient of `reprojection_loss` w.r.t. (pred_frames, flow)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    gt = np.asarray(gt_frames, dtype=np.float64)
    pred = np.asarray(pred_frames, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ValueError("gt/pred frame stacks must match in shape")
    grad_pred = 2.0 * (pred - gt)
    v = flow.vectors.astype(np.float64)
    dx = v[:, 1:, :] - v[:, :-1, :]
    dy = v[1:, :, :] - v[:-1, :, :]
    grad_flow = np.zeros_like(v)
    grad_flow[:, :-1, :] -= 2.0 * dx
    grad_flow[:, 1:, :] += 2.0 * dx
    grad_flow[:-1, :, :] -= 2.0 * dy
    grad_flow[1:, :, :] += 2.0 * dy
    return grad_pred, lam * grad_flow


def trajectory_energy(traj: Trajectory) -> float:
    """Velocity-deviation plus weighted discrete-acceleration energy."""
    p = traj.points
    vel = np.diff(p, axis=0) - traj.target_velocity
    eng = float((vel**2).sum())
    if p.shape[0] >= 3:
        acc = p[2:] - 2.0 * p[1:-1] + p[:-2]
        eng += traj.smoothness * float((acc**2).sum())
    return eng


def trajectory_energy_grad(traj: Trajectory) -> np.ndarray:
    """Gradient of `trajectory_energy` w.r.t. every point (endpoints included)."""
    p = traj.points
    g = np.zeros_like(p)
    r = np.diff(p, axis=0) - traj.target_velocity
    g[1:] += 2.0 * r
    g[:-1] -= 2.0 * r
    if p.shape[0] >= 3:
        acc = p[2:] - 2.0 * p[1:-1] + p[:-2]
        lam = traj.smoothness
        g[2:] += 2.0 * lam * acc
        g[1:-1] -= 4.0 * lam * acc
        g[:-2] += 2.0 * lam * acc
    return g


def minimize_trajectory(p0, p_end, v_star, smoothness: float, n_steps: int) -> Trajectory:
    """Exact interior minimizer of the trajectory energy with fixed endpoints.

    Assembles the banded first-order-condition system over the interior
    points (tridiagonal from the velocity term, pentadiagonal once the
    acceleration term is active) and solves it directly.
    """
    if n_steps < 2:
        raise ValueError("need at least 2 steps so an interior point exists")
    if smoothness < 0:
        raise ValueError("smoothness must be >= 0")
    p0 = np.asarray(p0, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    dims = p0.shape[0]
    n = n_steps - 1  # interior unknowns per coordinate
    A = np.zeros((n, n))
    rhs = np.zeros((n, dims))

    def add_term(indices, coeffs, const, weight):
        # quadratic term weight * (sum_i coeffs[i] * p[indices[i]] + const)^2,
        # accumulated into the half-gradient system rows of interior points
        for i, ci in zip(indices, coeffs):
            if not 1 <= i <= n_steps - 1:
                continue
            row = i - 1
            rhs[row] -= weight * ci * const
            for j, cj in zip(indices, coeffs):
                if 1 <= j <= n_steps - 1:
                    A[row, j - 1] += weight * ci * cj
                else:
                    rhs[row] -= weight * ci * cj * (p0 if j == 0 else p_end)

    for t in range(n_steps):  # velocity terms (p_{t+1} - p_t - v*)^2
        add_term((t, t + 1), (-1.0, 1.0), -v_star, 1.0)
    if smoothness > 0:
        for t in range(1, n_steps):  # acceleration terms
            add_term((t - 1, t, t + 1), (1.0, -2.0, 1.0), np.zeros(dims), smoothness)

    interior = np.linalg.solve(A, rhs)
    points = np.vstack([p0[None], interior, p_end[None]])
    traj = Trajectory(points, v_star, smoothness)
    resid = trajectory_energy_grad(traj)[1:-1]
    assert np.abs(resid).max() <= 1e-8, "first-order conditions not satisfied"
    return traj


def curvature_report(traj: Trajectory) -> tuple[float, float]:
    """(max, mean) norm of the discrete acceleration over interior times."""
    p = traj.points
    if p.shape[0] < 3:
        raise ValueError("need at least 3 points (2 steps) to measure curvature")
    acc = np.linalg.norm(p[2:] - 2.0 * p[1:-1] + p[:-2], axis=-1)
    return float(acc.max()), float(acc.mean())
