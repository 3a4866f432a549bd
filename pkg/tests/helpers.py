"""Independent oracles used by the tests.

These deliberately re-derive results through a different route than the
library code: descent methods instead of the banded solve, explicit loops
instead of vectorized metrics.
"""

import math

import numpy as np

from bbf.flow_baseline import Trajectory, trajectory_energy, trajectory_energy_grad


def gd_trajectory_oracle(p0, p_end, v_star, smoothness, n_steps,
                         lr=None, iters=20000):
    """Plain (Nesterov-accelerated) gradient descent on the interior points."""
    p0 = np.asarray(p0, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    if lr is None:
        lr = 0.9 / (8.0 + 32.0 * smoothness)  # 1/L for the quadratic
    x = np.zeros((n_steps - 1, p0.shape[0]))
    y = x.copy()
    t_prev = 1.0
    for _ in range(iters):
        traj = Trajectory(np.vstack([p0[None], y, p_end[None]]), v_star, smoothness)
        g = trajectory_energy_grad(traj)[1:-1]
        x_new = y - lr * g
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t_prev**2))
        y = x_new + ((t_prev - 1) / t_new) * (x_new - x)
        x, t_prev = x_new, t_new
    return Trajectory(np.vstack([p0[None], x, p_end[None]]), v_star, smoothness)


def cg_trajectory_oracle(p0, p_end, v_star, smoothness, n_steps):
    """Conjugate-gradient descent using only energy-gradient evaluations.

    Exact on this quadratic within the interior dimension count.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    dims = p0.shape[0]
    shape = (n_steps - 1, dims)

    def grad(flat):
        pts = np.vstack([p0[None], flat.reshape(shape), p_end[None]])
        return trajectory_energy_grad(Trajectory(pts, v_star, smoothness))[1:-1].ravel()

    x = np.zeros(shape).ravel()
    g = grad(x)
    d = -g
    for _ in range(x.size + 5):
        if np.linalg.norm(g) < 1e-13:
            break
        a_d = grad(x + d) - grad(x)  # exact A @ d for a quadratic
        denom = float(d @ a_d)
        if denom <= 0:
            break
        alpha = float(g @ g) / denom
        x = x + alpha * d
        g_new = g + alpha * a_d
        beta = float(g_new @ g_new) / float(g @ g)
        d = -g_new + beta * d
        g = g_new
    pts = np.vstack([p0[None], x.reshape(shape), p_end[None]])
    return Trajectory(pts, v_star, smoothness)


def oracle_energy(p0, p_end, v_star, smoothness, n_steps) -> float:
    return trajectory_energy(cg_trajectory_oracle(p0, p_end, v_star, smoothness, n_steps))


def randomize_parameters(module, seed: int, scale: float = 0.15) -> None:
    """Overwrite every parameter with seeded Gaussian noise.

    Used to probe structural properties away from the carefully
    zero-initialized starting point.
    """
    import torch

    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)


def naive_psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Loop-based mean per-frame PSNR, capped at 99 dB."""
    vals = []
    for fa, fb in zip(a, b):
        err = 0.0
        n = 0
        for y in range(fa.shape[0]):
            for x in range(fa.shape[1]):
                for c in range(fa.shape[2]):
                    err += (float(fa[y, x, c]) - float(fb[y, x, c])) ** 2
                    n += 1
        mse = err / n
        vals.append(99.0 if mse == 0 else min(10 * math.log10(1 / mse), 99.0))
    return float(np.mean(vals))


def naive_ssim(a: np.ndarray, b: np.ndarray, window: int = 8,
               c1: float = 0.01**2, c2: float = 0.03**2) -> float:
    """Loop-based SSIM with sliding uniform windows."""
    frame_vals = []
    for fa, fb in zip(a, b):
        chan_vals = []
        for c in range(fa.shape[2]):
            vals = []
            for y in range(fa.shape[0] - window + 1):
                for x in range(fa.shape[1] - window + 1):
                    wa = fa[y : y + window, x : x + window, c].astype(np.float64)
                    wb = fb[y : y + window, x : x + window, c].astype(np.float64)
                    mu_a, mu_b = wa.mean(), wb.mean()
                    var_a = (wa**2).mean() - mu_a**2
                    var_b = (wb**2).mean() - mu_b**2
                    cov = (wa * wb).mean() - mu_a * mu_b
                    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
                    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
                    vals.append(num / den)
            chan_vals.append(np.mean(vals))
        frame_vals.append(np.mean(chan_vals))
    return float(np.mean(frame_vals))
