"""Rendering loss: (1 - lambda) * MAE + lambda * D-SSIM, with analytic pixel gradient.

The optional binary mask restricts both terms to supervised pixels: MAE
averages over mask-positive samples only, and the SSIM average keeps only
windows that contain no masked pixel, so masked pixels receive exactly zero
loss and zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .metrics import SSIM_C1, SSIM_C2, gaussian_window, windowed_moments


@dataclass
class LossConfig:
    lambda_dssim: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lambda_dssim}")


def _adjoint_window_sum(field: np.ndarray, window: np.ndarray, out_shape) -> np.ndarray:
    """Adjoint of valid-mode windowed weighting: scatter window fields back to pixels.

    Equivalent to zero-padding the per-window field by k-1 on each side and
    correlating with the (symmetric) window.
    """
    k = window.shape[0]
    padded = np.zeros((field.shape[0] + 2 * (k - 1), field.shape[1] + 2 * (k - 1)))
    padded[k - 1: k - 1 + field.shape[0], k - 1: k - 1 + field.shape[1]] = field
    win = sliding_window_view(padded, (k, k))
    out = np.einsum("ijkl,kl->ij", win, window)
    assert out.shape == out_shape
    return out


def _ssim_channel_grad(x, y, window, valid):
    """Mean SSIM over valid windows of one channel plus its gradient w.r.t. x.

    valid is a boolean plane over window positions (None = all valid).
    Returns (ssim_sum, n_windows, grad_unscaled) where grad_unscaled is the
    gradient of the *sum* of per-window SSIM values.
    """
    m1, m2, m11, m22, m12 = windowed_moments(x, y, window)
    vx = m11 - m1 * m1
    vy = m22 - m2 * m2
    cxy = m12 - m1 * m2
    a1 = 2.0 * m1 * m2 + SSIM_C1
    a2 = 2.0 * cxy + SSIM_C2
    b1 = m1 * m1 + m2 * m2 + SSIM_C1
    b2 = vx + vy + SSIM_C2
    s = (a1 * a2) / (b1 * b2)

    # dS/d(moment) fields; moments depend on x through the window weights.
    f1 = 2.0 * m2 * (a2 - a1) / (b1 * b2) - 2.0 * m1 * s * (1.0 / b1 - 1.0 / b2)
    f11 = -s / b2
    f12 = 2.0 * a1 / (b1 * b2)
    if valid is not None:
        s = np.where(valid, s, 0.0)
        f1 = np.where(valid, f1, 0.0)
        f11 = np.where(valid, f11, 0.0)
        f12 = np.where(valid, f12, 0.0)
        n_win = int(valid.sum())
    else:
        n_win = s.size

    grad = (
        _adjoint_window_sum(f1, window, x.shape)
        + 2.0 * x * _adjoint_window_sum(f11, window, x.shape)
        + y * _adjoint_window_sum(f12, window, x.shape)
    )
    return float(s.sum()), n_win, grad


def loss_3dgs(rendered, gt, cfg: LossConfig, mask: np.ndarray | None = None):
    """Combined MAE / D-SSIM loss and its gradient w.r.t. the rendered pixels.

    Returns (loss, grad) with grad shaped like the rendered data. When every
    SSIM window touches a masked pixel the D-SSIM term contributes zero.
    """
    x = np.asarray(rendered, np.float64) if isinstance(rendered, np.ndarray) else rendered.data
    y = np.asarray(gt, np.float64) if isinstance(gt, np.ndarray) else gt.data
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: rendered {x.shape} vs gt {y.shape}")
    h, w, c = x.shape
    lam = cfg.lambda_dssim
    grad = np.zeros_like(x)

    sel = None
    if mask is not None:
        sel = np.asarray(mask) > 0
        if sel.shape != (h, w):
            raise ValueError(f"mask shape {sel.shape} does not match image {(h, w)}")

    # MAE term over supervised samples.
    diff = x - y
    if sel is None:
        n_mae = diff.size
        mae = float(np.mean(np.abs(diff)))
        grad += (1.0 - lam) * np.sign(diff) / n_mae
    else:
        n_mae = int(sel.sum()) * c
        if n_mae == 0:
            return 0.0, grad
        sel3 = sel[:, :, None]
        mae = float(np.sum(np.abs(diff) * sel3) / n_mae)
        grad += (1.0 - lam) * np.sign(diff) * sel3 / n_mae

    # D-SSIM term over windows free of masked pixels.
    dssim = 0.0
    if lam > 0.0 and h >= cfg.ssim_window and w >= cfg.ssim_window:
        window = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
        valid = None
        if sel is not None:
            counts = sliding_window_view(sel.astype(np.float64),
                                         (cfg.ssim_window, cfg.ssim_window)).sum(axis=(2, 3))
            valid = counts >= cfg.ssim_window ** 2 - 0.5
            if not valid.any():
                valid = None
                window = None
        if window is not None:
            s_sum, total = 0.0, 0
            grads = []
            for ch in range(c):
                ssum, n_win, g = _ssim_channel_grad(x[:, :, ch], y[:, :, ch], window, valid)
                s_sum += ssum
                total += n_win
                grads.append(g)
            ssim_mean = s_sum / total
            dssim = (1.0 - ssim_mean) / 2.0
            for ch in range(c):
                grad[:, :, ch] += lam * (-0.5) * grads[ch] / total

    loss = (1.0 - lam) * mae + lam * dssim
    return loss, grad
