"""Image-quality metrics: PSNR and mean windowed SSIM.

SSIM uses an 11x11 Gaussian window (sigma 1.5) over valid window positions
only (every window lies fully inside the image), stability constants
C1 = 0.01^2 and C2 = 0.03^2 for [0, 1] dynamic range, averaged over
channels. PSNR is computed over the full frame by default; an optional
mask restricts it to selected pixels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP_DB = 99.0


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized separable Gaussian window."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def _as_planes(img) -> np.ndarray:
    if isinstance(img, np.ndarray):
        data = np.asarray(img, dtype=np.float64)
    else:
        data = img.data
    if data.ndim == 2:
        data = data[:, :, None]
    return data


def psnr(a, b, mask: np.ndarray | None = None) -> float:
    """10*log10(1 / MSE) in dB, capped at 99 dB for identical inputs."""
    x, y = _as_planes(a), _as_planes(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    sq = (x - y) ** 2
    if mask is not None:
        sel = np.asarray(mask) > 0
        if sel.shape != x.shape[:2]:
            raise ValueError(f"mask shape {sel.shape} does not match image {x.shape[:2]}")
        if not sel.any():
            raise ValueError("mask selects no pixels")
        mse = float(np.mean(sq[sel]))
    else:
        mse = float(np.mean(sq))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def windowed_moments(x: np.ndarray, y: np.ndarray, window: np.ndarray):
    """Weighted window moments (m1, m2, m11, m22, m12) at valid positions."""
    k = window.shape[0]
    wx = sliding_window_view(x, (k, k))
    wy = sliding_window_view(y, (k, k))
    m1 = np.einsum("ijkl,kl->ij", wx, window)
    m2 = np.einsum("ijkl,kl->ij", wy, window)
    m11 = np.einsum("ijkl,kl->ij", wx * wx, window)
    m22 = np.einsum("ijkl,kl->ij", wy * wy, window)
    m12 = np.einsum("ijkl,kl->ij", wx * wy, window)
    return m1, m2, m11, m22, m12


def ssim_map(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Per-window SSIM values for one channel plane.

    Term ordering is chosen so ssim(x, x) is exactly 1.0 in floating point:
    the numerator and denominator become bit-identical when x == y.
    """
    m1, m2, m11, m22, m12 = windowed_moments(x, y, window)
    vx = m11 - m1 * m1
    vy = m22 - m2 * m2
    cxy = m12 - m1 * m2
    a1 = 2.0 * m1 * m2 + SSIM_C1
    a2 = 2.0 * cxy + SSIM_C2
    b1 = m1 * m1 + m2 * m2 + SSIM_C1
    b2 = vx + vy + SSIM_C2
    return (a1 * a2) / (b1 * b2)


def ssim(a, b, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean windowed SSIM over valid window positions, averaged over channels."""
    x, y = _as_planes(a), _as_planes(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.shape[0] < window_size or x.shape[1] < window_size:
        raise ValueError(
            f"image {x.shape[0]}x{x.shape[1]} smaller than SSIM window {window_size}"
        )
    window = gaussian_window(window_size, sigma)
    vals = [np.mean(ssim_map(x[:, :, c], y[:, :, c], window)) for c in range(x.shape[2])]
    return float(np.mean(vals))


@dataclass
class MetricReport:
    """Aggregate PSNR/SSIM plus the per-view breakdown behind the means."""

    psnr: float
    ssim: float
    per_view: list[tuple[int, float, float]] = field(default_factory=list)

    @classmethod
    def from_view_pairs(cls, pairs) -> "MetricReport":
        rows = [(idx, psnr(got, want), ssim(got, want)) for idx, (got, want) in enumerate(pairs)]
        return cls(
            psnr=float(np.mean([r[1] for r in rows])),
            ssim=float(np.mean([r[2] for r in rows])),
            per_view=rows,
        )


def write_metrics_csv(report: MetricReport, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view_id", "psnr", "ssim"])
        for view_id, p, s in report.per_view:
            writer.writerow([view_id, repr(p), repr(s)])


def read_metrics_csv(path) -> MetricReport:
    rows = []
    with open(Path(path), newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["view_id"]), float(rec["psnr"]), float(rec["ssim"])))
    return MetricReport(
        psnr=float(np.mean([r[1] for r in rows])),
        ssim=float(np.mean([r[2] for r in rows])),
        per_view=rows,
    )
