"""Single-level 2D Haar wavelet transform with lossless inversion.

The fast path uses strided pair sums/differences; an explicit banded-matrix
construction is provided as an equivalence oracle. Odd-sized inputs are
edge-replicate padded to even, the original size is recorded, and inversion
crops back, so forward-then-inverse is the identity for any input size.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import Image, load_plane_wsb, save_plane_wsb

INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class WaveletFilters:
    """Haar 2-tap analysis/synthesis filter pairs.

    The synthesis taps are the time-reversed analysis taps. Because the
    banded matrices shift by two, the reversal cancels against the band
    alignment: the orthonormal synthesis matrices coincide with the
    analysis ones, which is what makes forward-then-inverse the identity.
    """

    analysis_low: tuple[float, float] = (INV_SQRT2, INV_SQRT2)
    analysis_high: tuple[float, float] = (-INV_SQRT2, INV_SQRT2)
    synthesis_low: tuple[float, float] = (INV_SQRT2, INV_SQRT2)
    synthesis_high: tuple[float, float] = (INV_SQRT2, -INV_SQRT2)


HAAR = WaveletFilters()


@dataclass
class SubbandSet:
    """The (LL, LH, HL, HH) quadruple at half resolution.

    Subband values may leave [0, 1]; the renderable-range convention applies
    to image-domain data only. original_height/width record the pre-padding
    size needed for exact inversion.
    """

    ll: Image
    lh: Image
    hl: Image
    hh: Image
    original_height: int
    original_width: int

    def __post_init__(self):
        shapes = {b.data.shape for b in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise ValueError(f"subband shapes differ: {sorted(shapes)}")

    @property
    def bands(self) -> tuple[Image, Image, Image, Image]:
        return self.ll, self.lh, self.hl, self.hh


def _pad_to_even(data: np.ndarray) -> np.ndarray:
    pad_h = data.shape[0] % 2
    pad_w = data.shape[1] % 2
    if pad_h or pad_w:
        data = np.pad(data, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    return data


def forward_dwt(img: Image) -> SubbandSet:
    """Decompose an image into its four half-resolution Haar subbands.

    Channels are transformed independently; the alpha plane, if any, is not
    transformed. Odd dimensions are edge-replicate padded to even first.
    """
    h, w = img.height, img.width
    if h < 1 or w < 1:
        raise ValueError(f"cannot transform zero-sized image ({h}x{w})")
    x = _pad_to_even(img.data)

    lo = (x[0::2, :, :] + x[1::2, :, :]) * INV_SQRT2
    hi = (x[1::2, :, :] - x[0::2, :, :]) * INV_SQRT2
    ll = (lo[:, 0::2, :] + lo[:, 1::2, :]) * INV_SQRT2
    lh = (hi[:, 0::2, :] + hi[:, 1::2, :]) * INV_SQRT2
    hl = (lo[:, 1::2, :] - lo[:, 0::2, :]) * INV_SQRT2
    hh = (hi[:, 1::2, :] - hi[:, 0::2, :]) * INV_SQRT2
    return SubbandSet(Image(ll), Image(lh), Image(hl), Image(hh), h, w)


def inverse_dwt(sb: SubbandSet) -> Image:
    """Reconstruct the image from its subbands, cropping away any padding."""
    ll, lh, hl, hh = (b.data for b in sb.bands)
    h2, w2, c = ll.shape
    if max(sb.original_height, sb.original_width) > 2 * max(h2, w2) or h2 < 1 or w2 < 1:
        raise ValueError("subband dimensions inconsistent with original size")

    lo = np.empty((h2, 2 * w2, c))
    hi = np.empty((h2, 2 * w2, c))
    lo[:, 0::2, :] = (ll - hl) * INV_SQRT2
    lo[:, 1::2, :] = (ll + hl) * INV_SQRT2
    hi[:, 0::2, :] = (lh - hh) * INV_SQRT2
    hi[:, 1::2, :] = (lh + hh) * INV_SQRT2

    x = np.empty((2 * h2, 2 * w2, c))
    x[0::2, :, :] = (lo - hi) * INV_SQRT2
    x[1::2, :, :] = (lo + hi) * INV_SQRT2
    return Image(x[: sb.original_height, : sb.original_width, :])


def build_analysis_matrices(rows: int, cols: int):
    """Dense banded Haar analysis matrices (L0, H0, L1, H1).

    L0/H0 are (rows/2, rows) left-multipliers built by shifting the 2-tap
    filters by two along rows; L1/H1 are (cols, cols/2) right-multipliers
    (their transposes). Intended as an equivalence oracle for the fast path.
    """
    if rows < 2 or cols < 2 or rows % 2 or cols % 2:
        raise ValueError(f"matrix construction needs even dimensions >= 2, got {rows}x{cols}")

    def banded(n: int, taps: tuple[float, float]) -> np.ndarray:
        m = np.zeros((n // 2, n))
        for k in range(n // 2):
            m[k, 2 * k] = taps[0]
            m[k, 2 * k + 1] = taps[1]
        return m

    l0 = banded(rows, HAAR.analysis_low)
    h0 = banded(rows, HAAR.analysis_high)
    l1 = banded(cols, HAAR.analysis_low).T
    h1 = banded(cols, HAAR.analysis_high).T
    return l0, h0, l1, h1


def build_synthesis_matrices(rows: int, cols: int):
    """Synthesis counterparts of build_analysis_matrices.

    For orthonormal Haar the time-reversed synthesis taps land on the same
    banded matrices as the analysis taps (the reversal cancels against the
    shift-by-two alignment), so these coincide with the analysis matrices.
    """
    return build_analysis_matrices(rows, cols)


def subband_energy(sb: SubbandSet) -> float:
    """Sum of squared samples over all four subbands."""
    return float(sum(np.sum(b.data ** 2) for b in sb.bands))


def downsample_half(plane: np.ndarray) -> np.ndarray:
    """2x2 box average of an (H, W) plane, edge-padding odd sizes.

    Matches the LL subband's resolution; used to bring rendered alpha down
    to confidence planes for LL-domain repair.
    """
    p = np.asarray(plane, dtype=np.float64)
    if p.shape[0] % 2 or p.shape[1] % 2:
        p = np.pad(p, ((0, p.shape[0] % 2), (0, p.shape[1] % 2)), mode="edge")
    return 0.25 * (p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2])


_BAND_FILES = ("ll", "lh", "hl", "hh")


def save_subbands(sb: SubbandSet, dirpath) -> None:
    """Write one sample directory: ll/lh/hl/hh .wsb planes plus meta.txt."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    for name, band in zip(_BAND_FILES, sb.bands):
        save_plane_wsb(band.data, d / f"{name}.wsb")
    meta = f"original_height = {sb.original_height}\noriginal_width = {sb.original_width}\n"
    (d / "meta.txt").write_text(meta)


def load_subbands(dirpath) -> SubbandSet:
    d = Path(dirpath)
    bands = [Image(load_plane_wsb(d / f"{name}.wsb")) for name in _BAND_FILES]
    meta = {}
    for line in (d / "meta.txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = int(v.strip())
    return SubbandSet(*bands, meta["original_height"], meta["original_width"])
