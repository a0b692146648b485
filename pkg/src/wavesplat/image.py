"""Float image container plus Netpbm (P5/P6) and raw float-plane serialization.

Images are stored as (H, W, C) float64 arrays with C in {1, 3}. Renderable
images live in [0, 1]; wavelet subbands reuse the same container with the
range restriction relaxed. The optional alpha plane carries per-pixel
coverage from the renderer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ImageFormatError

WSB_MAGIC = b"WSB1"


@dataclass
class Image:
    """H x W x C floating-point raster with an optional coverage plane."""

    data: np.ndarray
    alpha: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError(f"image data must be (H, W, C), got shape {self.data.shape}")
        if self.data.shape[2] not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {self.data.shape[2]}")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=np.float64)
            if self.alpha.shape != self.data.shape[:2]:
                raise ValueError(
                    f"alpha shape {self.alpha.shape} does not match image {self.data.shape[:2]}"
                )

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def copy(self) -> "Image":
        return Image(self.data.copy(), None if self.alpha is None else self.alpha.copy())

    def clamped(self) -> "Image":
        return Image(np.clip(self.data, 0.0, 1.0),
                     None if self.alpha is None else self.alpha.copy())


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Read one whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ImageFormatError(f"unexpected end of header at byte offset {pos}")
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def load_image(path) -> Image:
    """Load a binary PPM (P6) or PGM (P5) file with maxval 255.

    Samples are mapped to [0, 1] as v / 255. Parse failures raise
    ImageFormatError naming the byte offset of the problem.
    """
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r} at byte offset 0")
    channels = 3 if magic == b"P6" else 1

    dims = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(buf, pos)
        try:
            dims.append(int(tok))
        except ValueError:
            raise ImageFormatError(
                f"non-numeric {name} {tok!r} at byte offset {pos - len(tok)}"
            ) from None
    width, height, maxval = dims
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"non-positive dimensions {width}x{height} at byte offset {pos}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval} at byte offset {pos}")

    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageFormatError(f"missing header terminator at byte offset {pos}")
    pos += 1

    expected = width * height * channels
    payload = buf[pos:pos + expected]
    if len(payload) != expected:
        raise ImageFormatError(
            f"truncated payload: expected {expected} bytes, file ends at byte offset {len(buf)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return Image(arr.reshape(height, width, channels))


def save_image(img: Image, path) -> None:
    """Write a P6 (3-channel) or P5 (1-channel) file, clamping to [0, 1].

    Round-tripping keeps every sample within 1/510 of the original.
    """
    data = np.clip(img.data, 0.0, 1.0)
    q = np.rint(data * 255.0).astype(np.uint8)
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    Path(path).write_bytes(header + q.tobytes())


def save_mask_pgm(mask: np.ndarray, path) -> None:
    """Write a binary plane as 8-bit PGM with values 0 / 255."""
    plane = (np.asarray(mask) > 0).astype(np.float64)
    save_image(Image(plane[:, :, None]), path)


def load_mask_pgm(path) -> np.ndarray:
    img = load_image(path)
    if img.channels != 1:
        raise ImageFormatError(f"mask file {path} is not single-channel")
    return (img.data[:, :, 0] > 0.5).astype(np.uint8)


def save_plane_wsb(arr: np.ndarray, path) -> None:
    """Serialize an (H, W) or (H, W, C) float plane.

    Layout: 16-byte header (magic "WSB1", u32 height, u32 width, u32
    channels, little-endian) followed by H*W*C little-endian f32 samples
    in row-major order.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected 2- or 3-dim plane, got shape {arr.shape}")
    h, w, c = arr.shape
    header = WSB_MAGIC + struct.pack("<III", h, w, c)
    Path(path).write_bytes(header + arr.astype("<f4").tobytes())


def load_plane_wsb(path) -> np.ndarray:
    """Read a float plane written by save_plane_wsb; returns (H, W, C) float64."""
    buf = Path(path).read_bytes()
    if len(buf) < 16:
        raise ImageFormatError(f"truncated header: file ends at byte offset {len(buf)}")
    if buf[:4] != WSB_MAGIC:
        raise ImageFormatError(f"bad magic {buf[:4]!r} at byte offset 0")
    h, w, c = struct.unpack("<III", buf[4:16])
    expected = h * w * c * 4
    if len(buf) != 16 + expected:
        raise ImageFormatError(
            f"payload size mismatch: expected {expected} bytes, file ends at byte offset {len(buf)}"
        )
    return np.frombuffer(buf, dtype="<f4", offset=16).astype(np.float64).reshape(h, w, c)
