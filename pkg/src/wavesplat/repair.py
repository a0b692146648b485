"""Subband repair models.

Two repairers operate at half resolution: a pluggable low-frequency (LL)
model, by default a heat-equation inpainter driven by a rendered-alpha
confidence plane, and a lightweight trainable refiner for the concatenated
high-frequency (LH, HL, HH) planes. Both are shape-preserving and
deterministic; the inverse wavelet transform maps their outputs back to a
full-resolution pseudo ground truth.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .image import Image
from .optim import Adam
from .wavelet import SubbandSet, inverse_dwt

logger = logging.getLogger(__name__)

HF_CHANNELS = 9  # (LH, HL, HH) x RGB
WGRN_MAGIC = b"WGRN"

INPAINT_TOL = 1e-5
INPAINT_MAX_ITERS = 2000


@dataclass
class RepairModel:
    """LL-domain repairer: identity passthrough or confidence-gated inpainting."""

    kind: str = "ll-inpaint"
    confidence_threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("identity", "ll-inpaint"):
            raise ValueError(f"unknown LL repair kind {self.kind!r}")


def _neighbor_average(x: np.ndarray) -> np.ndarray:
    """4-neighbor mean per channel; border pixels average in-bounds neighbors only."""
    h, w, _ = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    total = (padded[:-2, 1:-1] + padded[2:, 1:-1]
             + padded[1:-1, :-2] + padded[1:-1, 2:])
    count = np.full((h, w), 4.0)
    count[0, :] -= 1.0
    count[-1, :] -= 1.0
    count[:, 0] -= 1.0
    count[:, -1] -= 1.0
    return total / count[:, :, None]


def repair_ll(model: RepairModel, corrupted_ll: Image,
              confidence: np.ndarray | None = None) -> Image:
    """Repair an LL plane set.

    identity returns a copy. ll-inpaint treats pixels whose confidence falls
    below the threshold as unknown and relaxes them to the discrete harmonic
    fill (Jacobi iteration on the 4-neighbor average) with the confident
    pixels held fixed, stopping when the largest per-pixel change drops
    below 1e-5 or after 2000 iterations. Confidence defaults to the image's
    alpha plane (rendered coverage downsampled to LL resolution).
    """
    if model.kind == "identity":
        return corrupted_ll.copy()

    if confidence is None:
        confidence = corrupted_ll.alpha
    if confidence is None:
        raise ValueError("ll-inpaint needs a confidence plane or an alpha channel")
    conf = np.asarray(confidence, dtype=np.float64)
    if conf.shape != (corrupted_ll.height, corrupted_ll.width):
        raise ValueError(
            f"confidence shape {conf.shape} does not match LL {corrupted_ll.data.shape[:2]}")

    unknown = conf < model.confidence_threshold
    out = corrupted_ll.data.copy()
    if not unknown.any():
        return Image(out, alpha=None if corrupted_ll.alpha is None else corrupted_ll.alpha.copy())
    if unknown.all():
        logger.warning("all pixels below confidence threshold; filling with global mean")
        fill = out.reshape(-1, out.shape[2]).mean(axis=0)
        return Image(np.broadcast_to(fill, out.shape).copy())

    known_mean = out[~unknown].mean(axis=0)
    out[unknown] = known_mean
    mask3 = unknown[:, :, None]
    for _ in range(INPAINT_MAX_ITERS):
        avg = _neighbor_average(out)
        new = np.where(mask3, avg, out)
        delta = float(np.max(np.abs(new - out)))
        out = new
        if delta < INPAINT_TOL:
            break
    return Image(out)


@dataclass
class PairSample:
    """One corrupted/clean training pair in either subband domain."""

    corrupted: np.ndarray
    clean: np.ndarray
    confidence: np.ndarray | None = None  # LL-resolution alpha of the corrupted render
    corrupt_region: np.ndarray | None = None  # known masked region at LL resolution


@dataclass
class SubbandPairDataset:
    """Corrupted/clean pairs, either LL planes or concatenated HF planes."""

    samples: list[PairSample] = field(default_factory=list)
    split: str = "ll-domain"

    def __post_init__(self):
        if self.split not in ("ll-domain", "hf-domain"):
            raise ValueError(f"unknown dataset split {self.split!r}")
        for s in self.samples:
            if s.corrupted.shape != s.clean.shape:
                raise ValueError("corrupted/clean shapes differ within a sample")
            if self.split == "hf-domain" and s.corrupted.shape[0] != HF_CHANNELS:
                raise ValueError(
                    f"hf-domain samples need {HF_CHANNELS} channels, got {s.corrupted.shape[0]}")

    def __len__(self) -> int:
        return len(self.samples)


def _conv3x3_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """3x3 zero-padded convolution on a (C, H, W) tensor; returns (out, cols)."""
    c_in, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(padded, (3, 3), axis=(1, 2))
    cols = cols.transpose(0, 3, 4, 1, 2).reshape(c_in * 9, h * w)
    out = weight.reshape(weight.shape[0], -1) @ cols
    return out.reshape(weight.shape[0], h, w) + bias[:, None, None], cols


def _conv3x3_backward(cols: np.ndarray, weight: np.ndarray,
                      grad_out: np.ndarray, in_shape):
    """Gradients of a _conv3x3_forward call w.r.t. input, weight, and bias."""
    c_out = weight.shape[0]
    c_in, h, w = in_shape
    g2 = grad_out.reshape(c_out, h * w)
    grad_w = (g2 @ cols.T).reshape(weight.shape)
    grad_b = g2.sum(axis=1)
    gcols = (weight.reshape(c_out, -1).T @ g2).reshape(c_in, 3, 3, h, w)
    grad_pad = np.zeros((c_in, h + 2, w + 2))
    for di in range(3):
        for dj in range(3):
            grad_pad[:, di:di + h, dj:dj + w] += gcols[:, di, dj]
    return grad_pad[:, 1:-1, 1:-1], grad_w, grad_b


def _leaky(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x: np.ndarray, g: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0, g, slope * g)


class RefinerNet:
    """Residual 3-layer conv net mapping 9 corrupted HF planes to clean ones.

    3x3 kernels with zero padding, 9 -> 16 -> 16 -> 9 channels, leaky
    rectifier (slope 0.01) after the first two layers, and the input added
    to the output. The final layer starts at zero so an untrained net is
    exactly the identity. Under 6000 parameters total.
    """

    HIDDEN = 16

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        h = self.HIDDEN
        self.w1 = rng.normal(0.0, np.sqrt(2.0 / (HF_CHANNELS * 9)), (h, HF_CHANNELS, 3, 3))
        self.b1 = np.zeros(h)
        self.w2 = rng.normal(0.0, np.sqrt(2.0 / (h * 9)), (h, h, 3, 3))
        self.b2 = np.zeros(h)
        self.w3 = np.zeros((HF_CHANNELS, h, 3, 3))
        self.b3 = np.zeros(HF_CHANNELS)

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "w3": self.w3, "b3": self.b3}

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params().values())

    def copy_weights_from(self, other: "RefinerNet") -> None:
        for k, v in other.params().items():
            self.params()[k][...] = v

    def forward(self, x: np.ndarray, want_cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != HF_CHANNELS:
            raise ValueError(f"expected ({HF_CHANNELS}, H, W) input, got shape {x.shape}")
        if x.shape[1] < 3 or x.shape[2] < 3:
            raise ValueError(f"input spatial size must be >= 3x3, got {x.shape[1:]}")
        z1, c1 = _conv3x3_forward(x, self.w1, self.b1)
        a1 = _leaky(z1)
        z2, c2 = _conv3x3_forward(a1, self.w2, self.b2)
        a2 = _leaky(z2)
        z3, c3 = _conv3x3_forward(a2, self.w3, self.b3)
        out = x + z3
        if want_cache:
            return out, (x, z1, a1, c1, z2, a2, c2, c3)
        return out

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of every parameter plus the input for an upstream grad."""
        x, z1, a1, c1, z2, a2, c2, c3 = cache
        grads = {}
        ga2, grads["w3"], grads["b3"] = _conv3x3_backward(c3, self.w3, grad_out, a2.shape)
        gz2 = _leaky_grad(z2, ga2)
        ga1, grads["w2"], grads["b2"] = _conv3x3_backward(c2, self.w2, gz2, a1.shape)
        gz1 = _leaky_grad(z1, ga1)
        gx, grads["w1"], grads["b1"] = _conv3x3_backward(c1, self.w1, gz1, x.shape)
        return grads, gx + grad_out


def mse_loss_and_grads(net: RefinerNet, sample: PairSample):
    """Mean squared error of net(corrupted) against clean, with parameter grads."""
    out, cache = net.forward(sample.corrupted, want_cache=True)
    diff = out - sample.clean
    loss = float(np.mean(diff * diff))
    grads, _ = net.backward(cache, 2.0 * diff / diff.size)
    return loss, grads


def eval_mse(net: RefinerNet, samples) -> float:
    total = 0.0
    for s in samples:
        diff = net.forward(s.corrupted) - s.clean
        total += float(np.mean(diff * diff))
    return total / len(samples)


def train_refiner(net: RefinerNet, data: SubbandPairDataset,
                  val_fraction: float = 0.25, lr: float = 1e-3,
                  max_epochs: int = 500, patience: int = 20,
                  loss_log: list | None = None) -> RefinerNet:
    """Fit the refiner by full-batch Adam with early stopping.

    The last ceil(n * val_fraction) samples validate; training stops when
    validation MSE has not improved for `patience` consecutive epochs or at
    `max_epochs`, and the best-validation weights are returned.
    """
    if data.split != "hf-domain":
        raise ValueError(f"refiner training needs an hf-domain dataset, got {data.split!r}")
    if len(data) < 4:
        raise DataError(f"refiner training needs at least 4 samples, got {len(data)}")
    n_val = max(1, int(np.ceil(len(data) * val_fraction)))
    train_samples = data.samples[:-n_val]
    val_samples = data.samples[-n_val:]

    opt = Adam({k: lr for k in net.params()})
    params = net.params()
    best_val = eval_mse(net, val_samples)
    best = {k: v.copy() for k, v in params.items()}
    stale = 0
    if loss_log is not None:
        loss_log.append((0, eval_mse(net, train_samples), best_val))

    for epoch in range(1, max_epochs + 1):
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        train_loss = 0.0
        for s in train_samples:
            loss, g = mse_loss_and_grads(net, s)
            train_loss += loss
            for k in grads:
                grads[k] += g[k] / len(train_samples)
        opt.step(params, grads)

        val = eval_mse(net, val_samples)
        if loss_log is not None:
            loss_log.append((epoch, train_loss / len(train_samples), val))
        if val < best_val:
            best_val = val
            best = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break

    for k, v in best.items():
        params[k][...] = v
    return net


def repair_hf(net: RefinerNet, corrupted: np.ndarray) -> np.ndarray:
    """Deterministic forward pass over concatenated (9, H, W) HF planes."""
    corrupted = np.asarray(corrupted, dtype=np.float64)
    if corrupted.ndim != 3 or corrupted.shape[0] != HF_CHANNELS:
        raise ValueError(f"expected ({HF_CHANNELS}, H, W) HF planes, got shape {corrupted.shape}")
    return net.forward(corrupted)


def hf_planes(sb: SubbandSet) -> np.ndarray:
    """Concatenate (LH, HL, HH) subbands channel-first into a (9, H, W) block."""
    return np.concatenate([b.data.transpose(2, 0, 1) for b in (sb.lh, sb.hl, sb.hh)])


def assemble_pseudo_gt(repaired_ll: Image, repaired_hf: np.ndarray,
                       original_size: tuple[int, int]) -> Image:
    """Invert repaired subbands back to a full-resolution [0, 1] image."""
    hf = np.asarray(repaired_hf, dtype=np.float64)
    h2, w2 = repaired_ll.height, repaired_ll.width
    if hf.shape != (HF_CHANNELS, h2, w2):
        raise ValueError(
            f"HF planes shape {hf.shape} inconsistent with LL {(h2, w2)}")
    c = repaired_ll.channels
    bands = [Image(hf[3 * i: 3 * i + c].transpose(1, 2, 0)) for i in range(3)]
    sb = SubbandSet(Image(repaired_ll.data), *bands, *original_size)
    return inverse_dwt(sb).clamped()


def save_refiner(net: RefinerNet, path) -> None:
    """Checkpoint: magic "WGRN", u32 layer count, then per layer the u32
    shape (out, in, kh, kw) followed by little-endian f32 weights and biases."""
    layers = [(net.w1, net.b1), (net.w2, net.b2), (net.w3, net.b3)]
    blob = [WGRN_MAGIC, struct.pack("<I", len(layers))]
    for w, b in layers:
        blob.append(struct.pack("<IIII", *w.shape))
        blob.append(w.astype("<f4").tobytes())
        blob.append(b.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(blob))


def load_refiner(path) -> RefinerNet:
    buf = Path(path).read_bytes()
    if buf[:4] != WGRN_MAGIC:
        raise DataError(f"bad refiner checkpoint magic {buf[:4]!r}")
    (n_layers,) = struct.unpack("<I", buf[4:8])
    pos = 8
    net = RefinerNet(seed=0)
    targets = [("w1", "b1"), ("w2", "b2"), ("w3", "b3")]
    if n_layers != len(targets):
        raise DataError(f"expected {len(targets)} layers, checkpoint has {n_layers}")
    for wk, bk in targets:
        shape = struct.unpack("<IIII", buf[pos:pos + 16])
        pos += 16
        n_w = int(np.prod(shape))
        w = np.frombuffer(buf, dtype="<f4", count=n_w, offset=pos).astype(np.float64)
        pos += 4 * n_w
        b = np.frombuffer(buf, dtype="<f4", count=shape[0], offset=pos).astype(np.float64)
        pos += 4 * shape[0]
        getattr(net, wk)[...] = w.reshape(shape)
        getattr(net, bk)[...] = b
    return net
