"""Online random masking: drifting rectangular regions with coverage control.

A mask is a binary plane (1 = supervised, 0 = masked) built from n_m
axis-aligned rectangles whose centers oscillate sinusoidally over training
iterations. Region geometry is expressed in coordinates normalized to the
object's bounding box, so the same spec adapts to any object placement.
Per-iteration bisection rescales the region extents so the masked fraction
of object pixels stays within +/- 2% of the target at every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageInfeasibleError

COVERAGE_TOL = 0.02
BISECT_ITERS = 32

AMPLITUDE_RANGE = (0.02, 0.1)
FREQ_RANGE = (2.0 * np.pi / 400.0, 2.0 * np.pi / 100.0)
ASPECT_RANGE = (0.6, 1.6)


@dataclass
class MaskRegion:
    """One drifting rectangle, in object-bbox-normalized coordinates."""

    base_center: np.ndarray      # (2,) in [0, 1]^2, (row, col)
    half_extent: np.ndarray      # (2,) > 0
    drift_amplitude: np.ndarray  # (2,)
    drift_angular_frequency: np.ndarray  # (2,) radians per iteration
    drift_phase: np.ndarray      # (2,)

    def center_at(self, iteration: float) -> np.ndarray:
        return self.base_center + self.drift_amplitude * np.sin(
            self.drift_angular_frequency * iteration + self.drift_phase)


@dataclass
class MaskSpec:
    """Per-view collection of drifting regions plus its derivation inputs."""

    regions: list[MaskRegion]
    target_coverage: float
    seed: int
    view_index: int

    def __post_init__(self):
        if not 0.0 < self.target_coverage < 1.0:
            raise ValueError(f"target coverage must be in (0, 1), got {self.target_coverage}")
        if len(self.regions) < 1:
            raise ValueError("need at least one mask region")

    def to_kv(self) -> str:
        """Flat key-value block for the experiment log."""
        lines = [
            f"seed = {self.seed}",
            f"view_index = {self.view_index}",
            f"n_regions = {len(self.regions)}",
            f"target_coverage = {self.target_coverage!r}",
        ]
        for i, r in enumerate(self.regions):
            for name, vec in (("center", r.base_center), ("half_extent", r.half_extent),
                              ("amplitude", r.drift_amplitude),
                              ("frequency", r.drift_angular_frequency),
                              ("phase", r.drift_phase)):
                lines.append(f"region{i}.{name} = {vec[0]!r} {vec[1]!r}")
        return "\n".join(lines) + "\n"


def spec_for_view(global_seed: int, view_index: int, n_m: int,
                  coverage: float) -> MaskSpec:
    """Deterministically derive the drifting-region parameters for one view.

    Base centers are uniform over the object bounding box; initial extents
    are sized so the summed region area roughly matches the coverage target
    (exact enforcement happens at rasterization); amplitudes, angular
    frequencies, and phases are drawn per axis from fixed ranges.
    """
    if n_m < 1:
        raise ValueError(f"n_m must be >= 1, got {n_m}")
    rng = np.random.default_rng([int(global_seed) & 0xFFFFFFFFFFFFFFFF, int(view_index)])
    centers = rng.uniform(0.0, 1.0, (n_m, 2))
    aspects = rng.uniform(*ASPECT_RANGE, n_m)
    area = coverage / n_m
    half_x = np.sqrt(area * aspects) / 2.0
    half_y = np.sqrt(area / aspects) / 2.0
    amplitudes = rng.uniform(*AMPLITUDE_RANGE, (n_m, 2))
    freqs = rng.uniform(*FREQ_RANGE, (n_m, 2))
    phases = rng.uniform(0.0, 2.0 * np.pi, (n_m, 2))
    regions = [
        MaskRegion(centers[i], np.array([half_y[i], half_x[i]]),
                   amplitudes[i], freqs[i], phases[i])
        for i in range(n_m)
    ]
    return MaskSpec(regions, coverage, int(global_seed), int(view_index))


def _rasterize_union(spec: MaskSpec, iteration: float, scale: float,
                     bbox, shape) -> np.ndarray:
    """Union of the drifted rectangles at a given extent scale, as a bool plane."""
    r0, c0, bh, bw = bbox
    union = np.zeros(shape, dtype=bool)
    for region in spec.regions:
        cy, cx = region.center_at(iteration)
        hy, hx = region.half_extent * scale
        top = int(np.floor(r0 + (cy - hy) * bh))
        bot = int(np.ceil(r0 + (cy + hy) * bh))
        left = int(np.floor(c0 + (cx - hx) * bw))
        right = int(np.ceil(c0 + (cx + hx) * bw))
        top, bot = max(top, 0), min(bot, shape[0])
        left, right = max(left, 0), min(right, shape[1])
        if top < bot and left < right:
            union[top:bot, left:right] = True
    return union


def rasterize_mask(spec: MaskSpec, iteration: int,
                   object_mask: np.ndarray) -> np.ndarray:
    """Binary supervision mask at a training iteration (1 = supervised).

    Region centers drift as base + amplitude * sin(freq * t + phase) per
    axis. The rectangle union is intersected with the object mask, then the
    extents are rescaled by bisection until the masked fraction of object
    pixels is within +/- 2% of the target. Raises CoverageInfeasibleError
    when the object is too small for that granularity.
    """
    obj = np.asarray(object_mask) > 0
    n_obj = int(obj.sum())
    if n_obj < 1:
        raise ValueError("object mask has no positive pixels")
    rows = np.nonzero(obj.any(axis=1))[0]
    cols = np.nonzero(obj.any(axis=0))[0]
    bbox = (int(rows[0]), int(cols[0]),
            int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1))
    target = spec.target_coverage

    def fraction(scale: float) -> tuple[float, np.ndarray]:
        union = _rasterize_union(spec, iteration, scale, bbox, obj.shape)
        masked = union & obj
        return masked.sum() / n_obj, masked

    hi = 1.0
    frac, masked = fraction(hi)
    while frac < target and hi < 64.0:
        hi *= 2.0
        frac, masked = fraction(hi)
    lo = 0.0
    for _ in range(BISECT_ITERS):
        if abs(frac - target) <= COVERAGE_TOL:
            break
        mid = 0.5 * (lo + hi)
        frac_mid, masked_mid = fraction(mid)
        if frac_mid < target:
            lo = mid
        else:
            hi = mid
        frac, masked = frac_mid, masked_mid
    if abs(frac - target) > COVERAGE_TOL:
        raise CoverageInfeasibleError(
            f"cannot reach coverage {target:.3f} +/- {COVERAGE_TOL}: closest "
            f"achievable fraction {frac:.3f} on a {n_obj}-pixel object")
    return (~masked).astype(np.uint8)


def loo_partitions(views: list):
    """Leave-one-out splits: N (train-set, held-out) pairs over N views."""
    n = len(views)
    if n < 2:
        raise ValueError(f"leave-one-out needs at least 2 views, got {n}")
    return [([views[j] for j in range(n) if j != i], views[i]) for i in range(n)]
