"""Differentiable CPU Gaussian splatting.

Each primitive carries a world-space center, per-axis log scales plus a unit
quaternion parameterizing its covariance, an opacity logit, and raw colors
(sigmoid applied at render time). Rendering projects every Gaussian to a 2D
mean and covariance via the perspective Jacobian, depth-sorts front to back
(ties broken by primitive index), and alpha-composites per pixel with

    C = sum_i c_i * a_i * prod_{j<i} (1 - a_j),   a_i = sigma_i * exp(-m_i/2)

clamped at a_i <= 0.999, where m_i is the screen-space Mahalanobis distance.
The backward pass is analytic and matches central finite differences; it is
exercised by the gradient-check tests.

Everything here is plain float64 numpy with fixed reduction orders, so a
render is bit-identical across runs and thread settings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalDivergenceError
from .image import Image
from .losses import LossConfig, loss_3dgs
from .optim import Adam

ALPHA_MAX = 0.999
COV_EPS = 1e-6
NEAR_CLIP = 1e-4
WGSC_MAGIC = b"WGSC"
PARAM_KEYS = ("centers", "log_scales", "rotations", "opacity_logits", "colors")


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GaussianPrimitive:
    """One optimizable Gaussian: mu, covariance via scale/rotation, opacity, color."""

    center: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color: np.ndarray


class GaussianCloud:
    """A set of Gaussian primitives stored as flat parameter arrays."""

    def __init__(self, centers, log_scales, rotations, opacity_logits, colors):
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        n = self.centers.shape[0]
        self.log_scales = np.asarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)
        if n < 1:
            raise ValueError("cloud must contain at least one primitive")
        if not all(np.isfinite(self.params()[k]).all() for k in PARAM_KEYS):
            raise ValueError("cloud parameters must be finite")

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    @property
    def primitives(self) -> list[GaussianPrimitive]:
        return [
            GaussianPrimitive(self.centers[i], self.log_scales[i], self.rotations[i],
                              float(self.opacity_logits[i]), self.colors[i])
            for i in range(self.count)
        ]

    @classmethod
    def from_primitives(cls, prims) -> "GaussianCloud":
        return cls(
            np.stack([p.center for p in prims]),
            np.stack([p.log_scale for p in prims]),
            np.stack([p.rotation for p in prims]),
            np.array([p.opacity_logit for p in prims]),
            np.stack([p.color for p in prims]),
        )

    def params(self) -> dict[str, np.ndarray]:
        return {
            "centers": self.centers,
            "log_scales": self.log_scales,
            "rotations": self.rotations,
            "opacity_logits": self.opacity_logits,
            "colors": self.colors,
        }

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.centers.copy(), self.log_scales.copy(),
                             self.rotations.copy(), self.opacity_logits.copy(),
                             self.colors.copy())

    def normalize_rotations(self) -> None:
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        norms = np.where(norms < 1e-12, 1.0, norms)
        self.rotations /= norms


def save_cloud(cloud: GaussianCloud, path) -> None:
    """Checkpoint format: magic "WGSC", u32 count, then per primitive the
    little-endian f32 fields center(3), log_scale(3), rotation(4),
    opacity_logit(1), color(3)."""
    flat = np.concatenate(
        [cloud.centers, cloud.log_scales, cloud.rotations,
         cloud.opacity_logits[:, None], cloud.colors], axis=1)
    Path(path).write_bytes(WGSC_MAGIC + struct.pack("<I", cloud.count)
                           + flat.astype("<f4").tobytes())


def load_cloud(path) -> GaussianCloud:
    buf = Path(path).read_bytes()
    if buf[:4] != WGSC_MAGIC:
        raise DataError(f"bad cloud checkpoint magic {buf[:4]!r}")
    (count,) = struct.unpack("<I", buf[4:8])
    flat = np.frombuffer(buf, dtype="<f4", offset=8).astype(np.float64)
    if flat.size != count * 14:
        raise DataError(f"cloud checkpoint size mismatch: {flat.size} floats for {count} primitives")
    flat = flat.reshape(count, 14)
    return GaussianCloud(flat[:, 0:3], flat[:, 3:6], flat[:, 6:10], flat[:, 10], flat[:, 11:14])


@dataclass
class Camera:
    """Pinhole camera: world-to-camera rotation, position, focal in pixels."""

    position: np.ndarray
    rotation: np.ndarray
    focal: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        err = np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3))
        if err > 1e-9:
            raise ValueError(f"camera rotation not orthonormal (|R^T R - I| = {err:.3e})")
        if self.focal <= 0:
            raise ValueError(f"focal must be positive, got {self.focal}")

    @property
    def forward(self) -> np.ndarray:
        """Optical axis direction in world coordinates."""
        return self.rotation[2]

    @classmethod
    def look_at(cls, position, target, focal, width, height, up=(0.0, 0.0, 1.0)) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - position
        norm = np.linalg.norm(fwd)
        if norm < 1e-12:
            raise ValueError("camera position coincides with look-at target")
        fwd = fwd / norm
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-8:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return cls(position, rot, float(focal), int(width), int(height))


def _quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (N, 4; w, x, y, z order) to rotation matrices (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _quat_rot_backward(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Contract dL/dR with dR/dq for unit quaternions; returns (N, 4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    gq = np.empty_like(q)
    gq[:, 0] = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0]
                    - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gq[:, 1] = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0]
                    - 2 * x * g[:, 1, 1] - w * g[:, 1, 2] + z * g[:, 2, 0]
                    + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gq[:, 2] = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2]
                    + x * g[:, 1, 0] + z * g[:, 1, 2] - w * g[:, 2, 0]
                    + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gq[:, 3] = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2]
                    + w * g[:, 1, 0] - 2 * z * g[:, 1, 1] + y * g[:, 1, 2]
                    + x * g[:, 2, 0] + y * g[:, 2, 1])
    return gq


class RenderContext:
    """Forward-pass state saved for the analytic backward pass."""

    def __init__(self, cloud, cam, support_sigma):
        self.cloud = cloud
        self.cam = cam
        self.support_sigma = support_sigma
        self.per_gaussian = []  # (valid_row, y0, y1, x0, x1, dx, dy, wgt, alpha, t_before)
        # filled by _project_all:
        self.idx = None
        self.qn = self.qhat = self.rot = self.es = None
        self.wm = self.t_cam = self.j = self.u_mat = None
        self.a00 = self.a01 = self.a11 = None
        self.sig = self.col = None
        self.mean_u = self.mean_v = None


def _project_all(cloud: GaussianCloud, cam: Camera, support_sigma: float, ctx: RenderContext):
    """Project every Gaussian; returns data for those in front of the camera."""
    qn = np.linalg.norm(cloud.rotations, axis=1)
    qn = np.where(qn < 1e-12, 1.0, qn)
    qhat = cloud.rotations / qn[:, None]
    rot = _quat_to_rot(qhat)
    with np.errstate(over="ignore", invalid="ignore"):
        es = np.exp(cloud.log_scales)
        m_mat = rot * es[:, None, :]
        w_cam = cam.rotation
        wm = np.einsum("ij,njk->nik", w_cam, m_mat)
        t_cam = (cloud.centers - cam.position) @ w_cam.T

        idx = np.nonzero(t_cam[:, 2] > NEAR_CLIP)[0]
        t_v = t_cam[idx]
        inv_z = 1.0 / t_v[:, 2]
        f = cam.focal
        cx = (cam.width - 1) / 2.0
        cy = (cam.height - 1) / 2.0
        mean_u = f * t_v[:, 0] * inv_z + cx
        mean_v = f * t_v[:, 1] * inv_z + cy

        j = np.zeros((idx.size, 2, 3))
        j[:, 0, 0] = f * inv_z
        j[:, 0, 2] = -f * t_v[:, 0] * inv_z ** 2
        j[:, 1, 1] = f * inv_z
        j[:, 1, 2] = -f * t_v[:, 1] * inv_z ** 2
        u_mat = np.einsum("nab,nbc->nac", j, wm[idx])

    with np.errstate(over="ignore", invalid="ignore"):
        s00 = np.sum(u_mat[:, 0, :] * u_mat[:, 0, :], axis=1) + COV_EPS
        s01 = np.sum(u_mat[:, 0, :] * u_mat[:, 1, :], axis=1)
        s11 = np.sum(u_mat[:, 1, :] * u_mat[:, 1, :], axis=1) + COV_EPS
        det = s00 * s11 - s01 * s01
        a00 = s11 / det
        a01 = -s01 / det
        a11 = s00 / det
        lam_max = 0.5 * ((s00 + s11) + np.sqrt((s00 - s11) ** 2 + 4.0 * s01 * s01))
        radius = support_sigma * np.sqrt(lam_max)
    if idx.size and not (np.isfinite(a00).all() and np.isfinite(a01).all()
                         and np.isfinite(a11).all() and np.isfinite(radius).all()
                         and np.isfinite(mean_u).all() and np.isfinite(mean_v).all()):
        raise NumericalDivergenceError(
            "non-finite screen-space projection (diverged primitive parameters)")

    ctx.idx = idx
    ctx.qn, ctx.qhat, ctx.rot, ctx.es = qn, qhat, rot, es
    ctx.wm, ctx.t_cam, ctx.j, ctx.u_mat = wm, t_cam, j, u_mat
    ctx.a00, ctx.a01, ctx.a11 = a00, a01, a11
    ctx.sig = sigmoid(cloud.opacity_logits)
    ctx.col = sigmoid(cloud.colors)
    ctx.mean_u, ctx.mean_v = mean_u, mean_v
    order = np.argsort(t_v[:, 2], kind="stable")
    return order, radius


def render_with_context(cloud: GaussianCloud, cam: Camera,
                        support_sigma: float = 3.0) -> tuple[Image, RenderContext]:
    """Render and keep the state needed for render_backward."""
    if cloud.count < 1:
        raise ValueError("cannot render an empty cloud")
    h, w = cam.height, cam.width
    ctx = RenderContext(cloud, cam, support_sigma)
    order, radius = _project_all(cloud, cam, support_sigma, ctx)

    color = np.zeros((h, w, 3))
    alpha_plane = np.zeros((h, w))
    transmit = np.ones((h, w))
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    rr = support_sigma * support_sigma

    for row in order:
        u, v, rad = ctx.mean_u[row], ctx.mean_v[row], radius[row]
        x0 = max(int(np.floor(u - rad)), 0)
        x1 = min(int(np.ceil(u + rad)), w - 1)
        y0 = max(int(np.floor(v - rad)), 0)
        y1 = min(int(np.ceil(v + rad)), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        dx = xs[x0:x1 + 1] - u
        dy = ys[y0:y1 + 1] - v
        md = (ctx.a00[row] * dx * dx)[None, :] \
            + 2.0 * ctx.a01[row] * dy[:, None] * dx[None, :] \
            + (ctx.a11[row] * dy * dy)[:, None]
        wgt = np.where(md <= rr, np.exp(-0.5 * md), 0.0)
        sig_i = ctx.sig[ctx.idx[row]]
        alpha = np.minimum(sig_i * wgt, ALPHA_MAX)
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        t_before = transmit[sl].copy()
        contrib = alpha * t_before
        color[sl] += contrib[:, :, None] * ctx.col[ctx.idx[row]]
        alpha_plane[sl] += contrib
        transmit[sl] = t_before * (1.0 - alpha)
        ctx.per_gaussian.append((row, y0, y1, x0, x1, dx, dy, wgt, alpha, t_before))

    return Image(color, alpha=alpha_plane), ctx


def render(cloud: GaussianCloud, cam: Camera, support_sigma: float = 3.0) -> Image:
    """Render the cloud; background is zero color / zero alpha."""
    img, _ = render_with_context(cloud, cam, support_sigma)
    return img


def render_backward(ctx: RenderContext, grad_rgb: np.ndarray,
                    grad_alpha: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Backpropagate pixel gradients to every primitive parameter.

    grad_rgb is dL/d(color image), grad_alpha optionally dL/d(alpha plane).
    Returns gradients keyed like GaussianCloud.params().
    """
    cloud, cam = ctx.cloud, ctx.cam
    h, w = cam.height, cam.width
    n_valid = ctx.idx.size
    grad_rgb = np.asarray(grad_rgb, dtype=np.float64).reshape(h, w, 3)

    g_mean = np.zeros((n_valid, 2))
    g_amat = np.zeros((n_valid, 3))  # dL/d(A00, A01, A11) with A symmetric
    g_sig_v = np.zeros(n_valid)
    g_col_v = np.zeros((n_valid, 3))

    q_plane = np.zeros((h, w, 3))
    p_plane = np.ones((h, w)) if grad_alpha is not None else None

    for row, y0, y1, x0, x1, dx, dy, wgt, alpha, t_before in reversed(ctx.per_gaussian):
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        gc = grad_rgb[sl]
        col_i = ctx.col[ctx.idx[row]]
        qb = q_plane[sl]
        d_alpha = t_before * (gc @ col_i - np.einsum("hwc,hwc->hw", gc, qb))
        if grad_alpha is not None:
            d_alpha = d_alpha + grad_alpha[sl] * t_before * p_plane[sl]

        at = alpha * t_before
        g_col_v[row] += np.einsum("hwc,hw->c", gc, at)

        sig_i = ctx.sig[ctx.idx[row]]
        unclamped = sig_i * wgt < ALPHA_MAX
        d_sw = np.where(unclamped, d_alpha, 0.0)
        g_sig_v[row] += float(np.sum(d_sw * wgt))
        gm = -0.5 * wgt * (d_sw * sig_i)

        a00, a01, a11 = ctx.a00[row], ctx.a01[row], ctx.a11[row]
        gm_dx = gm * dx[None, :]
        gm_dy = gm * dy[:, None]
        sum_gm_dx = float(np.sum(gm_dx))
        sum_gm_dy = float(np.sum(gm_dy))
        g_mean[row, 0] += -2.0 * (a00 * sum_gm_dx + a01 * sum_gm_dy)
        g_mean[row, 1] += -2.0 * (a01 * sum_gm_dx + a11 * sum_gm_dy)
        g_amat[row, 0] += float(np.sum(gm_dx * dx[None, :]))
        g_amat[row, 1] += 2.0 * float(np.sum(gm_dx * dy[:, None]))
        g_amat[row, 2] += float(np.sum(gm_dy * dy[:, None]))

        q_plane[sl] = col_i * alpha[:, :, None] + (1.0 - alpha)[:, :, None] * qb
        if p_plane is not None:
            p_plane[sl] = (1.0 - alpha) * p_plane[sl]

    grads = {k: np.zeros_like(v) for k, v in cloud.params().items()}
    if n_valid == 0:
        return grads

    idx = ctx.idx
    # dL/dSigma2d = -A (dL/dA) A for the symmetric 2x2 inverse.
    a_m = np.empty((n_valid, 2, 2))
    a_m[:, 0, 0], a_m[:, 0, 1] = ctx.a00, ctx.a01
    a_m[:, 1, 0], a_m[:, 1, 1] = ctx.a01, ctx.a11
    ga = np.empty((n_valid, 2, 2))
    ga[:, 0, 0], ga[:, 0, 1] = g_amat[:, 0], 0.5 * g_amat[:, 1]
    ga[:, 1, 0], ga[:, 1, 1] = 0.5 * g_amat[:, 1], g_amat[:, 2]
    gs = -np.einsum("nij,njk,nkl->nil", a_m, ga, a_m)

    u_mat, j, wm = ctx.u_mat, ctx.j, ctx.wm
    gu = 2.0 * np.einsum("nij,njk->nik", gs, u_mat)
    g_wm = np.einsum("nab,nac->nbc", j, gu)
    gj = np.einsum("nac,nbc->nab", gu, wm[idx])

    t_v = ctx.t_cam[idx]
    inv_z = 1.0 / t_v[:, 2]
    f = cam.focal
    gtx = g_mean[:, 0] * f * inv_z - gj[:, 0, 2] * f * inv_z ** 2
    gty = g_mean[:, 1] * f * inv_z - gj[:, 1, 2] * f * inv_z ** 2
    gtz = (-f * inv_z ** 2) * (g_mean[:, 0] * t_v[:, 0] + g_mean[:, 1] * t_v[:, 1]) \
        + (-f * inv_z ** 2) * (gj[:, 0, 0] + gj[:, 1, 1]) \
        + (2.0 * f * inv_z ** 3) * (gj[:, 0, 2] * t_v[:, 0] + gj[:, 1, 2] * t_v[:, 1])
    g_t = np.stack([gtx, gty, gtz], axis=1)

    grads["centers"][idx] = g_t @ cam.rotation
    g_m = np.einsum("ji,njk->nik", cam.rotation, g_wm)
    es_v = ctx.es[idx]
    grads["log_scales"][idx] = np.einsum("nik,nik->nk", g_m, ctx.rot[idx]) * es_v
    g_r = g_m * es_v[:, None, :]
    g_qhat = _quat_rot_backward(ctx.qhat[idx], g_r)
    proj = np.sum(ctx.qhat[idx] * g_qhat, axis=1, keepdims=True)
    grads["rotations"][idx] = (g_qhat - ctx.qhat[idx] * proj) / ctx.qn[idx][:, None]

    sig_all = ctx.sig[idx]
    grads["opacity_logits"][idx] = g_sig_v * sig_all * (1.0 - sig_all)
    col_all = ctx.col[idx]
    grads["colors"][idx] = g_col_v * col_all * (1.0 - col_all)
    return grads


def _normalize_view(view):
    cam, img = view[0], view[1]
    mask = view[2] if len(view) > 2 else None
    return cam, img, mask


def train(cloud: GaussianCloud, views, iters: int, cfg: LossConfig, *,
          seed: int = 0, lr_position: float = 1e-2, lr_other: float = 5e-3,
          support_sigma: float = 3.0, mask_fn=None, schedule=None,
          loss_log: list | None = None) -> GaussianCloud:
    """Fit the cloud to the given (Camera, Image[, Mask]) views with Adam.

    Views are visited round-robin unless an explicit per-iteration schedule
    of view indices is supplied. mask_fn(view_index, iteration), when given,
    overrides any static per-view mask; it is how drifting-mask training
    plugs in. Training losses are appended to loss_log as (iteration, loss).
    """
    if len(views) < 1:
        raise ValueError("need at least one training view")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    views = [_normalize_view(v) for v in views]
    if schedule is not None and len(schedule) < iters:
        raise ValueError("schedule shorter than iteration count")

    cloud = cloud.copy()
    opt = Adam({
        "centers": lr_position,
        "log_scales": lr_other,
        "rotations": lr_other,
        "opacity_logits": lr_other,
        "colors": lr_other,
    })
    params = cloud.params()

    for t in range(iters):
        k = int(schedule[t]) if schedule is not None else t % len(views)
        cam, gt, mask = views[k]
        if mask_fn is not None:
            mask = mask_fn(k, t)
        try:
            img, ctx = render_with_context(cloud, cam, support_sigma)
        except NumericalDivergenceError as exc:
            raise NumericalDivergenceError(f"{exc} at iteration {t} on view {k}") from None
        loss, grad = loss_3dgs(img, gt, cfg, mask)
        if not np.isfinite(loss):
            raise NumericalDivergenceError(
                f"non-finite loss {loss!r} at iteration {t} on view {k}")
        grads = render_backward(ctx, grad)
        opt.step(params, grads)
        cloud.normalize_rotations()
        if not np.isfinite(cloud.centers).all():
            raise NumericalDivergenceError(
                f"non-finite parameters after iteration {t} on view {k}")
        if loss_log is not None:
            loss_log.append((t, float(loss)))
    return cloud


def infer_look_target(cameras) -> np.ndarray:
    """Least-squares intersection of the cameras' optical axes."""
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for cam in cameras:
        fwd = cam.forward
        m = np.eye(3) - np.outer(fwd, fwd)
        a += m
        b += m @ cam.position
    if np.linalg.cond(a) > 1e10:
        raise ValueError("camera axes are degenerate: no well-defined look-at target")
    return np.linalg.solve(a, b)


def sample_novel_cameras(reference, count: int, seed: int = 0) -> list[Camera]:
    """Interpolate new inward-facing cameras between consecutive reference pairs.

    Positions come from spherical interpolation of the reference directions
    around the common look-at target, with linearly interpolated radii.
    Samples are distributed round-robin over consecutive reference pairs and
    evenly spaced within each pair, so the construction is deterministic
    (the seed is accepted for interface stability).
    """
    if len(reference) < 2:
        raise ValueError("need at least two reference cameras")
    if count == 0:
        return []
    center = infer_look_target(reference)
    offs = [cam.position - center for cam in reference]
    radii = [float(np.linalg.norm(o)) for o in offs]
    if min(radii) < 1e-9:
        raise ValueError("reference camera sits at the look-at target")
    dirs = [o / r for o, r in zip(offs, radii)]

    n_pairs = len(reference) if len(reference) > 2 else len(reference) - 1
    per_pair = [0] * n_pairs
    for m in range(count):
        per_pair[m % n_pairs] += 1

    out = []
    ref0 = reference[0]
    for p, k in enumerate(per_pair):
        i, jdx = p, (p + 1) % len(reference)
        d_i, d_j = dirs[i], dirs[jdx]
        cosang = float(np.clip(np.dot(d_i, d_j), -1.0, 1.0))
        ang = np.arccos(cosang)
        if np.sin(ang) < 1e-9 and cosang < 0:
            raise ValueError("reference cameras are collinear with the scene center")
        for c in range(k):
            frac = (c + 1) / (k + 1)
            if np.sin(ang) < 1e-9:
                d = d_i
            else:
                d = (np.sin((1 - frac) * ang) * d_i + np.sin(frac * ang) * d_j) / np.sin(ang)
            r = (1 - frac) * radii[i] + frac * radii[jdx]
            out.append(Camera.look_at(center + r * d, center, ref0.focal,
                                      ref0.width, ref0.height))
    return out
