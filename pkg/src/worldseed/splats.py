"""3D Gaussian splat scenes: differentiable rasterization and training.

The renderer is a CPU EWA splatter: each Gaussian's 3D covariance is
projected through the perspective Jacobian at its center, rasterized into
a 3-sigma footprint, and alpha-composited front to back by center depth.
Compositing runs over (splat, pixel) pairs sorted by (pixel, depth rank),
so the per-pixel accumulation order is fixed and tiling the pixel range
across workers cannot change a single bit of the output.

Gradients are hand-written vector-Jacobian products mirroring the forward
pass, validated against central finite differences in the test suite.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate
from scipy.spatial import cKDTree

from .camera import CameraIntrinsics, CameraPose
from .geometry import Z_NEAR, WorldCloud
from .validation import check_color_image, check_mask, check_unit_interval

TRUNCATION_MAHALANOBIS = 9.0     # 3-sigma footprint
INITIAL_OPACITY = 0.1
KNN_NEIGHBORS = 3
KNN_SUBSAMPLE = 50_000
LONE_POINT_SCALE = 0.01
LOG_SCALE_MIN = np.log(1e-6)
LOG_SCALE_MAX = np.log(1e3)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100

CHECKPOINT_MAGIC = b"WSPLATS\x00"
CHECKPOINT_VERSION = 1

PARAM_GROUPS = ("positions", "log_scales", "quaternions", "opacity_logits",
                "colors")


class DivergenceError(RuntimeError):
    """Training loss stayed above the divergence threshold for too long."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 300
    lr_position: float = 1.6e-4   # scaled by scene extent inside optimize
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    ssim_weight: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        check_unit_interval(self.ssim_weight, "ssim_weight")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and at least 3")


@dataclass(frozen=True)
class TrainingView:
    image: np.ndarray
    mask: np.ndarray
    pose: CameraPose

    def __post_init__(self):
        image = check_color_image(self.image, "image")
        mask = check_mask(self.mask, "mask")
        if image.shape[:2] != mask.shape:
            raise ValueError("image and mask dimensions differ")
        if not mask.any():
            raise ValueError("view mask has no valid pixels")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask)


@dataclass
class SplatScene:
    """Structure-of-arrays splat parameters plus the training views."""

    intrinsics: CameraIntrinsics
    positions: np.ndarray       # (n, 3)
    log_scales: np.ndarray      # (n, 3)
    quaternions: np.ndarray     # (n, 4) wxyz, unit
    opacity_logits: np.ndarray  # (n,)
    colors: np.ndarray          # (n, 3) in [0, 1]
    views: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64)
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64)
        self.opacity_logits = np.asarray(self.opacity_logits,
                                         dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        n = len(self.positions)
        if n < 1:
            raise ValueError("scene needs at least one splat")
        shapes = (self.positions.shape, self.log_scales.shape,
                  self.quaternions.shape, self.opacity_logits.shape,
                  self.colors.shape)
        if shapes != ((n, 3), (n, 3), (n, 4), (n,), (n, 3)):
            raise ValueError("parameter array shapes disagree")
        self.views = tuple(self.views)

    def __len__(self):
        return len(self.positions)

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def copy(self) -> "SplatScene":
        return SplatScene(self.intrinsics,
                          *(self.params()[name].copy()
                            for name in PARAM_GROUPS),
                          views=self.views)

    def extent(self) -> float:
        """Largest distance of any splat from the centroid (at least 1e-6)."""
        centroid = self.positions.mean(axis=0)
        radius = np.linalg.norm(self.positions - centroid, axis=1).max()
        return max(float(radius), 1e-6)


def init_scene(cloud: WorldCloud, intrinsics: CameraIntrinsics,
               views=()) -> SplatScene:
    """One isotropic splat per cloud point; scale from mean 3-NN distance."""
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot initialize splats from an empty cloud")
    if n == 1:
        scales = np.full(1, LONE_POINT_SCALE)
    else:
        reference = cloud.positions
        if n > KNN_SUBSAMPLE:
            stride = -(-n // KNN_SUBSAMPLE)
            reference = reference[::stride]
        tree = cKDTree(reference)
        k = min(KNN_NEIGHBORS + 1, len(reference))
        dist, _ = tree.query(cloud.positions, k=k)
        dist = dist.reshape(n, k)
        # Drop the self-match when the query point is in the reference set.
        self_match = dist[:, 0] == 0.0
        trimmed = np.where(self_match[:, None], dist[:, 1:],
                           dist[:, :k - 1])
        scales = trimmed.mean(axis=1)
        scales = np.clip(scales, np.exp(LOG_SCALE_MIN), np.exp(LOG_SCALE_MAX))
    quaternions = np.zeros((n, 4))
    quaternions[:, 0] = 1.0
    logit = float(np.log(INITIAL_OPACITY / (1.0 - INITIAL_OPACITY)))
    return SplatScene(intrinsics,
                      cloud.positions.copy(),
                      np.log(scales)[:, None].repeat(3, axis=1),
                      quaternions,
                      np.full(n, logit),
                      np.clip(cloud.colors, 0.0, 1.0),
                      views=views)


# --- quaternion algebra ------------------------------------------------------

def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (n,4) wxyz to rotation matrices (n,3,3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z),
                  2 * (x * z + w * y)], axis=1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z),
                  2 * (y * z - w * x)], axis=1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x),
                  1 - 2 * (x * x + y * y)], axis=1),
    ], axis=1)


def _rotation_vjp(q: np.ndarray, grad_rot: np.ndarray) -> np.ndarray:
    """Gradient through quat_to_rotation: contract dR/dq with grad_R."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zeros = np.zeros_like(w)
    d_w = 2 * np.stack([
        np.stack([zeros, -z, y], axis=1),
        np.stack([z, zeros, -x], axis=1),
        np.stack([-y, x, zeros], axis=1)], axis=1)
    d_x = 2 * np.stack([
        np.stack([zeros, y, z], axis=1),
        np.stack([y, -2 * x, -w], axis=1),
        np.stack([z, w, -2 * x], axis=1)], axis=1)
    d_y = 2 * np.stack([
        np.stack([-2 * y, x, w], axis=1),
        np.stack([x, zeros, z], axis=1),
        np.stack([-w, z, -2 * y], axis=1)], axis=1)
    d_z = 2 * np.stack([
        np.stack([-2 * z, -w, x], axis=1),
        np.stack([w, -2 * z, y], axis=1),
        np.stack([x, y, zeros], axis=1)], axis=1)
    return np.stack([np.einsum("nij,nij->n", grad_rot, d)
                     for d in (d_w, d_x, d_y, d_z)], axis=1)


# --- forward rasterization ---------------------------------------------------

def _splat_pairs(scene: SplatScene, intrinsics: CameraIntrinsics,
                 pose: CameraPose) -> dict:
    """Project splats and enumerate their (pixel, splat) pairs sorted by
    (pixel, depth rank). Returns everything the backward pass reuses."""
    h, w = intrinsics.shape()
    n = len(scene)
    norms = np.linalg.norm(scene.quaternions, axis=1)
    if (norms == 0).any():
        raise ValueError("zero quaternion")
    qhat = scene.quaternions / norms[:, None]
    rot = quat_to_rotation(qhat)
    eig = np.exp(2.0 * scene.log_scales)
    sigma3 = np.einsum("nij,nj,nkj->nik", rot, eig, rot)
    world_rot = pose.rotation
    p_cam = scene.positions @ world_rot.T + pose.translation
    z = p_cam[:, 2]
    visible = z > Z_NEAR
    cache = {
        "n": n, "h": h, "w": w, "qhat": qhat, "qnorm": norms, "rot": rot,
        "eig": eig, "world_rot": world_rot, "p_cam": p_cam,
        "visible": visible, "intrinsics": intrinsics,
        "sig": None, "pairs": None,
    }
    if not visible.any():
        cache["order"] = np.empty(0, dtype=int)
        return cache
    idx = np.flatnonzero(visible)
    order = idx[np.argsort(z[idx], kind="stable")]
    cache["order"] = order

    pc = p_cam[order]
    zs = pc[:, 2]
    fx, fy = intrinsics.fx, intrinsics.fy
    mu = np.stack([fx * pc[:, 0] / zs + intrinsics.cx,
                   fy * pc[:, 1] / zs + intrinsics.cy], axis=1)
    jac = np.zeros((len(order), 2, 3))
    jac[:, 0, 0] = fx / zs
    jac[:, 0, 2] = -fx * pc[:, 0] / zs ** 2
    jac[:, 1, 1] = fy / zs
    jac[:, 1, 2] = -fy * pc[:, 1] / zs ** 2
    m_world = np.einsum("ij,njk,lk->nil", world_rot, sigma3[order], world_rot)
    sigma2 = np.einsum("nij,njk,nlk->nil", jac, m_world, jac)
    a, b, c = sigma2[:, 0, 0], sigma2[:, 0, 1], sigma2[:, 1, 1]
    det = a * c - b * b
    lam_max = (a + c) / 2 + np.sqrt(((a - c) / 2) ** 2 + b * b)
    alive = det > 1e-300
    radius = np.where(alive, 3.0 * np.sqrt(np.maximum(lam_max, 0.0)), 0.0)
    inv = np.zeros_like(sigma2)
    safe_det = np.where(alive, det, 1.0)
    inv[:, 0, 0] = c / safe_det
    inv[:, 1, 1] = a / safe_det
    inv[:, 0, 1] = inv[:, 1, 0] = -b / safe_det

    x0 = np.clip(np.floor(mu[:, 0] - radius), 0, w - 1).astype(int)
    x1 = np.clip(np.ceil(mu[:, 0] + radius), 0, w - 1).astype(int)
    y0 = np.clip(np.floor(mu[:, 1] - radius), 0, h - 1).astype(int)
    y1 = np.clip(np.ceil(mu[:, 1] + radius), 0, h - 1).astype(int)
    in_frame = (alive & (mu[:, 0] + radius >= 0) & (mu[:, 0] - radius <= w - 1)
                & (mu[:, 1] + radius >= 0) & (mu[:, 1] - radius <= h - 1))
    counts = np.where(in_frame, (x1 - x0 + 1) * (y1 - y0 + 1), 0)

    cache.update(mu=mu, jac=jac, m_world=m_world, sigma2=sigma2, inv=inv,
                 sigma3_sorted=sigma3[order], zs=zs)

    total = int(counts.sum())
    if total == 0:
        cache["pairs"] = None
        return cache
    rank = np.repeat(np.arange(len(order)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    offsets = np.arange(total) - np.repeat(starts, counts)
    box_w = (x1 - x0 + 1)[rank]
    px = x0[rank] + offsets % box_w
    py = y0[rank] + offsets // box_w
    dx = px - mu[rank, 0]
    dy = py - mu[rank, 1]
    maha = (inv[rank, 0, 0] * dx * dx + 2 * inv[rank, 0, 1] * dx * dy
            + inv[rank, 1, 1] * dy * dy)
    keep = maha <= TRUNCATION_MAHALANOBIS
    rank, px, py, dx, dy, maha = (arr[keep] for arr in
                                  (rank, px, py, dx, dy, maha))
    if len(rank) == 0:
        cache["pairs"] = None
        return cache
    pixel = py * w + px
    by_pixel = np.lexsort((rank, pixel))
    rank, pixel, dx, dy, maha = (arr[by_pixel] for arr in
                                 (rank, pixel, dx, dy, maha))

    sig = 1.0 / (1.0 + np.exp(-scene.opacity_logits[order]))
    gauss = np.exp(-0.5 * maha)
    alpha = sig[rank] * gauss
    cache.update(pairs={"rank": rank, "pixel": pixel, "dx": dx, "dy": dy,
                        "maha": maha, "alpha": alpha, "gauss": gauss},
                 sig=sig)
    return cache


def _segment_starts(pixel: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.concatenate([[True], pixel[1:] != pixel[:-1]]))


# Pairs are compositied tile by tile. Tile boundaries depend only on the
# pixel ids, never on the worker count, so every worker count runs the
# exact same floating-point operations on the exact same slices.
TILE_PIXELS = 512


def _composite_range(cache, colors_sorted, lo, hi, image_flat, alpha_flat):
    """Composite the sorted pair slice [lo, hi); the slice never splits a
    pixel, so the output region is disjoint across slices."""
    pairs = cache["pairs"]
    pixel = pairs["pixel"][lo:hi]
    rank = pairs["rank"][lo:hi]
    alpha = pairs["alpha"][lo:hi]
    log_keep = np.log1p(-alpha)
    cum = np.cumsum(log_keep)
    starts = _segment_starts(pixel)
    base = np.where(starts > 0, cum[starts - 1], 0.0)
    lengths = np.diff(np.concatenate([starts, [len(pixel)]]))
    trans = np.exp(cum - log_keep - np.repeat(base, lengths))
    weight = alpha * trans
    lo_pix = int(pixel[0])
    hi_pix = int(pixel[-1]) + 1
    span = hi_pix - lo_pix
    local = pixel - lo_pix
    for ch in range(3):
        image_flat[lo_pix:hi_pix, ch] += np.bincount(
            local, weights=weight * colors_sorted[rank, ch], minlength=span)
    alpha_flat[lo_pix:hi_pix] += np.bincount(local, weights=weight,
                                             minlength=span)
    return trans


def _forward(scene: SplatScene, intrinsics: CameraIntrinsics,
             pose: CameraPose, n_workers: int = 1):
    cache = _splat_pairs(scene, intrinsics, pose)
    h, w = intrinsics.shape()
    image_flat = np.zeros((h * w, 3))
    alpha_flat = np.zeros(h * w)
    if cache["pairs"] is None:
        cache["trans"] = None
        return image_flat.reshape(h, w, 3), alpha_flat.reshape(h, w), cache
    colors_sorted = scene.colors[cache["order"]]
    pixel = cache["pairs"]["pixel"]
    total = len(pixel)
    cuts = np.arange(TILE_PIXELS, h * w, TILE_PIXELS)
    bounds = np.concatenate([[0], np.searchsorted(pixel, cuts), [total]])
    slices = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])
              if hi > lo]
    trans = np.empty(total)
    if n_workers <= 1 or len(slices) == 1:
        for lo, hi in slices:
            trans[lo:hi] = _composite_range(cache, colors_sorted, lo, hi,
                                            image_flat, alpha_flat)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = {
                pool.submit(_composite_range, cache, colors_sorted, lo, hi,
                            image_flat, alpha_flat): (lo, hi)
                for lo, hi in slices
            }
            for future, (lo, hi) in futures.items():
                trans[lo:hi] = future.result()
    cache["trans"] = trans
    cache["colors_sorted"] = colors_sorted
    return image_flat.reshape(h, w, 3), alpha_flat.reshape(h, w), cache


def rasterize(scene: SplatScene, intrinsics: CameraIntrinsics,
              pose: CameraPose, n_workers: int = 1):
    """Render the scene; returns (color image, alpha coverage grid)."""
    image, alpha, _ = _forward(scene, intrinsics, pose, n_workers)
    return image, alpha


# --- backward rasterization --------------------------------------------------

def _backward(cache: dict, grad_image: np.ndarray) -> dict:
    """Vector-Jacobian product of the rendered image w.r.t. all splat
    parameters. grad_image is (H, W, 3)."""
    n = cache["n"]
    grads = {"positions": np.zeros((n, 3)),
             "log_scales": np.zeros((n, 3)),
             "quaternions": np.zeros((n, 4)),
             "opacity_logits": np.zeros(n),
             "colors": np.zeros((n, 3))}
    if cache["pairs"] is None:
        return grads
    pairs = cache["pairs"]
    order = cache["order"]
    m = len(order)
    rank = pairs["rank"]
    pixel = pairs["pixel"]
    alpha = pairs["alpha"]
    trans = cache["trans"]
    colors_sorted = cache["colors_sorted"]
    g_flat = grad_image.reshape(-1, 3)
    g_pix = g_flat[pixel]

    weight = alpha * trans

    def per_splat(values):
        return np.bincount(rank, weights=values, minlength=m)

    grad_colors_sorted = np.stack(
        [per_splat(weight * g_pix[:, ch]) for ch in range(3)], axis=1)

    # d(loss)/d(alpha_k) = g.c_k T_k - sum_{j>k} g.c_j a_j T_j / (1 - a_k)
    gdot = np.einsum("pc,pc->p", g_pix, colors_sorted[rank])
    contrib = gdot * weight
    starts = _segment_starts(pixel)
    lengths = np.diff(np.concatenate([starts, [len(pixel)]]))
    cum = np.cumsum(contrib)
    seg_end = cum[starts + lengths - 1]
    suffix = np.repeat(seg_end, lengths) - cum + contrib
    after = suffix - contrib
    grad_alpha = gdot * trans - after / (1.0 - alpha)

    sig = cache["sig"]
    grad_logit_sorted = per_splat(grad_alpha * alpha * (1.0 - sig[rank]))
    grad_maha = grad_alpha * alpha * (-0.5)

    inv = cache["inv"]
    dx, dy = pairs["dx"], pairs["dy"]
    vx = inv[rank, 0, 0] * dx + inv[rank, 0, 1] * dy
    vy = inv[rank, 1, 0] * dx + inv[rank, 1, 1] * dy
    grad_mu_sorted = np.stack([per_splat(-2.0 * grad_maha * vx),
                               per_splat(-2.0 * grad_maha * vy)], axis=1)
    # d maha / d Sigma2 = -(v v^T) with v = inv @ d
    g_xx = per_splat(-grad_maha * vx * vx)
    g_xy = per_splat(-grad_maha * vx * vy)
    g_yy = per_splat(-grad_maha * vy * vy)
    grad_sigma2_sorted = np.stack(
        [np.stack([g_xx, g_xy], axis=1),
         np.stack([g_xy, g_yy], axis=1)], axis=1)

    jac = cache["jac"]
    m_world = cache["m_world"]
    grad_jac = 2.0 * np.einsum("nij,njk,nkl->nil", grad_sigma2_sorted, jac,
                               m_world)
    grad_m_world = np.einsum("nji,njk,nkl->nil", jac, grad_sigma2_sorted, jac)
    world_rot = cache["world_rot"]
    grad_sigma3 = np.einsum("ji,njk,kl->nil", world_rot, grad_m_world,
                            world_rot)

    pc = cache["p_cam"][order]
    zs = cache["zs"]
    fx = cache["intrinsics"].fx
    fy = cache["intrinsics"].fy
    inv_z = 1.0 / zs
    inv_z2 = inv_z ** 2
    # Projection path: d mu / d p_cam is the Jacobian itself.
    grad_pc = np.einsum("nji,nj->ni", jac, grad_mu_sorted)
    # Jacobian path: J's entries depend on p_cam directly.
    grad_pc[:, 0] += grad_jac[:, 0, 2] * (-fx * inv_z2)
    grad_pc[:, 1] += grad_jac[:, 1, 2] * (-fy * inv_z2)
    grad_pc[:, 2] += (grad_jac[:, 0, 0] * (-fx * inv_z2)
                      + grad_jac[:, 1, 1] * (-fy * inv_z2)
                      + grad_jac[:, 0, 2] * (2.0 * fx * pc[:, 0] * inv_z ** 3)
                      + grad_jac[:, 1, 2] * (2.0 * fy * pc[:, 1] * inv_z ** 3))
    grad_positions_sorted = grad_pc @ world_rot

    rot = cache["rot"][order]
    eig = cache["eig"][order]
    grad_rot = 2.0 * np.einsum("nij,njk,nk->nik", grad_sigma3, rot, eig)
    inner = np.einsum("nji,njk,nkl->nil", rot, grad_sigma3, rot)
    grad_log_scales_sorted = 2.0 * eig * np.einsum("nii->ni", inner)

    qhat = cache["qhat"][order]
    grad_qhat = _rotation_vjp(qhat, grad_rot)
    qnorm = cache["qnorm"][order]
    proj = grad_qhat - qhat * np.einsum("ni,ni->n", qhat, grad_qhat)[:, None]
    grad_quat_sorted = proj / qnorm[:, None]

    grads["colors"][order] = grad_colors_sorted
    grads["opacity_logits"][order] = grad_logit_sorted
    grads["positions"][order] = grad_positions_sorted
    grads["log_scales"][order] = grad_log_scales_sorted
    grads["quaternions"][order] = grad_quat_sorted
    return grads


# --- masked loss -------------------------------------------------------------

def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _masked_blur(field: np.ndarray, mask_f: np.ndarray, window: np.ndarray,
                 normalizer: np.ndarray) -> np.ndarray:
    return correlate(field * mask_f, window, mode="constant", cval=0.0) \
        / normalizer


def _ssim_stats(render, target, mask_f, window):
    normalizer = correlate(mask_f, window, mode="constant", cval=0.0)
    normalizer = np.where(normalizer > 0, normalizer, 1.0)
    stats = []
    for ch in range(3):
        x = render[..., ch]
        y = target[..., ch]
        mu_x = _masked_blur(x, mask_f, window, normalizer)
        mu_y = _masked_blur(y, mask_f, window, normalizer)
        var_x = _masked_blur(x * x, mask_f, window, normalizer) - mu_x ** 2
        var_y = _masked_blur(y * y, mask_f, window, normalizer) - mu_y ** 2
        cov = _masked_blur(x * y, mask_f, window, normalizer) - mu_x * mu_y
        n1 = 2 * mu_x * mu_y + SSIM_C1
        n2 = 2 * cov + SSIM_C2
        d1 = mu_x ** 2 + mu_y ** 2 + SSIM_C1
        d2 = var_x + var_y + SSIM_C2
        stats.append({"mu_x": mu_x, "mu_y": mu_y, "n1": n1, "n2": n2,
                      "d1": d1, "d2": d2, "ssim": (n1 * n2) / (d1 * d2)})
    return stats, normalizer


def masked_ssim(render: np.ndarray, target: np.ndarray, mask: np.ndarray,
                window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over mask=1 pixels; window sums renormalized over the
    valid pixels inside each window."""
    mask_f = mask.astype(np.float64)
    window = _gaussian_window(window_size, sigma)
    stats, _ = _ssim_stats(render, target, mask_f, window)
    return float(np.mean([s["ssim"][mask].mean() for s in stats]))


def masked_psnr(render: np.ndarray, target: np.ndarray, mask: np.ndarray,
                cap: float = 99.0) -> float:
    """PSNR over mask=1 pixels for unit-range images, capped for exact
    matches."""
    diff = (render - target)[mask]
    mse = float((diff ** 2).mean())
    if mse <= 0.0:
        return cap
    return min(cap, float(-10.0 * np.log10(mse)))


def masked_loss(render: np.ndarray, target: np.ndarray, mask: np.ndarray,
                cfg: TrainConfig) -> float:
    """(1 - lambda) L1 + lambda (1 - SSIM), both over mask=1 pixels only."""
    mask = check_mask(mask, "mask")
    if render.shape != target.shape or render.shape[:2] != mask.shape:
        raise ValueError("render, target, and mask dimensions differ")
    if not mask.any():
        raise ValueError("mask has no valid pixels")
    l1 = float(np.abs(render - target)[mask].mean())
    ssim = masked_ssim(render, target, mask, cfg.ssim_window, cfg.ssim_sigma)
    return (1.0 - cfg.ssim_weight) * l1 + cfg.ssim_weight * (1.0 - ssim)


def masked_loss_gradient(render: np.ndarray, target: np.ndarray,
                         mask: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """d masked_loss / d render, exactly zero at mask=0 pixels."""
    mask_f = mask.astype(np.float64)
    n_valid = mask.sum()
    grad = np.zeros_like(render)

    sign = np.sign(render - target) * mask_f[..., None]
    grad += (1.0 - cfg.ssim_weight) * sign / (n_valid * 3)

    window = _gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    stats, normalizer = _ssim_stats(render, target, mask_f, window)
    # loss term is lambda (1 - mean ssim): upstream per-pixel weight.
    upstream = -cfg.ssim_weight * mask_f / (n_valid * 3)

    def adjoint_blur(u):
        return mask_f * correlate(u / normalizer, window, mode="constant",
                                  cval=0.0)

    for ch, s in enumerate(stats):
        inv_dd = 1.0 / (s["d1"] * s["d2"])
        d_n1 = upstream * s["n2"] * inv_dd
        d_n2 = upstream * s["n1"] * inv_dd
        d_d1 = -upstream * s["ssim"] / s["d1"]
        d_d2 = -upstream * s["ssim"] / s["d2"]
        # Through the statistics of x: mu_x, var_x, cov.
        d_mu = 2 * s["mu_y"] * d_n1 + 2 * s["mu_x"] * d_d1
        d_var = d_d2
        d_cov = 2 * d_n2
        # var_x = blur(x^2) - mu_x^2; cov = blur(xy) - mu_x mu_y.
        d_mu = d_mu - 2 * s["mu_x"] * d_var - s["mu_y"] * d_cov
        x = render[..., ch]
        y = target[..., ch]
        grad[..., ch] += adjoint_blur(d_mu)
        grad[..., ch] += 2 * x * adjoint_blur(d_var)
        grad[..., ch] += y * adjoint_blur(d_cov)
    return grad


def gradients(scene: SplatScene, view: TrainingView, cfg: TrainConfig,
              n_workers: int = 1):
    """Loss and its gradient w.r.t. every splat parameter for one view."""
    image, _, cache = _forward(scene, scene.intrinsics, view.pose, n_workers)
    loss = masked_loss(image, view.image, view.mask, cfg)
    grad_image = masked_loss_gradient(image, view.image, view.mask, cfg)
    return loss, _backward(cache, grad_image)


# --- optimization ------------------------------------------------------------

def optimize(scene: SplatScene, cfg: TrainConfig) -> SplatScene:
    """Adam over all parameter groups; deterministic given cfg.seed.

    Tracks the best running parameters so the returned scene's training
    loss never exceeds the initial loss; aborts when the per-step loss
    stays above 10x the initial mean loss for 100 consecutive steps.
    """
    if not scene.views:
        raise ValueError("scene has no training views")
    work = scene.copy()
    lrs = {"positions": cfg.lr_position * work.extent(),
           "colors": cfg.lr_color,
           "opacity_logits": cfg.lr_opacity,
           "log_scales": cfg.lr_scale,
           "quaternions": cfg.lr_rotation}
    first_moment = {k: np.zeros_like(v) for k, v in work.params().items()}
    second_moment = {k: np.zeros_like(v) for k, v in work.params().items()}

    def training_loss(scene_like: SplatScene) -> float:
        losses = [masked_loss(rasterize(scene_like, scene_like.intrinsics,
                                        view.pose)[0],
                              view.image, view.mask, cfg)
                  for view in scene_like.views]
        return float(np.mean(losses))

    initial = training_loss(work)
    threshold = DIVERGENCE_FACTOR * initial

    best_params = {k: v.copy() for k, v in work.params().items()}
    best_proxy = initial
    rng = np.random.default_rng(cfg.seed)
    view_order = []
    epoch = []
    high_steps = 0
    for step in range(1, cfg.iterations + 1):
        if not view_order:
            view_order = list(rng.permutation(len(work.views)))
        view = work.views[view_order.pop()]
        loss, grads = gradients(work, view, cfg)
        if loss > threshold:
            high_steps += 1
            if high_steps >= DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"loss {loss:.3g} above {threshold:.3g} for "
                    f"{DIVERGENCE_PATIENCE} consecutive steps")
        else:
            high_steps = 0
        for name, grad in grads.items():
            m = first_moment[name]
            v = second_moment[name]
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * grad ** 2
            m_hat = m / (1 - ADAM_BETA1 ** step)
            v_hat = v / (1 - ADAM_BETA2 ** step)
            param = getattr(work, name)
            param -= lrs[name] * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        norms = np.linalg.norm(work.quaternions, axis=1, keepdims=True)
        work.quaternions /= np.where(norms > 0, norms, 1.0)
        np.clip(work.log_scales, LOG_SCALE_MIN, LOG_SCALE_MAX,
                out=work.log_scales)

        # The mean per-view loss of the last full pass is a cheap proxy for
        # the training loss; snapshot the parameters after the best pass.
        epoch.append(loss)
        if len(epoch) == len(work.views):
            epoch_mean = float(np.mean(epoch))
            epoch = []
            if epoch_mean < best_proxy:
                best_proxy = epoch_mean
                best_params = {k: v.copy() for k, v in work.params().items()}
    if training_loss(work) <= initial:
        return work
    snapshot = SplatScene(work.intrinsics,
                          *(best_params[name] for name in PARAM_GROUPS),
                          views=work.views)
    if training_loss(snapshot) <= initial:
        return snapshot
    return scene.copy()


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, scene: SplatScene) -> None:
    intr = scene.intrinsics
    header = CHECKPOINT_MAGIC + struct.pack(
        "<I", CHECKPOINT_VERSION) + struct.pack(
        "<ddddII", intr.fx, intr.fy, intr.cx, intr.cy, intr.width,
        intr.height) + struct.pack("<Q", len(scene))
    with Path(path).open("wb") as fh:
        fh.write(header)
        for name in PARAM_GROUPS:
            fh.write(np.ascontiguousarray(
                scene.params()[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> SplatScene:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a splat checkpoint")
    version = struct.unpack_from("<I", raw, 8)[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    fx, fy, cx, cy, width, height = struct.unpack_from("<ddddII", raw, 12)
    n = struct.unpack_from("<Q", raw, 52)[0]
    intr = CameraIntrinsics(fx, fy, cx, cy, width, height)
    shapes = {"positions": (n, 3), "log_scales": (n, 3),
              "quaternions": (n, 4), "opacity_logits": (n,),
              "colors": (n, 3)}
    offset = 60
    arrays = {}
    for name in PARAM_GROUPS:
        count = int(np.prod(shapes[name]))
        end = offset + count * 8
        if end > len(raw):
            raise ValueError(f"{path}: truncated checkpoint")
        arrays[name] = np.frombuffer(raw[offset:end],
                                     dtype="<f8").reshape(shapes[name]).copy()
        offset = end
    return SplatScene(intr, *(arrays[name] for name in PARAM_GROUPS))
