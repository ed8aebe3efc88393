"""CPU forward splatting of Gaussian scenes plus the render-quality metrics.

The rasterizer follows the standard 3DGS forward pass: world covariances
R S S^T R^T, perspective-projected 2D covariances via the pinhole Jacobian,
front-to-back alpha compositing with a transmittance cutoff. Output is a
color map, an alpha-weighted mean depth map, and the accumulated alpha map.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .geometry import quat_to_matrix
from .scene_io import CameraPose, GaussianScene

# isotropic screen-space dilation applied to every projected covariance (px^2)
COV_DILATION = 0.3
# compositing stops once every pixel's transmittance is below this
TRANSMITTANCE_CUTOFF = 1e-4
# contributions below this alpha are skipped
ALPHA_SKIP = 1e-4

_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) world units, 0 where alpha ~ 0
    alpha: np.ndarray  # (H, W) in [0, 1]


@dataclass(frozen=True)
class QualityReport:
    black_pixel_ratio: float
    depth_range_score: float
    quality_score: float
    passed: bool


def _camera_space(scene: GaussianScene, pose: CameraPose):
    R = pose.rotation_matrix()
    return scene.centers @ R.T + pose.translation


def _primitive_priority(scene: GaussianScene, epsilon: float = 1e-8) -> np.ndarray:
    """Certainty score alpha / (vol + eps), the ranking key for max_count."""
    volumes = np.exp(scene.log_scales.sum(axis=1))
    return scene.opacities / (volumes + epsilon)


def render(scene: GaussianScene, pose: CameraPose, max_count: int = 200000) -> RenderOutput:
    """Forward-splat the scene into the given camera.

    Only the max_count highest-certainty primitives are considered;
    primitives are composited front to back in camera-depth order.
    """
    w, h = pose.image_size
    color = np.zeros((h, w, 3))
    depth_acc = np.zeros((h, w))
    alpha_acc = np.zeros((h, w))
    transmittance = np.ones((h, w))
    if scene.count == 0:
        return RenderOutput(color, depth_acc, alpha_acc)

    if scene.count > max_count:
        keep = np.argsort(-_primitive_priority(scene))[:max_count]
        keep.sort()
    else:
        keep = slice(None)
    centers = scene.centers[keep]
    log_scales = scene.log_scales[keep]
    rotations = scene.rotations[keep]
    opacities = scene.opacities[keep]
    colors = scene.dc_colors[keep]

    Rcam = pose.rotation_matrix()
    cam = centers @ Rcam.T + pose.translation
    z = cam[:, 2]
    visible = (z > pose.near) & (z < pose.far)
    if not np.any(visible):
        return RenderOutput(color, depth_acc, alpha_acc)

    idx = np.nonzero(visible)[0]
    idx = idx[np.argsort(z[idx], kind="stable")]

    fx, fy = pose.focal
    cx, cy = pose.principal
    limx = 1.3 * (w / (2.0 * fx))
    limy = 1.3 * (h / (2.0 * fy))
    xs = np.arange(w)
    ys = np.arange(h)

    scales = np.exp(log_scales)
    for j in idx:
        pc = cam[j]
        zj = pc[2]
        u = fx * pc[0] / zj + cx
        v = fy * pc[1] / zj + cy

        S = np.diag(scales[j])
        Rj = quat_to_matrix(rotations[j])
        cov3 = Rj @ S @ S @ Rj.T
        cov_cam = Rcam @ cov3 @ Rcam.T
        # clamp the projection point into 1.3x the frustum so the Jacobian of
        # far off-axis primitives cannot blow up their screen footprint
        tx = np.clip(pc[0] / zj, -limx, limx) * zj
        ty = np.clip(pc[1] / zj, -limy, limy) * zj
        J = np.array([
            [fx / zj, 0.0, -fx * tx / (zj * zj)],
            [0.0, fy / zj, -fy * ty / (zj * zj)],
        ])
        cov2 = J @ cov_cam @ J.T + COV_DILATION * np.eye(2)
        det = cov2[0, 0] * cov2[1, 1] - cov2[0, 1] ** 2
        if det <= 0 or not np.isfinite(det):
            continue

        mid = 0.5 * (cov2[0, 0] + cov2[1, 1])
        lam_max = mid + np.sqrt(max(mid * mid - det, 0.0))
        radius = 3.0 * np.sqrt(lam_max)
        x0 = max(int(np.floor(u - radius)), 0)
        x1 = min(int(np.ceil(u + radius)) + 1, w)
        y0 = max(int(np.floor(v - radius)), 0)
        y1 = min(int(np.ceil(v + radius)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue

        inv = np.array([[cov2[1, 1], -cov2[0, 1]], [-cov2[0, 1], cov2[0, 0]]]) / det
        dx = xs[x0:x1] - u
        dy = ys[y0:y1] - v
        quad = (
            inv[0, 0] * dx[None, :] ** 2
            + 2.0 * inv[0, 1] * dy[:, None] * dx[None, :]
            + inv[1, 1] * dy[:, None] ** 2
        )
        alpha_hat = opacities[j] * np.exp(-0.5 * quad)
        mask = alpha_hat >= ALPHA_SKIP
        if not np.any(mask):
            continue

        tile = transmittance[y0:y1, x0:x1]
        contrib = np.where(mask, alpha_hat * tile, 0.0)
        color[y0:y1, x0:x1] += contrib[:, :, None] * colors[j]
        depth_acc[y0:y1, x0:x1] += contrib * zj
        alpha_acc[y0:y1, x0:x1] += contrib
        transmittance[y0:y1, x0:x1] = tile * np.where(mask, 1.0 - alpha_hat, 1.0)

        if transmittance.max() < TRANSMITTANCE_CUTOFF:
            break

    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(alpha_acc > 1e-6, depth_acc / np.maximum(alpha_acc, 1e-12), 0.0)
    return RenderOutput(np.clip(color, 0.0, 1.0), depth, np.clip(alpha_acc, 0.0, 1.0))


def black_pixel_ratio(out: RenderOutput, alpha_floor: float = 0.05) -> float:
    """Fraction of pixels whose accumulated alpha stays under the floor."""
    if not (0 <= alpha_floor <= 1):
        raise ValueError("alpha_floor must be in [0, 1]")
    return float(np.mean(out.alpha < alpha_floor))


def depth_range_score(out: RenderOutput, crop: float = 0.7, lo: float = 5.0,
                      hi: float = 95.0, scene_diag: float = 1.0) -> float:
    """Normalized depth percentile spread inside the central crop.

    Returns (P_hi - P_lo) / scene_diag over valid (alpha-backed) depths in
    the central `crop` fraction of the frame; 0 when fewer than 1% of crop
    pixels carry depth.
    """
    if not (0 < crop <= 1):
        raise ValueError("crop must be in (0, 1]")
    if not (0 <= lo < hi <= 100):
        raise ValueError("need 0 <= lo < hi <= 100")
    h, w = out.depth.shape
    mh = int(round(h * (1 - crop) / 2))
    mw = int(round(w * (1 - crop) / 2))
    depth = out.depth[mh:h - mh, mw:w - mw]
    valid = depth[depth > 0]
    if valid.size < 0.01 * depth.size or valid.size < 2:
        return 0.0
    p_lo, p_hi = np.percentile(valid, [lo, hi])
    return float((p_hi - p_lo) / scene_diag)


def _mscn(gray: np.ndarray) -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients (7x7 Gaussian window)."""
    x = np.arange(-3, 4, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * (7.0 / 6.0) ** 2))
    k = np.outer(g, g)
    k /= k.sum()
    mu = convolve2d(gray, k, mode="same", boundary="symm")
    sigma = np.sqrt(np.abs(convolve2d(gray * gray, k, mode="same", boundary="symm") - mu * mu))
    return (gray - mu) / (sigma + 1.0 / 255.0)


def quality_score(image: np.ndarray) -> float:
    """No-reference quality heuristic in [0, 1]; lower is better.

    Blends Laplacian-variance sharpness with how Gaussian-like the MSCN
    coefficient distribution is (natural images sit near kurtosis 3).
    Deterministic; a stand-in scorer behind the same thresholding contract
    as any plugged-in model.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("empty image")
    gray = image.mean(axis=2) if image.ndim == 3 else image

    lap = convolve2d(gray, _LAPLACIAN, mode="valid")
    lap_var = float(lap.var())
    sharpness = lap_var / (lap_var + 2e-4)

    mscn = _mscn(gray)
    var = float(mscn.var())
    if var < 1e-12:
        naturalness = 0.0
    else:
        kurt = float(np.mean((mscn - mscn.mean()) ** 4) / var**2)
        naturalness = float(np.exp(-((np.log(kurt / 3.0)) ** 2) / 0.5))

    blended = 0.6 * sharpness + 0.4 * naturalness
    return float(1.0 - np.clip(blended, 0.0, 1.0))


def assess_quality(out: RenderOutput, scene_diag: float, quality_max: float = 0.5,
                   depth_range_min: float = 0.1, black_ratio_max: float = 0.15,
                   alpha_floor: float = 0.05, crop: float = 0.7,
                   scorer=quality_score) -> QualityReport:
    """Gate a render: quality score, depth spread, and coverage must all pass."""
    ratio = black_pixel_ratio(out, alpha_floor)
    spread = depth_range_score(out, crop=crop, scene_diag=scene_diag)
    score = scorer(out.color)
    passed = (score < quality_max) and (spread > depth_range_min) and (ratio < black_ratio_max)
    return QualityReport(ratio, spread, score, passed)


def write_pfm(path, data: np.ndarray) -> None:
    """Little-endian grayscale PFM (rows bottom to top)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("PFM writer expects a 2D array")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(data[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(4 * w * h), dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float32)


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")
