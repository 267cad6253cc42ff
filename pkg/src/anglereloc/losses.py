"""Losses over scene-coordinate predictions, with analytic gradients.

Every loss reports its value, the per-point gradient with respect to the
predicted world coordinate, and stability diagnostics (behind-camera counts,
non-finite flags). The plain reprojection loss is deliberately unguarded:
its divergence near the camera plane and its zero-loss antipodal solutions
are the pathologies the angle-based loss exists to remove, so they must stay
observable. Only the angle loss carries an ``epsilon_norm`` guard, which
keeps its value and gradient finite for predictions arbitrarily close to the
camera center.

Array-first design: the ``*_terms`` kernels operate on (N, 3) prediction and
(N, 2) pixel batches and are what training uses; ``reproj_point`` /
``angle_point`` wrap them for single points.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from anglereloc.geometry import (
    CameraIntrinsics,
    DepthStatus,
    PoseSE3,
    depth_statuses,
    ray_vectors,
)


class IndexMismatchError(Exception):
    """Predictions and observations refer to different point sets."""


class MissingPoseError(Exception):
    """A referenced image has no known pose."""


class DimensionMismatchError(Exception):
    """Image operands have incompatible shapes."""


class LossMode(enum.Enum):
    REPROJ = "reproj"
    ANGLE = "angle"


# SSIM stabilizers for intensities in [0, 1]
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossConfig:
    """Balance weights and guards shared by the composite losses."""

    lambda_multiview: float = 60.0
    lambda_photo: float = 20.0
    alpha_ssim: float = 0.85
    epsilon_norm: float = 1e-8

    def __post_init__(self):
        if min(self.lambda_multiview, self.lambda_photo, self.alpha_ssim) < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.epsilon_norm > 0:
            raise ValueError("epsilon_norm must be positive")


@dataclass(frozen=True)
class PointLossTerm:
    """One point's loss value, gradient w.r.t. its world coordinate, and
    diagnostics: the depth status of the prediction and the angle between
    the predicted and observed rays."""

    value: float
    grad: np.ndarray
    depth_status: DepthStatus
    angle_theta: float


@dataclass
class LossReport:
    """Per-point loss arrays for one image plus aggregate diagnostics.

    ``total`` sums only the finite per-point values; non-finite terms are
    surfaced through ``nonfinite`` instead of poisoning the sum.
    """

    point_ids: np.ndarray
    values: np.ndarray
    grads: np.ndarray
    statuses: np.ndarray
    thetas: np.ndarray
    valid_mask: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return float(np.sum(self.values[np.isfinite(self.values)]))

    @property
    def behind_count(self) -> int:
        return int(np.sum(self.statuses == int(DepthStatus.BEHIND)))

    @property
    def nonfinite(self) -> bool:
        return bool(
            np.any(~np.isfinite(self.values)) or np.any(~np.isfinite(self.grads))
        )

    @property
    def valid_fraction(self) -> float:
        if self.valid_mask is None:
            return 1.0
        return float(np.mean(self.valid_mask)) if len(self.valid_mask) else 0.0

    @property
    def terms(self) -> list[PointLossTerm]:
        return [
            PointLossTerm(
                float(self.values[i]),
                self.grads[i].copy(),
                DepthStatus(int(self.statuses[i])),
                float(self.thetas[i]),
            )
            for i in range(len(self.values))
        ]


def _angles_between(D, rays, norms_D, norms_d):
    with np.errstate(invalid="ignore", divide="ignore"):
        cosines = np.sum(D * rays, axis=1) / (np.maximum(norms_D, 1e-300) * norms_d)
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def reproj_terms(intr: CameraIntrinsics, pose: PoseSE3, preds, pixels):
    """Plain reprojection loss per point: pixel distance between the
    projected prediction and the observation.

    Returns ``(values, grads, statuses, thetas)`` over the batch. There is
    no guard at Z = 0: values and gradients go non-finite there, which is
    exactly what the diagnostics are meant to catch.
    """
    preds = np.asarray(preds, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    R = pose.rotation
    D = pose.world_to_camera(preds)
    rays = ray_vectors(intr, pixels)
    z = D[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = intr.f * D[:, :2] / z[:, None] + np.array([intr.cx, intr.cy])
        r = proj - pixels
        values = np.linalg.norm(r, axis=1)
        rhat = np.where(values[:, None] > 0, r / values[:, None], 0.0)
        # rows of the projection Jacobian dr/dD, contracted with rhat
        gx = intr.f / z
        grad_D = np.empty_like(D)
        grad_D[:, 0] = gx * rhat[:, 0]
        grad_D[:, 1] = gx * rhat[:, 1]
        grad_D[:, 2] = -gx / z * (D[:, 0] * rhat[:, 0] + D[:, 1] * rhat[:, 1])
    grads = grad_D @ R.T
    norms_D = np.linalg.norm(D, axis=1)
    norms_d = np.linalg.norm(rays, axis=1)
    thetas = _angles_between(D, rays, norms_D, norms_d)
    return values, grads, depth_statuses(z), thetas


def angle_terms(
    intr: CameraIntrinsics, pose: PoseSE3, preds, pixels, eps_norm: float = 1e-8
):
    """Angle-based reprojection loss per point.

    The prediction is rescaled onto the sphere of radius ``|ray|`` around
    the camera center and compared to the observed ray vector, so the value
    equals the chord ``2 |ray| sin(theta / 2)``. Bounded by ``2 |ray|``, and
    with the ``eps_norm`` guard its gradient stays finite all the way to the
    camera center.
    """
    preds = np.asarray(preds, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    R = pose.rotation
    D = pose.world_to_camera(preds)
    rays = ray_vectors(intr, pixels)
    norms_d = np.linalg.norm(rays, axis=1)
    norms_D_raw = np.linalg.norm(D, axis=1)
    norms_D = np.maximum(norms_D_raw, eps_norm)
    scale = norms_d / norms_D
    g = scale[:, None] * D - rays
    values = np.linalg.norm(g, axis=1)
    with np.errstate(invalid="ignore"):
        ghat = np.where(values[:, None] > 0, g / values[:, None], 0.0)
    grad_D = scale[:, None] * ghat
    # the 1/|D| factor is constant below the guard, so its derivative drops
    free = norms_D_raw > eps_norm
    dot = np.sum(D * ghat, axis=1)
    grad_D[free] -= (norms_d[free] * dot[free] / norms_D[free] ** 3)[:, None] * D[free]
    grads = grad_D @ R.T
    thetas = _angles_between(D, rays, norms_D_raw, norms_d)
    return values, grads, depth_statuses(D[:, 2]), thetas


def reproj_point(
    intr: CameraIntrinsics, pose: PoseSE3, y, pixel
) -> PointLossTerm:
    """Single-point plain reprojection loss term."""
    values, grads, statuses, thetas = reproj_terms(
        intr, pose, np.asarray(y)[None, :], np.asarray(pixel)[None, :]
    )
    return PointLossTerm(
        float(values[0]), grads[0], DepthStatus(int(statuses[0])), float(thetas[0])
    )


def angle_point(
    intr: CameraIntrinsics,
    pose: PoseSE3,
    y,
    pixel,
    cfg: LossConfig = LossConfig(),
) -> PointLossTerm:
    """Single-point angle-based reprojection loss term."""
    values, grads, statuses, thetas = angle_terms(
        intr,
        pose,
        np.asarray(y)[None, :],
        np.asarray(pixel)[None, :],
        cfg.epsilon_norm,
    )
    return PointLossTerm(
        float(values[0]), grads[0], DepthStatus(int(statuses[0])), float(thetas[0])
    )


def _check_ids(pred_ids, obs_ids):
    pred_ids = np.asarray(pred_ids)
    obs_ids = np.asarray(obs_ids)
    if pred_ids.shape != obs_ids.shape or np.any(pred_ids != obs_ids):
        raise IndexMismatchError("prediction and observation point sets differ")


@dataclass(frozen=True)
class PredictionGrid:
    """Scene-coordinate predictions for one image, aligned with its
    observation list: ``coords[i]`` is the predicted world position of
    ``point_ids[i]``."""

    point_ids: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.point_ids)
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.shape != (len(ids), 3):
            raise IndexMismatchError("coords must be (N, 3) matching point_ids")
        object.__setattr__(self, "point_ids", ids)
        object.__setattr__(self, "coords", coords)


def image_loss(
    mode: LossMode,
    intr: CameraIntrinsics,
    pose: PoseSE3,
    predictions: PredictionGrid,
    observations,
    cfg: LossConfig = LossConfig(),
) -> LossReport:
    """Sum of per-point loss terms over one image's observations.

    ``observations`` is any object with ``point_ids`` (N,) and ``pixels``
    (N, 2) arrays in the same order as the predictions.
    """
    _check_ids(predictions.point_ids, observations.point_ids)
    kernel = reproj_terms if mode == LossMode.REPROJ else angle_terms
    if mode == LossMode.REPROJ:
        values, grads, statuses, thetas = kernel(
            intr, pose, predictions.coords, observations.pixels
        )
    else:
        values, grads, statuses, thetas = kernel(
            intr, pose, predictions.coords, observations.pixels, cfg.epsilon_norm
        )
    return LossReport(
        np.asarray(predictions.point_ids).copy(), values, grads, statuses, thetas
    )


def multiview_image_loss(
    intr: CameraIntrinsics,
    poses,
    image_id,
    predictions: PredictionGrid,
    observations_by_image,
    covis,
    cfg: LossConfig = LossConfig(),
    rng: Optional[np.random.Generator] = None,
) -> LossReport:
    """Angle loss with multi-view correspondence terms for one image.

    Points without correspondences contribute their single-view angle term.
    Each corresponded point contributes, weighted by ``lambda_multiview``,
    its angle term in this image plus one more in a neighbor image drawn
    uniformly (via ``rng``) from the images that also see the point; the
    same predicted coordinate is reprojected there, so gradients from both
    views accumulate into it.

    ``poses`` and ``observations_by_image`` are mappings keyed by image id;
    ``covis.other_images(point_id, image_id)`` lists the other images seeing
    a point. With no correspondences this reduces exactly to
    ``image_loss(ANGLE, ...)``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    obs_i = observations_by_image[image_id]
    _check_ids(predictions.point_ids, obs_i.point_ids)
    if image_id not in poses:
        raise MissingPoseError(f"no pose for image {image_id}")
    values, grads, statuses, thetas = angle_terms(
        intr, poses[image_id], predictions.coords, obs_i.pixels, cfg.epsilon_norm
    )
    point_ids = np.asarray(predictions.point_ids)

    # draw one extra view per corresponded point, in observation order
    extra: dict = {}
    for row, k in enumerate(point_ids):
        others = covis.other_images(k, image_id)
        if len(others) == 0:
            continue
        m = others[int(rng.integers(len(others)))]
        extra.setdefault(m, []).append(row)

    if extra:
        lam = cfg.lambda_multiview
        corresponded = np.concatenate([np.array(v) for v in extra.values()])
        values = values.copy()
        grads = grads.copy()
        values[corresponded] *= lam
        grads[corresponded] *= lam
        for m, rows in extra.items():
            if m not in poses:
                raise MissingPoseError(f"no pose for image {m}")
            obs_m = observations_by_image[m]
            lookup = {k: r for r, k in enumerate(np.asarray(obs_m.point_ids))}
            rows = np.array(rows)
            pix_m = np.array(
                [obs_m.pixels[lookup[point_ids[r]]] for r in rows]
            )
            v_m, g_m, _, _ = angle_terms(
                intr, poses[m], predictions.coords[rows], pix_m, cfg.epsilon_norm
            )
            values[rows] += lam * v_m
            grads[rows] += lam * g_m
    return LossReport(point_ids.copy(), values, grads, statuses, thetas)


class BilinearSample(NamedTuple):
    value: float
    grad: np.ndarray
    valid: bool


def bilinear_values_and_grads(img: np.ndarray, q: np.ndarray):
    """Bilinear interpolation of a grayscale image at continuous coords.

    ``q`` is (N, 2) as (x, y); returns values (N,), gradients (N, 2) with
    respect to the coordinates, and a validity mask that is False outside
    ``[0, W-1] x [0, H-1]`` (where value and gradient are zero).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionMismatchError("expected a (H, W) grayscale array")
    h, w = img.shape
    q = np.asarray(q, dtype=np.float64)
    x, y = q[:, 0], q[:, 1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.clip(x, 0, w - 1)
    ys = np.clip(y, 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    values = top * (1 - fy) + bot * fy
    grads = np.empty_like(q)
    grads[:, 0] = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
    grads[:, 1] = bot - top
    values = np.where(valid, values, 0.0)
    grads = np.where(valid[:, None], grads, 0.0)
    return values, grads, valid


def bilinear_sample(img: np.ndarray, q) -> BilinearSample:
    """Single-sample form of ``bilinear_values_and_grads``."""
    values, grads, valid = bilinear_values_and_grads(img, np.asarray(q)[None, :])
    return BilinearSample(float(values[0]), grads[0], bool(valid[0]))


def _box3(a: np.ndarray) -> np.ndarray:
    """3x3 box filter with zero padding; self-adjoint, which keeps the
    gradient of the SSIM map sum a single extra filtering pass."""
    p = np.pad(a, 1)
    out = np.zeros_like(a)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out += p[dy : dy + a.shape[0], dx : dx + a.shape[1]]
    return out / 9.0


def ssim3x3(a: np.ndarray, b: np.ndarray):
    """Per-pixel SSIM map between two images with 3x3 box-filtered
    statistics, plus the gradient of the map's sum w.r.t. ``a``.

    Values lie in [-1, 1]; identical images give 1 everywhere. Stabilizers
    are the conventional C1 = 0.01^2, C2 = 0.03^2 for intensities in [0, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionMismatchError("ssim3x3 needs two equal-shape 2D images")
    mu_a, mu_b = _box3(a), _box3(b)
    e_aa, e_bb, e_ab = _box3(a * a), _box3(b * b), _box3(a * b)
    var_a = e_aa - mu_a**2
    var_b = e_bb - mu_b**2
    cov = e_ab - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * cov + SSIM_C2
    d1 = mu_a**2 + mu_b**2 + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    ssim_map = (n1 * n2) / (d1 * d2)
    # partials of the map sum w.r.t. the filtered statistics
    f_n1 = n2 / (d1 * d2)
    f_n2 = n1 / (d1 * d2)
    f_d1 = -ssim_map / d1
    f_d2 = -ssim_map / d2
    f_mu_a = 2 * mu_b * f_n1 + 2 * mu_a * f_d1 - 2 * mu_a * f_d2 - mu_b * 2 * f_n2
    f_e_aa = f_d2
    f_e_ab = 2 * f_n2
    grad_a = _box3(f_mu_a) + 2 * a * _box3(f_e_aa) + b * _box3(f_e_ab)
    return ssim_map, grad_a


def _ssim_window(a: np.ndarray, b: np.ndarray):
    """SSIM between two flat pixel windows plus gradient w.r.t. ``a``."""
    n = a.size
    mu_a, mu_b = a.mean(), b.mean()
    var_a = np.mean(a * a) - mu_a**2
    var_b = np.mean(b * b) - mu_b**2
    cov = np.mean(a * b) - mu_a * mu_b
    n1 = 2 * mu_a * mu_b + SSIM_C1
    n2 = 2 * cov + SSIM_C2
    d1 = mu_a**2 + mu_b**2 + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    s = (n1 * n2) / (d1 * d2)
    grad = (
        (2 * mu_b * n2 + n1 * 2 * (b - mu_b)) / (d1 * d2)
        - s * (2 * mu_a / d1 + 2 * (a - mu_a) / d2)
    ) / n
    return s, grad


_PATCH_OFFSETS = np.array(
    [[dx, dy] for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.float64
)
_PATCH_CENTER = 4


def photometric_image_loss(
    intr: CameraIntrinsics,
    pose_j: PoseSE3,
    predictions: PredictionGrid,
    observations_i,
    img_i: np.ndarray,
    img_j: np.ndarray,
    cfg: LossConfig = LossConfig(),
) -> LossReport:
    """Photometric reconstruction loss against a neighboring view.

    Each predicted coordinate is projected into the neighbor image ``j``
    and a 3x3 patch of the reconstruction is bilinearly sampled around the
    projection; it is compared with the 3x3 patch of ``img_i`` around the
    point's observed pixel using ``(1 - alpha) * L1 + alpha * (1 - SSIM)/2``
    (L1 on the central pixel, SSIM over the window). Points that land
    behind the neighbor camera or whose sampling window touches the image
    border are masked out of the sum; the report carries the valid fraction.
    Gradients flow through the projection and the bilinear sampler into the
    predicted coordinates.
    """
    img_i = _as_gray(img_i)
    img_j = _as_gray(img_j)
    if img_i.shape != img_j.shape:
        raise DimensionMismatchError("image pair must share dimensions")
    _check_ids(predictions.point_ids, observations_i.point_ids)
    preds = predictions.coords
    n = len(preds)
    R = pose_j.rotation
    D = pose_j.world_to_camera(preds)
    z = D[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        q = intr.f * D[:, :2] / z[:, None] + np.array([intr.cx, intr.cy])

    # 3x3 windows around the target pixel (image i) and the projection (image j)
    pix_i = np.asarray(observations_i.pixels, dtype=np.float64)
    tgt_coords = pix_i[:, None, :] + _PATCH_OFFSETS[None, :, :]
    with np.errstate(invalid="ignore"):
        rec_coords = q[:, None, :] + _PATCH_OFFSETS[None, :, :]
    safe_rec = np.where(np.isfinite(rec_coords), rec_coords, -1.0)
    tgt_vals, _, tgt_ok = bilinear_values_and_grads(img_i, tgt_coords.reshape(-1, 2))
    rec_vals, rec_grads, rec_ok = bilinear_values_and_grads(
        img_j, safe_rec.reshape(-1, 2)
    )
    tgt_vals = tgt_vals.reshape(n, 9)
    rec_vals = rec_vals.reshape(n, 9)
    rec_grads = rec_grads.reshape(n, 9, 2)
    valid = (
        in_front & tgt_ok.reshape(n, 9).all(axis=1) & rec_ok.reshape(n, 9).all(axis=1)
    )

    alpha = cfg.alpha_ssim
    values = np.zeros(n)
    grads = np.zeros((n, 3))
    gx = intr.f / np.where(valid, z, 1.0)
    for i in np.flatnonzero(valid):
        a, b = rec_vals[i], tgt_vals[i]
        s, ds_da = _ssim_window(a, b)
        diff = a[_PATCH_CENTER] - b[_PATCH_CENTER]
        values[i] = (1 - alpha) * abs(diff) + alpha * (1 - s) / 2
        dl_da = -(alpha / 2) * ds_da
        dl_da[_PATCH_CENTER] += (1 - alpha) * np.sign(diff)
        dl_dq = rec_grads[i].T @ dl_da
        # chain through the projection into the neighbor camera
        jac = np.array(
            [
                [gx[i], 0.0, -gx[i] * D[i, 0] / z[i]],
                [0.0, gx[i], -gx[i] * D[i, 1] / z[i]],
            ]
        )
        grads[i] = R @ (jac.T @ dl_dq)
    return LossReport(
        np.asarray(predictions.point_ids).copy(),
        values,
        grads,
        depth_statuses(z),
        np.full(n, np.nan),
        valid_mask=valid,
    )


def combined_loss(
    angle_report: LossReport, photo_report: LossReport, cfg: LossConfig = LossConfig()
) -> LossReport:
    """Angle loss plus ``lambda_photo`` times the photometric loss, with
    per-point gradients summed."""
    _check_ids(angle_report.point_ids, photo_report.point_ids)
    lam = cfg.lambda_photo
    return LossReport(
        angle_report.point_ids.copy(),
        angle_report.values + lam * photo_report.values,
        angle_report.grads + lam * photo_report.grads,
        angle_report.statuses.copy(),
        angle_report.thetas.copy(),
        valid_mask=photo_report.valid_mask,
    )


def _as_gray(img) -> np.ndarray:
    """Accept (H, W) or (H, W, 3) arrays, or an object with a ``.data``
    array of either shape; color is reduced to its channel mean."""
    data = getattr(img, "data", img)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3:
        data = data.mean(axis=2)
    if data.ndim != 2:
        raise DimensionMismatchError("expected (H, W) or (H, W, 3) image data")
    return data
