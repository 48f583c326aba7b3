"""Camera-LiDAR projection and pseudo-label generation.

The projection map sends 3D points into pixel coordinates of calibrated
cameras. It is neither surjective (point clouds are sparse) nor injective
(several points can land on one pixel, and cameras do not cover the full
cloud), so pseudo-labels leave uncovered points at the UNLABELED sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Sentinel for points without a label; max value of the u16 storage type.
UNLABELED = 65535


@dataclass
class CalibratedCamera:
    """Pinhole camera: intrinsics plus a rigid world-to-camera transform."""

    intrinsics: np.ndarray  # (3, 3) upper-triangular, focal/principal point in px
    rotation: np.ndarray  # (3, 3) world -> camera
    translation: np.ndarray  # (3,) meters
    width: int
    height: int

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        k = self.intrinsics
        if abs(k[1, 0]) > 1e-12 or abs(k[2, 0]) > 1e-12 or abs(k[2, 1]) > 1e-12:
            raise ValueError("intrinsics must be upper-triangular")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation not orthonormal (error {err:.2e})")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")


@dataclass
class PixelHits:
    """Projection results of one point set into one camera (index-aligned arrays)."""

    point_index: np.ndarray  # (H,) int64
    camera_index: np.ndarray  # (H,) int64
    u: np.ndarray  # (H,) int64 pixel column
    v: np.ndarray  # (H,) int64 pixel row
    depth: np.ndarray  # (H,) float64 camera-frame depth, > 0

    def __len__(self) -> int:
        return len(self.point_index)


def project(points: np.ndarray, camera: CalibratedCamera, camera_index: int = 0) -> PixelHits:
    """Project points into one camera; out-of-view points are simply absent.

    A point registers a hit iff its camera-frame depth is positive and its
    pixel, after perspective division and round-half-to-even, lies inside
    [0, width) x [0, height).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam_pts = pts @ camera.rotation.T + camera.translation
    z = cam_pts[:, 2]
    in_front = z > 0

    u = np.full(len(pts), -1.0)
    v = np.full(len(pts), -1.0)
    k = camera.intrinsics
    zf = np.where(in_front, z, 1.0)  # avoid divide-by-zero on culled points
    u_f = (k[0, 0] * cam_pts[:, 0] + k[0, 1] * cam_pts[:, 1]) / zf + k[0, 2]
    v_f = (k[1, 1] * cam_pts[:, 1]) / zf + k[1, 2]
    u[in_front] = np.rint(u_f[in_front])
    v[in_front] = np.rint(v_f[in_front])

    ok = in_front & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    idx = np.nonzero(ok)[0]
    return PixelHits(
        point_index=idx,
        camera_index=np.full(len(idx), camera_index, dtype=np.int64),
        u=u[idx].astype(np.int64),
        v=v[idx].astype(np.int64),
        depth=z[idx],
    )


def winning_hits(bundle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Resolve multi-camera visibility per point.

    Returns (camera, u, v) arrays of length N; camera = -1 where no camera sees
    the point. The winning hit is the one with the smallest depth, ties broken
    by the lowest camera index.
    """
    n = bundle.n_points
    best_depth = np.full(n, np.inf)
    best_cam = np.full(n, -1, dtype=np.int64)
    best_u = np.zeros(n, dtype=np.int64)
    best_v = np.zeros(n, dtype=np.int64)
    for ci, cam in enumerate(bundle.cameras):
        hits = project(bundle.points, cam, camera_index=ci)
        better = hits.depth < best_depth[hits.point_index]
        sel = hits.point_index[better]
        best_depth[sel] = hits.depth[better]
        best_cam[sel] = ci
        best_u[sel] = hits.u[better]
        best_v[sel] = hits.v[better]
    return best_cam, best_u, best_v


def pseudo_labels(bundle, teacher: list, classdict) -> np.ndarray:
    """Pseudo-label each point from the mask containing its winning pixel.

    Points with no camera hit, or whose pixel lies in no mask, stay UNLABELED.
    Mask prompts are resolved to class ids through the dictionary.
    """
    if len(teacher) != len(bundle.cameras):
        raise ValueError(
            f"teacher/camera count mismatch: {len(teacher)} mask sets, "
            f"{len(bundle.cameras)} cameras"
        )
    best_cam, best_u, best_v = winning_hits(bundle)
    labels = np.full(bundle.n_points, UNLABELED, dtype=np.uint16)
    for ci, ms in enumerate(teacher):
        sel = np.nonzero(best_cam == ci)[0]
        if len(sel) == 0:
            continue
        grid = ms.pixel_mask_index()
        local = grid[best_v[sel], best_u[sel]]
        hit_mask = local >= 0
        for pt, lo in zip(sel[hit_mask], local[hit_mask]):
            labels[pt] = classdict.resolve(ms.masks[lo].prompt)
    return labels


def fov_mask(bundle) -> np.ndarray:
    """Boolean N-vector: true iff the point has at least one pixel hit."""
    covered = np.zeros(bundle.n_points, dtype=bool)
    for ci, cam in enumerate(bundle.cameras):
        hits = project(bundle.points, cam, camera_index=ci)
        covered[hits.point_index] = True
    return covered
