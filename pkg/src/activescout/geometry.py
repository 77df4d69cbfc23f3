"""Rigid transforms and pinhole camera geometry.

Camera convention: body x-axis is the optical axis, y points left, z up.
A pose with identity rotation therefore looks along world +x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMALITY_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3): camera/body frame expressed in world."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("Pose needs a 3x3 rotation and a 3-vector translation")
        err = np.max(np.abs(R.T @ R - np.eye(3)))
        if err >= ORTHONORMALITY_TOL or np.linalg.det(R) < 0:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.2e})")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def forward(self) -> np.ndarray:
        """Optical-axis direction in world coordinates."""
        return self.rotation[:, 0].copy()

    @staticmethod
    def from_yaw(position, yaw: float) -> "Pose":
        """Level pose at `position` heading along `yaw` (world z is up)."""
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(R, np.asarray(position, dtype=np.float64))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: image size in pixels plus horizontal field of view."""

    width: int
    height: int
    hfov: float  # radians

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not 0.0 < self.hfov < np.pi:
            raise ValueError("horizontal fov must lie in (0, pi)")

    @property
    def focal(self) -> float:
        """Focal length in pixels."""
        return (self.width / 2.0) / np.tan(self.hfov / 2.0)


def pixel_directions(intrinsics: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Unit ray directions through every pixel center, shape (H, W, 3).

    Row 0 is the top of the image; a 1x1 image yields the optical axis.
    """
    W, H, f = intrinsics.width, intrinsics.height, intrinsics.focal
    u = np.arange(W) + 0.5
    v = np.arange(H) + 0.5
    # camera frame: x forward, y left, z up
    dy = (W / 2.0 - u) / f
    dz = (H / 2.0 - v) / f
    dirs = np.empty((H, W, 3))
    dirs[..., 0] = 1.0
    dirs[..., 1] = dy[None, :]
    dirs[..., 2] = dz[:, None]
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs @ pose.rotation.T
