import numpy as np
import pytest

from activescout.geometry import CameraIntrinsics, Pose, pixel_directions


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(rotation=np.eye(3) * 2.0, translation=np.zeros(3))


def test_from_yaw_forward():
    p = Pose.from_yaw(np.zeros(3), 0.0)
    assert np.allclose(p.forward, [1.0, 0.0, 0.0])
    p = Pose.from_yaw(np.zeros(3), np.pi / 2)
    assert np.allclose(p.forward, [0.0, 1.0, 0.0], atol=1e-12)


def test_focal_from_hfov():
    intr = CameraIntrinsics(64, 64, np.deg2rad(90.0))
    assert intr.focal == pytest.approx(32.0)


def test_single_pixel_ray_is_optical_axis():
    intr = CameraIntrinsics(1, 1, np.deg2rad(90.0))
    pose = Pose.from_yaw(np.array([1.0, 2.0, 3.0]), 0.3)
    dirs = pixel_directions(intr, pose)
    assert dirs.shape == (1, 1, 3)
    assert np.allclose(dirs[0, 0], pose.forward, atol=1e-12)


def test_pixel_directions_unit_norm_and_fov():
    intr = CameraIntrinsics(33, 33, np.deg2rad(90.0))
    pose = Pose.from_yaw(np.zeros(3), 0.0)
    dirs = pixel_directions(intr, pose)
    assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0)
    # center pixel looks forward; edge pixels stay within the half-fov
    assert np.allclose(dirs[16, 16], [1.0, 0.0, 0.0], atol=1e-9)
    angles = np.arccos(np.clip(dirs @ np.array([1.0, 0.0, 0.0]), -1, 1))
    assert angles.max() <= np.deg2rad(90.0)


def test_yaw_rotates_image_plane():
    intr = CameraIntrinsics(9, 9, np.deg2rad(60.0))
    d0 = pixel_directions(intr, Pose.from_yaw(np.zeros(3), 0.0))
    d1 = pixel_directions(intr, Pose.from_yaw(np.zeros(3), 0.7))
    c, s = np.cos(0.7), np.sin(0.7)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    assert np.allclose(d1, d0 @ Rz.T, atol=1e-12)
