import numpy as np
import pytest

from activescout import scene as sc
from activescout.geometry import CameraIntrinsics, Pose


@pytest.fixture(scope="module")
def two_room():
    return sc.generate_scene(0, sc.SceneSpec(rooms=2, objects=8, categories=8))


def test_reproducible(two_room):
    again = sc.generate_scene(0, sc.SceneSpec(rooms=2, objects=8, categories=8))
    assert len(again.primitives) == len(two_room.primitives)
    for a, b in zip(again.primitives, two_room.primitives):
        assert np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi)
        assert a.category == b.category


def test_layout(two_room):
    s = two_room
    assert len(s.room_rects) == 2
    assert len(s.objects) == 8
    assert np.all(s.bounds_lo == 0.0)
    # every object centroid inside some room interior, above the floor
    for obj in s.objects:
        c = obj["centroid"]
        assert any(x0 <= c[0] <= x1 and y0 <= c[1] <= y1
                   for x0, x1, y0, y1 in s.room_rects)
        assert c[2] > sc.WALL
        assert 1 <= obj["category"] < 8


def test_objects_disjoint(two_room):
    boxes = [b for b in two_room.primitives if b.category > 0]
    assert len(boxes) == 8
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            overlap = np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo)
            assert np.min(overlap) <= 1e-12  # separated along some axis


def test_raycast_matches_brute_force(two_room):
    """Compare the slab-based caster against dense point stepping."""
    rng = np.random.default_rng(3)
    s = two_room
    for _ in range(40):
        origin = rng.uniform(s.bounds_lo + 0.3, s.bounds_hi - 0.3)
        while s.point_in_solid(origin):
            origin = rng.uniform(s.bounds_lo + 0.3, s.bounds_hi - 0.3)
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        hit = sc.raycast(s, origin, d)
        # brute force: march until inside a solid
        ts = np.arange(1e-3, 12.0, 1e-3)
        inside = [s.point_in_solid(origin + t * d) for t in ts]
        if hit is None:
            assert not any(inside)
        else:
            t_bf = ts[int(np.argmax(inside))]
            assert hit["distance"] == pytest.approx(t_bf, abs=2e-3)
            box = next(b for b in s.primitives
                       if b.contains(origin + (hit["distance"] + 1e-6) * d))
            assert hit["category"] == box.category


def test_raycast_requires_unit_direction(two_room):
    with pytest.raises(ValueError):
        sc.raycast(two_room, np.array([1.0, 1.0, 1.0]),
                   np.array([2.0, 0.0, 0.0]))


def test_render_ground_truth_consistency(two_room):
    intr = CameraIntrinsics(16, 16, np.deg2rad(90.0))
    pose = Pose.from_yaw(np.array([1.0, 2.0, 1.5]), 0.5)
    obs = sc.render_ground_truth(two_room, pose, intr)
    assert obs.rgb.shape == (16, 16, 3)
    assert obs.depth.shape == (16, 16)
    assert obs.category.shape == (16, 16)
    # enclosed room: every ray hits something
    assert np.all(np.isfinite(obs.depth))
    assert np.all(obs.depth > 0.1)
    assert obs.rgb.min() >= 0.0 and obs.rgb.max() <= 1.0


def test_render_rejects_camera_in_solid(two_room):
    intr = CameraIntrinsics(4, 4, np.deg2rad(90.0))
    pose = Pose.from_yaw(np.array([0.1, 0.1, 0.1]), 0.0)  # inside the floor
    with pytest.raises(ValueError):
        sc.render_ground_truth(two_room, pose, intr)


def test_eval_poses(two_room):
    poses = two_room.eval_poses()
    assert len(poses) == 4 * len(two_room.room_rects)
    for p in poses:
        assert not two_room.point_in_solid(p.translation)


def test_plan_grid_occupancy(two_room):
    occ, origin = sc.plan_grid_occupancy(two_room, cell=0.2)
    # outer walls occupied, room centers free at the flight height
    assert occ[5, 0] and occ[5, -1] and occ[0, 5] and occ[-1, 5]
    x0, x1, y0, y1 = two_room.room_rects[0]
    ix = int(((x0 + x1) / 2 - origin[0]) / 0.2)
    iy = int(((y0 + y1) / 2 - origin[1]) / 0.2)
    assert not occ[iy, ix]
