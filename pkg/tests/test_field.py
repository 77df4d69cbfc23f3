import numpy as np
import pytest

from activescout import field as fd
from activescout import scene as sc
from activescout.geometry import CameraIntrinsics


@pytest.fixture(scope="module")
def small_world():
    scene = sc.generate_scene(3, sc.SceneSpec(rooms=1, objects=3, categories=6))
    intr = CameraIntrinsics(32, 24, np.deg2rad(90.0))
    buf = fd.ReplayBuffer()
    for pose in scene.eval_poses(intr)[:3]:
        buf.add(sc.render_ground_truth(scene, pose, intr))
    return scene, intr, buf


def _make_field(scene, res=16, categories=6, seed=0):
    return fd.FieldGrid(scene.bounds_lo, scene.bounds_hi, (res, res, res),
                        categories, rng=np.random.default_rng(seed))


def test_buffer_partitions(small_world):
    _, intr, _ = small_world
    buf = fd.ReplayBuffer()
    scene = sc.generate_scene(3, sc.SceneSpec(rooms=1, objects=3, categories=6))
    obs = sc.render_ground_truth(scene, scene.eval_poses(intr)[0], intr)
    buf.extend([obs, obs, obs])
    buf.mark_recent()
    buf.extend([obs, obs])
    assert list(buf.past_indices) == [0, 1, 2]
    assert list(buf.recent_indices) == [3, 4]
    assert len(buf) == 5


def test_buffer_batch_half_recent(small_world):
    _, _, buf = small_world
    rng = np.random.default_rng(0)
    origins, dirs, gt_rgb, gt_depth, valid, gt_label = buf.sample_batch(64, rng)
    assert origins.shape == (64, 3) and dirs.shape == (64, 3)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert gt_rgb.shape == (64, 3) and gt_depth.shape == (64,)
    assert gt_label.dtype == np.int64
    assert np.all(np.isfinite(gt_depth))  # invalid depths zeroed, flagged
    assert np.all(gt_depth[~valid] == 0.0)


def test_buffer_pools_override(small_world):
    _, _, buf = small_world
    rng = np.random.default_rng(1)
    # restrict both pools to observation 1: all rays originate there
    origins, *_ = buf.sample_batch(16, rng, recent_pool=[1], past_pool=[1])
    t = buf.observations[1].pose.translation
    assert np.all(origins == t)


def test_empty_buffer_raises():
    with pytest.raises(ValueError):
        fd.ReplayBuffer().sample_batch(8, np.random.default_rng(0))


def test_training_reduces_loss(small_world):
    scene, _, buf = small_world
    field = _make_field(scene)
    trainer = fd.FieldTrainer(field, n_samples=24)
    rng = np.random.default_rng(0)
    trainer.calibrate_weights(buf, rng, n_rays=256)
    trace = trainer.train(buf, steps=300, rays_per_step=64, rng=rng)
    start = trace[:20].mean()
    end = trace[-20:].mean()
    assert end < 0.5 * start


def test_trained_field_predicts_depth(small_world):
    scene, intr, buf = small_world
    field = _make_field(scene)
    trainer = fd.FieldTrainer(field, n_samples=24)
    rng = np.random.default_rng(0)
    trainer.calibrate_weights(buf, rng, n_rays=256)
    trainer.train(buf, steps=500, rays_per_step=96, rng=rng)
    obs = buf.observations[0]
    render = field.render_image(obs.pose, obs.intrinsics, n_samples=48,
                                rng=np.random.default_rng(1))
    valid = np.isfinite(obs.depth)
    err = np.abs(render["depth"][valid] - obs.depth[valid])
    voxel = field.voxel_size.max()
    assert np.median(err) < 2.0 * voxel


def test_calibrate_balances_terms(small_world):
    scene, _, buf = small_world
    field = _make_field(scene)
    trainer = fd.FieldTrainer(field, n_samples=24)
    rng = np.random.default_rng(0)
    trainer.calibrate_weights(buf, rng, n_rays=256)
    batch = buf.sample_batch(256, np.random.default_rng(2))
    _, (l_rgb, l_depth, l_cat), _, _ = fd.batch_loss(
        field, *batch, trainer.weights, 24)
    w = trainer.weights
    terms = np.array([w.rgb * l_rgb, w.depth * l_depth, w.category * l_cat])
    assert terms.max() / terms.min() < 5.0


def test_export_occupancy_constant_field():
    lo, hi = np.zeros(3), np.array([1.0, 1.0, 0.5])
    field = fd.FieldGrid(lo, hi, (8, 8, 4), 2)
    field.density[:] = 10.0  # softplus(10) >> 1
    occ = fd.export_occupancy(field, sigma_threshold=1.0, cell=0.25)
    assert occ.occupied.shape == (4, 4, 2)
    assert occ.occupied.all()
    assert occ.cell == 0.25
    field.density[:] = -10.0
    occ = fd.export_occupancy(field, sigma_threshold=1.0, cell=0.25)
    assert not occ.occupied.any()


def test_export_occupancy_rejects_bad_threshold():
    field = fd.FieldGrid(np.zeros(3), np.ones(3), (4, 4, 4), 2)
    with pytest.raises(ValueError):
        fd.export_occupancy(field, sigma_threshold=0.0)


def test_field_copy_is_independent():
    field = fd.FieldGrid(np.zeros(3), np.ones(3), (4, 4, 4), 3,
                         rng=np.random.default_rng(0))
    clone = field.copy()
    clone.density += 1.0
    assert not np.allclose(field.density, clone.density)
    assert np.allclose(field.color, clone.color)
