"""Closed-loop exploration driver, termination test, and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import info as info_mod
from . import io_formats, planner
from .field import ReplayBuffer, export_occupancy
from .geometry import CameraIntrinsics, Pose, pixel_directions
from .info import InfoWeights, bootstrap_ensemble
from .scene import (Scene, SceneSpec, Z_PLAN, generate_scene,
                    plan_grid_occupancy, raycast_batch, render_ground_truth)

METHODS = ("predictive_info", "frequency", "frontier")

INIT_SPIN_VIEWS = 39  # one full turn of evenly spaced initial views
PSNR_CAP_DB = 100.0


@dataclass
class ExperimentConfig:
    scene_seed: int = 0
    rooms: int = 2
    objects: int = 8
    categories: int = 8
    method: str = "predictive_info"
    seed: int = 0
    image_size: int = 32
    hfov_deg: float = 90.0
    init_steps: int = 4000
    iter_steps: int = 2000
    final_steps: int = 20000
    rays_per_step: int = 256
    n_candidates: int = 20
    views_per_trajectory: int = 20
    resolutions: tuple = (64, 32)
    termination_threshold: float = 0.15
    termination_window: int = 5
    termination_comparator: str = "below"  # or "above"
    max_iterations: int = 30
    distance_budget: float = 60.0
    frequency_beta: float = 5.0
    # per-member init spread; large enough that members disagree about
    # never-observed space, which is what pulls the planner toward it
    ensemble_noise: float = 3.5
    spawn_room: int | None = None
    info_weights: InfoWeights = dc_field(default_factory=InfoWeights)
    n_samples_train: int = 64
    n_samples_render: int = 64
    localize_eps: float = 0.3
    localize_min_pts: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.termination_threshold <= 0:
            raise ValueError("termination threshold must be positive")
        for name in ("init_steps", "iter_steps", "n_candidates",
                     "views_per_trajectory", "max_iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.image_size, self.image_size,
                                np.deg2rad(self.hfov_deg))


@dataclass
class MetricsLog:
    rows: list = dc_field(default_factory=list)

    def append(self, **kwargs):
        self.rows.append(kwargs)

    COLUMNS = ("iteration", "distance_m", "objects_localized", "i_rgb",
               "i_depth", "i_semantic", "i_occupancy", "i_total", "psnr_db",
               "depth_mse", "semantic_ce")

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for row in self.rows:
            cells = []
            for col in self.COLUMNS:
                v = row[col]
                cells.append(str(v) if isinstance(v, int) else f"{v:.10g}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_csv())


def check_termination(history, threshold: float, window: int,
                      comparator: str = "below") -> bool:
    """True when the last `window` per-pixel information values all clear
    the threshold under the chosen comparator."""
    if len(history) < window:
        return False
    recent = history[-window:]
    if comparator == "below":
        return all(v < threshold for v in recent)
    if comparator == "above":
        return all(v > threshold for v in recent)
    raise ValueError("comparator must be 'below' or 'above'")


# ---------------------------------------------------------------------------
# object localization
# ---------------------------------------------------------------------------

def _dbscan(points: np.ndarray, eps: float, min_pts: int):
    """Cluster labels (-1 noise) via region growing over an eps-radius graph."""
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    tree = cKDTree(points)
    neighbors = tree.query_ball_tree(tree, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            j = stack.pop()
            for k in neighbors[j]:
                if labels[k] == -1:
                    labels[k] = cluster
                    if core[k]:
                        stack.append(k)
        cluster += 1
    return labels


def localize_objects(buffer: ReplayBuffer, eps: float = 0.3,
                     min_pts: int = 5, voxel: float = 0.2):
    """Object estimates from the raw observations in the buffer.

    Labeled pixels with valid depth are back-projected to 3D, voxelized
    with a majority label vote per voxel, and clustered per label; each
    cluster yields a centroid estimate.
    """
    votes: dict = {}  # voxel index -> {label: count}
    for obs in buffer.observations:
        labels = obs.category.reshape(-1)
        depth = obs.depth.reshape(-1)
        keep = (labels > 0) & np.isfinite(depth)
        if not np.any(keep):
            continue
        dirs = pixel_directions(obs.intrinsics, obs.pose).reshape(-1, 3)
        pts = obs.pose.translation + dirs[keep] * depth[keep, None]
        keys = np.floor(pts / voxel).astype(np.int64)
        for key, lab in zip(map(tuple, keys), labels[keep]):
            votes.setdefault(key, {}).setdefault(int(lab), 0)
            votes[key][int(lab)] += 1

    by_label: dict = {}
    for key in sorted(votes):
        counts = votes[key]
        lab = max(sorted(counts), key=lambda c: counts[c])
        by_label.setdefault(lab, []).append(key)

    estimates = []
    for lab in sorted(by_label):
        centers = (np.array(by_label[lab]) + 0.5) * voxel
        cl = _dbscan(centers, eps, min_pts)
        for c in range(cl.max() + 1 if cl.size else 0):
            members = centers[cl == c]
            estimates.append({"centroid": members.mean(axis=0),
                              "category": lab})
    estimates.sort(key=lambda e: (e["category"], *np.round(e["centroid"], 9)))
    return estimates


def score_localization(estimates, scene: Scene, tol: float = 0.5):
    """Greedy nearest same-label matching within `tol` meters.

    Each ground-truth object matches at most one estimate. Returns
    (match count, list of (estimate index, ground-truth index)).
    """
    pairs = []
    for ei, est in enumerate(estimates):
        for gi, obj in enumerate(scene.objects):
            if est["category"] != obj["category"]:
                continue
            d = float(np.linalg.norm(
                np.asarray(est["centroid"]) - np.asarray(obj["centroid"])))
            if d < tol:
                pairs.append((d, ei, gi))
    pairs.sort()
    used_e, used_g, matching = set(), set(), []
    for d, ei, gi in pairs:
        if ei in used_e or gi in used_g:
            continue
        used_e.add(ei)
        used_g.add(gi)
        matching.append((ei, gi))
    return len(matching), matching


# ---------------------------------------------------------------------------
# reconstruction and calibration metrics
# ---------------------------------------------------------------------------

def reconstruction_metrics(member, scene: Scene, views, intrinsics,
                           n_samples=64):
    """PSNR (dB), depth MSE (m^2), semantic cross entropy (nats) on views."""
    se_rgb, se_depth, ce, n_rgb, n_depth = 0.0, 0.0, 0.0, 0, 0
    for pose in views:
        gt = render_ground_truth(scene, pose, intrinsics)
        pred = member.render_image(pose, intrinsics, n_samples=n_samples)
        se_rgb += float(np.sum((pred["rgb"] - gt.rgb) ** 2))
        n_rgb += gt.rgb.size
        valid = np.isfinite(gt.depth)
        se_depth += float(np.sum((pred["depth"] - gt.depth)[valid] ** 2))
        n_depth += int(valid.sum())
        p = np.take_along_axis(pred["catdist"],
                               gt.category[..., None].astype(int), axis=-1)
        ce += float(-np.log(np.maximum(p, 1e-12)).sum())
    mse_rgb = se_rgb / max(n_rgb, 1)
    psnr = PSNR_CAP_DB if mse_rgb <= 10 ** (-PSNR_CAP_DB / 10) else float(
        10.0 * np.log10(1.0 / mse_rgb))
    return {
        "psnr_db": psnr,
        "depth_mse": se_depth / max(n_depth, 1),
        "semantic_ce": ce / max(n_depth, 1),
    }


def coverage_metrics(ensemble, scene: Scene, views, intrinsics, n_samples=64,
                     semantic_entropy_threshold: float = 0.1):
    """Fraction of held-out pixels whose truth falls inside +-1 std.

    The semantic counterpart is the fraction of wrongly classified pixels
    that are also uncertain (entropy above the threshold).
    """
    renders = info_mod.ensemble_renders(ensemble, views, intrinsics, n_samples)
    rgb_mean = np.mean([r["rgb"] for r in renders], axis=0)
    rgb_var = np.mean([r["rgb_var"] + r["rgb"] ** 2 for r in renders],
                      axis=0) - rgb_mean**2
    d_mean = np.mean([r["depth"] for r in renders], axis=0)
    d_var = np.mean([r["depth_var"] + r["depth"] ** 2 for r in renders],
                    axis=0) - d_mean**2
    catdist = np.mean([r["catdist"] for r in renders], axis=0)

    gt_rgb = np.stack([render_ground_truth(scene, p, intrinsics).rgb
                       for p in views])
    gt_depth = np.stack([render_ground_truth(scene, p, intrinsics).depth
                         for p in views])
    gt_cat = np.stack([render_ground_truth(scene, p, intrinsics).category
                       for p in views])

    rgb_sd = np.sqrt(np.maximum(rgb_var, 0.0))
    rgb_cov = float(np.mean(np.abs(gt_rgb - rgb_mean) <= rgb_sd))
    valid = np.isfinite(gt_depth)
    d_sd = np.sqrt(np.maximum(d_var, 0.0))
    depth_cov = float(np.mean(
        (np.abs(gt_depth - d_mean) <= d_sd)[valid])) if valid.any() else 1.0
    wrong = catdist.argmax(axis=-1) != gt_cat
    uncertain = info_mod.categorical_entropy(catdist) > semantic_entropy_threshold
    sem = float(np.mean(uncertain[wrong])) if wrong.any() else 1.0
    return {"rgb": rgb_cov, "depth": depth_cov, "semantic_wrong_uncertain": sem}


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

def _spawn_pose(scene: Scene, rng, room: int | None):
    occ, origin = plan_grid_occupancy(scene)
    free_y, free_x = np.nonzero(~occ)
    pts = origin + (np.stack([free_x, free_y], axis=1) + 0.5) * 0.2
    # stay clear of walls and objects
    keep = []
    for i, (x, y) in enumerate(pts):
        p = np.array([x, y, Z_PLAN])
        if any(np.all(p >= b.lo - 0.35) and np.all(p <= b.hi + 0.35)
               for b in scene.primitives):
            continue
        if room is not None:
            x0, x1, y0, y1 = scene.room_rects[room]
            if not (x0 + 0.4 <= x <= x1 - 0.4 and y0 + 0.4 <= y <= y1 - 0.4):
                continue
        keep.append(i)
    if not keep:
        raise RuntimeError("no clear spawn location")
    x, y = pts[keep[int(rng.integers(len(keep)))]]
    yaw = float(rng.uniform(0.0, 2.0 * np.pi))
    return Pose.from_yaw(np.array([x, y, Z_PLAN]), yaw)


def _planar_scan(scene, pose, intr):
    """Horizontal range scan across the camera's field of view.

    A level scan at the flight height, not the central image row: image
    rows sit half a pixel off the optical axis and can clear obstacles the
    vehicle cannot.
    """
    yaw = float(np.arctan2(pose.rotation[1, 0], pose.rotation[0, 0]))
    angles = yaw + np.linspace(-intr.hfov / 2, intr.hfov / 2, intr.width)
    dirs_xy = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    dirs3 = np.concatenate([dirs_xy, np.zeros((intr.width, 1))], axis=1)
    origins = np.tile(pose.translation, (intr.width, 1))
    ranges, _, _ = raycast_batch(scene, origins, dirs3)
    return pose.translation[:2], dirs_xy, ranges


def _execute_trajectory(scene, cfg, traj, counts, hits, origin_xy):
    """Ground-truth observations at evenly spaced times along a trajectory."""
    observations = []
    arc = 0.0
    prev = None
    for t in np.linspace(0.0, traj.total_duration, 200):
        p = planner.evaluate(traj, t).position
        if prev is not None:
            arc += float(np.linalg.norm(p - prev))
        prev = p
    for pose in planner.trajectory_viewpoints(traj, cfg.views_per_trajectory):
        obs = render_ground_truth(scene, pose, cfg.intrinsics)
        observations.append(obs)
        pos, dirs_xy, ranges = _planar_scan(scene, pose, cfg.intrinsics)
        planner.update_counts(counts, origin_xy, planner.CELL, pos, dirs_xy,
                              ranges, max_range=scene.diagonal, hits=hits)
    return observations, arc


def run_experiment(config: ExperimentConfig, out_dir=None,
                   scene: Scene | None = None):
    """Full exploration loop; returns (MetricsLog, result dict)."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    if scene is None:
        scene = generate_scene(cfg.scene_seed, SceneSpec(
            rooms=cfg.rooms, objects=cfg.objects, categories=cfg.categories))
    intr = cfg.intrinsics

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "candidates").mkdir(exist_ok=True)
        (out / "fields").mkdir(exist_ok=True)
        (out / "renders").mkdir(exist_ok=True)
        io_formats.save_scene(scene, out / "scene.json")
        cfg_dict = asdict(cfg)
        cfg_dict["info_weights"] = asdict(cfg.info_weights)
        (out / "config.json").write_text(json.dumps(cfg_dict, indent=1,
                                                    sort_keys=True))

    pose = _spawn_pose(scene, rng, cfg.spawn_room)

    # 2D visit counts at the flight height, on the fused-grid lattice
    extent = scene.bounds_hi - scene.bounds_lo
    n2 = np.maximum(np.ceil(extent / planner.CELL).astype(int), 1)
    counts = np.zeros((n2[1], n2[0]))
    hits = np.zeros_like(counts)
    origin_xy = scene.bounds_lo[:2]

    # initial in-place spin
    buffer = ReplayBuffer()
    yaw0 = float(np.arctan2(pose.rotation[1, 0], pose.rotation[0, 0]))
    for k in range(INIT_SPIN_VIEWS):
        p = Pose.from_yaw(pose.translation,
                          yaw0 + 2.0 * np.pi * k / INIT_SPIN_VIEWS)
        obs = render_ground_truth(scene, p, intr)
        buffer.add(obs)
        pos, dirs_xy, ranges = _planar_scan(scene, p, intr)
        planner.update_counts(counts, origin_xy, planner.CELL, pos, dirs_xy,
                              ranges, max_range=scene.diagonal, hits=hits)

    ensemble = bootstrap_ensemble(
        buffer, 2, list(cfg.resolutions), rng,
        scene.bounds_lo, scene.bounds_hi, scene.categories,
        noise_scale=cfg.ensemble_noise)
    for trainer, trng in zip(ensemble.trainers, ensemble.rngs):
        trainer.n_samples = cfg.n_samples_train
        trainer.calibrate_weights(buffer, trng)
    ensemble.train_round(buffer, cfg.init_steps, cfg.rays_per_step)

    log = MetricsLog()
    info_history: list[float] = []
    visited_frontiers: list[tuple] = []
    distance = 0.0
    held_out = scene.eval_poses()
    termination_reason = "max_iterations"

    for iteration in range(1, cfg.max_iterations + 1):
        fused = planner.fuse_free_space(ensemble, counts, hits)
        grid = fused.occ2d

        exec_info, exec_breakdown = 0.0, {
            "rgb": 0.0, "depth": 0.0, "semantic": 0.0, "occupancy": 0.0}
        if cfg.method == "predictive_info":
            candidates = planner.sample_candidates(
                grid, pose, cfg.n_candidates, rng, cfg.views_per_trajectory)
            chosen = planner.select(ensemble, candidates, intr,
                                    cfg.info_weights, cfg.n_samples_render)
            exec_info, exec_breakdown = chosen.score, chosen.breakdown
            if out is not None:
                dump = {
                    "chosen": candidates.index(chosen),
                    "scores": [c.score for c in candidates],
                    "breakdowns": [c.breakdown for c in candidates],
                    "goals": [[int(v) for v in c.goal_cell]
                              for c in candidates],
                }
                (out / "candidates" / f"iter_{iteration:03d}.json").write_text(
                    json.dumps(dump, indent=1))
        else:
            if cfg.method == "frequency":
                start_cell = grid.world_to_cell(pose.translation[:2])
                grid.state[start_cell[1], start_cell[0]] = planner.FREE
                goal = planner.frequency_waypoint(grid, cfg.frequency_beta, rng)
            else:  # frontier
                goal = planner.frontier_waypoint(grid, pose, visited_frontiers)
                if goal is None:
                    termination_reason = "frontier_exhausted"
                    break
                visited_frontiers.append(goal)
            chosen = planner.candidate_for_goal(
                grid, pose, goal, cfg.views_per_trajectory)
            exec_info, exec_breakdown = info_mod.predictive_information(
                ensemble, chosen.viewpoints, intr, cfg.info_weights,
                cfg.n_samples_render)

        observations, arc = _execute_trajectory(
            scene, cfg, chosen.trajectory, counts, hits, origin_xy)
        distance += arc
        buffer.mark_recent()
        buffer.extend(observations)
        end_state = planner.evaluate(chosen.trajectory,
                                     chosen.trajectory.total_duration)
        pose = Pose.from_yaw(end_state.position, end_state.yaw)

        ensemble.train_round(buffer, cfg.iter_steps, cfg.rays_per_step)

        estimates = localize_objects(buffer, cfg.localize_eps,
                                     cfg.localize_min_pts)
        n_localized, _ = score_localization(estimates, scene)
        recon = reconstruction_metrics(ensemble.members[0], scene, held_out,
                                       intr, cfg.n_samples_render)
        info_history.append(exec_info)
        log.append(
            iteration=iteration, distance_m=distance,
            objects_localized=n_localized,
            i_rgb=exec_breakdown["rgb"], i_depth=exec_breakdown["depth"],
            i_semantic=exec_breakdown["semantic"],
            i_occupancy=exec_breakdown["occupancy"], i_total=exec_info,
            **recon,
        )
        if out is not None:
            log.save(out / "metrics.csv")

        if check_termination(info_history, cfg.termination_threshold,
                             cfg.termination_window,
                             cfg.termination_comparator):
            termination_reason = "information_threshold"
            break
        if distance >= cfg.distance_budget:
            termination_reason = "distance_budget"
            break

    if cfg.final_steps > 0:
        buffer.mark_recent()  # no recent partition: train uniformly on all
        ensemble.train_round(buffer, cfg.final_steps, cfg.rays_per_step)

    estimates = localize_objects(buffer, cfg.localize_eps, cfg.localize_min_pts)
    n_localized, matching = score_localization(estimates, scene)
    result = {
        "termination_reason": termination_reason,
        "distance_m": distance,
        "objects_localized": n_localized,
        "objects_total": len(scene.objects),
        "estimates": estimates,
        "matching": matching,
        "scene": scene,
        "ensemble": ensemble,
        "buffer": buffer,
        "final_pose": pose,
    }

    if out is not None:
        log.save(out / "metrics.csv")
        (out / "objects.json").write_text(json.dumps({
            "estimates": [{"centroid": np.asarray(e["centroid"]).tolist(),
                           "category": e["category"]} for e in estimates],
            "matched": n_localized,
            "total": len(scene.objects),
        }, indent=1))
        for k, member in enumerate(ensemble.members):
            io_formats.save_checkpoint(member, out / "fields" / f"member{k}.ckpt")
        occ = export_occupancy(ensemble.members[0], planner.SIGMA_OCCUPIED)
        io_formats.save_occupancy_rle(occ, out / "occupancy.rle")
        pred = ensemble.members[0].render_image(held_out[0], intr,
                                                cfg.n_samples_render)
        io_formats.save_ppm(pred["rgb"], out / "renders" / "heldout0_rgb.ppm")
    return log, result
