"""Free-space fusion, grid routing, and information-scored candidates.

Planning happens on a 2D slice of the fused ensemble occupancy at the
flight height. Candidate trajectories route through Dijkstra waypoints,
ramp yaw a full turn during the traverse, and finish with an in-place
spin; the best candidate maximizes ensemble predictive information over
viewpoints sampled along it.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import info as info_mod
from .field import export_occupancy
from .flatness import FlatTrajectory, allocate_times, evaluate, min_snap
from .geometry import CameraIntrinsics, Pose
from .scene import Z_PLAN

FREE, OCCUPIED, UNKNOWN = 0, 1, 2

CELL = 0.2  # grid cell size, meters
SIGMA_OCCUPIED = 1.0  # density threshold for the exported voxel grids
SPIN_SEGMENT_TIME = 1.0  # seconds per quarter-turn of the endpoint spin
COLLISION_RETRIES = 5


@dataclass
class OccGrid2D:
    """Planning slice at the flight height with visit counts per cell."""

    origin: np.ndarray  # (2,) world xy of cell (0, 0) corner
    cell: float
    state: np.ndarray  # (ny, nx) int8 in {FREE, OCCUPIED, UNKNOWN}
    counts: np.ndarray  # (ny, nx) observation counts

    def world_to_cell(self, xy):
        c = np.floor((np.asarray(xy)[:2] - self.origin) / self.cell).astype(int)
        ny, nx = self.state.shape
        return int(np.clip(c[0], 0, nx - 1)), int(np.clip(c[1], 0, ny - 1))

    def cell_center(self, ix, iy):
        return self.origin + (np.array([ix, iy]) + 0.5) * self.cell

    def is_free(self, ix, iy) -> bool:
        return self.state[iy, ix] == FREE


@dataclass
class FusedGrids:
    """Ensemble free-space products: 3D pre-dilation free set + 2D slice."""

    free3d: np.ndarray  # (nx, ny, nz) bool, before dilation
    occ2d: OccGrid2D
    origin3d: np.ndarray
    cell: float


def _dilate8(occ: np.ndarray) -> np.ndarray:
    out = occ.copy()
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == dy == 0:
                continue
            shifted = np.zeros_like(occ)
            src = [slice(max(-d, 0), occ.shape[i] - max(d, 0))
                   for i, d in enumerate((dy, dx))]
            dst = [slice(max(d, 0), occ.shape[i] - max(-d, 0))
                   for i, d in enumerate((dy, dx))]
            shifted[tuple(dst)] = occ[tuple(src)]
            out |= shifted
    return out


def _dilate26(occ: np.ndarray) -> np.ndarray:
    out = occ.copy()
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == dy == dz == 0:
                    continue
                shifted = np.zeros_like(occ)
                src = [slice(max(-d, 0), occ.shape[i] - max(d, 0))
                       for i, d in enumerate((dx, dy, dz))]
                dst = [slice(max(d, 0), occ.shape[i] - max(-d, 0))
                       for i, d in enumerate((dx, dy, dz))]
                shifted[tuple(dst)] = occ[tuple(src)]
                out |= shifted
    return out


def fuse_free_space(ensemble, counts2d=None, hits2d=None,
                    sigma_threshold=SIGMA_OCCUPIED, cell=CELL) -> FusedGrids:
    """Intersect member free space, dilate obstacles, slice at Z_PLAN.

    A 2D cell is unknown when its observation count is zero (never
    rendered), occupied when the dilated fused grid blocks it, else free.
    """
    grids = [export_occupancy(m, sigma_threshold, cell) for m in ensemble.members]
    occupied = np.zeros_like(grids[0].occupied)
    for g in grids:
        occupied |= g.occupied  # free iff free in every member
    free3d = ~occupied
    dilated = _dilate26(occupied)

    origin = grids[0].origin
    iz = int((Z_PLAN - origin[2]) / cell)
    iz = min(max(iz, 0), occupied.shape[2] - 1)
    occ2d = dilated[:, :, iz].T.copy()  # (ny, nx)

    ny, nx = occ2d.shape
    carve = counts2d is not None
    if counts2d is None:
        counts2d = np.ones((ny, nx))
    state = np.where(occ2d, OCCUPIED,
                     np.where(counts2d > 0, FREE, UNKNOWN)).astype(np.int8)
    # Sensor carving: a cell a real ray crossed at flight height is free no
    # matter what the fields say. Early fields grow spurious density around
    # the camera (the classic floater minimum) and would otherwise wall the
    # vehicle in at its own spawn cell. Cells near an observed hit keep a
    # one-cell safety margin and are never carved.
    if carve:
        visited = np.asarray(counts2d) > 0
        if hits2d is not None:
            sensor_occ = _dilate8(np.asarray(hits2d) > 0)
            state[visited & ~sensor_occ] = FREE
            state[sensor_occ] = OCCUPIED
        else:
            state[visited] = FREE
    # border cells are never traversable
    state[0, :] = state[-1, :] = OCCUPIED
    state[:, 0] = state[:, -1] = OCCUPIED
    grid2d = OccGrid2D(origin[:2].copy(), cell, state,
                       np.asarray(counts2d, dtype=np.float64))
    return FusedGrids(free3d, grid2d, origin.copy(), cell)


# ---------------------------------------------------------------------------
# shortest paths
# ---------------------------------------------------------------------------

_NEIGHBORS = [(dx, dy, np.hypot(dx, dy))
              for dx in (-1, 0, 1) for dy in (-1, 0, 1)
              if (dx, dy) != (0, 0)]


def dijkstra_distances(grid: OccGrid2D, start):
    """Cost-to-come (in meters) from `start` over free cells, plus parents."""
    ny, nx = grid.state.shape
    dist = np.full((ny, nx), np.inf)
    parent = -np.ones((ny, nx, 2), dtype=np.int32)
    sx, sy = start
    if grid.state[sy, sx] != FREE:
        return dist, parent
    dist[sy, sx] = 0.0
    heap = [(0.0, sx, sy)]
    while heap:
        d, x, y = heapq.heappop(heap)
        if d > dist[y, x]:
            continue
        for dx, dy, w in _NEIGHBORS:
            nx_, ny_ = x + dx, y + dy
            if not (0 <= nx_ < nx and 0 <= ny_ < ny):
                continue
            if grid.state[ny_, nx_] != FREE:
                continue
            # no corner cutting: a diagonal step needs both orthogonal
            # neighbors free, or the smoothed trajectory cannot follow it
            if dx != 0 and dy != 0 and (grid.state[y, nx_] != FREE
                                        or grid.state[ny_, x] != FREE):
                continue
            nd = d + w * grid.cell
            if nd < dist[ny_, nx_] - 1e-15:
                dist[ny_, nx_] = nd
                parent[ny_, nx_] = (x, y)
                heapq.heappush(heap, (nd, nx_, ny_))
    return dist, parent


def _backtrace(parent, start, goal):
    path = [goal]
    cur = goal
    while cur != start:
        px, py = parent[cur[1], cur[0]]
        if px < 0:
            return None
        cur = (int(px), int(py))
        path.append(cur)
    return path[::-1]


def decimate_corners(path):
    """Keep endpoints and direction changes of a cell path."""
    if len(path) <= 2:
        return list(path)
    out = [path[0]]
    for i in range(1, len(path) - 1):
        d0 = (path[i][0] - path[i - 1][0], path[i][1] - path[i - 1][1])
        d1 = (path[i + 1][0] - path[i][0], path[i + 1][1] - path[i][1])
        if d0 != d1:
            out.append(path[i])
    out.append(path[-1])
    return out


def dijkstra(grid: OccGrid2D, start, goal):
    """8-connected shortest cell path, decimated to corners.

    Returns None when the goal is unreachable (occupied or unknown goals
    included); start == goal yields the single-cell path.
    """
    if grid.state[start[1], start[0]] != FREE:
        raise ValueError("start cell is not free")
    if start == goal:
        return [start]
    if grid.state[goal[1], goal[0]] != FREE:
        return None
    dist, parent = dijkstra_distances(grid, start)
    if not np.isfinite(dist[goal[1], goal[0]]):
        return None
    full = _backtrace(parent, tuple(start), tuple(goal))
    return decimate_corners(full) if full else None


def path_length(grid: OccGrid2D, path) -> float:
    pts = np.array([grid.cell_center(*c) for c in path])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


# ---------------------------------------------------------------------------
# candidate generation and selection
# ---------------------------------------------------------------------------

@dataclass
class Candidate:
    goal_cell: tuple
    path_cells: list
    trajectory: FlatTrajectory
    viewpoints: list  # Pose
    score: float = 0.0
    breakdown: dict = dc_field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.trajectory.total_duration


def _spin_only_trajectory(position, yaw0) -> FlatTrajectory:
    """Two full turns in place (degenerate path fallback)."""
    n = 8
    wps = np.tile(position, (n + 1, 1))
    yaws = yaw0 + np.linspace(0.0, 4.0 * np.pi, n + 1)
    times = np.arange(n + 1) * SPIN_SEGMENT_TIME
    return min_snap(wps, yaws, times)


def _build_trajectory(grid: OccGrid2D, start_xy, yaw0, path_cells,
                      time_scale: float = 1.0):
    """Traverse with a 2-pi yaw ramp plus a 2-pi endpoint spin."""
    pts = [np.array([start_xy[0], start_xy[1], Z_PLAN])]
    for c in path_cells[1:]:
        xy = grid.cell_center(*c)
        pts.append(np.array([xy[0], xy[1], Z_PLAN]))
    pts = np.array(pts)
    if len(pts) < 2 or np.linalg.norm(pts[-1] - pts[0]) < 1e-9:
        return _spin_only_trajectory(pts[0], yaw0)

    times = allocate_times(pts) * time_scale
    yaws = yaw0 + 2.0 * np.pi * times / times[-1]

    # endpoint spin: another full turn over four stationary segments
    spin_times = times[-1] + SPIN_SEGMENT_TIME * np.arange(1, 5)
    spin_yaws = yaws[-1] + np.pi / 2.0 * np.arange(1, 5)
    wps = np.vstack([pts, np.tile(pts[-1], (4, 1))])
    return min_snap(wps, np.concatenate([yaws, spin_yaws]),
                    np.concatenate([times, spin_times]))


def trajectory_collides(grid: OccGrid2D, traj: FlatTrajectory,
                        dt: float = 0.05) -> bool:
    for t in np.arange(0.0, traj.total_duration + 1e-9, dt):
        p = evaluate(traj, min(t, traj.total_duration)).position
        ix, iy = grid.world_to_cell(p[:2])
        if not grid.is_free(ix, iy):
            return True
    return False


def trajectory_viewpoints(traj: FlatTrajectory, n_views: int = 20):
    poses = []
    for t in np.linspace(0.0, traj.total_duration, n_views):
        st = evaluate(traj, t)
        poses.append(Pose.from_yaw(st.position, st.yaw))
    return poses


def _goal_to_candidate(grid, dist, parent, start_cell, start_xy, yaw0, goal,
                       n_views):
    if goal == start_cell:
        traj = _spin_only_trajectory(
            np.array([start_xy[0], start_xy[1], Z_PLAN]), yaw0)
        return Candidate(goal, [start_cell], traj,
                         trajectory_viewpoints(traj, n_views))
    full = _backtrace(parent, tuple(start_cell), tuple(goal))
    if full is None:
        return None
    path = decimate_corners(full)
    # escalating fallbacks: doubled segment times (gentler curvature), then
    # a conservative fit through every path cell so the polynomial hugs the
    # grid path through narrow corridors (doorways)
    for cells, scale in ((path, 1.0), (path, 2.0), (full, 2.0)):
        traj = _build_trajectory(grid, start_xy, yaw0, cells, scale)
        if not trajectory_collides(grid, traj):
            return Candidate(goal, path, traj,
                             trajectory_viewpoints(traj, n_views))
    return None


def sample_candidates(grid: OccGrid2D, current_pose: Pose, n_candidates: int,
                      rng: np.random.Generator, n_views: int = 20):
    """N candidates with goals uniform over free, reachable cells.

    Colliding candidates are rejected and resampled a bounded number of
    times; the conservative fallback is an in-place spin at the start.
    """
    start_xy = current_pose.translation[:2]
    yaw0 = float(np.arctan2(current_pose.rotation[1, 0],
                            current_pose.rotation[0, 0]))
    start_cell = grid.world_to_cell(start_xy)
    # the quadrotor occupies its own cell: never let dilation swallow it
    grid.state[start_cell[1], start_cell[0]] = FREE

    dist, parent = dijkstra_distances(grid, start_cell)
    reach_y, reach_x = np.nonzero(np.isfinite(dist))
    if reach_x.size == 0:
        raise RuntimeError("no reachable free cells")
    order = np.lexsort((reach_y, reach_x))
    reach = np.stack([reach_x[order], reach_y[order]], axis=1)

    candidates = []
    for _ in range(n_candidates):
        cand = None
        for _ in range(COLLISION_RETRIES):
            goal = tuple(reach[int(rng.integers(reach.shape[0]))])
            cand = _goal_to_candidate(grid, dist, parent, start_cell,
                                      start_xy, yaw0, goal, n_views)
            if cand is not None:
                break
        if cand is None:
            cand = _goal_to_candidate(grid, dist, parent, start_cell,
                                      start_xy, yaw0, start_cell, n_views)
        candidates.append(cand)
    return candidates


def candidate_for_goal(grid: OccGrid2D, current_pose: Pose, goal,
                       n_views: int = 20) -> Candidate:
    """Single candidate routed to a fixed goal cell (used by the baselines).

    Falls back to an in-place spin when the goal is unreachable or the
    trajectory cannot be made collision-free.
    """
    start_xy = current_pose.translation[:2]
    yaw0 = float(np.arctan2(current_pose.rotation[1, 0],
                            current_pose.rotation[0, 0]))
    start_cell = grid.world_to_cell(start_xy)
    grid.state[start_cell[1], start_cell[0]] = FREE
    dist, parent = dijkstra_distances(grid, start_cell)
    cand = None
    if tuple(goal) != start_cell and np.isfinite(dist[goal[1], goal[0]]):
        cand = _goal_to_candidate(grid, dist, parent, start_cell, start_xy,
                                  yaw0, tuple(goal), n_views)
    if cand is None:
        cand = _goal_to_candidate(grid, dist, parent, start_cell, start_xy,
                                  yaw0, start_cell, n_views)
    return cand


def select(ensemble, candidates, intrinsics: CameraIntrinsics,
           weights=None, n_samples: int = 64):
    """Score every candidate and return the argmax.

    Ties break toward shorter duration, then lower index. Scores and
    per-channel breakdowns are written back onto the candidates.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    weights = weights or info_mod.InfoWeights()
    best, best_key = None, None
    for i, cand in enumerate(candidates):
        total, breakdown = info_mod.predictive_information(
            ensemble, cand.viewpoints, intrinsics, weights, n_samples)
        cand.score = total
        cand.breakdown = breakdown
        key = (-total, cand.duration, i)
        if best_key is None or key < best_key:
            best, best_key = cand, key
    return best


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def frequency_waypoint(grid: OccGrid2D, beta: float,
                       rng: np.random.Generator):
    """Goal cell sampled with p proportional to exp(-beta (c - min free c))."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    ys, xs = np.nonzero(grid.state == FREE)
    if xs.size == 0:
        raise RuntimeError("no free cells")
    c = grid.counts[ys, xs]
    logits = -beta * (c - c.min())
    p = np.exp(logits - logits.max())
    p /= p.sum()
    k = int(rng.choice(xs.size, p=p))
    return (int(xs[k]), int(ys[k]))


def frontier_cells(grid: OccGrid2D):
    """Free cells 8-adjacent to an unknown cell."""
    unknown = grid.state == UNKNOWN
    near_unknown = np.zeros_like(unknown)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == dy == 0:
                continue
            shifted = np.zeros_like(unknown)
            src_y = slice(max(-dy, 0), unknown.shape[0] - max(dy, 0))
            src_x = slice(max(-dx, 0), unknown.shape[1] - max(dx, 0))
            dst_y = slice(max(dy, 0), unknown.shape[0] - max(-dy, 0))
            dst_x = slice(max(dx, 0), unknown.shape[1] - max(-dx, 0))
            shifted[dst_y, dst_x] = unknown[src_y, src_x]
            near_unknown |= shifted
    ys, xs = np.nonzero((grid.state == FREE) & near_unknown)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def frontier_waypoint(grid: OccGrid2D, current_pose: Pose, visited=None):
    """Closest accessible frontier by path distance, or None if exhausted.

    `visited` holds previously chosen frontier cells; candidates within one
    cell (Chebyshev) of any of them are skipped.
    """
    visited = visited or []
    start = grid.world_to_cell(current_pose.translation[:2])
    grid.state[start[1], start[0]] = FREE
    dist, _ = dijkstra_distances(grid, start)
    best, best_d = None, np.inf
    for (x, y) in frontier_cells(grid):
        if any(abs(x - vx) <= 1 and abs(y - vy) <= 1 for vx, vy in visited):
            continue
        d = dist[y, x]
        if d < best_d - 1e-12:
            best, best_d = (x, y), d
    return best


# ---------------------------------------------------------------------------
# observation-count bookkeeping (feeds the frequency baseline and the
# known/unknown split of the planning grid)
# ---------------------------------------------------------------------------

def update_counts(counts: np.ndarray, origin_xy, cell: float, pos_xy,
                  dirs_xy, ranges, max_range: float = 20.0,
                  hits: np.ndarray | None = None):
    """Accumulate one planar range scan taken at the flight height.

    `dirs_xy` are unit in-plane directions, `ranges` the measured distance
    per ray (+inf on a miss). Every traversed cell is incremented exactly
    once per scan. The scan must be truly horizontal — the carving in
    `fuse_free_space` treats these cells as free at the flight height, so a
    tilted ray (e.g. an off-center camera row) could clear an obstacle the
    vehicle cannot. With `hits`, the cell containing each surface point is
    marked there (sensor-confirmed obstacles).
    """
    pos = np.asarray(pos_xy, dtype=np.float64)[:2]
    ny, nx = counts.shape
    seen = set()
    for dxy, rng in zip(np.asarray(dirs_xy, dtype=np.float64), ranges):
        n2 = np.linalg.norm(dxy)
        if n2 < 1e-9:
            continue
        dxy = dxy / n2
        finite = np.isfinite(rng)
        reach = min(rng, max_range) if finite else max_range
        if hits is not None and finite and rng <= max_range:
            h = pos + dxy * rng
            ix = int((h[0] - origin_xy[0]) / cell)
            iy = int((h[1] - origin_xy[1]) / cell)
            if 0 <= ix < nx and 0 <= iy < ny:
                hits[iy, ix] += 1.0
        # stop half a cell short so the cell holding the hit surface is not
        # marked as visited free space
        reach = max(reach - 0.5 * cell, 0.0)
        step = 0.5 * cell
        for s in np.arange(0.0, reach + step, step):
            p = pos + dxy * min(s, reach)
            ix = int((p[0] - origin_xy[0]) / cell)
            iy = int((p[1] - origin_xy[1]) / cell)
            if 0 <= ix < nx and 0 <= iy < ny:
                seen.add((ix, iy))
    for ix, iy in seen:
        counts[iy, ix] += 1.0
