import numpy as np
import pytest

from activescout import planner as pl
from activescout import scene as sc
from activescout.field import FieldGrid
from activescout.geometry import CameraIntrinsics, Pose
from activescout.info import Ensemble


def _grid(state, cell=0.2, origin=(0.0, 0.0), counts=None):
    state = np.asarray(state, dtype=np.int8)
    counts = np.ones_like(state, float) if counts is None else counts
    return pl.OccGrid2D(np.array(origin, float), cell, state, counts)


def _bellman_ford(state, cell):
    """Reference all-pairs-from-source distances by exhaustive relaxation."""
    ny, nx = state.shape
    dist = np.full((ny, nx), np.inf)
    free = state == pl.FREE
    ys, xs = np.nonzero(free)
    dist[ys[0], xs[0]] = 0.0
    start = (xs[0], ys[0])
    dist = np.full((ny, nx), np.inf)
    dist[start[1], start[0]] = 0.0
    changed = True
    while changed:
        changed = False
        for y in range(ny):
            for x in range(nx):
                if not free[y, x] or not np.isfinite(dist[y, x]):
                    continue
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        if dx == dy == 0:
                            continue
                        X, Y = x + dx, y + dy
                        if not (0 <= X < nx and 0 <= Y < ny and free[Y, X]):
                            continue
                        # diagonal steps need both orthogonal cells free
                        if dx != 0 and dy != 0 and not (free[y, X] and
                                                        free[Y, x]):
                            continue
                        nd = dist[y, x] + np.hypot(dx, dy) * cell
                        if nd < dist[Y, X] - 1e-12:
                            dist[Y, X] = nd
                            changed = True
    return start, dist


def test_dijkstra_matches_exhaustive_relaxation():
    rng = np.random.default_rng(0)
    state = np.where(rng.random((10, 12)) < 0.3, pl.OCCUPIED, pl.FREE)
    start, ref = _bellman_ford(state, 0.2)
    grid = _grid(state)
    dist, _ = pl.dijkstra_distances(grid, start)
    assert np.allclose(np.nan_to_num(dist, posinf=-1.0),
                       np.nan_to_num(ref, posinf=-1.0), atol=1e-9)


def test_dijkstra_path_endpoints_and_cost():
    state = np.full((8, 8), pl.FREE)
    state[2:6, 4] = pl.OCCUPIED  # vertical wall with a gap at the bottom
    grid = _grid(state)
    path = pl.dijkstra(grid, (1, 3), (6, 3))
    assert path[0] == (1, 3) and path[-1] == (6, 3)
    for x, y in path:
        assert grid.is_free(x, y)
    # corners only: consecutive steps change direction
    for i in range(1, len(path) - 1):
        d0 = (path[i][0] - path[i - 1][0], path[i][1] - path[i - 1][1])
        d1 = (path[i + 1][0] - path[i][0], path[i + 1][1] - path[i][1])
        assert d0 != d1


def test_dijkstra_edge_cases():
    state = np.full((5, 5), pl.FREE)
    state[:, 2] = pl.OCCUPIED
    grid = _grid(state)
    assert pl.dijkstra(grid, (0, 0), (4, 4)) is None  # split world
    assert pl.dijkstra(grid, (0, 0), (0, 0)) == [(0, 0)]
    assert pl.dijkstra(grid, (0, 0), (2, 2)) is None  # occupied goal
    with pytest.raises(ValueError):
        pl.dijkstra(grid, (2, 2), (0, 0))


def test_decimate_corners():
    path = [(0, 0), (1, 0), (2, 0), (3, 1), (4, 2), (4, 3)]
    assert pl.decimate_corners(path) == [(0, 0), (2, 0), (4, 2), (4, 3)]
    assert pl.decimate_corners([(0, 0)]) == [(0, 0)]


def _toy_ensemble(density_logit, n=12, z_hi=3.0):
    lo = np.zeros(3)
    hi = np.array([2.4, 2.4, z_hi])
    members = []
    for _ in range(2):
        f = FieldGrid(lo, hi, (n, n, n), 2)
        f.density[:] = density_logit
        members.append(f)
    return Ensemble(members)


def test_fuse_without_counts_trusts_the_fields():
    fused = pl.fuse_free_space(_toy_ensemble(10.0))  # everything solid
    assert np.all(fused.occ2d.state == pl.OCCUPIED)
    fused = pl.fuse_free_space(_toy_ensemble(-10.0))  # everything empty
    inner = fused.occ2d.state[1:-1, 1:-1]
    assert np.all(inner == pl.FREE)
    # border ringfence
    assert np.all(fused.occ2d.state[0, :] == pl.OCCUPIED)
    assert np.all(fused.occ2d.state[:, -1] == pl.OCCUPIED)


def test_fuse_union_over_members():
    ens = _toy_ensemble(-10.0)
    # one member believes in a solid column: fused space must block it
    ix = iy = 6
    ens.members[1].density[ix, iy, :] = 10.0
    fused = pl.fuse_free_space(ens)
    assert not fused.free3d[ix, iy].all()
    assert fused.occ2d.state.T[ix, iy] == pl.OCCUPIED


def test_fuse_carves_visited_cells():
    ens = _toy_ensemble(10.0)  # fields claim everything is solid
    ny = nx = pl.fuse_free_space(ens).occ2d.state.shape[0]
    counts = np.zeros((ny, nx))
    counts[5, 4:8] = 3.0
    fused = pl.fuse_free_space(ens, counts2d=counts)
    assert np.all(fused.occ2d.state[5, 4:8] == pl.FREE)
    # unvisited cells keep the field's opinion
    assert fused.occ2d.state[2, 2] == pl.OCCUPIED


def test_fuse_respects_sensor_hits():
    ens = _toy_ensemble(10.0)
    ny = nx = pl.fuse_free_space(ens).occ2d.state.shape[0]
    counts = np.zeros((ny, nx))
    counts[4:9, 4:9] = 1.0
    hits = np.zeros((ny, nx))
    hits[6, 6] = 2.0
    fused = pl.fuse_free_space(ens, counts2d=counts, hits2d=hits)
    # the hit cell and its 8-neighborhood stay occupied
    assert np.all(fused.occ2d.state[5:8, 5:8] == pl.OCCUPIED)
    # visited cells outside the margin are carved free
    assert fused.occ2d.state[4, 4] == pl.FREE


def test_frequency_waypoint_prefers_rare_cells():
    state = np.full((6, 6), pl.FREE)
    counts = np.full((6, 6), 50.0)
    counts[3, 2] = 0.0
    grid = _grid(state, counts=counts)
    rng = np.random.default_rng(0)
    picks = {pl.frequency_waypoint(grid, beta=5.0, rng=rng) for _ in range(50)}
    assert picks == {(2, 3)}
    with pytest.raises(ValueError):
        pl.frequency_waypoint(grid, beta=-1.0, rng=rng)


def test_frequency_waypoint_uniform_at_zero_beta():
    state = np.full((4, 4), pl.FREE)
    counts = np.zeros((4, 4))
    counts[0, 0] = 1000.0
    grid = _grid(state, counts=counts)
    rng = np.random.default_rng(1)
    picks = [pl.frequency_waypoint(grid, beta=0.0, rng=rng)
             for _ in range(600)]
    freq = np.zeros((4, 4))
    for x, y in picks:
        freq[y, x] += 1
    # uniform over the 16 free cells: every cell seen, none dominates
    assert np.all(freq > 0)
    assert freq.max() < 3.0 * freq.min()


def test_frontier_cells_and_waypoint():
    state = np.full((7, 7), pl.FREE)
    state[:, 4] = pl.UNKNOWN
    state[:, 5:] = pl.UNKNOWN
    grid = _grid(state)
    fr = pl.frontier_cells(grid)
    assert set(fr) == {(3, y) for y in range(7)}
    pose = Pose.from_yaw(np.array([0.1, 0.5, 1.5]), 0.0)
    best = pl.frontier_waypoint(grid, pose)
    assert best == (3, 2)  # same row as the camera cell, straight ahead
    # visited exclusion pushes the choice away by more than one cell
    best2 = pl.frontier_waypoint(grid, pose, visited=[best])
    assert best2 is not None and abs(best2[1] - best[1]) > 1
    grid_all_known = _grid(np.full((5, 5), pl.FREE))
    assert pl.frontier_waypoint(grid_all_known, pose) is None


def _scan_along_x():
    pos_xy = np.array([0.5, 0.5])
    dirs_xy = np.array([[1.0, 0.0]])
    return pos_xy, dirs_xy


def test_update_counts_marches_to_the_hit():
    cell = 0.2
    counts = np.zeros((10, 10))
    hits = np.zeros((10, 10))
    pos_xy, dirs_xy = _scan_along_x()
    # surface at x = 1.5, sensor at x = 0.5
    pl.update_counts(counts, np.zeros(2), cell, pos_xy, dirs_xy,
                     np.array([1.0]), hits=hits)
    row = counts[2]  # camera row: y = 0.5 -> iy = 2
    assert row[2] == 1.0  # camera cell
    assert row[6] == 1.0  # just short of the surface
    assert row[7] == 0.0  # surface cell is not free
    assert counts.sum() == 5.0
    assert hits[2, 7] == 1.0 and hits.sum() == 1.0


def test_update_counts_caps_infinite_rays():
    cell = 0.2
    counts = np.zeros((10, 10))
    hits = np.zeros((10, 10))
    pos_xy, dirs_xy = _scan_along_x()
    pl.update_counts(counts, np.zeros(2), cell, pos_xy, dirs_xy,
                     np.array([np.inf]), max_range=0.6, hits=hits)
    assert hits.sum() == 0.0  # no surface observed
    assert counts[2, 2] == 1.0
    assert counts[2, :2].sum() == 0.0  # nothing behind the camera
    assert counts.sum() <= 4.0  # range cap


def test_trajectory_collision_check():
    from activescout.flatness import allocate_times, min_snap
    state = np.full((12, 12), pl.FREE)
    grid = _grid(state)
    wps = np.array([[0.5, 0.5, 1.5], [1.9, 0.5, 1.5]])
    traj = min_snap(wps, [0.0, 0.0], allocate_times(wps))
    assert not pl.trajectory_collides(grid, traj)
    grid.state[2, 5] = pl.OCCUPIED  # wall cell on the straight path
    assert pl.trajectory_collides(grid, traj)


def test_sample_candidates_properties():
    state = np.full((12, 12), pl.FREE)
    state[0, :] = state[-1, :] = pl.OCCUPIED
    state[:, 0] = state[:, -1] = pl.OCCUPIED
    grid = _grid(state)
    pose = Pose.from_yaw(np.array([1.1, 1.1, 1.5]), 0.3)
    cands = pl.sample_candidates(grid, pose, n_candidates=4,
                                 rng=np.random.default_rng(0), n_views=6)
    assert len(cands) == 4
    for c in cands:
        assert len(c.viewpoints) == 6
        assert grid.is_free(*c.goal_cell)
        assert not pl.trajectory_collides(grid, c.trajectory)
        assert c.path_cells[0] == grid.world_to_cell(pose.translation[:2])


def test_candidate_for_goal_falls_back_to_spin():
    state = np.full((8, 8), pl.FREE)
    state[:, 4] = pl.OCCUPIED
    grid = _grid(state)
    pose = Pose.from_yaw(np.array([0.3, 0.3, 1.5]), 0.0)
    cand = pl.candidate_for_goal(grid, pose, (6, 6))  # behind the wall
    start = grid.world_to_cell(pose.translation[:2])
    assert cand.goal_cell == start
    assert cand.duration > 0
    p0 = cand.trajectory.coeffs[0, 0, :3]
    pT = cand.trajectory.coeffs[-1, 0, :3]
    assert np.allclose(p0, pT, atol=1e-9)  # spin in place
