"""Procedural ground-truth world: box scenes and an analytic ray-cast sensor.

Scenes are collections of axis-aligned colored boxes inside an axis-aligned
boundary. Rooms are laid out in a row along x and joined by doorways cut
into the dividing walls, so a path always exists at the planning height.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, pixel_directions

Z_PLAN = 1.5  # planning / flight height above the floor slab, meters
WALL = 0.2  # wall and slab thickness
ROOM_W = 4.0  # inner room extent along x
ROOM_D = 4.0  # inner room extent along y
ROOM_H = 3.0  # inner room height
DOOR_W = 1.2  # doorway width (>= the 0.8 m minimum with margin for dilation)

MISS_DEPTH = np.inf  # depth sentinel for rays that escape the scene


class PlacementError(RuntimeError):
    """Raised when objects cannot be placed without overlap."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with a flat color and a semantic category."""

    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)
    color: np.ndarray  # (3,) in [0, 1]
    category: int

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


@dataclass
class SceneSpec:
    rooms: int = 2
    objects: int = 5
    categories: int = 8  # category 0 reserved for structure

    def __post_init__(self):
        if self.rooms < 1:
            raise ValueError("need at least one room")
        if self.objects < 0:
            raise ValueError("object count must be >= 0")
        if self.categories < 2:
            raise ValueError("need >= 2 categories")


@dataclass
class Scene:
    """Static world: boundary, primitives, and object ground truth."""

    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    primitives: list[Box]
    categories: int
    seed: int
    room_rects: list[tuple[float, float, float, float]] = field(default_factory=list)
    objects: list[dict] = field(default_factory=list)  # {"centroid", "category"}

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bounds_hi - self.bounds_lo))

    def point_in_solid(self, p) -> bool:
        return any(b.contains(p) for b in self.primitives)

    def eval_poses(self, intrinsics=None) -> list[Pose]:
        """Held-out evaluation poses: 4 yaw directions at each room center."""
        poses = []
        for (x0, x1, y0, y1) in self.room_rects:
            center = np.array([(x0 + x1) / 2, (y0 + y1) / 2, Z_PLAN])
            for k in range(4):
                poses.append(Pose.from_yaw(center, k * np.pi / 2))
        return poses


def _object_color(category: int, rng: np.random.Generator) -> np.ndarray:
    """Saturated color keyed to the category, with a little per-object jitter."""
    hue = (category * 0.137508) % 1.0  # golden-ratio spacing
    h6 = hue * 6.0
    k = np.array([(h6 + 0.0) % 6, (h6 + 4.0) % 6, (h6 + 2.0) % 6])
    base = 1.0 - np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0) * 0.8
    return np.clip(base + rng.uniform(-0.05, 0.05, 3), 0.05, 1.0)


def generate_scene(seed: int, spec: SceneSpec | None = None) -> Scene:
    """Deterministic procedural scene: rooms in a row, objects on the floor.

    Raises PlacementError if the requested objects cannot be placed without
    interpenetration after bounded retries.
    """
    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)

    n = spec.rooms
    X = WALL + n * (ROOM_W + WALL)  # outer extent along x
    Y = ROOM_D + 2 * WALL
    Z0, Z1 = WALL, WALL + ROOM_H  # inner vertical extent
    lo = np.array([0.0, 0.0, 0.0])
    hi = np.array([X, Y, Z1 + WALL])

    prims: list[Box] = []

    def wall(b_lo, b_hi):
        shade = rng.uniform(0.45, 0.7)
        color = np.array([shade, shade, shade]) + rng.uniform(-0.03, 0.03, 3)
        prims.append(Box(np.array(b_lo), np.array(b_hi), np.clip(color, 0, 1), 0))

    wall([0, 0, 0], [X, Y, Z0])  # floor
    wall([0, 0, Z1], [X, Y, Z1 + WALL])  # ceiling
    wall([0, 0, Z0], [WALL, Y, Z1])  # -x outer
    wall([X - WALL, 0, Z0], [X, Y, Z1])  # +x outer
    wall([0, 0, Z0], [X, WALL, Z1])  # -y outer
    wall([0, Y - WALL, Z0], [X, Y, Z1])  # +y outer

    room_rects = []
    for i in range(n):
        x0 = WALL + i * (ROOM_W + WALL)
        room_rects.append((x0, x0 + ROOM_W, WALL, WALL + ROOM_D))

    # dividing walls with a doorway gap in y (full height)
    for i in range(n - 1):
        wx0 = WALL + ROOM_W + i * (ROOM_W + WALL)
        gy0 = rng.uniform(WALL + 0.4, WALL + ROOM_D - 0.4 - DOOR_W)
        gy1 = gy0 + DOOR_W
        if gy0 > WALL + 1e-9:
            wall([wx0, WALL, Z0], [wx0 + WALL, gy0, Z1])
        if gy1 < WALL + ROOM_D - 1e-9:
            wall([wx0, gy1, Z0], [wx0 + WALL, WALL + ROOM_D, Z1])

    # objects: boxes on the floor, distinct categories cycling over 1..C-1
    objects = []
    placed: list[Box] = []
    for i in range(spec.objects):
        cat = 1 + i % (spec.categories - 1)
        for attempt in range(200):
            room = room_rects[int(rng.integers(n))]
            sx = rng.uniform(0.4, 0.8)
            sy = rng.uniform(0.4, 0.8)
            h = rng.uniform(0.5, 1.8)
            margin = 0.45
            cx = rng.uniform(room[0] + margin + sx / 2, room[1] - margin - sx / 2)
            cy = rng.uniform(room[2] + margin + sy / 2, room[3] - margin - sy / 2)
            b_lo = np.array([cx - sx / 2, cy - sy / 2, Z0])
            b_hi = np.array([cx + sx / 2, cy + sy / 2, Z0 + h])
            clearance = 0.2
            ok = all(
                np.any(b_lo - clearance >= p.hi) or np.any(b_hi + clearance <= p.lo)
                for p in placed
            )
            if ok:
                box = Box(b_lo, b_hi, _object_color(cat, rng), cat)
                prims.append(box)
                placed.append(box)
                objects.append(
                    {"centroid": (b_lo + b_hi) / 2.0, "category": cat}
                )
                break
        else:
            raise PlacementError(
                f"could not place object {i} after 200 attempts"
            )

    return Scene(lo, hi, prims, spec.categories, seed, room_rects, objects)


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def _slab_times(lo, hi, origins, inv_dirs):
    """Entry/exit parameters of rays against one box. Shapes broadcast."""
    t1 = (lo - origins) * inv_dirs
    t2 = (hi - origins) * inv_dirs
    tmin = np.max(np.minimum(t1, t2), axis=-1)
    tmax = np.min(np.maximum(t1, t2), axis=-1)
    return tmin, tmax


def raycast_batch(scene: Scene, origins, directions):
    """Nearest-hit ray casting for a batch of unit rays.

    Returns (distance, color, category); distance is +inf on a miss.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    d = np.where(np.abs(directions) < 1e-300, 1e-300, directions)
    inv = 1.0 / d

    n = origins.shape[0]
    best = np.full(n, np.inf)
    color = np.zeros((n, 3))
    category = np.zeros(n, dtype=np.int32)
    for box in scene.primitives:
        tmin, tmax = _slab_times(box.lo, box.hi, origins, inv)
        t = np.where(tmin > 1e-12, tmin, tmax)
        hit = (tmax >= tmin) & (t > 1e-12) & (t < best)
        best[hit] = t[hit]
        color[hit] = box.color
        category[hit] = box.category
    return best, color, category


def raycast(scene: Scene, origin, direction):
    """Single-ray nearest intersection; returns None on a miss.

    The direction must be unit length.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    dist, color, cat = raycast_batch(scene, origin[None], direction[None])
    if not np.isfinite(dist[0]):
        return None
    return {"distance": float(dist[0]), "color": color[0], "category": int(cat[0])}


@dataclass
class Observation:
    """One sensor frame: RGB, per-ray depth, and per-pixel category."""

    pose: Pose
    intrinsics: CameraIntrinsics
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) meters, +inf where no hit
    category: np.ndarray  # (H, W) int

    def __post_init__(self):
        H, W = self.intrinsics.height, self.intrinsics.width
        if self.rgb.shape != (H, W, 3) or self.depth.shape != (H, W):
            raise ValueError("image dimensions do not match intrinsics")
        if self.category.shape != (H, W):
            raise ValueError("image dimensions do not match intrinsics")


def render_ground_truth(
    scene: Scene, pose: Pose, intrinsics: CameraIntrinsics
) -> Observation:
    """One exact ray cast per pixel through the pinhole model."""
    p = pose.translation
    if np.any(p < scene.bounds_lo) or np.any(p > scene.bounds_hi):
        raise ValueError("camera is outside the scene bounds")
    if scene.point_in_solid(p):
        raise ValueError("camera is inside a solid primitive")

    H, W = intrinsics.height, intrinsics.width
    dirs = pixel_directions(intrinsics, pose).reshape(-1, 3)
    origins = np.broadcast_to(p, dirs.shape)
    dist, color, cat = raycast_batch(scene, origins, dirs)
    return Observation(
        pose=pose,
        intrinsics=intrinsics,
        rgb=color.reshape(H, W, 3),
        depth=dist.reshape(H, W),
        category=cat.reshape(H, W).astype(np.int32),
    )


# ---------------------------------------------------------------------------
# planning-height occupancy of the true scene (tests / oracles)
# ---------------------------------------------------------------------------

def plan_grid_occupancy(scene: Scene, cell: float = 0.2):
    """Boolean occupancy of the z = Z_PLAN slice on a `cell`-sized grid.

    Returns (occupied[ny, nx], origin_xy). Cell (iy, ix) covers
    [origin + (ix, iy)*cell, origin + (ix+1, iy+1)*cell).
    """
    lo, hi = scene.bounds_lo, scene.bounds_hi
    nx = int(np.ceil((hi[0] - lo[0]) / cell))
    ny = int(np.ceil((hi[1] - lo[1]) / cell))
    occ = np.zeros((ny, nx), dtype=bool)
    z = Z_PLAN
    for box in scene.primitives:
        if not (box.lo[2] <= z <= box.hi[2]):
            continue
        ix0 = max(int(np.floor((box.lo[0] - lo[0]) / cell)), 0)
        ix1 = min(int(np.ceil((box.hi[0] - lo[0]) / cell)), nx)
        iy0 = max(int(np.floor((box.lo[1] - lo[1]) / cell)), 0)
        iy1 = min(int(np.ceil((box.hi[1] - lo[1]) / cell)), ny)
        occ[iy0:iy1, ix0:ix1] = True
    return occ, lo[:2].copy()
