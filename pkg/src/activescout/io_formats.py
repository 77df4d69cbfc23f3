"""On-disk formats: scenes, observations, checkpoints, occupancy grids.

Byte-level layouts are documented in docs/formats.md. All binary fields
are little-endian.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .field import FieldGrid, OccupancyGrid3D
from .geometry import CameraIntrinsics, Pose
from .scene import Box, Observation, Scene

DEPTH_SENTINEL = np.float32(np.finfo(np.float32).max)  # serialized +inf


# ---------------------------------------------------------------------------
# scene JSON
# ---------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": "activescout-scene-v1",
        "seed": scene.seed,
        "categories": scene.categories,
        "bounds_lo": scene.bounds_lo.tolist(),
        "bounds_hi": scene.bounds_hi.tolist(),
        "room_rects": [list(r) for r in scene.room_rects],
        "primitives": [
            {"lo": b.lo.tolist(), "hi": b.hi.tolist(),
             "color": b.color.tolist(), "category": b.category}
            for b in scene.primitives
        ],
        "objects": [
            {"centroid": np.asarray(o["centroid"]).tolist(),
             "category": o["category"]}
            for o in scene.objects
        ],
    }


def save_scene(scene: Scene, path):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1))


def load_scene(path) -> Scene:
    d = json.loads(Path(path).read_text())
    prims = [Box(np.array(p["lo"]), np.array(p["hi"]),
                 np.array(p["color"]), p["category"])
             for p in d["primitives"]]
    return Scene(
        np.array(d["bounds_lo"]), np.array(d["bounds_hi"]), prims,
        d["categories"], d["seed"],
        [tuple(r) for r in d["room_rects"]],
        [{"centroid": np.array(o["centroid"]), "category": o["category"]}
         for o in d["objects"]],
    )


# ---------------------------------------------------------------------------
# observation images
# ---------------------------------------------------------------------------

def save_ppm(rgb: np.ndarray, path):
    """Binary P6 PPM, 8 bits per channel, values scaled from [0, 1]."""
    H, W = rgb.shape[:2]
    data = (np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{W} {H}\n255\n".encode())
        f.write(data.tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError("not a binary PPM file")
        dims = f.readline().split()
        W, H = int(dims[0]), int(dims[1])
        f.readline()  # maxval
        data = np.frombuffer(f.read(H * W * 3), dtype=np.uint8)
    return data.reshape(H, W, 3).astype(np.float64) / 255.0


def save_depth(depth: np.ndarray, path):
    """Header 'ASDEPTH1 H W\\n' followed by float32 values, row-major."""
    H, W = depth.shape
    body = np.where(np.isfinite(depth), depth, DEPTH_SENTINEL).astype("<f4")
    with open(path, "wb") as f:
        f.write(f"ASDEPTH1 {H} {W}\n".encode())
        f.write(body.tobytes())


def load_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().split()
        if header[0] != b"ASDEPTH1":
            raise ValueError("not an activescout depth file")
        H, W = int(header[1]), int(header[2])
        data = np.frombuffer(f.read(H * W * 4), dtype="<f4").reshape(H, W)
    out = data.astype(np.float64)
    out[data >= DEPTH_SENTINEL] = np.inf
    return out


def save_category(category: np.ndarray, path):
    """Header 'ASCAT1 H W\\n' followed by uint16 ids, row-major."""
    H, W = category.shape
    with open(path, "wb") as f:
        f.write(f"ASCAT1 {H} {W}\n".encode())
        f.write(category.astype("<u2").tobytes())


def load_category(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().split()
        if header[0] != b"ASCAT1":
            raise ValueError("not an activescout category file")
        H, W = int(header[1]), int(header[2])
        data = np.frombuffer(f.read(H * W * 2), dtype="<u2").reshape(H, W)
    return data.astype(np.int32)


def save_observation(obs: Observation, stem):
    """Writes <stem>.ppm / <stem>.depth / <stem>.cat plus <stem>.pose.json."""
    stem = str(stem)
    save_ppm(obs.rgb, stem + ".ppm")
    save_depth(obs.depth, stem + ".depth")
    save_category(obs.category, stem + ".cat")
    Path(stem + ".pose.json").write_text(json.dumps({
        "rotation": obs.pose.rotation.tolist(),
        "translation": obs.pose.translation.tolist(),
        "width": obs.intrinsics.width,
        "height": obs.intrinsics.height,
        "hfov": obs.intrinsics.hfov,
    }))


def load_observation(stem) -> Observation:
    stem = str(stem)
    meta = json.loads(Path(stem + ".pose.json").read_text())
    return Observation(
        pose=Pose(np.array(meta["rotation"]), np.array(meta["translation"])),
        intrinsics=CameraIntrinsics(meta["width"], meta["height"], meta["hfov"]),
        rgb=load_ppm(stem + ".ppm"),
        depth=load_depth(stem + ".depth"),
        category=load_category(stem + ".cat"),
    )


# ---------------------------------------------------------------------------
# field checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"ASFIELD1"


def save_checkpoint(field: FieldGrid, path):
    """Magic, header (bounds, resolution, C), float32 logits, CRC32 tail."""
    nx, ny, nz = field.resolution
    header = struct.pack(
        "<8s6d4i", _CKPT_MAGIC, *field.lo, *field.hi, nx, ny, nz,
        field.categories)
    body = (field.density.astype("<f4").tobytes()
            + field.color.astype("<f4").tobytes()
            + field.category.astype("<f4").tobytes())
    crc = struct.pack("<I", zlib.crc32(header + body) & 0xFFFFFFFF)
    Path(path).write_bytes(header + body + crc)


def load_checkpoint(path) -> FieldGrid:
    raw = Path(path).read_bytes()
    header_size = struct.calcsize("<8s6d4i")
    if len(raw) < header_size + 4:
        raise ValueError("truncated checkpoint")
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc_stored:
        raise ValueError("checkpoint checksum mismatch")
    fields = struct.unpack("<8s6d4i", raw[:header_size])
    if fields[0] != _CKPT_MAGIC:
        raise ValueError("not an activescout checkpoint")
    lo, hi = np.array(fields[1:4]), np.array(fields[4:7])
    nx, ny, nz, C = fields[7:11]
    grid = FieldGrid(lo, hi, (nx, ny, nz), C)
    n = nx * ny * nz
    body = np.frombuffer(raw[header_size:-4], dtype="<f4")
    if body.size != n * (4 + C):
        raise ValueError("checkpoint body size mismatch")
    grid.density = body[:n].astype(np.float64).reshape(nx, ny, nz)
    grid.color = body[n:4 * n].astype(np.float64).reshape(nx, ny, nz, 3)
    grid.category = body[4 * n:].astype(np.float64).reshape(nx, ny, nz, C)
    return grid


# ---------------------------------------------------------------------------
# run-length-encoded occupancy
# ---------------------------------------------------------------------------

def save_occupancy_rle(grid: OccupancyGrid3D, path):
    """Text format: header lines then 'count value' runs of the C-order scan."""
    flat = grid.occupied.astype(np.uint8).ravel()
    lines = [
        "ASOCC1",
        "{} {} {}".format(*grid.occupied.shape),
        "{:.17g} {:.17g} {:.17g}".format(*grid.origin),
        f"{grid.cell:.17g}",
    ]
    if flat.size:
        edges = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate([[0], edges])
        ends = np.concatenate([edges, [flat.size]])
        for s, e in zip(starts, ends):
            lines.append(f"{e - s} {int(flat[s])}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_occupancy_rle(path) -> OccupancyGrid3D:
    lines = Path(path).read_text().splitlines()
    if lines[0] != "ASOCC1":
        raise ValueError("not an activescout occupancy file")
    shape = tuple(int(v) for v in lines[1].split())
    origin = np.array([float(v) for v in lines[2].split()])
    cell = float(lines[3])
    runs = []
    for line in lines[4:]:
        count, value = line.split()
        runs.append(np.full(int(count), int(value), dtype=np.uint8))
    flat = np.concatenate(runs) if runs else np.empty(0, dtype=np.uint8)
    if flat.size != int(np.prod(shape)):
        raise ValueError("occupancy run lengths do not match the shape")
    return OccupancyGrid3D(flat.reshape(shape).astype(bool), origin, cell)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def save_trajectory_json(traj, path):
    Path(path).write_text(json.dumps(traj.to_json_dict(), indent=1))


def save_trajectory_csv(traj, path, dt: float = 0.1):
    """Sampled flat states at fixed time step, for plotting."""
    ts, states = traj.sample(dt)
    rows = ["t,x,y,z,vx,vy,vz,ax,ay,az,yaw,yaw_rate"]
    for t, st in zip(ts, states):
        rows.append(
            f"{t:.6f},"
            + ",".join(f"{v:.9g}" for v in st.position)
            + "," + ",".join(f"{v:.9g}" for v in st.velocity)
            + "," + ",".join(f"{v:.9g}" for v in st.acceleration)
            + f",{st.yaw:.9g},{st.yaw_rate:.9g}"
        )
    Path(path).write_text("\n".join(rows) + "\n")
