"""Explicit trilinear voxel radiance field: query, rendering, training.

The field stores raw logits per grid vertex; densities go through a
softplus, colors through a sigmoid, and categories through a softmax. Ray
rendering uses the discrete transmittance product over stratified samples,
with variances computed from the same termination weights as the means.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .geometry import CameraIntrinsics, Pose, pixel_directions
from .scene import Observation

DENSITY_LOGIT_INIT = -4.0  # softplus(-4) ~ 0.018: slightly transparent start
DEFAULT_N_SAMPLES = 128
NEAR_DEFAULT = 0.05


@dataclass
class LossWeights:
    """Multipliers of the color / depth / category loss terms."""

    rgb: float = 1.0
    depth: float = 0.1
    category: float = 0.05

    def __post_init__(self):
        if min(self.rgb, self.depth, self.category) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class RayRender:
    """Per-ray rendering outputs."""

    rgb: np.ndarray  # (3,) mean color
    rgb_var: np.ndarray  # (3,)
    depth: float
    depth_var: float
    catdist: np.ndarray  # (C,) renormalized category distribution
    p_background: float  # probability the ray escapes past the far plane
    weights: np.ndarray  # (n_samples,)
    tvals: np.ndarray  # (n_samples,) sample depths


class FieldGrid:
    """Dense voxel grid of logits over an axis-aligned bounding box.

    `resolution` counts vertices per axis; noise_scale controls the random
    per-member initialization spread (this is what keeps ensemble members
    disagreeing about regions no observation has constrained yet).
    """

    def __init__(self, bounds_lo, bounds_hi, resolution, categories,
                 rng=None, noise_scale=0.5):
        self.lo = np.asarray(bounds_lo, dtype=np.float64)
        self.hi = np.asarray(bounds_hi, dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("degenerate bounds")
        if isinstance(resolution, int):
            resolution = (resolution, resolution, resolution)
        self.resolution = tuple(int(r) for r in resolution)
        if min(self.resolution) < 2:
            raise ValueError("need >= 2 vertices per axis")
        self.categories = int(categories)
        nx, ny, nz = self.resolution
        C = self.categories
        if rng is None:
            self.density = np.full((nx, ny, nz), DENSITY_LOGIT_INIT)
            self.color = np.zeros((nx, ny, nz, 3))
            self.category = np.zeros((nx, ny, nz, C))
        else:
            self.density = DENSITY_LOGIT_INIT + noise_scale * rng.standard_normal(
                (nx, ny, nz))
            self.color = noise_scale * rng.standard_normal((nx, ny, nz, 3))
            self.category = noise_scale * rng.standard_normal((nx, ny, nz, C))

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.resolution) - 1)

    @property
    def far_default(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def copy(self) -> "FieldGrid":
        out = FieldGrid(self.lo, self.hi, self.resolution, self.categories)
        out.density = self.density.copy()
        out.color = self.color.copy()
        out.category = self.category.copy()
        return out

    # -- queries ------------------------------------------------------------

    def query(self, points):
        """(color, sigma, category distribution) at one or many points.

        Points outside the bounds are clamped onto them.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d_logit = kernels.interpolate(self.density, self.lo, self.hi, pts)
        c_logit = kernels.interpolate(self.color, self.lo, self.hi, pts)
        o_logit = kernels.interpolate(self.category, self.lo, self.hi, pts)
        sigma = kernels.softplus(d_logit)
        c = kernels.sigmoid(c_logit)
        o_shift = o_logit - o_logit.max(axis=-1, keepdims=True)
        o = np.exp(o_shift)
        o /= o.sum(axis=-1, keepdims=True)
        if np.asarray(points).ndim == 1:
            return c[0], float(sigma[0]), o[0]
        return c, sigma, o

    def render_rays(self, origins, dirs, near=None, far=None,
                    n_samples=DEFAULT_N_SAMPLES, rng=None, want_weights=False):
        """Batch rendering; see kernels.render_rays for the output dict."""
        origins = np.atleast_2d(origins)
        near = NEAR_DEFAULT if near is None else near
        far = self.far_default if far is None else far
        if not near < far:
            raise ValueError("need near < far")
        if n_samples < 2:
            raise ValueError("need n_samples >= 2")
        jitter = None
        if rng is not None:
            jitter = rng.random((origins.shape[0], n_samples))
        return kernels.render_rays(
            self.density, self.color, self.category, self.lo, self.hi,
            origins, np.atleast_2d(dirs), near, far, n_samples,
            jitter, want_weights,
        )

    def render_ray(self, origin, direction, near=None, far=None,
                   n_samples=DEFAULT_N_SAMPLES, rng=None) -> RayRender:
        out = self.render_rays(
            np.asarray(origin)[None], np.asarray(direction)[None],
            near, far, n_samples, rng, want_weights=True,
        )
        return RayRender(
            rgb=out["rgb"][0], rgb_var=out["rgb_var"][0],
            depth=float(out["depth"][0]), depth_var=float(out["depth_var"][0]),
            catdist=out["catdist"][0], p_background=float(out["p_bg"][0]),
            weights=out["weights"][0], tvals=out["tvals"][0],
        )

    def render_image(self, pose: Pose, intrinsics: CameraIntrinsics,
                     n_samples=DEFAULT_N_SAMPLES, rng=None):
        """Render every pixel; returns maps shaped (H, W, ...)."""
        H, W = intrinsics.height, intrinsics.width
        dirs = pixel_directions(intrinsics, pose).reshape(-1, 3)
        origins = np.broadcast_to(pose.translation, dirs.shape)
        out = self.render_rays(origins, dirs, n_samples=n_samples, rng=rng)
        return {
            "rgb": out["rgb"].reshape(H, W, 3),
            "rgb_var": out["rgb_var"].reshape(H, W, 3),
            "depth": out["depth"].reshape(H, W),
            "depth_var": out["depth_var"].reshape(H, W),
            "catdist": out["catdist"].reshape(H, W, -1),
            "p_bg": out["p_bg"].reshape(H, W),
            "wsum": out["wsum"].reshape(H, W),
        }


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Observation store with a recent/past split for training batches.

    `mark_recent` moves the recency marker so that observations appended
    afterwards form the "recent" partition (the last executed trajectory).
    """

    def __init__(self):
        self.observations: list[Observation] = []
        self._dirs_cache: list[np.ndarray] = []
        self._recent_start = 0

    def __len__(self):
        return len(self.observations)

    def mark_recent(self):
        self._recent_start = len(self.observations)

    def add(self, obs: Observation):
        self.observations.append(obs)
        self._dirs_cache.append(
            pixel_directions(obs.intrinsics, obs.pose).reshape(-1, 3)
        )

    def extend(self, observations):
        for obs in observations:
            self.add(obs)

    @property
    def recent_indices(self):
        return np.arange(self._recent_start, len(self.observations))

    @property
    def past_indices(self):
        return np.arange(self._recent_start)

    def sample_batch(self, n_rays: int, rng: np.random.Generator,
                     recent_pool=None, past_pool=None):
        """Pixel batch: half from recent observations, half uniform over past.

        Pools override the partitions (used for bootstrap-resampled members).
        When the past partition is empty all samples come from recent, and
        vice versa.
        """
        if not self.observations:
            raise ValueError("empty replay buffer")
        recent = np.asarray(
            recent_pool if recent_pool is not None else self.recent_indices)
        past = np.asarray(past_pool if past_pool is not None else self.past_indices)
        if recent.size == 0:
            recent = past
        if past.size == 0:
            past = recent
        n_recent = n_rays // 2
        obs_idx = np.concatenate([
            rng.choice(recent, size=n_recent),
            rng.choice(past, size=n_rays - n_recent),
        ])

        origins = np.empty((n_rays, 3))
        dirs = np.empty((n_rays, 3))
        gt_rgb = np.empty((n_rays, 3))
        gt_depth = np.empty(n_rays)
        gt_label = np.empty(n_rays, dtype=np.int64)
        for k, oi in enumerate(obs_idx):
            obs = self.observations[oi]
            npix = obs.depth.size
            pi = int(rng.integers(npix))
            origins[k] = obs.pose.translation
            dirs[k] = self._dirs_cache[oi][pi]
            gt_rgb[k] = obs.rgb.reshape(-1, 3)[pi]
            gt_depth[k] = obs.depth.reshape(-1)[pi]
            gt_label[k] = obs.category.reshape(-1)[pi]
        valid = np.isfinite(gt_depth)
        gt_depth = np.where(valid, gt_depth, 0.0)
        return origins, dirs, gt_rgb, gt_depth, valid, gt_label


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)

    def update(self, params: dict, grads: dict, touched=None):
        """One Adam step.

        With `touched` (flat vertex indices), only those rows are updated —
        moments of untouched rows stay frozen, as in sparse Adam. Volume
        rendering gradients are zero outside the sampled vertices, so this
        is much cheaper and only changes the decay schedule of stale moments.
        """
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.step
        corr2 = 1.0 - b2 ** self.step
        for key, g in grads.items():
            if key not in self.m:
                self.m[key] = np.zeros_like(params[key])
                self.v[key] = np.zeros_like(params[key])
            if touched is None:
                self.m[key] = b1 * self.m[key] + (1 - b1) * g
                self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
                mhat = self.m[key] / corr1
                vhat = self.v[key] / corr2
                params[key] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
                continue
            nvert = self.m[key].shape[0] * self.m[key].shape[1] * \
                self.m[key].shape[2]
            kernels.adam_sparse(
                params[key].reshape(nvert, -1), self.m[key].reshape(nvert, -1),
                self.v[key].reshape(nvert, -1), g.reshape(nvert, -1),
                touched, self.lr, b1, b2, self.eps, corr1, corr2)


def batch_loss(field: FieldGrid, origins, dirs, gt_rgb, gt_depth, valid,
               gt_label, weights: LossWeights, n_samples, jitter=None):
    """Loss terms and analytic gradients on a ray batch."""
    l_rgb, l_depth, l_cat, g_dens, g_col, g_cat, touched = kernels.loss_grad(
        field.density, field.color, field.category, field.lo, field.hi,
        np.asarray(origins, dtype=np.float64), np.asarray(dirs, dtype=np.float64),
        NEAR_DEFAULT, field.far_default, n_samples, jitter,
        gt_rgb, gt_depth, np.asarray(valid, dtype=np.uint8), gt_label,
        weights.rgb, weights.depth, weights.category,
    )
    total = weights.rgb * l_rgb + weights.depth * l_depth + weights.category * l_cat
    return total, (l_rgb, l_depth, l_cat), {
        "density": g_dens, "color": g_col, "category": g_cat}, touched


class FieldTrainer:
    """Adaptive-moment gradient descent on one field."""

    def __init__(self, field: FieldGrid, weights: LossWeights | None = None,
                 lr: float = 1e-2, n_samples: int = 64):
        self.field = field
        self.weights = weights or LossWeights()
        self.adam = AdamState(lr=lr)
        self.n_samples = n_samples

    def calibrate_weights(self, buffer: ReplayBuffer, rng, n_rays=512):
        """One-time rescale so the three weighted terms share a magnitude."""
        batch = buffer.sample_batch(n_rays, rng)
        _, (l_rgb, l_depth, l_cat), _, _ = batch_loss(
            self.field, *batch, self.weights, self.n_samples)
        target = max(self.weights.rgb * l_rgb, 1e-8)
        if l_depth > 1e-8:
            self.weights.depth = target / l_depth
        if l_cat > 1e-8:
            self.weights.category = target / l_cat

    def train(self, buffer: ReplayBuffer, steps: int, rays_per_step: int,
              rng: np.random.Generator, recent_pool=None, past_pool=None):
        """Run `steps` gradient updates; returns the per-step total loss."""
        trace = np.empty(steps)
        params = {"density": self.field.density, "color": self.field.color,
                  "category": self.field.category}
        for s in range(steps):
            batch = buffer.sample_batch(
                rays_per_step, rng, recent_pool, past_pool)
            jitter = rng.random((rays_per_step, self.n_samples))
            total, _, grads, mask = batch_loss(
                self.field, *batch, self.weights, self.n_samples, jitter)
            self.adam.update(params, grads, np.nonzero(mask)[0])
            trace[s] = total
        return trace


def train(field: FieldGrid, buffer: ReplayBuffer, steps: int,
          rays_per_step: int, rng, weights: LossWeights | None = None):
    """Convenience wrapper: train and return (field, loss trace)."""
    trainer = FieldTrainer(field, weights)
    trace = trainer.train(buffer, steps, rays_per_step, rng) if steps else \
        np.empty(0)
    return field, trace


# ---------------------------------------------------------------------------
# occupancy export
# ---------------------------------------------------------------------------

@dataclass
class OccupancyGrid3D:
    """Boolean voxel grid; voxel (i, j, k) covers origin + [i, i+1) * cell."""

    occupied: np.ndarray  # (nx, ny, nz) bool
    origin: np.ndarray  # (3,)
    cell: float


def export_occupancy(field: FieldGrid, sigma_threshold: float,
                     cell: float = 0.2) -> OccupancyGrid3D:
    """Threshold the density at voxel centers on a `cell`-sized grid."""
    if sigma_threshold <= 0:
        raise ValueError("sigma threshold must be positive")
    extent = field.hi - field.lo
    n = np.maximum(np.ceil(extent / cell).astype(int), 1)
    xs = field.lo[0] + (np.arange(n[0]) + 0.5) * cell
    ys = field.lo[1] + (np.arange(n[1]) + 0.5) * cell
    zs = field.lo[2] + (np.arange(n[2]) + 0.5) * cell
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    d_logit = kernels.interpolate(field.density, field.lo, field.hi, pts)
    sigma = kernels.softplus(d_logit)
    occ = (sigma > sigma_threshold).reshape(tuple(n))
    return OccupancyGrid3D(occ, field.lo.copy(), cell)
