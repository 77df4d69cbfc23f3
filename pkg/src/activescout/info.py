"""Predictive information over an ensemble of fields.

Per-pixel channel entropies (Gaussian color/depth, categorical semantics,
Bernoulli occupancy) are computed per ensemble member (conditional) and for
the member mixture (marginal); their clamped gap, weighted per channel, is
the planning objective. Pixels are treated as independent, so sequence
entropies are sums (reported per pixel) over pixels and viewpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import FieldGrid, FieldTrainer, LossWeights, ReplayBuffer

RGB_VAR_FLOOR = 1e-4  # intensity^2
DEPTH_VAR_FLOOR = 1e-3  # m^2
_LOG_2PIE = float(np.log(2.0 * np.pi * np.e))


def gaussian_entropy(variance, floor):
    """0.5 * ln(2*pi*e * max(variance, floor)), elementwise, in nats."""
    if floor <= 0:
        raise ValueError("variance floor must be positive")
    return 0.5 * (_LOG_2PIE + np.log(np.maximum(variance, floor)))


def bernoulli_entropy(p):
    """-p ln p - (1-p) ln(1-p) with the 0 ln 0 = 0 convention."""
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0)
    q = 1.0 - p
    return -np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0) - np.where(
        q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)


def categorical_entropy(dist):
    """Entropy of probability vectors along the last axis, in nats."""
    d = np.asarray(dist, dtype=np.float64)
    return -np.sum(np.where(d > 0, d * np.log(np.where(d > 0, d, 1.0)), 0.0),
                   axis=-1)


@dataclass
class InfoWeights:
    """Channel weights of the combined objective."""

    rgb: float = 1.0
    depth: float = 1.0
    semantic: float = 3.0
    occupancy: float = 2.0

    def __post_init__(self):
        if min(self.rgb, self.depth, self.semantic, self.occupancy) < 0:
            raise ValueError("info weights must be nonnegative")


@dataclass
class ChannelEntropies:
    """Per-pixel entropy maps (nats), stacked over viewpoints."""

    rgb: np.ndarray
    depth: np.ndarray
    semantic: np.ndarray
    occupancy: np.ndarray

    def per_pixel_mean(self) -> dict:
        return {
            "rgb": float(np.mean(self.rgb)),
            "depth": float(np.mean(self.depth)),
            "semantic": float(np.mean(self.semantic)),
            "occupancy": float(np.mean(self.occupancy)),
        }


@dataclass
class Ensemble:
    """m fields approximating the scene posterior, with uniform weights."""

    members: list
    trainers: list = dc_field(default_factory=list)
    rngs: list = dc_field(default_factory=list)

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("ensemble needs m >= 2 members")
        ref = self.members[0]
        for m in self.members[1:]:
            if m.categories != ref.categories or not (
                np.allclose(m.lo, ref.lo) and np.allclose(m.hi, ref.hi)
            ):
                raise ValueError("members must share bounds and categories")

    @property
    def m(self) -> int:
        return len(self.members)

    def train_round(self, buffer: ReplayBuffer, steps: int, rays_per_step: int):
        """Train every member on its own bootstrap resample of the buffer."""
        for trainer, rng in zip(self.trainers, self.rngs):
            recent = buffer.recent_indices
            past = buffer.past_indices
            recent_pool = rng.choice(recent, size=recent.size) if recent.size else None
            past_pool = rng.choice(past, size=past.size) if past.size else None
            trainer.train(buffer, steps, rays_per_step, rng,
                          recent_pool=recent_pool, past_pool=past_pool)


def bootstrap_ensemble(buffer: ReplayBuffer, m: int, resolutions, rng,
                       bounds_lo, bounds_hi, categories,
                       steps: int = 0, rays_per_step: int = 256,
                       seeds=None, noise_scale: float = 0.5,
                       loss_weights: LossWeights | None = None) -> Ensemble:
    """Build m fields with independent seeds and bootstrap-train them.

    `resolutions` gives one grid resolution per member (the default pairing
    is one large and one half-resolution member). Explicit `seeds` make
    members reproducible; identical seeds with identical resolutions give
    identical members.
    """
    if m < 2:
        raise ValueError("ensemble needs m >= 2 members")
    if len(resolutions) != m:
        raise ValueError("need one resolution per member")
    if seeds is None:
        seeds = [int(rng.integers(2**31 - 1)) for _ in range(m)]
    members, trainers, rngs = [], [], []
    for k in range(m):
        mrng = np.random.default_rng(seeds[k])
        fieldk = FieldGrid(bounds_lo, bounds_hi, resolutions[k], categories,
                           rng=mrng, noise_scale=noise_scale)
        lw = LossWeights(**vars(loss_weights)) if loss_weights else None
        members.append(fieldk)
        trainers.append(FieldTrainer(fieldk, lw))
        rngs.append(mrng)
    ensemble = Ensemble(members, trainers, rngs)
    if steps > 0:
        ensemble.train_round(buffer, steps, rays_per_step)
    return ensemble


# ---------------------------------------------------------------------------
# entropy of rendered predictions
# ---------------------------------------------------------------------------

def render_member(member: FieldGrid, viewpoints, intrinsics, n_samples=64):
    """Stack per-viewpoint prediction maps for one member."""
    maps = [member.render_image(p, intrinsics, n_samples=n_samples)
            for p in viewpoints]
    return {key: np.stack([m[key] for m in maps]) for key in maps[0]}


def ensemble_renders(ensemble: Ensemble, viewpoints, intrinsics, n_samples=64):
    return [render_member(m, viewpoints, intrinsics, n_samples)
            for m in ensemble.members]


def _member_entropies(render) -> ChannelEntropies:
    return ChannelEntropies(
        rgb=gaussian_entropy(render["rgb_var"], RGB_VAR_FLOOR).mean(axis=-1),
        depth=gaussian_entropy(render["depth_var"], DEPTH_VAR_FLOOR),
        semantic=categorical_entropy(render["catdist"]),
        occupancy=bernoulli_entropy(1.0 - render["p_bg"]),
    )


def conditional_entropy_from(renders) -> ChannelEntropies:
    """Average over members of each member's per-pixel entropies."""
    parts = [_member_entropies(r) for r in renders]
    return ChannelEntropies(
        rgb=np.mean([p.rgb for p in parts], axis=0),
        depth=np.mean([p.depth for p in parts], axis=0),
        semantic=np.mean([p.semantic for p in parts], axis=0),
        occupancy=np.mean([p.occupancy for p in parts], axis=0),
    )


def marginal_entropy_from(renders) -> ChannelEntropies:
    """Entropy of the uniform member mixture, moment-matched for rgb/depth."""
    rgb_mean = np.mean([r["rgb"] for r in renders], axis=0)
    rgb_var = np.mean(
        [r["rgb_var"] + r["rgb"] ** 2 for r in renders], axis=0) - rgb_mean**2
    d_mean = np.mean([r["depth"] for r in renders], axis=0)
    d_var = np.mean(
        [r["depth_var"] + r["depth"] ** 2 for r in renders], axis=0) - d_mean**2
    catdist = np.mean([r["catdist"] for r in renders], axis=0)
    p_hit = np.mean([1.0 - r["p_bg"] for r in renders], axis=0)
    return ChannelEntropies(
        rgb=gaussian_entropy(np.maximum(rgb_var, 0.0), RGB_VAR_FLOOR).mean(axis=-1),
        depth=gaussian_entropy(np.maximum(d_var, 0.0), DEPTH_VAR_FLOOR),
        semantic=categorical_entropy(catdist),
        occupancy=bernoulli_entropy(p_hit),
    )


def conditional_entropy(ensemble, viewpoints, intrinsics,
                        n_samples=64) -> ChannelEntropies:
    if len(viewpoints) == 0:
        raise ValueError("need at least one viewpoint")
    return conditional_entropy_from(
        ensemble_renders(ensemble, viewpoints, intrinsics, n_samples))


def marginal_entropy(ensemble, viewpoints, intrinsics,
                     n_samples=64) -> ChannelEntropies:
    if len(viewpoints) == 0:
        raise ValueError("need at least one viewpoint")
    return marginal_entropy_from(
        ensemble_renders(ensemble, viewpoints, intrinsics, n_samples))


def predictive_information_from(renders, weights: InfoWeights | None = None):
    """Weighted per-pixel information and its per-channel breakdown."""
    weights = weights or InfoWeights()
    cond = conditional_entropy_from(renders)
    marg = marginal_entropy_from(renders)
    breakdown = {}
    for ch in ("rgb", "depth", "semantic", "occupancy"):
        gap = np.maximum(getattr(marg, ch) - getattr(cond, ch), 0.0)
        breakdown[ch] = float(np.mean(gap))
    total = (weights.rgb * breakdown["rgb"]
             + weights.depth * breakdown["depth"]
             + weights.semantic * breakdown["semantic"]
             + weights.occupancy * breakdown["occupancy"])
    return total, breakdown


def predictive_information(ensemble, viewpoints, intrinsics,
                           weights: InfoWeights | None = None, n_samples=64):
    """Per-pixel predictive information of the viewpoints plus breakdown."""
    renders = ensemble_renders(ensemble, viewpoints, intrinsics, n_samples)
    return predictive_information_from(renders, weights)


# ---------------------------------------------------------------------------
# Monte-Carlo entropy oracle
# ---------------------------------------------------------------------------

def monte_carlo_entropy(member_or_ensemble, viewpoints, intrinsics, n_draws,
                        rng, n_samples=64):
    """Sampling-based per-pixel entropy estimate with standard errors.

    Draws pixel values from the member's per-pixel distributions and
    averages -log p. For an ensemble, a member is first drawn uniformly per
    sample and -log of the mixture likelihood is averaged. Returns
    (ChannelEntropies estimate, ChannelEntropies standard error).
    """
    if n_draws < 2:
        raise ValueError("need n_draws >= 2")
    members = (member_or_ensemble.members
               if isinstance(member_or_ensemble, Ensemble)
               else [member_or_ensemble])
    renders = [render_member(m, viewpoints, intrinsics, n_samples)
               for m in members]
    m = len(renders)

    rgb_mean = np.stack([r["rgb"] for r in renders])  # (m, V, H, W, 3)
    rgb_var = np.maximum(np.stack([r["rgb_var"] for r in renders]), RGB_VAR_FLOOR)
    d_mean = np.stack([r["depth"] for r in renders])
    d_var = np.maximum(np.stack([r["depth_var"] for r in renders]), DEPTH_VAR_FLOOR)
    cdist = np.clip(np.stack([r["catdist"] for r in renders]), 1e-300, 1.0)
    p_hit = np.clip(1.0 - np.stack([r["p_bg"] for r in renders]), 0.0, 1.0)

    shape = d_mean.shape[1:]  # (V, H, W)

    def gauss_logpdf(x, mean, var):
        return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)

    sums = {k: np.zeros(shape) for k in ("rgb", "depth", "semantic", "occupancy")}
    sqs = {k: np.zeros(shape) for k in ("rgb", "depth", "semantic", "occupancy")}
    for _ in range(n_draws):
        k = int(rng.integers(m))
        x_rgb = rgb_mean[k] + np.sqrt(rgb_var[k]) * rng.standard_normal(
            rgb_mean[k].shape)
        x_d = d_mean[k] + np.sqrt(d_var[k]) * rng.standard_normal(d_mean[k].shape)
        u = rng.random(shape + (1,))
        x_lab = (np.cumsum(cdist[k], axis=-1) < u).sum(axis=-1)
        x_lab = np.minimum(x_lab, cdist.shape[-1] - 1)
        x_occ = rng.random(shape) < p_hit[k]

        # mixture likelihood over members (reduces to the member for m=1)
        lp_rgb = np.log(np.mean(
            np.exp(gauss_logpdf(x_rgb[None], rgb_mean, rgb_var)), axis=0)
        ).mean(axis=-1)
        lp_d = np.log(np.mean(
            np.exp(gauss_logpdf(x_d[None], d_mean, d_var)), axis=0))
        p_lab = np.mean(
            np.take_along_axis(cdist, x_lab[None, ..., None], axis=-1)[..., 0],
            axis=0)
        lp_lab = np.log(np.maximum(p_lab, 1e-300))
        p_o = np.mean(np.where(x_occ[None], p_hit, 1.0 - p_hit), axis=0)
        lp_occ = np.log(np.maximum(p_o, 1e-300))

        for key, lp in (("rgb", lp_rgb), ("depth", lp_d),
                        ("semantic", lp_lab), ("occupancy", lp_occ)):
            sums[key] += -lp
            sqs[key] += lp * lp

    est = {k: sums[k] / n_draws for k in sums}
    se = {k: np.sqrt(np.maximum(sqs[k] / n_draws - est[k] ** 2, 0.0) / n_draws)
          for k in sums}
    return (ChannelEntropies(**est), ChannelEntropies(**se))
