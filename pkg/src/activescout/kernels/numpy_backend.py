"""Pure-numpy volume rendering kernels (reference implementation).

The compiled extension in `_ext.pyx` mirrors this math loop-for-loop; both
backends must agree to floating-point noise. All grids store raw logits;
activations (softplus density, sigmoid color, softmax categories) are
applied after trilinear interpolation.
"""

from __future__ import annotations

import numpy as np

WSUM_EPS = 1e-6  # below this, the category distribution falls back to uniform
PROB_FLOOR = 1e-12


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _trilinear_setup(lo, hi, shape, pts):
    """Vertex indices (M, 8) and interpolation weights (M, 8) for points.

    Points outside the bounds are clamped onto them.
    """
    nx, ny, nz = shape
    u = (pts - lo) / (hi - lo)
    u = np.clip(u, 0.0, 1.0)
    x = u * (np.array([nx, ny, nz]) - 1)
    i0 = np.minimum(np.floor(x).astype(np.int64), np.array([nx, ny, nz]) - 2)
    i0 = np.maximum(i0, 0)
    f = x - i0

    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    wx = np.stack([1.0 - fx, fx], axis=-1)  # (M, 2)
    wy = np.stack([1.0 - fy, fy], axis=-1)
    wz = np.stack([1.0 - fz, fz], axis=-1)

    corners = np.array(
        [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
    )  # (8, 3)
    ix = i0[..., 0:1] + corners[:, 0]
    iy = i0[..., 1:2] + corners[:, 1]
    iz = i0[..., 2:3] + corners[:, 2]
    idx = (ix * ny + iy) * nz + iz  # (M, 8)
    w = (
        wx[..., corners[:, 0]]
        * wy[..., corners[:, 1]]
        * wz[..., corners[:, 2]]
    )  # (M, 8)
    return idx, w


def interpolate(grid, lo, hi, pts):
    """Trilinear interpolation of `grid` (nx, ny, nz, ...) at points (M, 3)."""
    shape = grid.shape[:3]
    idx, w = _trilinear_setup(lo, hi, shape, np.asarray(pts, dtype=np.float64))
    flat = grid.reshape(np.prod(shape), -1)
    vals = np.einsum("mk,mkc->mc", w, flat[idx])
    if grid.ndim == 3:
        return vals[..., 0]
    return vals.reshape(pts.shape[:-1] + grid.shape[3:])


def _sample_ts(near, far, n_samples, n_rays, jitter):
    if jitter is None:
        offs = np.full((n_rays, n_samples), 0.5)
    else:
        offs = jitter
    i = np.arange(n_samples)
    return near + (far - near) * (i[None, :] + offs) / n_samples


def _forward(dens, col, cat, lo, hi, origins, dirs, near, far, n_samples, jitter):
    """Shared forward pass; returns all intermediates needed by backward."""
    R = origins.shape[0]
    C = cat.shape[3]
    shape = dens.shape

    t = _sample_ts(near, far, n_samples, R, jitter)  # (R, n)
    delta = np.empty_like(t)
    delta[:, :-1] = t[:, 1:] - t[:, :-1]
    delta[:, -1] = far - t[:, -1]

    pts = origins[:, None, :] + dirs[:, None, :] * t[..., None]
    idx, tw = _trilinear_setup(lo, hi, shape, pts.reshape(-1, 3))

    nvert = np.prod(shape)
    d_logit = np.einsum("mk,mk->m", tw, dens.reshape(nvert)[idx]).reshape(R, n_samples)
    c_logit = np.einsum("mk,mkc->mc", tw, col.reshape(nvert, 3)[idx]).reshape(
        R, n_samples, 3
    )
    o_logit = np.einsum("mk,mkc->mc", tw, cat.reshape(nvert, C)[idx]).reshape(
        R, n_samples, C
    )

    sigma = softplus(d_logit)
    c = sigmoid(c_logit)
    o_shift = o_logit - o_logit.max(axis=-1, keepdims=True)
    o_exp = np.exp(o_shift)
    o = o_exp / o_exp.sum(axis=-1, keepdims=True)

    e = np.exp(-sigma * delta)  # 1 - alpha
    alpha = 1.0 - e
    trans = np.cumprod(e, axis=1)
    T = np.empty_like(trans)  # exclusive transmittance
    T[:, 0] = 1.0
    T[:, 1:] = trans[:, :-1]
    w = T * alpha
    p_bg = trans[:, -1]
    wsum = w.sum(axis=1)

    rgb = np.einsum("rn,rnc->rc", w, c)
    depth = np.einsum("rn,rn->r", w, t)
    S = np.einsum("rn,rnc->rc", w, o)
    return dict(
        t=t, delta=delta, idx=idx, tw=tw,
        d_logit=d_logit, c_logit=c_logit,
        sigma=sigma, c=c, o=o, e=e, alpha=alpha, T=T, w=w,
        p_bg=p_bg, wsum=wsum, rgb=rgb, depth=depth, S=S,
    )


def render_rays(
    dens, col, cat, lo, hi, origins, dirs, near, far, n_samples,
    jitter=None, want_weights=False,
):
    """Volume-render a batch of rays.

    Returns a dict with per-ray rgb/depth means and variances, the
    renormalized category distribution, background (escape) probability,
    the sum of termination weights, and optionally the weights themselves.
    """
    fw = _forward(
        np.asarray(dens), np.asarray(col), np.asarray(cat),
        np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64),
        np.asarray(origins, dtype=np.float64), np.asarray(dirs, dtype=np.float64),
        float(near), float(far), int(n_samples), jitter,
    )
    w, c, t = fw["w"], fw["c"], fw["t"]
    rgb, depth, S, wsum = fw["rgb"], fw["depth"], fw["S"], fw["wsum"]
    C = S.shape[1]

    rgb_var = np.einsum("rn,rnc->rc", w, (c - rgb[:, None, :]) ** 2)
    depth_var = np.einsum("rn,rn->r", w, (t - depth[:, None]) ** 2)

    catdist = np.where(
        wsum[:, None] >= WSUM_EPS,
        S / np.maximum(wsum[:, None], WSUM_EPS),
        np.full_like(S, 1.0 / C),
    )
    out = dict(
        rgb=rgb, rgb_var=rgb_var, depth=depth, depth_var=depth_var,
        catdist=catdist, p_bg=fw["p_bg"], wsum=wsum,
    )
    if want_weights:
        out["weights"] = w
        out["tvals"] = t
    return out


def loss_grad(
    dens, col, cat, lo, hi, origins, dirs, near, far, n_samples, jitter,
    gt_rgb, gt_depth, depth_valid, gt_label, lam1, lam2, lam3,
):
    """Fused forward + reverse pass of the training loss on a ray batch.

    loss = lam1 * mean |rgb - gt|_1 (over rays and channels)
         + lam2 * mean |depth - gt| (over depth-valid rays)
         + lam3 * mean CE(gt_label, catdist) (over rays)

    Returns (l_rgb, l_depth, l_cat, g_dens, g_col, g_cat, touched) where the
    l_* are the unweighted terms, the gradients are of the weighted total,
    and `touched` is a uint8 mask over flat vertex indices marking which
    vertices have support in the batch (all gradients vanish elsewhere).
    """
    dens = np.asarray(dens)
    col = np.asarray(col)
    cat = np.asarray(cat)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    gt_rgb = np.asarray(gt_rgb, dtype=np.float64)
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    depth_valid = np.asarray(depth_valid).astype(bool)
    gt_label = np.asarray(gt_label, dtype=np.int64)

    R = origins.shape[0]
    if R == 0:
        raise ValueError("empty ray batch")
    C = cat.shape[3]

    fw = _forward(dens, col, cat, lo, hi, origins, dirs,
                  float(near), float(far), int(n_samples), jitter)
    w, c, o, t = fw["w"], fw["c"], fw["o"], fw["t"]
    rgb, depth, S, wsum = fw["rgb"], fw["depth"], fw["S"], fw["wsum"]

    # loss terms
    l_rgb = np.mean(np.abs(rgb - gt_rgb))
    n_valid = int(depth_valid.sum())
    l_depth = (
        np.abs(depth - gt_depth)[depth_valid].sum() / n_valid if n_valid else 0.0
    )
    norm = wsum >= WSUM_EPS
    p_gt = np.where(
        norm, np.take_along_axis(S, gt_label[:, None], 1)[:, 0] / np.maximum(wsum, WSUM_EPS),
        1.0 / C,
    )
    l_cat = float(np.mean(-np.log(np.maximum(p_gt, PROB_FLOOR))))

    # dL/d(rgb mean), dL/d(depth mean)
    g_rgb = lam1 * np.sign(rgb - gt_rgb) / (R * 3)
    g_depth = np.where(
        depth_valid, lam2 * np.sign(depth - gt_depth) / max(n_valid, 1), 0.0
    )

    # category head: catdist = S / wsum (normalized branch only)
    live = norm & (p_gt > PROB_FLOOR)
    g_pgt = np.where(live, -lam3 / (R * p_gt), 0.0)
    g_S = np.zeros_like(S)
    np.put_along_axis(
        g_S, gt_label[:, None],
        (g_pgt / np.maximum(wsum, WSUM_EPS))[:, None], 1,
    )
    g_wsum = np.where(live, -g_pgt * p_gt / np.maximum(wsum, WSUM_EPS), 0.0)

    # dL/dw_i
    G = (
        np.einsum("rc,rnc->rn", g_rgb, c)
        + g_depth[:, None] * t
        + np.einsum("rc,rnc->rn", g_S, o)
        + g_wsum[:, None]
    )

    # dL/dc, dL/do (per sample)
    g_c = g_rgb[:, None, :] * w[..., None]
    g_o = g_S[:, None, :] * w[..., None]

    # back through the compositing chain: w_i = T_i * alpha_i
    Gw = G * w
    suffix = np.zeros_like(Gw)
    suffix[:, :-1] = np.cumsum(Gw[:, ::-1], axis=1)[:, ::-1][:, 1:]
    g_alpha = G * fw["T"] - suffix / np.maximum(fw["e"], PROB_FLOOR)
    g_sigma = g_alpha * fw["delta"] * fw["e"]

    # activations
    g_dlogit = g_sigma * sigmoid(fw["d_logit"])
    g_clogit = g_c * c * (1.0 - c)
    g_olog = o * (g_o - np.sum(g_o * o, axis=-1, keepdims=True))

    # scatter to grid vertices
    shape = dens.shape
    nvert = int(np.prod(shape))
    idx, tw = fw["idx"], fw["tw"]  # (M, 8)

    g_dens = np.zeros(nvert)
    np.add.at(g_dens, idx, g_dlogit.reshape(-1)[:, None] * tw)

    g_col = np.zeros((nvert, 3))
    np.add.at(g_col, idx.reshape(-1), np.repeat(
        g_clogit.reshape(-1, 3), 8, axis=0) * tw.reshape(-1)[:, None])

    g_cat = np.zeros((nvert, C))
    np.add.at(g_cat, idx.reshape(-1), np.repeat(
        g_olog.reshape(-1, C), 8, axis=0) * tw.reshape(-1)[:, None])

    touched = np.zeros(nvert, dtype=np.uint8)
    touched[idx] = 1

    return (
        float(l_rgb), float(l_depth), float(l_cat),
        g_dens.reshape(shape), g_col.reshape(shape + (3,)),
        g_cat.reshape(shape + (C,)), touched,
    )


def adam_sparse(param, m, v, grad, touched_idx, lr, beta1, beta2, eps,
                corr1, corr2):
    """In-place Adam step on the rows listed in `touched_idx`.

    All arrays are (nvert, channels); moments of untouched rows are left
    frozen (their gradients are exactly zero under volume rendering).
    """
    g = grad[touched_idx]
    ms = beta1 * m[touched_idx] + (1.0 - beta1) * g
    vs = beta2 * v[touched_idx] + (1.0 - beta2) * g * g
    m[touched_idx] = ms
    v[touched_idx] = vs
    param[touched_idx] -= lr * (ms / corr1) / (np.sqrt(vs / corr2) + eps)
