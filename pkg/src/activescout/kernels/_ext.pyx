# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled volume-rendering kernels.

Mirrors `numpy_backend` loop-for-loop: same sampling, activations,
compositing, and reverse pass. Kept in sync by the backend-equivalence
tests; any change here must land in the numpy reference too.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, floor, log, log1p, sqrt, tanh

cnp.import_array()

cdef double WSUM_EPS = 1e-6
cdef double PROB_FLOOR = 1e-12


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0.0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


cdef inline double _sign(double x) noexcept nogil:
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


cdef inline void _trilinear(
    double px, double py, double pz,
    double lox, double loy, double loz,
    double hix, double hiy, double hiz,
    Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz,
    Py_ssize_t* idx, double* wgt,
) noexcept nogil:
    cdef double ux = (px - lox) / (hix - lox)
    cdef double uy = (py - loy) / (hiy - loy)
    cdef double uz = (pz - loz) / (hiz - loz)
    if ux < 0.0: ux = 0.0
    if ux > 1.0: ux = 1.0
    if uy < 0.0: uy = 0.0
    if uy > 1.0: uy = 1.0
    if uz < 0.0: uz = 0.0
    if uz > 1.0: uz = 1.0
    cdef double x = ux * (nx - 1)
    cdef double y = uy * (ny - 1)
    cdef double z = uz * (nz - 1)
    cdef Py_ssize_t ix = <Py_ssize_t>floor(x)
    cdef Py_ssize_t iy = <Py_ssize_t>floor(y)
    cdef Py_ssize_t iz = <Py_ssize_t>floor(z)
    if ix > nx - 2: ix = nx - 2
    if iy > ny - 2: iy = ny - 2
    if iz > nz - 2: iz = nz - 2
    if ix < 0: ix = 0
    if iy < 0: iy = 0
    if iz < 0: iz = 0
    cdef double fx = x - ix
    cdef double fy = y - iy
    cdef double fz = z - iz
    cdef double wx[2]
    cdef double wy[2]
    cdef double wz[2]
    wx[0] = 1.0 - fx; wx[1] = fx
    wy[0] = 1.0 - fy; wy[1] = fy
    wz[0] = 1.0 - fz; wz[1] = fz
    cdef Py_ssize_t a, b, c, k = 0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                idx[k] = ((ix + a) * ny + (iy + b)) * nz + (iz + c)
                wgt[k] = wx[a] * wy[b] * wz[c]
                k += 1


def render_rays(dens, col, cat, lo, hi, origins, dirs, near, far, n_samples,
                jitter=None, want_weights=False):
    """Volume-render a batch of rays; same contract as the numpy backend."""
    cdef cnp.ndarray[double, ndim=3] dens_a = np.ascontiguousarray(dens, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4] col_a = np.ascontiguousarray(col, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4] cat_a = np.ascontiguousarray(cat, dtype=np.float64)
    cdef Py_ssize_t nx = dens_a.shape[0], ny = dens_a.shape[1], nz = dens_a.shape[2]
    cdef Py_ssize_t nvert = nx * ny * nz
    cdef double[::1] dv = dens_a.reshape(nvert)
    cdef double[:, ::1] cv = col_a.reshape(nvert, 3)
    cdef Py_ssize_t C = cat_a.shape[3]
    cdef double[:, ::1] ov = cat_a.reshape(nvert, C)

    lo_a = np.asarray(lo, dtype=np.float64)
    hi_a = np.asarray(hi, dtype=np.float64)
    cdef double lox = lo_a[0], loy = lo_a[1], loz = lo_a[2]
    cdef double hix = hi_a[0], hiy = hi_a[1], hiz = hi_a[2]

    cdef double[:, ::1] org = np.ascontiguousarray(origins, dtype=np.float64)
    cdef double[:, ::1] drc = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t R = org.shape[0]
    cdef Py_ssize_t n = int(n_samples)
    cdef double nr = float(near), fr = float(far)

    cdef double[:, ::1] offs
    if jitter is None:
        offs = np.full((R, n), 0.5)
    else:
        offs = np.ascontiguousarray(jitter, dtype=np.float64)

    rgb = np.zeros((R, 3))
    rgb_var = np.zeros((R, 3))
    depth = np.zeros(R)
    depth_var = np.zeros(R)
    catdist = np.zeros((R, C))
    p_bg = np.zeros(R)
    wsum = np.zeros(R)
    weights = np.zeros((R, n)) if want_weights else None
    tvals = np.zeros((R, n)) if want_weights else None
    cdef double[:, ::1] rgb_v = rgb, rgbvar_v = rgb_var, cat_v = catdist
    cdef double[::1] depth_v = depth, depthvar_v = depth_var
    cdef double[::1] pbg_v = p_bg, wsum_v = wsum
    cdef double[:, ::1] w_out, t_out
    if want_weights:
        w_out = weights
        t_out = tvals

    cdef cnp.ndarray[double, ndim=1] tb = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] wb = np.empty(n)
    cdef cnp.ndarray[double, ndim=2] cb = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] ob = np.empty((n, C))
    cdef double[::1] tbuf = tb, wbuf = wb
    cdef double[:, ::1] cbuf = cb, obuf = ob

    cdef Py_ssize_t r, i, k, j
    cdef Py_ssize_t vidx[8]
    cdef double vw[8]
    cdef double ox, oy, oz, dx, dy, dz, t, delta, px, py, pz
    cdef double dl, sig, trans, alpha, wgt, acc, omax, osum
    cdef double mr, mg, mb, md, svar
    cdef double cl[3]
    cdef double scat

    scat_arr = np.empty(C)
    cdef double[::1] Sbuf = scat_arr

    for r in range(R):
        ox = org[r, 0]; oy = org[r, 1]; oz = org[r, 2]
        dx = drc[r, 0]; dy = drc[r, 1]; dz = drc[r, 2]
        trans = 1.0
        mr = 0.0; mg = 0.0; mb = 0.0; md = 0.0; acc = 0.0
        for j in range(C):
            Sbuf[j] = 0.0
        for i in range(n):
            t = nr + (fr - nr) * (i + offs[r, i]) / n
            tbuf[i] = t
            if i + 1 < n:
                delta = nr + (fr - nr) * (i + 1 + offs[r, i + 1]) / n - t
            else:
                delta = fr - t
            px = ox + dx * t; py = oy + dy * t; pz = oz + dz * t
            _trilinear(px, py, pz, lox, loy, loz, hix, hiy, hiz,
                       nx, ny, nz, vidx, vw)
            dl = 0.0
            cl[0] = 0.0; cl[1] = 0.0; cl[2] = 0.0
            for k in range(8):
                dl += vw[k] * dv[vidx[k]]
                cl[0] += vw[k] * cv[vidx[k], 0]
                cl[1] += vw[k] * cv[vidx[k], 1]
                cl[2] += vw[k] * cv[vidx[k], 2]
            omax = -1e300
            for j in range(C):
                scat = 0.0
                for k in range(8):
                    scat += vw[k] * ov[vidx[k], j]
                obuf[i, j] = scat
                if scat > omax:
                    omax = scat
            osum = 0.0
            for j in range(C):
                obuf[i, j] = exp(obuf[i, j] - omax)
                osum += obuf[i, j]
            for j in range(C):
                obuf[i, j] /= osum

            sig = _softplus(dl)
            cbuf[i, 0] = _sigmoid(cl[0])
            cbuf[i, 1] = _sigmoid(cl[1])
            cbuf[i, 2] = _sigmoid(cl[2])
            alpha = 1.0 - exp(-sig * delta)
            wgt = trans * alpha
            wbuf[i] = wgt
            trans *= 1.0 - alpha
            acc += wgt
            mr += wgt * cbuf[i, 0]
            mg += wgt * cbuf[i, 1]
            mb += wgt * cbuf[i, 2]
            md += wgt * t
            for j in range(C):
                Sbuf[j] += wgt * obuf[i, j]

        rgb_v[r, 0] = mr; rgb_v[r, 1] = mg; rgb_v[r, 2] = mb
        depth_v[r] = md
        pbg_v[r] = trans
        wsum_v[r] = acc
        svar = 0.0
        for i in range(n):
            rgbvar_v[r, 0] += wbuf[i] * (cbuf[i, 0] - mr) ** 2
            rgbvar_v[r, 1] += wbuf[i] * (cbuf[i, 1] - mg) ** 2
            rgbvar_v[r, 2] += wbuf[i] * (cbuf[i, 2] - mb) ** 2
            svar += wbuf[i] * (tbuf[i] - md) ** 2
        depthvar_v[r] = svar
        if acc >= WSUM_EPS:
            for j in range(C):
                cat_v[r, j] = Sbuf[j] / acc
        else:
            for j in range(C):
                cat_v[r, j] = 1.0 / C
        if want_weights:
            for i in range(n):
                w_out[r, i] = wbuf[i]
                t_out[r, i] = tbuf[i]

    out = dict(rgb=rgb, rgb_var=rgb_var, depth=depth, depth_var=depth_var,
               catdist=catdist, p_bg=p_bg, wsum=wsum)
    if want_weights:
        out["weights"] = weights
        out["tvals"] = tvals
    return out


def loss_grad(dens, col, cat, lo, hi, origins, dirs, near, far, n_samples,
              jitter, gt_rgb, gt_depth, depth_valid, gt_label,
              lam1, lam2, lam3):
    """Fused forward + reverse pass; same contract as the numpy backend."""
    cdef cnp.ndarray[double, ndim=3] dens_a = np.ascontiguousarray(dens, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4] col_a = np.ascontiguousarray(col, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4] cat_a = np.ascontiguousarray(cat, dtype=np.float64)
    cdef Py_ssize_t nx = dens_a.shape[0], ny = dens_a.shape[1], nz = dens_a.shape[2]
    cdef Py_ssize_t nvert = nx * ny * nz
    cdef double[::1] dv = dens_a.reshape(nvert)
    cdef double[:, ::1] cv = col_a.reshape(nvert, 3)
    cdef Py_ssize_t C = cat_a.shape[3]
    cdef double[:, ::1] ov = cat_a.reshape(nvert, C)

    lo_a = np.asarray(lo, dtype=np.float64)
    hi_a = np.asarray(hi, dtype=np.float64)
    cdef double lox = lo_a[0], loy = lo_a[1], loz = lo_a[2]
    cdef double hix = hi_a[0], hiy = hi_a[1], hiz = hi_a[2]

    cdef double[:, ::1] org = np.ascontiguousarray(origins, dtype=np.float64)
    cdef double[:, ::1] drc = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef Py_ssize_t R = org.shape[0]
    if R == 0:
        raise ValueError("empty ray batch")
    cdef Py_ssize_t n = int(n_samples)
    cdef double nr = float(near), fr = float(far)
    cdef double l1 = float(lam1), l2 = float(lam2), l3 = float(lam3)

    cdef double[:, ::1] offs
    if jitter is None:
        offs = np.full((R, n), 0.5)
    else:
        offs = np.ascontiguousarray(jitter, dtype=np.float64)

    cdef double[:, ::1] grgb = np.ascontiguousarray(gt_rgb, dtype=np.float64)
    cdef double[::1] gdep = np.ascontiguousarray(gt_depth, dtype=np.float64)
    valid_a = np.asarray(depth_valid).astype(bool)
    cdef cnp.uint8_t[::1] gval = np.ascontiguousarray(valid_a, dtype=np.uint8)
    cdef long long[::1] glab = np.ascontiguousarray(gt_label, dtype=np.int64)
    cdef Py_ssize_t n_valid = int(valid_a.sum())

    g_dens_arr = np.zeros(nvert)
    g_col_arr = np.zeros((nvert, 3))
    g_cat_arr = np.zeros((nvert, C))
    touched_arr = np.zeros(nvert, dtype=np.uint8)
    cdef double[::1] g_dens = g_dens_arr
    cdef double[:, ::1] g_col = g_col_arr
    cdef double[:, ::1] g_cat = g_cat_arr
    cdef cnp.uint8_t[::1] touched = touched_arr

    # per-ray scratch
    cdef cnp.ndarray[double, ndim=1] tb = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] deltab = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] wbb = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] Tb = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] eb = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] dlb = np.empty(n)
    cdef cnp.ndarray[double, ndim=2] cb = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] clb = np.empty((n, 3))
    cdef cnp.ndarray[double, ndim=2] ob = np.empty((n, C))
    cdef cnp.ndarray[double, ndim=1] Gb = np.empty(n)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] idxb = np.empty((n, 8), dtype=np.int64)
    cdef cnp.ndarray[double, ndim=2] twb = np.empty((n, 8))
    cdef double[::1] tbuf = tb, dbuf = deltab, wbuf = wbb, Tbuf = Tb
    cdef double[::1] ebuf = eb, dlbuf = dlb, Gbuf = Gb
    cdef double[:, ::1] cbuf = cb, clbuf = clb, obuf = ob, twbuf = twb
    cdef long long[:, ::1] idxbuf = idxb
    Sb = np.empty(C)
    cdef double[::1] Sbuf = Sb

    cdef Py_ssize_t vidx[8]
    cdef double vw[8]
    cdef Py_ssize_t r, i, k, j, lab
    cdef double ox, oy, oz, dx, dy, dz, t, px, py, pz
    cdef double dl, sig, trans, alpha, wgt, acc, omax, osum
    cdef double mr, mg, mb, md
    cdef double cl[3]
    cdef double scat, wsafe, p_gt, g_pgt, g_Sgt, g_wsum
    cdef double grc[3]
    cdef double grd, suffix, g_alpha, g_sig, g_dl, dot, go, base
    cdef double l_rgb = 0.0, l_depth = 0.0, l_cat = 0.0

    for r in range(R):
        ox = org[r, 0]; oy = org[r, 1]; oz = org[r, 2]
        dx = drc[r, 0]; dy = drc[r, 1]; dz = drc[r, 2]
        lab = <Py_ssize_t>glab[r]
        trans = 1.0
        mr = 0.0; mg = 0.0; mb = 0.0; md = 0.0; acc = 0.0
        for j in range(C):
            Sbuf[j] = 0.0
        for i in range(n):
            t = nr + (fr - nr) * (i + offs[r, i]) / n
            tbuf[i] = t
            if i + 1 < n:
                dbuf[i] = nr + (fr - nr) * (i + 1 + offs[r, i + 1]) / n - t
            else:
                dbuf[i] = fr - t
            px = ox + dx * t; py = oy + dy * t; pz = oz + dz * t
            _trilinear(px, py, pz, lox, loy, loz, hix, hiy, hiz,
                       nx, ny, nz, vidx, vw)
            dl = 0.0
            cl[0] = 0.0; cl[1] = 0.0; cl[2] = 0.0
            for k in range(8):
                idxbuf[i, k] = vidx[k]
                twbuf[i, k] = vw[k]
                dl += vw[k] * dv[vidx[k]]
                cl[0] += vw[k] * cv[vidx[k], 0]
                cl[1] += vw[k] * cv[vidx[k], 1]
                cl[2] += vw[k] * cv[vidx[k], 2]
            dlbuf[i] = dl
            omax = -1e300
            for j in range(C):
                scat = 0.0
                for k in range(8):
                    scat += vw[k] * ov[vidx[k], j]
                obuf[i, j] = scat
                if scat > omax:
                    omax = scat
            osum = 0.0
            for j in range(C):
                obuf[i, j] = exp(obuf[i, j] - omax)
                osum += obuf[i, j]
            for j in range(C):
                obuf[i, j] /= osum

            sig = _softplus(dl)
            cbuf[i, 0] = _sigmoid(cl[0])
            cbuf[i, 1] = _sigmoid(cl[1])
            cbuf[i, 2] = _sigmoid(cl[2])
            ebuf[i] = exp(-sig * dbuf[i])
            alpha = 1.0 - ebuf[i]
            Tbuf[i] = trans
            wgt = trans * alpha
            wbuf[i] = wgt
            trans *= ebuf[i]
            acc += wgt
            mr += wgt * cbuf[i, 0]
            mg += wgt * cbuf[i, 1]
            mb += wgt * cbuf[i, 2]
            md += wgt * t
            for j in range(C):
                Sbuf[j] += wgt * obuf[i, j]

        # loss terms
        l_rgb += (fabs(mr - grgb[r, 0]) + fabs(mg - grgb[r, 1])
                  + fabs(mb - grgb[r, 2]))
        if gval[r]:
            l_depth += fabs(md - gdep[r])
        wsafe = acc if acc > WSUM_EPS else WSUM_EPS
        if acc >= WSUM_EPS:
            p_gt = Sbuf[lab] / wsafe
        else:
            p_gt = 1.0 / C
        l_cat += -log(p_gt if p_gt > PROB_FLOOR else PROB_FLOOR)

        # heads
        grc[0] = l1 * _sign(mr - grgb[r, 0]) / (R * 3)
        grc[1] = l1 * _sign(mg - grgb[r, 1]) / (R * 3)
        grc[2] = l1 * _sign(mb - grgb[r, 2]) / (R * 3)
        if gval[r]:
            grd = l2 * _sign(md - gdep[r]) / (n_valid if n_valid > 0 else 1)
        else:
            grd = 0.0
        if acc >= WSUM_EPS and p_gt > PROB_FLOOR:
            g_pgt = -l3 / (R * p_gt)
            g_Sgt = g_pgt / wsafe
            g_wsum = -g_pgt * p_gt / wsafe
        else:
            g_Sgt = 0.0
            g_wsum = 0.0

        # dL/dw_i and sample-head gradients scattered to the grid
        for i in range(n):
            Gbuf[i] = (grc[0] * cbuf[i, 0] + grc[1] * cbuf[i, 1]
                       + grc[2] * cbuf[i, 2]
                       + grd * tbuf[i] + g_Sgt * obuf[i, lab] + g_wsum)
            clbuf[i, 0] = grc[0] * wbuf[i] * cbuf[i, 0] * (1.0 - cbuf[i, 0])
            clbuf[i, 1] = grc[1] * wbuf[i] * cbuf[i, 1] * (1.0 - cbuf[i, 1])
            clbuf[i, 2] = grc[2] * wbuf[i] * cbuf[i, 2] * (1.0 - cbuf[i, 2])

        suffix = 0.0
        for i in range(n - 1, -1, -1):
            g_alpha = Gbuf[i] * Tbuf[i] - suffix / (
                ebuf[i] if ebuf[i] > PROB_FLOOR else PROB_FLOOR)
            suffix += Gbuf[i] * wbuf[i]
            g_sig = g_alpha * dbuf[i] * ebuf[i]
            g_dl = g_sig * _sigmoid(dlbuf[i])

            # softmax backward: g_o has one nonzero column (the gt label)
            go = g_Sgt * wbuf[i]
            dot = go * obuf[i, lab]
            for k in range(8):
                base = twbuf[i, k]
                touched[idxbuf[i, k]] = 1
                g_dens[idxbuf[i, k]] += g_dl * base
                g_col[idxbuf[i, k], 0] += clbuf[i, 0] * base
                g_col[idxbuf[i, k], 1] += clbuf[i, 1] * base
                g_col[idxbuf[i, k], 2] += clbuf[i, 2] * base
                for j in range(C):
                    g_cat[idxbuf[i, k], j] += obuf[i, j] * (
                        (go if j == lab else 0.0) - dot) * base

    l_rgb /= R * 3
    if n_valid > 0:
        l_depth /= n_valid
    l_cat /= R
    return (l_rgb, l_depth, l_cat,
            g_dens_arr.reshape(nx, ny, nz),
            g_col_arr.reshape(nx, ny, nz, 3),
            g_cat_arr.reshape(nx, ny, nz, C), touched_arr)


def adam_sparse(param, m, v, grad, touched_idx, lr, beta1, beta2, eps,
                corr1, corr2):
    """In-place Adam step on the rows listed in `touched_idx`."""
    cdef double[:, ::1] p = param
    cdef double[:, ::1] mv = m
    cdef double[:, ::1] vv = v
    cdef double[:, ::1] g = grad
    cdef long long[::1] idx = np.ascontiguousarray(touched_idx, dtype=np.int64)
    cdef double lr_ = lr, b1 = beta1, b2 = beta2, eps_ = eps
    cdef double c1 = corr1, c2 = corr2
    cdef Py_ssize_t nch = p.shape[1], ntouch = idx.shape[0]
    cdef Py_ssize_t i, j, row
    cdef double gg, ms, vs
    with nogil:
        for i in range(ntouch):
            row = <Py_ssize_t>idx[i]
            for j in range(nch):
                gg = g[row, j]
                ms = b1 * mv[row, j] + (1.0 - b1) * gg
                vs = b2 * vv[row, j] + (1.0 - b2) * gg * gg
                mv[row, j] = ms
                vv[row, j] = vs
                p[row, j] -= lr_ * (ms / c1) / (sqrt(vs / c2) + eps_)
