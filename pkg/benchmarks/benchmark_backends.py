"""Compare the compiled rendering kernels against the numpy reference.

Times render_rays, the fused loss/gradient kernel, and a sparse optimizer
step on identical inputs, and verifies the outputs agree. Run with:

    python3 benchmarks/benchmark_backends.py [--rays 1024] [--grid 64]
"""

import argparse
import time

import numpy as np

from activescout.kernels import numpy_backend as nb

try:
    from activescout.kernels import _ext
except ImportError:
    _ext = None


def make_problem(rng, grid, rays, categories, n_samples):
    dens = rng.standard_normal((grid, grid, grid))
    col = rng.standard_normal((grid, grid, grid, 3))
    cat = rng.standard_normal((grid, grid, grid, categories))
    lo, hi = np.zeros(3), np.full(3, 8.0)
    origins = rng.uniform(1.0, 7.0, (rays, 3))
    dirs = rng.standard_normal((rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    jitter = rng.random((rays, n_samples))
    gt_rgb = rng.uniform(0.0, 1.0, (rays, 3))
    gt_depth = rng.uniform(0.5, 6.0, rays)
    valid = rng.random(rays) > 0.1
    label = rng.integers(0, categories, rays)
    return dict(dens=dens, col=col, cat=cat, lo=lo, hi=hi, origins=origins,
                dirs=dirs, jitter=jitter, gt_rgb=gt_rgb, gt_depth=gt_depth,
                valid=valid, label=label)


def bench(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1e3  # ms


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rays", type=int, default=1024)
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--categories", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    if _ext is None:
        print("compiled backend not built; only timing the numpy backend")
    rng = np.random.default_rng(0)
    p = make_problem(rng, args.grid, args.rays, args.categories, args.samples)
    near, far = 0.05, 12.0
    render_args = (p["dens"], p["col"], p["cat"], p["lo"], p["hi"],
                   p["origins"], p["dirs"], near, far, args.samples)
    loss_args = render_args + (p["jitter"], p["gt_rgb"], p["gt_depth"],
                               p["valid"], p["label"], 1.0, 0.1, 0.05)

    backends = [("numpy", nb)] + ([("cython", _ext)] if _ext else [])
    print(f"{args.rays} rays x {args.samples} samples, {args.grid}^3 grid, "
          f"{args.categories} categories, mean of {args.repeats} repeats")
    print(f"{'kernel':<12}" + "".join(f"{name:>12}" for name, _ in backends)
          + ("     speedup" if _ext else ""))

    rows = {
        "render": lambda b: b.render_rays(*render_args, jitter=p["jitter"]),
        "loss+grad": lambda b: b.loss_grad(*loss_args),
    }
    for label, call in rows.items():
        times = [bench(lambda b=b: call(b), args.repeats)
                 for _, b in backends]
        line = f"{label:<12}" + "".join(f"{t:>10.2f}ms" for t in times)
        if len(times) == 2:
            line += f"{times[0] / times[1]:>11.1f}x"
        print(line)

    # sparse optimizer step over the vertices one loss batch touches
    out = nb.loss_grad(*loss_args)
    touched = np.nonzero(out[6])[0]
    nvert = args.grid ** 3
    times = []
    for _, b in backends:
        param = rng.standard_normal((nvert, 3))
        m = np.zeros_like(param)
        v = np.zeros_like(param)
        g = np.zeros_like(param)
        g[touched] = rng.standard_normal((touched.size, 3))
        times.append(bench(
            lambda b=b: b.adam_sparse(param, m, v, g, touched, 1e-2, 0.9,
                                      0.99, 1e-8, 0.1, 0.01), args.repeats))
    line = f"{'adam step':<12}" + "".join(f"{t:>10.2f}ms" for t in times)
    if len(times) == 2:
        line += f"{times[0] / times[1]:>11.1f}x"
    print(line)

    if _ext is not None:
        a = nb.render_rays(*render_args, jitter=p["jitter"])
        c = _ext.render_rays(*render_args, jitter=p["jitter"])
        worst = max(float(np.max(np.abs(a[k] - c[k]))) for k in a)
        print(f"max output difference between backends: {worst:.2e}")


if __name__ == "__main__":
    main()
