"""Command-line entry point.

Subcommands: explore | baseline | render | eval | linear-demo. Experiment
configuration is a flat JSON file; any field can be overridden on the
command line as `--key value`. The output root comes from --out or the
ACTIVESCOUT_OUT environment variable (default ./runs).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, io_formats
from .explorer import ExperimentConfig, run_experiment
from .geometry import Pose
from .info import InfoWeights, categorical_entropy

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


def config_hash(cfg_dict: dict) -> str:
    """Stable under key reordering: hash of the sorted-keys JSON dump."""
    blob = json.dumps(cfg_dict, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(value: str, current):
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, (tuple, list)):
        return type(current)(int(v) for v in value.split(","))
    return value


def load_config(path, overrides) -> ExperimentConfig:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from exc

    defaults = ExperimentConfig()
    valid = {f.name for f in fields(ExperimentConfig)}
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError(f"unknown config key: {key}")
        data[key] = _coerce(value, getattr(defaults, key))
    for key in data:
        if key not in valid:
            raise ConfigError(f"unknown config key: {key}")
    if "info_weights" in data and isinstance(data["info_weights"], dict):
        data["info_weights"] = InfoWeights(**data["info_weights"])
    if "resolutions" in data:
        data["resolutions"] = tuple(data["resolutions"])
    try:
        return ExperimentConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _parse_overrides(extra) -> dict:
    if len(extra) % 2 != 0:
        raise ConfigError(f"dangling override: {extra[-1]}")
    out = {}
    for key, value in zip(extra[::2], extra[1::2]):
        if not key.startswith("--"):
            raise ConfigError(f"override keys must start with --: {key}")
        out[key[2:].replace("-", "_")] = value
    return out


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get("ACTIVESCOUT_OUT", "runs"))


def _run(cfg: ExperimentConfig, args) -> int:
    cfg_dict = asdict(cfg)
    cfg_dict["info_weights"] = asdict(cfg.info_weights)
    h = config_hash(cfg_dict)
    run_dir = _out_root(args) / (args.name or f"run-{h}")
    t0 = time.time()
    log, result = run_experiment(cfg, out_dir=run_dir)
    manifest = {
        "config_hash": h,
        "code_version": __version__,
        "started_unix": t0,
        "finished_unix": time.time(),
        "output_dir": str(run_dir),
        "config": cfg_dict,
        "termination_reason": result["termination_reason"],
        "objects_localized": result["objects_localized"],
        "objects_total": result["objects_total"],
        "distance_m": result["distance_m"],
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(f"run {run_dir}:")
    print(f"  localized {result['objects_localized']}/"
          f"{result['objects_total']} objects over {result['distance_m']:.1f} m"
          f" ({result['termination_reason']})")
    return EXIT_OK


def cmd_explore(args, extra) -> int:
    cfg = load_config(args.config, _parse_overrides(extra))
    return _run(cfg, args)


def cmd_baseline(args, extra) -> int:
    overrides = _parse_overrides(extra)
    overrides["method"] = args.method
    cfg = load_config(args.config, overrides)
    return _run(cfg, args)


def _save_gray_ppm(values, path):
    v = np.asarray(values, dtype=np.float64)
    finite = v[np.isfinite(v)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    scaled = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    scaled = np.nan_to_num(scaled, nan=1.0, posinf=1.0)
    io_formats.save_ppm(np.repeat(scaled[..., None], 3, axis=-1), path)


def cmd_render(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {extra}")
    field = io_formats.load_checkpoint(args.checkpoint)
    x, y, z, yaw = (float(v) for v in args.pose.split(","))
    pose = Pose.from_yaw(np.array([x, y, z]), yaw)
    from .explorer import ExperimentConfig as _EC

    intr = _EC(image_size=args.size).intrinsics
    pred = field.render_image(pose, intr, n_samples=args.n_samples)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    io_formats.save_ppm(pred["rgb"], out / "rgb_pred.ppm")
    _save_gray_ppm(pred["rgb_var"].mean(axis=-1), out / "rgb_uncertainty.ppm")
    _save_gray_ppm(pred["depth"], out / "depth_pred.ppm")
    _save_gray_ppm(pred["depth_var"], out / "depth_uncertainty.ppm")
    labels = pred["catdist"].argmax(axis=-1)
    _save_gray_ppm(labels.astype(float), out / "semantic_pred.ppm")
    _save_gray_ppm(categorical_entropy(pred["catdist"]),
                   out / "semantic_uncertainty.ppm")

    if args.scene:
        from .scene import render_ground_truth

        scene = io_formats.load_scene(args.scene)
        gt = render_ground_truth(scene, pose, intr)
        io_formats.save_ppm(gt.rgb, out / "rgb_gt.ppm")
        _save_gray_ppm(((pred["rgb"] - gt.rgb) ** 2).mean(axis=-1),
                       out / "rgb_error.ppm")
        _save_gray_ppm(gt.depth, out / "depth_gt.ppm")
        d_err = np.where(np.isfinite(gt.depth),
                         (pred["depth"] - gt.depth) ** 2, 0.0)
        _save_gray_ppm(d_err, out / "depth_error.ppm")
        _save_gray_ppm(gt.category.astype(float), out / "semantic_gt.ppm")
        _save_gray_ppm((labels != gt.category).astype(float),
                       out / "semantic_error.ppm")
    print(f"wrote renders to {out}")
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {extra}")
    run_dir = Path(args.run_dir)
    metrics = run_dir / "metrics.csv"
    if not metrics.exists():
        raise ConfigError(f"no metrics.csv in {run_dir}")
    rows = metrics.read_text().strip().splitlines()
    header = rows[0].split(",")
    data = [dict(zip(header, line.split(","))) for line in rows[1:]]
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(exist_ok=True)

    lines = ["distance_m,objects_localized"]
    lines += [f"{r['distance_m']},{r['objects_localized']}" for r in data]
    (eval_dir / "objects_vs_distance.csv").write_text("\n".join(lines) + "\n")

    lines = ["iteration,psnr_db,depth_mse,semantic_ce"]
    lines += [f"{r['iteration']},{r['psnr_db']},{r['depth_mse']},"
              f"{r['semantic_ce']}" for r in data]
    (eval_dir / "recon_curves.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote evaluation tables to {eval_dir}")
    return EXIT_OK


def cmd_linear_demo(args, extra) -> int:
    if extra:
        raise ConfigError(f"unexpected arguments: {extra}")
    from .linear_example import (GaussianBelief, LinearSystem, greedy_control,
                                 kalman_update, objective, rollout)

    d = args.dim
    rng = np.random.default_rng(args.seed)
    system = LinearSystem(np.eye(d), np.ones(d), 0.1,
                          rng.standard_normal(d))
    scales = 1.0 + 9.0 * (np.arange(d) == 0)  # dominant first axis
    belief = GaussianBelief(np.zeros(d), np.diag(scales))
    x = np.zeros(d)
    x[-1] = 1.0
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0]

    print("t,objective,angle_deg")
    for t in range(args.horizon):
        seq, _ = greedy_control(system, belief, x, 1, grid)
        x = rollout(system, x, seq)[-1]
        val = objective(belief.cov, [x])
        evals, evecs = np.linalg.eigh(belief.cov)
        top = evecs[:, -1]
        cosang = abs(float(x @ top)) / max(np.linalg.norm(x), 1e-12)
        angle = float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        print(f"{t},{val:.10g},{angle:.10g}")
        y = system.observe(x, rng)
        belief = kalman_update(belief, x, y, system.noise_std)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="activescout")
    p.add_argument("--threads", type=int, default=None,
                   help="cap numeric library threads")
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("explore", "baseline"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--name", default=None)
        if name == "baseline":
            sp.add_argument("--method", required=True,
                            choices=("frequency", "frontier"))

    sp = sub.add_parser("render")
    sp.add_argument("checkpoint")
    sp.add_argument("--pose", required=True, help="x,y,z,yaw")
    sp.add_argument("--output", required=True)
    sp.add_argument("--scene", default=None)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--n-samples", type=int, default=96)

    sp = sub.add_parser("eval")
    sp.add_argument("run_dir")

    sp = sub.add_parser("linear-demo")
    sp.add_argument("--dim", type=int, default=2)
    sp.add_argument("--horizon", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    handlers = {
        "explore": cmd_explore,
        "baseline": cmd_baseline,
        "render": cmd_render,
        "eval": cmd_eval,
        "linear-demo": cmd_linear_demo,
    }
    try:
        return handlers[args.command](args, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
