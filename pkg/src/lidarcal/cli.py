"""Command-line entry points: simulate, calibrate, filter-bench, sweep."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .cloud_io import (
    CloudFormatError,
    ConfigError,
    RunConfig,
    load_cloud,
    load_dataset,
    load_run_config,
    save_dataset,
    save_report,
)
from .noise_filter import FilterParams, dsor_filter, pattern_filter, sor_filter
from .pipeline import PipelineStageError, PipelineVariant, filter_metrics, run_pipeline
from .simulator import perturb_parameters, render_dataset

UP_HINT = (0.0, 0.0, 1.0)


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_run_config(path)


def _generate(cfg: RunConfig, dataset_seed: int, perturb_seed: int):
    """Render a labeled dataset and a perturbed initial guess from one config."""
    clouds, bundle = render_dataset(
        cfg.build_scene(), cfg.build_mounts(), cfg.build_schedule(),
        noise=cfg.bleeding, seed=dataset_seed)
    initial_C, initial_S = perturb_parameters(
        bundle.extrinsics, bundle.trajectory,
        cfg.seeds.extrinsic_translation, cfg.seeds.extrinsic_rotation_deg,
        seed=perturb_seed,
        trajectory_max_translation=cfg.seeds.trajectory_translation,
        trajectory_max_rotation_deg=cfg.seeds.trajectory_rotation_deg)
    return clouds, bundle, initial_C, initial_S


def _run(cfg: RunConfig, clouds, initial_C, initial_S, bundle, variant: PipelineVariant):
    return run_pipeline(
        clouds, initial_C, initial_S, variant,
        filter_params=cfg.filter_params, seg_params=cfg.seg_params,
        optimizer_config=cfg.optimizer, up_hint=UP_HINT, ground_truth=bundle)


def _print_summary(report) -> None:
    print(f"variant: {report.variant}")
    if report.translation_errors is not None:
        trans = " ".join(f"{v:.4f}" for v in report.translation_errors)
        rot = " ".join(f"{v:.3f}" for v in report.rotation_errors_deg)
        print(f"translation errors [m]: {trans}")
        print(f"rotation errors [deg]: {rot}")
    print(f"metric error [m/point]: {report.metric_error_before:.5f} -> "
          f"{report.metric_error_after:.5f}")
    if report.filter_fscore is not None:
        print(f"filter precision/recall/F: {report.filter_precision:.3f} "
              f"{report.filter_recall:.3f} {report.filter_fscore:.3f}")
    print(f"stopped: {report.convergence_reason} "
          f"after {len(report.cost_trace)} iterations "
          f"({report.wall_clock_s:.1f} s)")


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    dataset_seed = cfg.seeds.dataset if args.seed is None else args.seed
    perturb_seed = cfg.seeds.perturbation if args.seed is None else args.seed + 1000
    clouds, bundle, initial_C, initial_S = _generate(cfg, dataset_seed, perturb_seed)
    meta = {
        "scene_kind": cfg.scene_kind,
        "dataset_seed": dataset_seed,
        "perturbation_seed": perturb_seed,
        "up_hint": list(UP_HINT),
    }
    save_dataset(args.out, clouds, initial_C, initial_S, ground_truth=bundle, meta=meta)
    n_points = sum(len(c) for row in clouds for c in row)
    print(f"wrote {len(clouds)} sensors x {len(clouds[0])} stops "
          f"({n_points} points) to {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    variant = PipelineVariant(args.variant) if args.variant else cfg.variant
    if args.dataset:
        data = load_dataset(args.dataset)
        clouds = data.clouds
        bundle = data.ground_truth
        initial_C, initial_S = data.initial_extrinsics, data.initial_trajectory
    else:
        dataset_seed = cfg.seeds.dataset if args.seed is None else args.seed
        perturb_seed = cfg.seeds.perturbation if args.seed is None else args.seed + 1000
        clouds, bundle, initial_C, initial_S = _generate(cfg, dataset_seed, perturb_seed)
    report = _run(cfg, clouds, initial_C, initial_S, bundle, variant)
    gt_ext = None if bundle is None else bundle.extrinsics
    save_report(report, args.out, ground_truth_extrinsics=gt_ext)
    _print_summary(report)
    print(f"report written to {args.out}")
    return 0


def _cmd_filter_bench(args) -> int:
    cloud = load_cloud(args.cloud)
    if cloud.labels is None:
        print(f"error: {args.cloud} has no label column", file=sys.stderr)
        return 2
    params = FilterParams(k=args.k, c_s=args.cs, c_r=args.cr)
    rows = []
    report = pattern_filter(cloud, params)
    rows.append(("pattern", report.kept_mask))
    rows.append(("dsor", dsor_filter(cloud, k=args.k, c_s=args.cs, c_r=args.cr).kept_mask))
    rows.append(("sor", sor_filter(cloud, k=args.k, c_s=args.cs).kept_mask))
    print(f"{'filter':<10} {'precision':>9} {'recall':>9} {'f_score':>9}")
    results = {}
    for name, kept_mask in rows:
        predicted = np.where(kept_mask, 0, 1)
        p, r, f = filter_metrics(predicted, cloud.labels)
        results[name] = {"precision": p, "recall": r, "f_score": f}
        print(f"{name:<10} {p:>9.3f} {r:>9.3f} {f:>9.3f}")
    if args.out:
        import yaml
        with open(args.out, "w") as fh:
            yaml.safe_dump(results, fh, sort_keys=False)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    variant = PipelineVariant(args.variant) if args.variant else cfg.variant
    trans_medians = []
    rot_medians = []
    rows = []
    for s in range(args.seeds):
        clouds, bundle, initial_C, initial_S = _generate(
            cfg, cfg.seeds.dataset + s, cfg.seeds.perturbation + s)
        report = _run(cfg, clouds, initial_C, initial_S, bundle, variant)
        out_dir = f"{args.out}/seed{s:02d}"
        save_report(report, out_dir, ground_truth_extrinsics=bundle.extrinsics)
        t = float(np.mean(report.translation_errors))
        r = float(np.mean(report.rotation_errors_deg))
        trans_medians.append(t)
        rot_medians.append(r)
        rows.append({"seed": s, "translation_error_m": t, "rotation_error_deg": r,
                     "metric_error_before": report.metric_error_before,
                     "metric_error_after": report.metric_error_after})
        print(f"seed {s}: translation {t:.4f} m, rotation {r:.3f} deg, "
              f"{len(report.cost_trace)} iterations")
    summary = {
        "variant": variant.value,
        "seeds": args.seeds,
        "median_translation_error_m": float(np.median(trans_medians)),
        "median_rotation_error_deg": float(np.median(rot_medians)),
        "runs": rows,
    }
    import yaml
    import os
    os.makedirs(args.out, exist_ok=True)
    with open(f"{args.out}/summary.yaml", "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    print(f"median translation error: {summary['median_translation_error_m']:.4f} m")
    print(f"median rotation error: {summary['median_rotation_error_deg']:.3f} deg")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarcal",
        description="Targetless multi-LiDAR extrinsic calibration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a labeled synthetic dataset")
    p.add_argument("config", nargs="?", default=None,
                   help="run configuration file (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override dataset seed (perturbation seed becomes seed+1000)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="run one calibration variant")
    p.add_argument("config", nargs="?", default=None)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--dataset", default=None,
                   help="use a saved dataset instead of simulating")
    p.add_argument("--variant", default=None,
                   choices=[v.value for v in PipelineVariant])
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("filter-bench",
                       help="compare noise filters on a labeled cloud")
    p.add_argument("cloud", help="labeled cloud file")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--cs", type=float, default=0.01)
    p.add_argument("--cr", type=float, default=3.0)
    p.add_argument("--out", default=None, help="optional metrics output file")
    p.set_defaults(func=_cmd_filter_bench)

    p = sub.add_parser("sweep", help="run one variant across many seeds")
    p.add_argument("config", nargs="?", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--variant", default=None,
                   choices=[v.value for v in PipelineVariant])
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CloudFormatError, PipelineStageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
