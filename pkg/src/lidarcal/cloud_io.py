"""File formats: point clouds, poses, datasets, run configs, and reports.

Clouds are plain text with a `# columns: x y z [label]` header and one
space-separated row per point in meters, full float precision, labels as the
words `surface` / `noise`. Poses, configs and reports are YAML. Parse errors
carry the offending file and line number.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geometry import (
    LABEL_NOISE,
    LABEL_SURFACE,
    ExtrinsicSet,
    PointCloud,
    Pose,
    Trajectory,
)
from .noise_filter import FilterParams
from .optimizer import OptimizerConfig
from .pipeline import PipelineVariant, RunReport
from .segmentation import SegParams
from .simulator import (
    BleedingParams,
    GroundTruthBundle,
    ScanSchedule,
    SceneSpec,
    SensorMount,
    default_mounts,
    default_trajectory,
    ring_scene,
)

_LABEL_WORDS = {LABEL_SURFACE: "surface", LABEL_NOISE: "noise"}
_WORD_LABELS = {w: l for l, w in _LABEL_WORDS.items()}


class CloudFormatError(ValueError):
    """Malformed cloud file; message carries path and line number."""


class ConfigError(ValueError):
    """Malformed configuration; message carries path and line if known."""


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


def save_cloud(cloud: PointCloud, path: str) -> None:
    with_labels = cloud.labels is not None
    header = "# columns: x y z label" if with_labels else "# columns: x y z"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, p in enumerate(cloud.points):
            row = f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}"
            if with_labels:
                row += f" {_LABEL_WORDS[int(cloud.labels[i])]}"
            fh.write(row + "\n")


def load_cloud(path: str) -> PointCloud:
    points = []
    labels = []
    with_labels = None
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header == "# columns: x y z":
            with_labels = False
        elif header == "# columns: x y z label":
            with_labels = True
        else:
            raise CloudFormatError(f"{path}:1: unrecognized header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            expected = 4 if with_labels else 3
            if len(parts) != expected:
                raise CloudFormatError(
                    f"{path}:{lineno}: expected {expected} columns, got {len(parts)}")
            try:
                points.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError as exc:
                raise CloudFormatError(f"{path}:{lineno}: bad coordinate: {exc}") from exc
            if with_labels:
                if parts[3] not in _WORD_LABELS:
                    raise CloudFormatError(
                        f"{path}:{lineno}: unknown label {parts[3]!r}")
                labels.append(_WORD_LABELS[parts[3]])
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lab = np.asarray(labels, dtype=np.int8) if with_labels else None
    return PointCloud(pts, labels=lab)


# ---------------------------------------------------------------------------
# Poses and parameter sets
# ---------------------------------------------------------------------------


def pose_to_dict(pose: Pose) -> dict:
    return {
        "rotation": [[float(v) for v in row] for row in pose.rotation],
        "translation": [float(v) for v in pose.translation],
    }


def pose_from_dict(d: dict) -> Pose:
    try:
        return Pose(np.asarray(d["rotation"], dtype=float),
                    np.asarray(d["translation"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad pose entry: {exc}") from exc


def _parameters_to_dict(extrinsics: ExtrinsicSet, trajectory: Trajectory) -> dict:
    return {
        "extrinsics": [pose_to_dict(p) for p in extrinsics],
        "trajectory": [pose_to_dict(p) for p in trajectory],
    }


def _parameters_from_dict(d: dict) -> tuple[ExtrinsicSet, Trajectory]:
    ext = ExtrinsicSet(tuple(pose_from_dict(e) for e in d["extrinsics"]))
    traj = Trajectory(tuple(pose_from_dict(e) for e in d["trajectory"]))
    return ext, traj


def _load_yaml(path: str) -> dict:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = f":{mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"{path}{line}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _dump_yaml(data: dict, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    clouds: tuple[tuple[PointCloud, ...], ...]
    initial_extrinsics: ExtrinsicSet
    initial_trajectory: Trajectory
    ground_truth: GroundTruthBundle | None
    meta: dict


def _cloud_name(i: int, j: int) -> str:
    return f"sensor{i:02d}_stop{j:02d}.txt"


def save_dataset(directory: str, clouds, initial_extrinsics: ExtrinsicSet,
                 initial_trajectory: Trajectory,
                 ground_truth: GroundTruthBundle | None = None,
                 meta: dict | None = None) -> None:
    cloud_dir = os.path.join(directory, "clouds")
    os.makedirs(cloud_dir, exist_ok=True)
    for i, row in enumerate(clouds):
        for j, cloud in enumerate(row):
            save_cloud(cloud, os.path.join(cloud_dir, _cloud_name(i, j)))
    info = dict(meta or {})
    info["n_sensors"] = len(clouds)
    info["n_stops"] = len(clouds[0])
    _dump_yaml(info, os.path.join(directory, "meta.yaml"))
    _dump_yaml(_parameters_to_dict(initial_extrinsics, initial_trajectory),
               os.path.join(directory, "initial.yaml"))
    if ground_truth is not None:
        _dump_yaml(_parameters_to_dict(ground_truth.extrinsics, ground_truth.trajectory),
                   os.path.join(directory, "ground_truth.yaml"))


def load_dataset(directory: str) -> Dataset:
    meta = _load_yaml(os.path.join(directory, "meta.yaml"))
    try:
        n_sensors = int(meta["n_sensors"])
        n_stops = int(meta["n_stops"])
    except KeyError as exc:
        raise ConfigError(f"{directory}/meta.yaml: missing {exc}") from exc
    clouds = tuple(
        tuple(load_cloud(os.path.join(directory, "clouds", _cloud_name(i, j)))
              for j in range(n_stops))
        for i in range(n_sensors)
    )
    ext, traj = _parameters_from_dict(_load_yaml(os.path.join(directory, "initial.yaml")))
    gt_path = os.path.join(directory, "ground_truth.yaml")
    ground_truth = None
    if os.path.exists(gt_path):
        gt_ext, gt_traj = _parameters_from_dict(_load_yaml(gt_path))
        ground_truth = GroundTruthBundle(extrinsics=gt_ext, trajectory=gt_traj,
                                         surface_ids=())
    return Dataset(clouds=clouds, initial_extrinsics=ext, initial_trajectory=traj,
                   ground_truth=ground_truth, meta=meta)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeedConfig:
    dataset: int = 0
    perturbation: int = 1000
    extrinsic_translation: float = 0.2      # m, perturbation bound
    extrinsic_rotation_deg: float = 5.0
    trajectory_translation: float = 0.2
    trajectory_rotation_deg: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    scene_kind: str = "box"
    scene_objects: int = 14
    scene_radius: float = 1.8
    scene_seed: int = 0
    scene_walls: bool = False
    bleeding: BleedingParams | None = None   # bleeding injection is opt-in
    n_sensors: int = 2
    fov_deg: float = 70.4
    max_range: float = 12.0
    n_stops: int = 16
    points_per_scan: int = 48000
    filter_params: FilterParams = field(default_factory=FilterParams)
    seg_params: SegParams = field(default_factory=SegParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    variant: PipelineVariant = PipelineVariant.PROPOSED
    seeds: SeedConfig = field(default_factory=SeedConfig)

    def build_scene(self) -> SceneSpec:
        return ring_scene(self.scene_kind, self.scene_objects,
                          self.scene_radius, self.scene_seed,
                          walls=self.scene_walls)

    def build_mounts(self) -> tuple[SensorMount, ...]:
        return default_mounts(self.n_sensors, self.fov_deg, self.max_range)

    def build_schedule(self) -> ScanSchedule:
        return ScanSchedule(trajectory=default_trajectory(self.n_stops, self.n_sensors),
                            points_per_scan=self.points_per_scan)


def _section(data: dict, name: str, path: str) -> dict:
    section = data.get(name, {})
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: section '{name}' must be a mapping")
    return dict(section)


def _reject_unknown(section: dict, name: str, path: str) -> None:
    if section:
        key = sorted(section)[0]
        raise ConfigError(f"{path}: unknown key '{key}' in section '{name}'")


def load_run_config(path: str) -> RunConfig:
    """Parse the sectioned run configuration, applying defaults per field."""
    data = _load_yaml(path)
    known = {"scene", "mounts", "schedule", "filter", "segmentation",
             "optimizer", "variant", "seeds"}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}: unknown section '{key}'")

    scene = _section(data, "scene", path)
    bleeding_raw = scene.pop("bleeding", False)
    if bleeding_raw is True:
        bleeding = BleedingParams()
    elif not bleeding_raw and not isinstance(bleeding_raw, dict):
        bleeding = None
    else:
        b = dict(bleeding_raw)
        try:
            bleeding = BleedingParams(
                depth_threshold=float(b.pop("depth_threshold", 0.1)),
                min_points=int(b.pop("min_points", 1)),
                max_points=int(b.pop("max_points", 3)))
        except ValueError as exc:
            raise ConfigError(f"{path}: scene.bleeding: {exc}") from exc
        _reject_unknown(b, "scene.bleeding", path)
    mounts = _section(data, "mounts", path)
    schedule = _section(data, "schedule", path)
    filt = _section(data, "filter", path)
    seg = _section(data, "segmentation", path)
    opt = _section(data, "optimizer", path)
    seeds = _section(data, "seeds", path)

    try:
        cfg = RunConfig(
            scene_kind=str(scene.pop("kind", "box")),
            scene_objects=int(scene.pop("objects", 14)),
            scene_radius=float(scene.pop("radius", 1.8)),
            scene_seed=int(scene.pop("seed", 0)),
            scene_walls=bool(scene.pop("walls", False)),
            bleeding=bleeding,
            n_sensors=int(mounts.pop("sensors", 2)),
            fov_deg=float(mounts.pop("fov_deg", 70.4)),
            max_range=float(mounts.pop("max_range", 12.0)),
            n_stops=int(schedule.pop("stops", 16)),
            points_per_scan=int(schedule.pop("points_per_scan", 48000)),
            filter_params=FilterParams(
                k=int(filt.pop("k", 20)),
                c_s=float(filt.pop("c_s", 0.01)),
                c_r=float(filt.pop("c_r", 3.0))),
            seg_params=SegParams(
                ransac_inlier_threshold=float(seg.pop("ransac_inlier_threshold", 0.02)),
                ransac_max_iterations=int(seg.pop("ransac_max_iterations", 1000)),
                cluster_radius=float(seg.pop("cluster_radius", 0.10)),
                min_cluster_size=int(seg.pop("min_cluster_size", 30)),
                max_floor_tilt_deg=float(seg.pop("max_floor_tilt_deg", 30.0)),
                rng_seed=int(seg.pop("seed", 0))),
            optimizer=OptimizerConfig(
                outer_iterations=int(opt.pop("outer_iterations", 200)),
                max_correspondence_distance=float(opt.pop("max_correspondence_distance", 0.5)),
                inner_max_iterations=int(opt.pop("inner_max_iterations", 10)),
                lm_initial_damping=float(opt.pop("lm_initial_damping", 1e-4)),
                optimize_trajectory=bool(opt.pop("optimize_trajectory", True)),
                huber_delta=(None if opt.get("huber_delta") is None
                             else float(opt.get("huber_delta")))),
            variant=PipelineVariant(str(data.get("variant", "proposed"))),
            seeds=SeedConfig(
                dataset=int(seeds.pop("dataset", 0)),
                perturbation=int(seeds.pop("perturbation", 1000)),
                extrinsic_translation=float(seeds.pop("extrinsic_translation", 0.2)),
                extrinsic_rotation_deg=float(seeds.pop("extrinsic_rotation_deg", 5.0)),
                trajectory_translation=float(seeds.pop("trajectory_translation", 0.2)),
                trajectory_rotation_deg=float(seeds.pop("trajectory_rotation_deg", 3.0))),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    opt.pop("huber_delta", None)
    for section, name in ((scene, "scene"), (mounts, "mounts"), (schedule, "schedule"),
                          (filt, "filter"), (seg, "segmentation"), (opt, "optimizer"),
                          (seeds, "seeds")):
        _reject_unknown(section, name, path)
    return cfg


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def save_report(report: RunReport, directory: str,
                ground_truth_extrinsics: ExtrinsicSet | None = None) -> None:
    """Write report.yaml plus a plot-ready cost_trace.txt table.

    When ground-truth extrinsics are supplied and the report carries its
    per-iteration estimates, the trace table grows mean translation and
    rotation error columns.
    """
    os.makedirs(directory, exist_ok=True)
    data = {
        "variant": report.variant,
        "metric_error_before": float(report.metric_error_before),
        "metric_error_after": float(report.metric_error_after),
        "convergence_reason": report.convergence_reason,
        "wall_clock_s": float(report.wall_clock_s),
        "cost_trace": [float(c) for c in report.cost_trace],
        "correspondence_counts": [int(c) for c in report.correspondence_counts],
        "parameters": _parameters_to_dict(report.extrinsics, report.trajectory),
    }
    for name in ("translation_errors", "rotation_errors_deg",
                 "initial_translation_errors", "initial_rotation_errors_deg"):
        value = getattr(report, name)
        if value is not None:
            data[name] = [float(v) for v in value]
    for name in ("filter_precision", "filter_recall", "filter_fscore"):
        value = getattr(report, name)
        if value is not None:
            data[name] = float(value)
    _dump_yaml(data, os.path.join(directory, "report.yaml"))

    with_errors = (ground_truth_extrinsics is not None
                   and len(report.extrinsics_trace) > 0)
    with open(os.path.join(directory, "cost_trace.txt"), "w") as fh:
        header = "# iteration cost correspondences"
        if with_errors:
            header += " mean_translation_error_m mean_rotation_error_deg"
        fh.write(header + "\n")
        from .geometry import pose_error
        for k, (cost, count) in enumerate(zip(report.cost_trace,
                                              report.correspondence_counts)):
            row = f"{k} {cost:.17g} {count}"
            if with_errors:
                state = report.extrinsics_trace[min(k, len(report.extrinsics_trace) - 1)]
                pairs = [pose_error(est, true)
                         for est, true in zip(state, ground_truth_extrinsics)]
                row += f" {np.mean([p[0] for p in pairs]):.17g}"
                row += f" {np.mean([p[1] for p in pairs]):.17g}"
            fh.write(row + "\n")


def load_report(directory: str) -> RunReport:
    """Parse report.yaml back into a RunReport (iteration trace not restored)."""
    data = _load_yaml(os.path.join(directory, "report.yaml"))
    try:
        ext, traj = _parameters_from_dict(data["parameters"])
        return RunReport(
            variant=str(data["variant"]),
            extrinsics=ext,
            trajectory=traj,
            metric_error_before=float(data["metric_error_before"]),
            metric_error_after=float(data["metric_error_after"]),
            cost_trace=tuple(float(c) for c in data["cost_trace"]),
            correspondence_counts=tuple(int(c) for c in data["correspondence_counts"]),
            convergence_reason=str(data["convergence_reason"]),
            wall_clock_s=float(data["wall_clock_s"]),
            translation_errors=_opt_tuple(data.get("translation_errors")),
            rotation_errors_deg=_opt_tuple(data.get("rotation_errors_deg")),
            initial_translation_errors=_opt_tuple(data.get("initial_translation_errors")),
            initial_rotation_errors_deg=_opt_tuple(data.get("initial_rotation_errors_deg")),
            filter_precision=_opt_float(data.get("filter_precision")),
            filter_recall=_opt_float(data.get("filter_recall")),
            filter_fscore=_opt_float(data.get("filter_fscore")),
        )
    except KeyError as exc:
        raise ConfigError(f"{directory}/report.yaml: missing {exc}") from exc


def _opt_tuple(value):
    return None if value is None else tuple(float(v) for v in value)


def _opt_float(value):
    return None if value is None else float(value)
