"""End-to-end calibration runs: filtering, segmentation, refinement, optimization.

Three variants share one cost function. The proposed route filters, segments,
coarsely aligns all observed floor planes, then optimizes over object clouds
only. Dropping the coarse alignment gives proposed_without_rough_refinement;
entire_cloud skips segmentation and feeds full filtered clouds to the
optimizer, which tends to lock onto the dominant floor surface.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import (
    ExtrinsicSet,
    PointCloud,
    Trajectory,
    pose_error,
    sensor_pose,
)
from .noise_filter import FilterParams, pattern_filter
from .optimizer import (
    CalibrationSession,
    OptimizationReport,
    OptimizerConfig,
    build_reference_map,
    optimize,
)
from .rough_refine import PlaneObservation, refine_extrinsics, refine_trajectory
from .segmentation import SegParams, segment_floor_objects


class PipelineVariant(Enum):
    PROPOSED = "proposed"
    PROPOSED_WITHOUT_ROUGH_REFINEMENT = "proposed_without_rough_refinement"
    ENTIRE_CLOUD = "entire_cloud"


class PipelineStageError(RuntimeError):
    """Wraps a module failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, original: Exception):
        super().__init__(f"stage '{stage}': {original}")
        self.stage = stage
        self.original = original


@dataclass(frozen=True)
class RunReport:
    variant: str
    extrinsics: ExtrinsicSet
    trajectory: Trajectory
    metric_error_before: float
    metric_error_after: float
    cost_trace: tuple[float, ...]
    correspondence_counts: tuple[int, ...]
    convergence_reason: str
    wall_clock_s: float
    translation_errors: tuple[float, ...] | None = None        # per non-reference sensor
    rotation_errors_deg: tuple[float, ...] | None = None
    initial_translation_errors: tuple[float, ...] | None = None
    initial_rotation_errors_deg: tuple[float, ...] | None = None
    filter_precision: float | None = None
    filter_recall: float | None = None
    filter_fscore: float | None = None
    extrinsics_trace: tuple[ExtrinsicSet, ...] = ()


def filter_metrics(predicted: np.ndarray, truth: np.ndarray) -> tuple[float, float, float]:
    """Precision, recall and F-score with noise as the positive class.

    Zero denominators yield 0 by convention.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError("label vectors must have the same length")
    pred_pos = predicted == 1
    true_pos = truth == 1
    tp = int(np.count_nonzero(pred_pos & true_pos))
    fp = int(np.count_nonzero(pred_pos & ~true_pos))
    fn = int(np.count_nonzero(~pred_pos & true_pos))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


def metric_error(clouds, extrinsics: ExtrinsicSet, trajectory: Trajectory) -> float:
    """Mean nearest-neighbor distance of all non-reference points to the map.

    Sum of per-sensor ungated nearest-neighbor distance sums, normalized by
    the total number of matched points.
    """
    ref_map = build_reference_map(trajectory, clouds[0])
    total = 0.0
    count = 0
    for i in range(1, len(extrinsics) + 1):
        for j in range(len(trajectory)):
            cloud = clouds[i][j]
            if len(cloud) == 0:
                continue
            world = sensor_pose(trajectory, extrinsics, i, j).apply(cloud.points)
            dists, _ = ref_map.tree.query(world)
            total += float(dists.sum())
            count += len(world)
    if count == 0:
        raise ValueError("empty object clouds: nothing to evaluate")
    return total / count


def _filter_stage(clouds, params: FilterParams):
    """Filter every cloud; returns kept clouds plus flat predicted/true labels."""
    kept_rows = []
    predicted = []
    truth = []
    have_truth = True
    for row in clouds:
        kept_row = []
        for cloud in row:
            report = pattern_filter(cloud, params)
            kept_row.append(report.kept)
            predicted.append(np.where(report.kept_mask, 0, 1))
            if cloud.labels is None:
                have_truth = False
            else:
                truth.append(cloud.labels)
        kept_rows.append(tuple(kept_row))
    pred_flat = np.concatenate(predicted)
    truth_flat = np.concatenate(truth) if have_truth and truth else None
    return tuple(kept_rows), pred_flat, truth_flat


def _segmentation_stage(clouds, extrinsics, trajectory, up_hint, params: SegParams):
    """Floor plane + merged object cloud per (sensor, stop)."""
    planes = {}
    objects = []
    for i in range(len(extrinsics) + 1):
        row = []
        for j in range(len(trajectory)):
            pose = sensor_pose(trajectory, extrinsics, i, j)
            up_local = pose.rotation.T @ np.asarray(up_hint, dtype=float)
            result = segment_floor_objects(clouds[i][j], up_local, params)
            planes[(i, j)] = result.floor_plane
            row.append(result.objects)
        objects.append(tuple(row))
    return planes, tuple(objects)


def run_pipeline(
    clouds,
    initial_extrinsics: ExtrinsicSet,
    initial_trajectory: Trajectory,
    variant: PipelineVariant,
    filter_params: FilterParams | None = None,
    seg_params: SegParams | None = None,
    optimizer_config: OptimizerConfig | None = None,
    up_hint=(0.0, 0.0, 1.0),
    ground_truth=None,
) -> RunReport:
    """Run one calibration variant over a per-sensor, per-stop cloud grid.

    `clouds[i][j]` is sensor i's cloud at stop j, reference sensor first.
    `ground_truth` (optional) supplies true extrinsics for error reporting.
    Module failures surface as PipelineStageError naming the stage.
    """
    if len(clouds) < 2:
        raise ValueError("need at least 2 sensors")
    if len(clouds[0]) < 2:
        raise ValueError("need at least 2 stops")
    filter_params = filter_params or FilterParams()
    seg_params = seg_params or SegParams()
    optimizer_config = optimizer_config or OptimizerConfig()
    start = time.perf_counter()

    try:
        kept, predicted, truth = _filter_stage(clouds, filter_params)
    except Exception as exc:
        raise PipelineStageError("noise_filter", exc) from exc
    prf = filter_metrics(predicted, truth) if truth is not None else None

    C, S = initial_extrinsics, initial_trajectory
    if variant is PipelineVariant.ENTIRE_CLOUD:
        session_clouds = kept
    else:
        try:
            planes, session_clouds = _segmentation_stage(
                kept, C, S, up_hint, seg_params)
        except Exception as exc:
            raise PipelineStageError("segmentation", exc) from exc

    if variant is PipelineVariant.PROPOSED:
        try:
            traj_obs = [PlaneObservation(0, j, planes[(0, j)]) for j in range(len(S))]
            S = refine_trajectory(S, traj_obs)
            ext_obs = [PlaneObservation(i, 0, planes[(i, 0)])
                       for i in range(len(C) + 1)]
            C = refine_extrinsics(C, ext_obs)
        except Exception as exc:
            raise PipelineStageError("rough_refinement", exc) from exc

    try:
        metric_before = metric_error(session_clouds, initial_extrinsics, initial_trajectory)
        session = CalibrationSession(clouds=session_clouds, extrinsics=C, trajectory=S)
        opt_report: OptimizationReport = optimize(session, optimizer_config)
        metric_after = metric_error(session_clouds, opt_report.extrinsics, opt_report.trajectory)
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError("optimization", exc) from exc

    elapsed = time.perf_counter() - start
    trans_err = rot_err = init_trans = init_rot = None
    if ground_truth is not None:
        gt = ground_truth.extrinsics
        pairs = [pose_error(est, true) for est, true in zip(opt_report.extrinsics, gt)]
        trans_err = tuple(p[0] for p in pairs)
        rot_err = tuple(p[1] for p in pairs)
        init_pairs = [pose_error(est, true) for est, true in zip(initial_extrinsics, gt)]
        init_trans = tuple(p[0] for p in init_pairs)
        init_rot = tuple(p[1] for p in init_pairs)

    return RunReport(
        variant=variant.value,
        extrinsics=opt_report.extrinsics,
        trajectory=opt_report.trajectory,
        metric_error_before=metric_before,
        metric_error_after=metric_after,
        cost_trace=opt_report.cost_trace,
        correspondence_counts=opt_report.correspondence_counts,
        convergence_reason=opt_report.convergence_reason,
        wall_clock_s=elapsed,
        translation_errors=trans_err,
        rotation_errors_deg=rot_err,
        initial_translation_errors=init_trans,
        initial_rotation_errors_deg=init_rot,
        filter_precision=None if prf is None else prf[0],
        filter_recall=None if prf is None else prf[1],
        filter_fscore=None if prf is None else prf[2],
        extrinsics_trace=opt_report.extrinsics_trace,
    )
