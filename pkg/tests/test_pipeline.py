"""End-to-end variant runs, stage error wrapping, evaluation helpers."""

import numpy as np
import pytest

from lidarcal.geometry import ExtrinsicSet, PointCloud, Pose, Trajectory, sensor_pose
from lidarcal.pipeline import (
    PipelineStageError,
    PipelineVariant,
    filter_metrics,
    metric_error,
    run_pipeline,
)
from lidarcal.optimizer import OptimizerConfig
from lidarcal.simulator import (
    default_mounts,
    default_schedule,
    perturb_parameters,
    render_dataset,
    ring_scene,
)


@pytest.fixture(scope="module")
def dataset():
    # small on purpose: these tests exercise the wiring, not final accuracy,
    # which needs full accumulation density and lives with the optimizer runs
    scene = ring_scene("box", n_objects=10, seed=2)
    clouds, truth = render_dataset(scene, default_mounts(2), default_schedule(8, 6000),
                                   seed=2)
    init_C, init_S = perturb_parameters(truth.extrinsics, truth.trajectory,
                                        0.05, 1.5, seed=42,
                                        trajectory_max_translation=0.05,
                                        trajectory_max_rotation_deg=1.0)
    return clouds, truth, init_C, init_S


@pytest.fixture(scope="module")
def proposed_report(dataset):
    clouds, truth, init_C, init_S = dataset
    return run_pipeline(clouds, init_C, init_S, PipelineVariant.PROPOSED,
                        optimizer_config=OptimizerConfig(outer_iterations=30),
                        ground_truth=truth)


def test_proposed_report_is_complete(proposed_report):
    rep = proposed_report
    assert rep.variant == "proposed"
    assert rep.metric_error_after < rep.metric_error_before
    assert rep.wall_clock_s > 0
    assert len(rep.cost_trace) == len(rep.correspondence_counts)
    assert any(e is rep.extrinsics for e in rep.extrinsics_trace)
    assert len(rep.translation_errors) == 1
    assert len(rep.initial_rotation_errors_deg) == 1
    assert all(e >= 0 for e in rep.translation_errors + rep.rotation_errors_deg)
    # noiseless rendering: the filter sees no true noise
    assert rep.filter_fscore is not None


def test_variants_take_distinct_paths(dataset):
    clouds, truth, init_C, init_S = dataset
    cfg = OptimizerConfig(outer_iterations=5)
    worr = run_pipeline(clouds, init_C, init_S,
                        PipelineVariant.PROPOSED_WITHOUT_ROUGH_REFINEMENT,
                        optimizer_config=cfg, ground_truth=truth)
    entire = run_pipeline(clouds, init_C, init_S, PipelineVariant.ENTIRE_CLOUD,
                          optimizer_config=cfg, ground_truth=truth)
    assert worr.variant == "proposed_without_rough_refinement"
    assert entire.variant == "entire_cloud"
    # entire_cloud keeps every filtered point, so it matches far more pairs
    assert max(entire.correspondence_counts) > 2 * max(worr.correspondence_counts)
    assert not np.array_equal(worr.extrinsics[0].matrix(), entire.extrinsics[0].matrix())


def test_pipeline_is_deterministic(dataset):
    clouds, truth, init_C, init_S = dataset
    cfg = OptimizerConfig(outer_iterations=5)
    a = run_pipeline(clouds, init_C, init_S, PipelineVariant.PROPOSED,
                     optimizer_config=cfg)
    b = run_pipeline(clouds, init_C, init_S, PipelineVariant.PROPOSED,
                     optimizer_config=cfg)
    assert a.cost_trace == b.cost_trace
    assert np.array_equal(a.extrinsics[0].matrix(), b.extrinsics[0].matrix())
    assert a.translation_errors is None


def test_unlabeled_clouds_skip_filter_scores(dataset):
    clouds, truth, init_C, init_S = dataset
    bare = tuple(tuple(PointCloud(c.points) for c in row) for row in clouds)
    rep = run_pipeline(bare, init_C, init_S, PipelineVariant.ENTIRE_CLOUD,
                       optimizer_config=OptimizerConfig(outer_iterations=2))
    assert rep.filter_fscore is None and rep.filter_precision is None


def grid_cloud(x, n=26, spacing=0.05):
    """Vertical plane slab at fixed x, normal along the sensor's x axis."""
    y, z = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing)
    pts = np.column_stack([np.full(n * n, x), y.ravel(), z.ravel()])
    return PointCloud(pts)


def make_grid_session(cloud):
    clouds = ((cloud, cloud), (cloud, cloud))
    C = ExtrinsicSet((Pose.identity(),))
    S = Trajectory((Pose.identity(), Pose(np.eye(3), np.array([0.1, 0.0, 0.0]))))
    return clouds, C, S


def test_filter_stage_errors_are_wrapped():
    tiny = PointCloud(np.random.default_rng(0).normal(size=(10, 3)))
    clouds, C, S = make_grid_session(tiny)
    with pytest.raises(PipelineStageError) as exc:
        run_pipeline(clouds, C, S, PipelineVariant.ENTIRE_CLOUD)
    assert exc.value.stage == "noise_filter"


def test_segmentation_stage_errors_are_wrapped():
    clouds, C, S = make_grid_session(grid_cloud(2.0))
    with pytest.raises(PipelineStageError) as exc:
        run_pipeline(clouds, C, S, PipelineVariant.PROPOSED)
    assert exc.value.stage == "segmentation"


def test_optimization_stage_errors_are_wrapped():
    # stops 100 m apart: the reference sensor has no cross-stop pairs within
    # the gate, and the far-away second sensor starves association entirely
    cloud = grid_cloud(2.0)
    clouds = ((cloud, cloud), (cloud, cloud))
    S = Trajectory((Pose.identity(), Pose(np.eye(3), np.array([100.0, 0.0, 0.0]))))
    far = ExtrinsicSet((Pose(np.eye(3), np.array([0.0, 100.0, 0.0])),))
    with pytest.raises(PipelineStageError) as exc:
        run_pipeline(clouds, far, S, PipelineVariant.ENTIRE_CLOUD)
    assert exc.value.stage == "optimization"


def test_pipeline_input_validation():
    cloud = grid_cloud(2.0)
    C = ExtrinsicSet((Pose.identity(),))
    S = Trajectory((Pose.identity(), Pose.identity()))
    with pytest.raises(ValueError):
        run_pipeline(((cloud, cloud),), C, S, PipelineVariant.ENTIRE_CLOUD)
    with pytest.raises(ValueError):
        run_pipeline(((cloud,), (cloud,)), C, S, PipelineVariant.ENTIRE_CLOUD)


# ---------------------------------------------------------------------------
# Evaluation helpers
# ---------------------------------------------------------------------------


def test_filter_metrics_arithmetic():
    p, r, f = filter_metrics(np.array([1, 1, 0, 0, 1]), np.array([1, 0, 0, 1, 1]))
    assert p == pytest.approx(2 / 3)
    assert r == pytest.approx(2 / 3)
    assert f == pytest.approx(2 / 3)
    assert filter_metrics(np.zeros(4), np.zeros(4)) == (0.0, 0.0, 0.0)
    assert filter_metrics(np.zeros(4), np.array([1, 0, 0, 0])) == (0.0, 0.0, 0.0)
    assert filter_metrics(np.array([1, 0, 0, 0]), np.zeros(4)) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        filter_metrics(np.zeros(3), np.zeros(4))


def test_metric_error_matches_brute_force():
    rng = np.random.default_rng(3)
    S = Trajectory((Pose.identity(),
                    Pose(np.eye(3), np.array([0.3, -0.2, 0.1]))))
    C = ExtrinsicSet((Pose(np.eye(3), np.array([0.05, 0.02, -0.01])),))
    clouds = tuple(
        tuple(PointCloud(rng.normal(size=(40, 3))) for _ in range(2))
        for _ in range(2)
    )
    got = metric_error(clouds, C, S)

    map_pts = np.vstack([S[j].apply(clouds[0][j].points) for j in range(2)])
    total, count = 0.0, 0
    for i in (1,):
        for j in range(2):
            world = sensor_pose(S, C, i, j).apply(clouds[i][j].points)
            for w in world:
                total += np.linalg.norm(map_pts - w, axis=1).min()
                count += 1
    assert got == pytest.approx(total / count, rel=1e-12)


def test_metric_error_rejects_empty_sources():
    S = Trajectory((Pose.identity(), Pose.identity()))
    C = ExtrinsicSet((Pose.identity(),))
    ref = PointCloud(np.random.default_rng(0).normal(size=(5, 3)))
    clouds = ((ref, ref), (PointCloud.empty(), PointCloud.empty()))
    with pytest.raises(ValueError):
        metric_error(clouds, C, S)
