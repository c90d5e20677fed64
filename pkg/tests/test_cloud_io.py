"""File formats: clouds, datasets, run configs, reports."""

import numpy as np
import pytest

from lidarcal.cloud_io import (
    CloudFormatError,
    ConfigError,
    load_cloud,
    load_dataset,
    load_report,
    load_run_config,
    pose_from_dict,
    pose_to_dict,
    save_cloud,
    save_dataset,
    save_report,
)
from lidarcal.geometry import ExtrinsicSet, PointCloud, Pose, Trajectory
from lidarcal.pipeline import PipelineVariant, RunReport
from lidarcal.simulator import GroundTruthBundle


def rand_cloud(rng, n=30, labels=False):
    lab = rng.integers(0, 2, size=n).astype(np.int8) if labels else None
    return PointCloud(rng.normal(size=(n, 3)), labels=lab)


# ---------------------------------------------------------------------------
# Cloud files
# ---------------------------------------------------------------------------


def test_cloud_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    for labels in (False, True):
        cloud = rand_cloud(rng, labels=labels)
        path = str(tmp_path / f"c{int(labels)}.txt")
        save_cloud(cloud, path)
        back = load_cloud(path)
        assert np.array_equal(back.points, cloud.points)
        if labels:
            assert np.array_equal(back.labels, cloud.labels)
        else:
            assert back.labels is None


def test_empty_cloud_round_trip(tmp_path):
    path = str(tmp_path / "empty.txt")
    save_cloud(PointCloud.empty(), path)
    assert len(load_cloud(path)) == 0


def test_cloud_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# columns: x y z\n1 2 3\n\n4 5 6\n")
    assert len(load_cloud(str(path))) == 2


@pytest.mark.parametrize("content,lineno", [
    ("# wrong header\n1 2 3\n", 1),
    ("# columns: x y z\n1 2\n", 2),
    ("# columns: x y z\n1 2 3\n1 2 nope\n", 3),
    ("# columns: x y z label\n1 2 3 ghost\n", 2),
    ("# columns: x y z\n1 2 3 surface\n", 2),
])
def test_cloud_errors_carry_line_numbers(tmp_path, content, lineno):
    path = tmp_path / "bad.txt"
    path.write_text(content)
    with pytest.raises(CloudFormatError, match=f"bad.txt:{lineno}:"):
        load_cloud(str(path))


# ---------------------------------------------------------------------------
# Poses and datasets
# ---------------------------------------------------------------------------


def test_pose_dict_round_trip():
    rng = np.random.default_rng(1)
    from lidarcal.geometry import rotation_from_axis_angle
    pose = Pose(rotation_from_axis_angle(rng.normal(size=3)), rng.normal(size=3))
    back = pose_from_dict(pose_to_dict(pose))
    assert np.allclose(back.matrix(), pose.matrix(), atol=1e-15)
    with pytest.raises(ConfigError):
        pose_from_dict({"rotation": [[1, 0], [0, 1]]})


def make_bundle(rng, n_sensors=2, n_stops=3):
    from lidarcal.geometry import rotation_from_axis_angle
    ps = [Pose(rotation_from_axis_angle(rng.normal(scale=0.3, size=3)),
               rng.normal(size=3)) for _ in range(n_sensors - 1 + n_stops)]
    return GroundTruthBundle(
        extrinsics=ExtrinsicSet(tuple(ps[:n_sensors - 1])),
        trajectory=Trajectory(tuple(ps[n_sensors - 1:])),
        surface_ids=(),
    )


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    clouds = tuple(tuple(rand_cloud(rng, labels=True) for _ in range(3))
                   for _ in range(2))
    truth = make_bundle(rng)
    init = make_bundle(rng)
    d = str(tmp_path / "ds")
    save_dataset(d, clouds, init.extrinsics, init.trajectory,
                 ground_truth=truth, meta={"note": "tiny"})
    back = load_dataset(d)
    for i in range(2):
        for j in range(3):
            assert np.array_equal(back.clouds[i][j].points, clouds[i][j].points)
            assert np.array_equal(back.clouds[i][j].labels, clouds[i][j].labels)
    assert np.allclose(back.initial_extrinsics[0].matrix(),
                       init.extrinsics[0].matrix(), atol=1e-15)
    assert np.allclose(back.ground_truth.trajectory[2].matrix(),
                       truth.trajectory[2].matrix(), atol=1e-15)
    assert back.meta["note"] == "tiny"
    assert back.meta["n_sensors"] == 2


def test_dataset_without_ground_truth(tmp_path):
    rng = np.random.default_rng(3)
    clouds = ((rand_cloud(rng), rand_cloud(rng)),
              (rand_cloud(rng), rand_cloud(rng)))
    init = make_bundle(rng, n_stops=2)
    d = str(tmp_path / "ds")
    save_dataset(d, clouds, init.extrinsics, init.trajectory)
    assert load_dataset(d).ground_truth is None


def test_dataset_missing_meta_key(tmp_path):
    d = tmp_path / "ds"
    d.mkdir()
    (d / "meta.yaml").write_text("n_sensors: 2\n")
    with pytest.raises(ConfigError, match="n_stops"):
        load_dataset(str(d))


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


def test_run_config_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = load_run_config(str(path))
    assert cfg.scene_kind == "box"
    assert cfg.scene_objects == 14
    assert cfg.scene_walls is False
    assert cfg.points_per_scan == 48000
    assert cfg.bleeding is None
    assert cfg.variant is PipelineVariant.PROPOSED
    assert cfg.optimizer.outer_iterations == 200
    assert cfg.seeds.extrinsic_translation == 0.2


def test_run_config_full_override(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("""\
scene:
  kind: cylinder
  objects: 9
  radius: 1.8
  seed: 7
  walls: true
  bleeding:
    depth_threshold: 0.2
    max_points: 5
mounts:
  sensors: 4
  fov_deg: 60.0
  max_range: 8.0
schedule:
  stops: 8
  points_per_scan: 4000
filter:
  k: 10
  c_s: 0.02
  c_r: 2.0
segmentation:
  min_cluster_size: 12
  seed: 3
optimizer:
  outer_iterations: 50
  huber_delta: 0.1
variant: entire_cloud
seeds:
  dataset: 5
  extrinsic_rotation_deg: 2.0
""")
    cfg = load_run_config(str(path))
    assert cfg.scene_kind == "cylinder" and cfg.scene_objects == 9
    assert cfg.scene_walls is True
    assert cfg.bleeding.depth_threshold == 0.2 and cfg.bleeding.max_points == 5
    assert cfg.n_sensors == 4 and cfg.fov_deg == 60.0
    assert cfg.n_stops == 8 and cfg.points_per_scan == 4000
    assert cfg.filter_params.k == 10 and cfg.filter_params.c_r == 2.0
    assert cfg.seg_params.min_cluster_size == 12 and cfg.seg_params.rng_seed == 3
    assert cfg.optimizer.outer_iterations == 50
    assert cfg.optimizer.huber_delta == 0.1
    assert cfg.variant is PipelineVariant.ENTIRE_CLOUD
    assert cfg.seeds.dataset == 5 and cfg.seeds.extrinsic_rotation_deg == 2.0
    scene = cfg.build_scene()
    # 9 cylinders plus the 4 wall boxes
    assert len(scene.objects) == 13 and scene.objects[0].kind == "cylinder"
    assert len(cfg.build_mounts()) == 4
    assert len(cfg.build_schedule().trajectory) == 8


def test_run_config_bleeding_switch(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("scene:\n  bleeding: true\n")
    assert load_run_config(str(path)).bleeding is not None
    path.write_text("scene:\n  bleeding: false\n")
    assert load_run_config(str(path)).bleeding is None
    path.write_text("scene:\n  bleeding: {}\n")
    assert load_run_config(str(path)).bleeding.depth_threshold == 0.1


@pytest.mark.parametrize("content,match", [
    ("nonsense: {}\n", "unknown section"),
    ("scene:\n  shape: box\n", "unknown key 'shape'"),
    ("optimizer:\n  outer_iterations: 0\n", "outer_iterations"),
    ("variant: fancy\n", "fancy"),
    ("scene: [1, 2]\n", "must be a mapping"),
    ("scene:\n  bleeding:\n    depth_threshold: -1\n", "bleeding"),
    ("- a\n- b\n", "top level"),
])
def test_run_config_errors(tmp_path, content, match):
    path = tmp_path / "cfg.yaml"
    path.write_text(content)
    with pytest.raises((ConfigError, ValueError), match=match):
        load_run_config(str(path))


def test_run_config_yaml_syntax_error_has_line(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("scene:\n  kind: [unclosed\n")
    with pytest.raises(ConfigError, match="cfg.yaml"):
        load_run_config(str(path))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def make_report(rng):
    bundle = make_bundle(rng)
    other = make_bundle(rng)
    return RunReport(
        variant="proposed",
        extrinsics=bundle.extrinsics,
        trajectory=bundle.trajectory,
        metric_error_before=0.2,
        metric_error_after=0.01,
        cost_trace=(5.0, 2.0, 1.0),
        correspondence_counts=(100, 110, 120),
        convergence_reason="converged",
        wall_clock_s=1.5,
        translation_errors=(0.004,),
        rotation_errors_deg=(0.2,),
        initial_translation_errors=(0.15,),
        initial_rotation_errors_deg=(4.0,),
        filter_precision=0.9,
        filter_recall=0.8,
        filter_fscore=0.847,
        extrinsics_trace=(other.extrinsics, bundle.extrinsics),
    )


def test_report_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    rep = make_report(rng)
    d = str(tmp_path / "rep")
    save_report(rep, d)
    back = load_report(d)
    assert back.variant == rep.variant
    assert back.cost_trace == rep.cost_trace
    assert back.correspondence_counts == rep.correspondence_counts
    assert back.translation_errors == rep.translation_errors
    assert back.filter_fscore == rep.filter_fscore
    assert np.allclose(back.extrinsics[0].matrix(), rep.extrinsics[0].matrix(),
                       atol=1e-15)
    assert np.allclose(back.trajectory[1].matrix(), rep.trajectory[1].matrix(),
                       atol=1e-15)


def test_report_trace_table(tmp_path):
    rng = np.random.default_rng(5)
    rep = make_report(rng)
    truth = make_bundle(rng)
    d = tmp_path / "rep"
    save_report(rep, str(d), ground_truth_extrinsics=truth.extrinsics)
    lines = (d / "cost_trace.txt").read_text().splitlines()
    assert lines[0].startswith("# iteration cost correspondences mean_translation")
    assert len(lines) == 1 + len(rep.cost_trace)
    first = lines[1].split()
    assert first[0] == "0" and float(first[1]) == 5.0 and first[2] == "100"
    # iterations beyond the recorded states reuse the last state
    assert len(lines[3].split()) == 5

    save_report(rep, str(d))
    lines = (d / "cost_trace.txt").read_text().splitlines()
    assert lines[0] == "# iteration cost correspondences"


def test_report_missing_field(tmp_path):
    d = tmp_path / "rep"
    d.mkdir()
    (d / "report.yaml").write_text("variant: proposed\n")
    with pytest.raises(ConfigError, match="missing"):
        load_report(str(d))
