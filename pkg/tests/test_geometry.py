"""Geometry primitives: poses, planes, clouds, and error metrics."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lidarcal.geometry import (
    ExtrinsicSet,
    Plane,
    PointCloud,
    Pose,
    Trajectory,
    compose,
    orthonormalize,
    pose_error,
    rotation_error_deg,
    rotation_from_axis_angle,
    sensor_pose,
    skew,
    transform_cloud,
    transform_plane,
    translation_error_m,
)


def random_pose(rng):
    rot = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
    return Pose(rot, rng.normal(size=3))


def test_rotation_from_axis_angle_matches_scipy():
    rng = np.random.default_rng(7)
    for _ in range(50):
        v = rng.normal(size=3) * rng.uniform(0.0, np.pi)
        ours = rotation_from_axis_angle(v)
        ref = Rotation.from_rotvec(v).as_matrix()
        assert np.allclose(ours, ref, atol=1e-12)


def test_rotation_from_axis_angle_small_angle():
    # below the series switch the result must still be a rotation
    r = rotation_from_axis_angle(np.array([1e-14, -2e-14, 5e-15]))
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.allclose(r, np.eye(3), atol=1e-12)


def test_skew_reproduces_cross_product():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(skew(a) @ b, np.cross(a, b))


def test_compose_is_associative():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert np.allclose(left.matrix(), right.matrix(), atol=1e-12)


def test_compose_matches_sequential_apply():
    rng = np.random.default_rng(5)
    a, b = random_pose(rng), random_pose(rng)
    p = rng.normal(size=(10, 3))
    assert np.allclose(compose(a, b).apply(p), a.apply(b.apply(p)))


def test_inverse_round_trip():
    rng = np.random.default_rng(13)
    p = random_pose(rng)
    ident = compose(p, p.inverse())
    assert np.allclose(ident.matrix(), np.eye(4), atol=1e-12)


def test_pose_matrix_round_trip():
    rng = np.random.default_rng(17)
    p = random_pose(rng)
    q = Pose.from_matrix(p.matrix())
    assert np.allclose(p.rotation, q.rotation)
    assert np.allclose(p.translation, q.translation)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 2.0, np.zeros(3))
    with pytest.raises(ValueError):
        Pose(-np.eye(3), np.zeros(3))  # det = -1
    with pytest.raises(ValueError):
        Pose(np.eye(3), np.array([np.nan, 0.0, 0.0]))


def test_pose_arrays_are_read_only():
    p = Pose.identity()
    with pytest.raises(ValueError):
        p.rotation[0, 0] = 2.0


def test_orthonormalize_recovers_rotation():
    rng = np.random.default_rng(23)
    r = Rotation.random(random_state=1).as_matrix()
    drifted = r + rng.normal(scale=1e-6, size=(3, 3))
    fixed = orthonormalize(drifted)
    assert np.allclose(fixed @ fixed.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(fixed) > 0
    assert np.abs(fixed - r).max() < 1e-5


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.inf, 0, 0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), labels=np.zeros(3, dtype=np.int8))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), acquisition_index=np.array([3, 1]))


def test_point_cloud_select_keeps_metadata():
    cloud = PointCloud(
        np.arange(12, dtype=float).reshape(4, 3),
        labels=np.array([0, 1, 0, 1], dtype=np.int8),
        acquisition_index=np.array([2, 5, 9, 11]),
    )
    sub = cloud.select(np.array([1, 3]))
    assert np.array_equal(sub.labels, [1, 1])
    assert np.array_equal(sub.acquisition_index, [5, 11])
    assert np.allclose(sub.points, cloud.points[[1, 3]])


def test_transform_cloud_preserves_metadata():
    rng = np.random.default_rng(29)
    pose = random_pose(rng)
    cloud = PointCloud(rng.normal(size=(6, 3)), labels=np.zeros(6, dtype=np.int8))
    out = transform_cloud(pose, cloud)
    assert np.allclose(out.points, pose.apply(cloud.points))
    assert np.array_equal(out.labels, cloud.labels)


def test_plane_signed_distance_and_orientation():
    pl = Plane(np.array([0.0, 0.0, 1.0]), -1.0)  # z = 1
    assert pl.signed_distance(np.array([[0.0, 0.0, 3.0]]))[0] == pytest.approx(2.0)
    flipped = pl.oriented_toward(np.zeros(3))
    # origin is at z=0, below the plane, so the normal must flip
    assert flipped.signed_distance(np.zeros((1, 3)))[0] > 0


def test_transform_plane_moves_with_points():
    rng = np.random.default_rng(31)
    pose = random_pose(rng)
    pl = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    # points sampled on the plane must land on the transformed plane
    pts = np.column_stack([rng.normal(size=20), rng.normal(size=20), np.zeros(20)])
    moved = transform_plane(pose, pl, reorient=False)
    assert np.abs(moved.signed_distance(pose.apply(pts))).max() < 1e-12


def test_transform_plane_reorients_toward_new_origin():
    pose = Pose(np.eye(3), np.array([0.0, 0.0, -5.0]))
    pl = Plane(np.array([0.0, 0.0, 1.0]), 0.0)
    out = transform_plane(pose, pl)
    assert out.signed_distance(np.zeros((1, 3)))[0] >= 0


def test_trajectory_and_extrinsics_indexing():
    rng = np.random.default_rng(37)
    poses = tuple(random_pose(rng) for _ in range(4))
    traj = Trajectory(poses)
    assert len(traj) == 4 and traj[2] is poses[2]
    replaced = traj.replace(1, Pose.identity())
    assert np.allclose(replaced[1].matrix(), np.eye(4))
    assert traj[1] is poses[1]  # original untouched

    ext = ExtrinsicSet(poses[:2])
    assert len(ext) == 2
    assert ext.replace(0, Pose.identity())[0].translation @ ext[0].translation == 0


def test_trajectory_rejects_empty():
    with pytest.raises(ValueError):
        Trajectory(())


def test_sensor_pose_composition():
    rng = np.random.default_rng(41)
    traj = Trajectory(tuple(random_pose(rng) for _ in range(3)))
    ext = ExtrinsicSet((random_pose(rng),))
    assert sensor_pose(traj, ext, 0, 1) is traj[1]
    got = sensor_pose(traj, ext, 1, 2)
    want = compose(traj[2], ext[0])
    assert np.allclose(got.matrix(), want.matrix())


def test_rotation_error_matches_constructed_angle():
    rng = np.random.default_rng(43)
    for angle_deg in (0.0, 0.5, 17.3, 90.0, 179.0):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        r = rotation_from_axis_angle(axis * np.radians(angle_deg))
        assert rotation_error_deg(np.eye(3), r) == pytest.approx(angle_deg, abs=1e-9)


def test_rotation_error_clamps_numerical_overshoot():
    # trace can exceed 3 by roundoff; arccos must not blow up
    r = Rotation.random(random_state=4).as_matrix()
    assert rotation_error_deg(r, r) == pytest.approx(0.0, abs=1e-5)


def test_translation_and_pose_error():
    a = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
    b = Pose(rotation_from_axis_angle(np.array([0.0, 0.0, np.radians(30.0)])),
             np.array([1.0, 2.0, 0.0]))
    assert translation_error_m(a.translation, b.translation) == pytest.approx(2.0)
    dt, dr = pose_error(a, b)
    assert dt == pytest.approx(2.0)
    assert dr == pytest.approx(30.0, abs=1e-9)
