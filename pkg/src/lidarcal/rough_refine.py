"""Coarse trajectory / extrinsic correction that makes all floor planes coincide.

Each correction is split into a minimal rotation aligning the observed floor
normal to the reference one, followed by a translation along the reference
normal matching the plane offsets. Only the out-of-plane degrees of freedom
(height, roll, pitch) are touched; in-plane translation and yaw are left for
the object-based optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ExtrinsicSet, Plane, Pose, Trajectory, transform_plane


class MissingPlaneError(ValueError):
    """Raised when a required floor-plane observation is absent."""


@dataclass(frozen=True)
class PlaneObservation:
    """A floor plane seen by one sensor at one stop, in that sensor's frame."""

    sensor_index: int
    timestamp_index: int
    plane: Plane

    def __post_init__(self) -> None:
        if self.sensor_index < 0 or self.timestamp_index < 0:
            raise ValueError("indices must be non-negative")


def rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal rotation R with R @ v == u, for unit u and v.

    The angle comes from atan2(|v x u|, v . u), which stays accurate for
    nearly parallel inputs where acos loses digits. Anti-parallel inputs
    rotate 180 deg about a deterministic perpendicular axis chosen by the
    smallest-magnitude component of v.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cross = np.cross(v, u)
    sin_a = np.linalg.norm(cross)
    cos_a = float(np.dot(v, u))
    if sin_a < 1e-15:
        if cos_a >= 0.0:
            return np.eye(3)
        e = np.zeros(3)
        e[int(np.argmin(np.abs(v)))] = 1.0
        axis = np.cross(v, e)
        axis /= np.linalg.norm(axis)
        return _axis_angle_matrix(axis, np.pi)
    angle = np.arctan2(sin_a, cos_a)
    return _axis_angle_matrix(cross / sin_a, angle)


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _index_observations(observations, key: str):
    indexed = {}
    for obs in observations:
        indexed[getattr(obs, key)] = obs
    return indexed


def refine_trajectory(S: Trajectory, observations: list[PlaneObservation]) -> Trajectory:
    """Correct every pose after t_0 so its global floor plane matches t_0's.

    `observations` must hold the reference sensor's floor plane (local frame)
    for every timestamp. The t_0 pose is the anchor and is returned unchanged.
    """
    by_time = _index_observations(
        [o for o in observations if o.sensor_index == 0], "timestamp_index"
    )
    for j in range(len(S)):
        if j not in by_time:
            raise MissingPlaneError(f"missing floor observation at timestamp {j}")

    ref_global = transform_plane(S[0], by_time[0].plane, reorient=False)
    n_ref = ref_global.normal
    refined = [S[0]]
    for j in range(1, len(S)):
        pose = S[j]
        local = by_time[j].plane
        n_j = pose.rotation @ local.normal
        delta_r = rotation_between(n_ref, n_j)
        rot = delta_r @ pose.rotation
        # Offset of the stop-j plane in the global frame after the rotation fix.
        d_j = local.offset - float((rot @ local.normal) @ pose.translation)
        delta_t = n_ref * (d_j - ref_global.offset)
        refined.append(Pose(rot, pose.translation + delta_t))
    return Trajectory(tuple(refined))


def refine_extrinsics(C: ExtrinsicSet, observations: list[PlaneObservation]) -> ExtrinsicSet:
    """Correct each extrinsic so every sensor's t_0 floor plane matches the reference.

    `observations` must hold every sensor's floor plane at timestamp 0, in
    each sensor's own frame; sensor 0 provides the reference plane. The
    comparison happens in the reference sensor frame, so no trajectory is
    needed.
    """
    by_sensor = _index_observations(
        [o for o in observations if o.timestamp_index == 0], "sensor_index"
    )
    for i in range(len(C) + 1):
        if i not in by_sensor:
            raise MissingPlaneError(f"missing floor observation for sensor {i}")

    ref = by_sensor[0].plane
    refined = []
    for i in range(1, len(C) + 1):
        ext = C[i - 1]
        local = by_sensor[i].plane
        delta_r = rotation_between(ref.normal, ext.rotation @ local.normal)
        rot = delta_r @ ext.rotation
        d_i = local.offset - float((rot @ local.normal) @ ext.translation)
        delta_t = ref.normal * (d_i - ref.offset)
        refined.append(Pose(rot, ext.translation + delta_t))
    return ExtrinsicSet(tuple(refined))
