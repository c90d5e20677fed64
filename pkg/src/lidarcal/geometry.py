"""Rigid-body geometry primitives shared by the whole calibration stack.

Conventions: right-handed frames, meters, column-vector semantics
(p' = R @ p + t). Planes are stored as n . x + d = 0 with the unit normal
facing the observing sensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-9

LABEL_SURFACE = 0
LABEL_NOISE = 1


def _as_readonly(a: np.ndarray, shape: tuple, name: str) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    if out.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3): p' = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = _as_readonly(self.rotation, (3, 3), "rotation")
        t = _as_readonly(self.translation, (3,), "translation")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 homogeneous matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])


def compose(a: Pose, b: Pose) -> Pose:
    """Composition a o b, so that (a o b).apply(p) == a.apply(b.apply(p))."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def rotation_from_axis_angle(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula; input is axis * angle (radians)."""
    v = np.asarray(axis_angle, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        k = skew(v)
        return np.eye(3) + k + 0.5 * (k @ k)
    axis = v / angle
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius) via SVD; guards drift in long chains."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional noise labels and acquisition ordinals.

    labels, when present, hold LABEL_SURFACE / LABEL_NOISE per point;
    acquisition_index, when present, is strictly increasing.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    acquisition_index: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite values")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int8)
            if lab.shape != (len(pts),):
                raise ValueError("labels must have one entry per point")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)
        if self.acquisition_index is not None:
            acq = np.array(self.acquisition_index, dtype=np.int64)
            if acq.shape != (len(pts),):
                raise ValueError("acquisition_index must have one entry per point")
            if len(acq) > 1 and not np.all(np.diff(acq) > 0):
                raise ValueError("acquisition_index must be strictly increasing")
            acq.flags.writeable = False
            object.__setattr__(self, "acquisition_index", acq)

    def __len__(self) -> int:
        return len(self.points)

    def select(self, index: np.ndarray) -> "PointCloud":
        """Subset by boolean mask or index array, preserving per-point metadata."""
        return PointCloud(
            self.points[index],
            None if self.labels is None else self.labels[index],
            None if self.acquisition_index is None else self.acquisition_index[index],
        )

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)))


def transform_cloud(T: Pose, P: PointCloud) -> PointCloud:
    """Map every point through T; labels and acquisition order are preserved."""
    return PointCloud(T.apply(P.points), P.labels, P.acquisition_index)


@dataclass(frozen=True)
class Plane:
    """Plane n . x + d = 0 with unit normal n, oriented toward the observer."""

    normal: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        n = _as_readonly(self.normal, (3,), "normal")
        if abs(np.linalg.norm(n) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def oriented_toward(self, origin: np.ndarray) -> "Plane":
        """Flip so that `origin` lies on the positive side.

        If the origin sits exactly on the plane, canonicalize instead: the
        largest-magnitude normal component is made positive.
        """
        side = float(np.dot(self.normal, origin)) + self.offset
        if side < 0.0:
            return Plane(-self.normal, -self.offset)
        if side == 0.0 and self.normal[int(np.argmax(np.abs(self.normal)))] < 0.0:
            return Plane(-self.normal, -self.offset)
        return self


def transform_plane(T: Pose, pl: Plane, reorient: bool = True) -> Plane:
    """Express a plane in the frame T maps into.

    With reorient (the default) the result is flipped, if needed, so the
    destination-frame origin sits on the positive side.
    """
    n = T.rotation @ pl.normal
    d = pl.offset - float(n @ T.translation)
    out = Plane(n, d)
    return out.oriented_toward(np.zeros(3)) if reorient else out


@dataclass(frozen=True)
class Trajectory:
    """Poses of the reference sensor at each accumulation stop, t_0 first."""

    poses: tuple[Pose, ...]

    def __post_init__(self) -> None:
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("trajectory must contain at least one pose")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, j: int) -> Pose:
        return self.poses[j]

    def __iter__(self):
        return iter(self.poses)

    def replace(self, j: int, pose: Pose) -> "Trajectory":
        poses = list(self.poses)
        poses[j] = pose
        return Trajectory(tuple(poses))


@dataclass(frozen=True)
class ExtrinsicSet:
    """Transforms from each non-reference sensor frame into the reference frame."""

    transforms: tuple[Pose, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "transforms", tuple(self.transforms))

    def __len__(self) -> int:
        return len(self.transforms)

    def __getitem__(self, i: int) -> Pose:
        return self.transforms[i]

    def __iter__(self):
        return iter(self.transforms)

    def replace(self, i: int, pose: Pose) -> "ExtrinsicSet":
        transforms = list(self.transforms)
        transforms[i] = pose
        return ExtrinsicSet(tuple(transforms))


def sensor_pose(trajectory: Trajectory, extrinsics: ExtrinsicSet, sensor: int, stop: int) -> Pose:
    """Global pose of `sensor` at accumulation stop `stop` (sensor 0 = reference)."""
    base = trajectory[stop]
    if sensor == 0:
        return base
    return compose(base, extrinsics[sensor - 1])


def rotation_error_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees, clamped to [0, 180]."""
    rel = np.asarray(ra).T @ np.asarray(rb)
    c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def translation_error_m(ta: np.ndarray, tb: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(ta, dtype=np.float64) - np.asarray(tb, dtype=np.float64)))


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation error in meters, rotation error in degrees) between two poses."""
    return (
        translation_error_m(a.translation, b.translation),
        rotation_error_deg(a.rotation, b.rotation),
    )
