"""Floor / object segmentation via seeded RANSAC and Euclidean clustering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Plane, PointCloud


class NoPlaneError(ValueError):
    """Raised when RANSAC cannot produce any plane hypothesis."""


class FloorNotFoundError(ValueError):
    """Raised when no candidate plane passes the floor tilt gate."""


@dataclass(frozen=True)
class SegParams:
    ransac_inlier_threshold: float = 0.02   # m
    ransac_max_iterations: int = 1000
    cluster_radius: float = 0.10            # m
    min_cluster_size: int = 30
    max_floor_tilt_deg: float = 30.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.ransac_inlier_threshold <= 0 or self.ransac_max_iterations <= 0:
            raise ValueError("RANSAC parameters must be positive")
        if self.cluster_radius <= 0 or self.min_cluster_size <= 0:
            raise ValueError("cluster parameters must be positive")
        if not 0.0 < self.max_floor_tilt_deg < 90.0:
            raise ValueError("max_floor_tilt_deg must be in (0, 90)")


@dataclass(frozen=True)
class SegmentationResult:
    """Floor inliers, the fitted floor plane, and clustered object points.

    `clusters` holds (start, stop) index ranges into `objects`; points that
    fell in no sufficiently large cluster were discarded as clutter.
    """

    floor: PointCloud
    floor_plane: Plane
    objects: PointCloud
    clusters: tuple[tuple[int, int], ...]
    floor_indices: np.ndarray
    object_indices: np.ndarray


def _fit_plane_least_squares(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Total-least-squares plane through >= 3 points: normal and offset."""
    centroid = points.mean(axis=0)
    _, s, vt = np.linalg.svd(points - centroid, full_matrices=False)
    normal = vt[-1]
    return normal, float(-normal @ centroid)


def _hypothesis_planes(points: np.ndarray, n_iter: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample 3-point hypotheses; returns unit normals (M, 3) and offsets (M,)."""
    n = len(points)
    idx = np.empty((n_iter, 3), dtype=np.int64)
    for m in range(n_iter):
        idx[m] = rng.choice(n, size=3, replace=False)
    a, b, c = points[idx[:, 0]], points[idx[:, 1]], points[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    normals = normals[ok] / norms[ok, None]
    offsets = -np.einsum("ij,ij->i", normals, a[ok])
    return normals, offsets


def ransac_plane(
    P: PointCloud,
    params: SegParams,
    normal_gate: tuple[np.ndarray, float] | None = None,
) -> tuple[Plane, np.ndarray]:
    """Best plane by inlier count over seeded 3-point hypotheses, then refit.

    The returned normal faces the sensor origin. `normal_gate`, when given as
    (direction, max_tilt_deg), restricts hypotheses to sensor-facing normals
    within that cone; with no surviving hypothesis a FloorNotFoundError (gated)
    or NoPlaneError (ungated) is raised. Inlier indices refer to `P` and are
    recomputed against the refit plane.
    """
    pts = P.points
    if len(pts) < 3:
        raise NoPlaneError(f"no plane: need at least 3 points, got {len(pts)}")
    rng = np.random.default_rng(params.rng_seed)
    normals, offsets = _hypothesis_planes(pts, params.ransac_max_iterations, rng)
    if len(normals) == 0:
        raise NoPlaneError("no plane: all sampled triples were collinear")

    # Orient every hypothesis toward the sensor origin: n . 0 + d >= 0.
    flip = offsets < 0.0
    normals[flip] *= -1.0
    offsets[flip] *= -1.0

    if normal_gate is not None:
        direction, max_tilt_deg = normal_gate
        cos_gate = np.cos(np.radians(max_tilt_deg))
        ok = normals @ np.asarray(direction, dtype=np.float64) >= cos_gate
        normals, offsets = normals[ok], offsets[ok]
        if len(normals) == 0:
            raise FloorNotFoundError("floor not found: no hypothesis within the tilt gate")

    thr = params.ransac_inlier_threshold
    best_count, best_m = -1, -1
    chunk = 256
    for start in range(0, len(normals), chunk):
        nn = normals[start:start + chunk]
        dd = offsets[start:start + chunk]
        counts = (np.abs(pts @ nn.T + dd) <= thr).sum(axis=0)
        m = int(np.argmax(counts))
        if counts[m] > best_count:
            best_count = int(counts[m])
            best_m = start + m

    inliers = np.flatnonzero(np.abs(pts @ normals[best_m] + offsets[best_m]) <= thr)
    normal, offset = _fit_plane_least_squares(pts[inliers])
    plane = Plane(normal, offset).oriented_toward(np.zeros(3))
    inliers = np.flatnonzero(np.abs(plane.signed_distance(pts)) <= thr)
    return plane, inliers


def euclidean_cluster(P: PointCloud, radius: float, min_size: int) -> list[np.ndarray]:
    """Connected components of the 'within radius' graph, small ones discarded.

    Components are ordered by descending size, ties by lowest member index;
    each entry is a sorted index array into P.
    """
    n = len(P)
    if n == 0:
        raise ValueError("cannot cluster an empty cloud")
    tree = cKDTree(P.points)
    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in tree.query_pairs(radius):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    roots = np.array([find(i) for i in range(n)])
    components: dict[int, list[int]] = {}
    for i, r in enumerate(roots):
        components.setdefault(int(r), []).append(i)
    clusters = [np.array(members, dtype=np.int64) for members in components.values()
                if len(members) >= min_size]
    clusters.sort(key=lambda c: (-len(c), int(c[0])))
    return clusters


def segment_floor_objects(
    P: PointCloud,
    sensor_up_guess: np.ndarray,
    params: SegParams,
) -> SegmentationResult:
    """Split a sensor-frame cloud into floor inliers and clustered objects.

    The floor is the largest-inlier RANSAC plane whose sensor-facing normal
    lies within max_floor_tilt_deg of `sensor_up_guess` (the expected floor
    normal in this sensor's frame, from the current extrinsic estimate).
    """
    plane, floor_idx = ransac_plane(
        P, params, normal_gate=(sensor_up_guess, params.max_floor_tilt_deg)
    )
    rest_idx = np.setdiff1d(np.arange(len(P)), floor_idx, assume_unique=True)
    floor = P.select(floor_idx)

    if len(rest_idx) == 0:
        return SegmentationResult(
            floor=floor, floor_plane=plane, objects=PointCloud.empty(),
            clusters=(), floor_indices=floor_idx,
            object_indices=np.zeros(0, dtype=np.int64),
        )

    rest = P.select(rest_idx)
    clusters = euclidean_cluster(rest, params.cluster_radius, params.min_cluster_size)
    ranges: list[tuple[int, int]] = []
    kept_idx: list[np.ndarray] = []
    cursor = 0
    for members in clusters:
        ranges.append((cursor, cursor + len(members)))
        kept_idx.append(rest_idx[members])
        cursor += len(members)
    object_indices = (np.concatenate(kept_idx) if kept_idx
                      else np.zeros(0, dtype=np.int64))
    return SegmentationResult(
        floor=floor,
        floor_plane=plane,
        objects=P.select(object_indices),
        clusters=tuple(ranges),
        floor_indices=floor_idx,
        object_indices=object_indices,
    )
