"""Bleeding-point removal for non-repetitive-scan LiDAR clouds.

All three filters threshold the mean k-nearest-neighbor distance of each
point. They differ only in how the threshold varies over the cloud:

* ``sor_filter``     global threshold H_g = mu + sigma * C_s
* ``dsor_filter``    H_g * C_r * (range from the sensor origin)
* ``pattern_filter`` H_g * C_r * (distance from the observation center)

The pattern filter targets rosette-style scanners whose density peaks at
the boresight rather than at the sensor: dense bleeding noise near the
scan center gets a tight threshold there, while sparse far-floor returns
keep a loose one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud


class InsufficientPointsError(ValueError):
    """Raised when a cloud has too few points for the requested k."""


@dataclass(frozen=True)
class FilterParams:
    """Noise-filter knobs.

    k: neighbor count for the mean-distance statistic.
    c_s: standard-deviation multiplier in the global threshold (dimensionless).
    c_r: range multiplier in the dynamic threshold (1/m).
    boresight: scan-center direction in the sensor frame, unit length.
    center: optional explicit observation center; overrides the boresight search.
    """

    k: int = 20
    c_s: float = 0.01
    c_r: float = 3.0
    boresight: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    center: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.c_s < 0.0:
            raise ValueError("c_s must be >= 0")
        if self.c_r <= 0.0:
            raise ValueError("c_r must be > 0")
        b = np.asarray(self.boresight, dtype=np.float64)
        if abs(np.linalg.norm(b) - 1.0) > 1e-9:
            raise ValueError("boresight must be unit length")
        object.__setattr__(self, "boresight", b)
        if self.center is not None:
            object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))


@dataclass(frozen=True)
class FilterReport:
    """Outcome of one filter pass; kept + removed partition the input cloud."""

    kept: PointCloud
    removed: PointCloud
    global_threshold: float
    observation_center: np.ndarray
    kept_mask: np.ndarray

    def __post_init__(self) -> None:
        if self.global_threshold < 0.0:
            raise ValueError("global threshold must be >= 0")


def mean_knn_distances(P: PointCloud, k: int) -> np.ndarray:
    """Per-point mean Euclidean distance to the k nearest neighbors (self excluded)."""
    n = len(P)
    if n <= k:
        raise InsufficientPointsError(f"insufficient points: need more than k={k}, got {n}")
    tree = cKDTree(P.points)
    dists, _ = tree.query(P.points, k=k + 1)
    return dists[:, 1:].mean(axis=1)


def determine_observation_center(P: PointCloud, boresight: np.ndarray) -> tuple[np.ndarray, int]:
    """Cloud point whose direction from the sensor origin is closest to the boresight.

    Ties break by smaller range, then lower index. Returns (point, index).
    """
    if len(P) == 0:
        raise ValueError("cannot determine observation center of an empty cloud")
    pts = P.points
    ranges = np.linalg.norm(pts, axis=1)
    cos = np.full(len(pts), -2.0)
    nz = ranges > 0.0
    cos[nz] = (pts[nz] @ np.asarray(boresight, dtype=np.float64)) / ranges[nz]
    angles = np.arccos(np.clip(cos, -1.0, 1.0))
    order = np.lexsort((np.arange(len(pts)), ranges, angles))
    idx = int(order[0])
    return pts[idx].copy(), idx


def _partition(P: PointCloud, mu: np.ndarray, thresholds: np.ndarray, h_g: float,
               center: np.ndarray, exempt_idx: int | None) -> FilterReport:
    keep = mu < thresholds
    if exempt_idx is not None:
        keep[exempt_idx] = True
    return FilterReport(
        kept=P.select(keep),
        removed=P.select(~keep),
        global_threshold=float(h_g),
        observation_center=np.asarray(center, dtype=np.float64),
        kept_mask=keep,
    )


def _global_threshold(mu: np.ndarray, c_s: float) -> float:
    # Population standard deviation: deterministic even for a single point.
    return float(mu.mean() + mu.std() * c_s)


def pattern_filter(P: PointCloud, params: FilterParams) -> FilterReport:
    """Dynamic filter keyed to the distance from the scan's observation center.

    A point survives iff its mean k-NN distance is strictly below
    H_g * C_r * D, with D its distance to the observation center. The
    auto-selected center point itself is always kept (its own D is zero).
    """
    mu = mean_knn_distances(P, params.k)
    h_g = _global_threshold(mu, params.c_s)
    if params.center is not None:
        center, exempt = np.asarray(params.center, dtype=np.float64), None
    else:
        center, idx = determine_observation_center(P, params.boresight)
        exempt = idx
    d = np.linalg.norm(P.points - center, axis=1)
    return _partition(P, mu, h_g * params.c_r * d, h_g, center, exempt)


def sor_filter(P: PointCloud, k: int = 20, c_s: float = 0.01) -> FilterReport:
    """Classic statistical outlier removal: one global threshold for every point."""
    mu = mean_knn_distances(P, k)
    h_g = _global_threshold(mu, c_s)
    thresholds = np.full(len(P), h_g)
    return _partition(P, mu, thresholds, h_g, np.zeros(3), None)


def dsor_filter(P: PointCloud, k: int = 20, c_s: float = 0.01, c_r: float = 3.0) -> FilterReport:
    """Distance-dynamic SOR: threshold grows with the range from the sensor origin."""
    mu = mean_knn_distances(P, k)
    h_g = _global_threshold(mu, c_s)
    ranges = np.linalg.norm(P.points, axis=1)
    return _partition(P, mu, h_g * c_r * ranges, h_g, np.zeros(3), None)
