"""Synthetic multi-LiDAR dataset generation with ground-truth labels.

A scene is an infinite floor at z=0 plus primitive objects (box, cylinder,
capsule) standing on it. Each sensor follows a rosette scan pattern whose
sampling density peaks at the boresight, mimicking non-repetitive scanning.
Returns are computed by analytic ray casting; bleeding points are injected
wherever consecutive scan samples straddle a depth discontinuity, producing
streaks from object edges toward the floor. Every point carries a binary
surface/noise label plus a surface id (0 floor, k>=1 object index+1, -1 noise).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    LABEL_NOISE,
    LABEL_SURFACE,
    ExtrinsicSet,
    PointCloud,
    Pose,
    Trajectory,
    compose,
    rotation_from_axis_angle,
    sensor_pose,
)

# Rosette constants: radial frequency m and azimuth winding q chosen
# incommensurate so the pattern never closes; the per-timestamp phase step
# is the golden angle, so consecutive scans interleave instead of repeating.
ROSETTE_M = 89.0
ROSETTE_Q = 34.0 + (math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
# Samples emitted per unit of the curve parameter. The sample rate is fixed,
# so asking for more points per scan extends the accumulation window and the
# precessing petals fill the angular gaps left by a single pass. The value
# trades along-curve adjacency (edge straddling for bleeding points) against
# cross-petal coverage; registration accuracy tracks the cross-petal gap.
ROSETTE_SAMPLE_RATE = 2000.0

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Primitive:
    kind: str                       # "box" | "cylinder" | "capsule"
    pose: Pose                      # object frame -> global
    dimensions: tuple[float, ...]   # box: (sx, sy, sz); cylinder/capsule: (radius, height)

    def __post_init__(self) -> None:
        if self.kind not in ("box", "cylinder", "capsule"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dimensions)
        if any(d <= 0 for d in dims):
            raise ValueError("primitive dimensions must be positive")
        if self.kind == "box":
            if len(dims) != 3:
                raise ValueError("box needs (sx, sy, sz) full extents")
        else:
            if len(dims) != 2:
                raise ValueError(f"{self.kind} needs (radius, height)")
            if self.kind == "capsule" and dims[1] <= 2.0 * dims[0]:
                raise ValueError("capsule height must exceed its diameter")
        object.__setattr__(self, "dimensions", dims)


@dataclass(frozen=True)
class SceneSpec:
    """Floor plane z=0 plus objects standing on it."""

    objects: tuple[Primitive, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True)
class SensorMount:
    """One sensor: extrinsic relative to the reference sensor plus optics."""

    extrinsic: Pose
    fov_deg: float = 70.4
    max_range: float = 12.0
    boresight: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self) -> None:
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError("fov_deg must lie in (0, 180)")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        b = np.asarray(self.boresight, dtype=float)
        if b.shape != (3,) or abs(np.linalg.norm(b) - 1.0) > 1e-9:
            raise ValueError("boresight must be a unit 3-vector")
        b.setflags(write=False)
        object.__setattr__(self, "boresight", b)


@dataclass(frozen=True)
class ScanSchedule:
    trajectory: Trajectory
    points_per_scan: int = 24000
    phases: tuple[float, ...] | None = None   # per-timestamp extra rosette phase

    def __post_init__(self) -> None:
        if len(self.trajectory) < 2:
            raise ValueError("need at least 2 poses for accumulated coverage to overlap")
        if self.points_per_scan < 1:
            raise ValueError("points_per_scan must be >= 1")
        if self.phases is not None:
            phases = tuple(float(p) for p in self.phases)
            if len(phases) != len(self.trajectory):
                raise ValueError("need one phase per trajectory stop")
            object.__setattr__(self, "phases", phases)

    def phase(self, timestamp: int) -> float:
        return 0.0 if self.phases is None else self.phases[timestamp]


@dataclass(frozen=True)
class GroundTruthBundle:
    """Everything the evaluation needs: true parameters and per-point labels."""

    extrinsics: ExtrinsicSet
    trajectory: Trajectory
    surface_ids: tuple[tuple[np.ndarray, ...], ...]   # [sensor][stop] -> (n,) ids


@dataclass(frozen=True)
class BleedingParams:
    depth_threshold: float = 0.1   # m, discontinuity that triggers bleeding
    min_points: int = 1
    max_points: int = 3

    def __post_init__(self) -> None:
        if self.depth_threshold <= 0:
            raise ValueError("depth_threshold must be positive")
        if not 1 <= self.min_points <= self.max_points:
            raise ValueError("need 1 <= min_points <= max_points")


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    surface_id: int
    range: float


# ---------------------------------------------------------------------------
# Scan pattern
# ---------------------------------------------------------------------------


def rosette_directions(timestamp: int, n: int, phase: float = 0.0,
                       fov_deg: float = 70.4,
                       boresight: np.ndarray | None = None) -> np.ndarray:
    """Unit directions of one rosette scan, densest at the boresight.

    The polar angle traces fov/2 * |sin(m s + phase)| while the azimuth winds
    2 pi q s; shifting the phase by the golden angle per timestamp keeps
    successive scans from repeating. Samples advance along the curve at a
    fixed rate, so larger n means a longer dwell whose extra petals land in
    the gaps of the earlier ones instead of retracing them.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    s = (np.arange(n) + 0.5) / ROSETTE_SAMPLE_RATE
    total_phase = phase + timestamp * GOLDEN_ANGLE
    rho = math.radians(fov_deg) / 2.0 * np.abs(np.sin(ROSETTE_M * s + total_phase))
    theta = 2.0 * math.pi * ROSETTE_Q * s
    dirs = np.column_stack([
        np.cos(rho),
        np.sin(rho) * np.cos(theta),
        np.sin(rho) * np.sin(theta),
    ])
    if boresight is not None:
        dirs = dirs @ _boresight_frame(np.asarray(boresight, dtype=float)).T
    return dirs


def _boresight_frame(b: np.ndarray) -> np.ndarray:
    """Rotation taking +x to the given unit boresight."""
    x = np.array([1.0, 0.0, 0.0])
    v = np.cross(x, b)
    c = float(np.dot(x, b))
    if np.linalg.norm(v) < 1e-15:
        if c > 0:
            return np.eye(3)
        return np.diag([-1.0, -1.0, 1.0])   # 180 deg about z
    axis = v / np.linalg.norm(v)
    return rotation_from_axis_angle(axis * math.atan2(np.linalg.norm(v), c))


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def _ray_floor(origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    t = np.full(len(dirs), np.inf)
    dz = dirs[:, 2]
    moving = np.abs(dz) > 1e-15
    cand = np.full(len(dirs), np.inf)
    cand[moving] = -origin[2] / dz[moving]
    ok = moving & (cand > _RAY_EPS)
    t[ok] = cand[ok]
    return t


def _ray_box(o: np.ndarray, d: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Slab test in the box frame; o is (3,), d is (n,3)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t_lo = (-half - o) * inv
        t_hi = (half - o) * inv
    near = np.nanmin(np.stack([t_lo, t_hi]), axis=0)
    far = np.nanmax(np.stack([t_lo, t_hi]), axis=0)
    t_enter = near.max(axis=1)
    t_exit = far.min(axis=1)
    t = np.where((t_enter <= t_exit) & (t_enter > _RAY_EPS), t_enter, np.inf)
    # rays starting inside would exit first; sensors never sit inside objects
    return t


def _quadratic_roots(a, b, c):
    """Smaller/larger real roots per element, nan where none."""
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 1e-300)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r0 = np.where(ok, (-b - sq) / (2.0 * a), np.nan)
        r1 = np.where(ok, (-b + sq) / (2.0 * a), np.nan)
    return r0, r1


def _ray_cylinder(o: np.ndarray, d: np.ndarray, radius: float, height: float) -> np.ndarray:
    hh = height / 2.0
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[0] * d[:, 0] + o[1] * d[:, 1])
    c = o[0] ** 2 + o[1] ** 2 - radius ** 2
    r0, r1 = _quadratic_roots(a, np.asarray(b), np.full(len(d), c))
    best = np.full(len(d), np.inf)
    for roots in (r0, r1):
        z = o[2] + roots * d[:, 2]
        ok = np.isfinite(roots) & (roots > _RAY_EPS) & (np.abs(z) <= hh)
        best = np.where(ok & (roots < best), roots, best)
    dz = d[:, 2]
    moving = np.abs(dz) > 1e-15
    for cap in (-hh, hh):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (cap - o[2]) / dz
        x = o[0] + t * d[:, 0]
        y = o[1] + t * d[:, 1]
        ok = moving & (t > _RAY_EPS) & (x * x + y * y <= radius ** 2)
        best = np.where(ok & (t < best), t, best)
    return best


def _ray_capsule(o: np.ndarray, d: np.ndarray, radius: float, height: float) -> np.ndarray:
    hs = height / 2.0 - radius    # half-length of the core segment
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (o[0] * d[:, 0] + o[1] * d[:, 1])
    c = o[0] ** 2 + o[1] ** 2 - radius ** 2
    r0, r1 = _quadratic_roots(a, np.asarray(b), np.full(len(d), c))
    best = np.full(len(d), np.inf)
    for roots in (r0, r1):
        z = o[2] + roots * d[:, 2]
        ok = np.isfinite(roots) & (roots > _RAY_EPS) & (np.abs(z) <= hs)
        best = np.where(ok & (roots < best), roots, best)
    for cz in (-hs, hs):
        oc = o - np.array([0.0, 0.0, cz])
        b_s = 2.0 * (d @ oc)
        c_s = float(oc @ oc) - radius ** 2
        a_s = np.ones(len(d))
        s0, s1 = _quadratic_roots(a_s, b_s, np.full(len(d), c_s))
        for roots in (s0, s1):
            z = o[2] + roots * d[:, 2]
            beyond = (z - cz) * np.sign(cz) >= 0 if cz != 0 else np.ones(len(d), bool)
            ok = np.isfinite(roots) & (roots > _RAY_EPS) & beyond
            best = np.where(ok & (roots < best), roots, best)
    return best


def cast_rays(origin: np.ndarray, directions: np.ndarray, scene: SceneSpec,
              max_range: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
    """Ranges and surface ids for a bundle of rays from one origin.

    Misses carry range inf and surface id -1. Ids: 0 floor, k+1 for objects[k].
    """
    origin = np.asarray(origin, dtype=float)
    directions = np.asarray(directions, dtype=float)
    n = len(directions)
    ranges = _ray_floor(origin, directions)
    ids = np.where(np.isfinite(ranges), 0, -1)
    for k, prim in enumerate(scene.objects):
        inv = prim.pose.inverse()
        o_local = inv.apply(origin)
        d_local = directions @ inv.rotation.T
        if prim.kind == "box":
            half = np.asarray(prim.dimensions) / 2.0
            t = _ray_box(o_local, d_local, half)
        elif prim.kind == "cylinder":
            t = _ray_cylinder(o_local, d_local, *prim.dimensions)
        else:
            t = _ray_capsule(o_local, d_local, *prim.dimensions)
        closer = t < ranges
        ranges = np.where(closer, t, ranges)
        ids = np.where(closer, k + 1, ids)
    beyond = ranges > max_range
    ranges = np.where(beyond, np.inf, ranges)
    ids = np.where(beyond, -1, ids)
    return ranges, ids


def ray_cast(origin: np.ndarray, direction: np.ndarray, scene: SceneSpec,
             max_range: float = np.inf) -> RayHit | None:
    """Nearest surface intersection of a single ray, or None on a miss."""
    direction = np.asarray(direction, dtype=float)
    ranges, ids = cast_rays(origin, direction[None, :], scene, max_range)
    if not np.isfinite(ranges[0]):
        return None
    return RayHit(point=np.asarray(origin, dtype=float) + ranges[0] * direction,
                  surface_id=int(ids[0]), range=float(ranges[0]))


# ---------------------------------------------------------------------------
# Bleeding noise
# ---------------------------------------------------------------------------


def inject_bleeding_noise(
    directions: np.ndarray,
    ranges: np.ndarray,
    surface_ids: np.ndarray,
    params: BleedingParams,
    rng: np.random.Generator,
) -> tuple[PointCloud, np.ndarray]:
    """Assemble a labeled sensor-frame cloud from one scan, adding bleed points.

    Consecutive samples (scan order = angular neighbors) whose ranges differ
    by more than the depth threshold get 1..max extra returns interpolated in
    range along the nearer ray, the streak-off-the-edge artifact. Returns the
    cloud (surface points first, then noise) and per-point surface ids with
    -1 marking noise.
    """
    hit = np.isfinite(ranges)
    surface_pts = directions[hit] * ranges[hit, None]
    noise_pts = []
    pair = np.flatnonzero(hit[:-1] & hit[1:])
    # a pulse must straddle two different surfaces; a range gradient within one
    # smooth surface (grazing floor returns) is not an edge
    straddles = surface_ids[pair] != surface_ids[pair + 1]
    deep = np.abs(ranges[pair + 1] - ranges[pair]) > params.depth_threshold
    gaps = pair[straddles & deep]
    for i in gaps:
        near_i = i if ranges[i] <= ranges[i + 1] else i + 1
        far_i = i + 1 if near_i == i else i
        count = int(rng.integers(params.min_points, params.max_points + 1))
        u = np.sort(rng.uniform(0.1, 0.9, size=count))
        r = ranges[near_i] + u * (ranges[far_i] - ranges[near_i])
        noise_pts.append(directions[near_i][None, :] * r[:, None])
    if noise_pts:
        noise_arr = np.vstack(noise_pts)
    else:
        noise_arr = np.empty((0, 3))
    points = np.vstack([surface_pts, noise_arr])
    labels = np.concatenate([
        np.full(len(surface_pts), LABEL_SURFACE, dtype=np.int8),
        np.full(len(noise_arr), LABEL_NOISE, dtype=np.int8),
    ])
    ids = np.concatenate([surface_ids[hit], np.full(len(noise_arr), -1, dtype=int)])
    return PointCloud(points, labels=labels), ids


# ---------------------------------------------------------------------------
# Parameter perturbation
# ---------------------------------------------------------------------------


def _random_offset(rng: np.random.Generator, max_trans: float, max_rot_deg: float) -> Pose:
    v = rng.normal(size=3)
    norm = np.linalg.norm(v)
    direction = v / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
    radius = max_trans * rng.uniform() ** (1.0 / 3.0)
    axis_v = rng.normal(size=3)
    axis_n = np.linalg.norm(axis_v)
    axis = axis_v / axis_n if axis_n > 0 else np.array([0.0, 0.0, 1.0])
    angle = math.radians(max_rot_deg) * rng.uniform()
    return Pose(rotation_from_axis_angle(axis * angle), direction * radius)


def perturb_parameters(
    extrinsics: ExtrinsicSet,
    trajectory: Trajectory,
    max_translation: float,
    max_rotation_deg: float,
    seed: int,
    trajectory_max_translation: float | None = None,
    trajectory_max_rotation_deg: float | None = None,
) -> tuple[ExtrinsicSet, Trajectory]:
    """Compose each pose with a bounded random rigid offset on the right.

    Translation offsets are uniform in the ball, rotations have uniform axis
    and uniform angle in [0, max]. Right composition keeps the translation
    and rotation errors of each perturbed pose equal to the offset magnitudes.
    The first trajectory pose is never touched (it pins the global frame).
    Trajectory bounds default to the extrinsic bounds.
    """
    if max_translation < 0 or max_rotation_deg < 0:
        raise ValueError("perturbation bounds must be non-negative")
    t_max = max_translation if trajectory_max_translation is None else trajectory_max_translation
    r_max = max_rotation_deg if trajectory_max_rotation_deg is None else trajectory_max_rotation_deg
    rng = np.random.default_rng(seed)
    new_ext = tuple(compose(pose, _random_offset(rng, max_translation, max_rotation_deg))
                    for pose in extrinsics)
    poses = [trajectory[0]]
    for j in range(1, len(trajectory)):
        poses.append(compose(trajectory[j], _random_offset(rng, t_max, r_max)))
    return ExtrinsicSet(new_ext), Trajectory(tuple(poses))


# ---------------------------------------------------------------------------
# Default geometry: Set-1 style (2 sensors) and Set-2 style (4 sensors)
# ---------------------------------------------------------------------------

BASE_HEIGHT = 0.54          # base frame above the ground
_MOUNT_TILTS = (35.4, 34.4)      # deg downward, alternating
_MOUNT_HEIGHTS = (0.34, 0.28)    # above the base frame, alternating
_MOUNT_RADIUS = 0.25             # outward offset from the base axis


def _rot_z(angle: float) -> np.ndarray:
    return rotation_from_axis_angle(np.array([0.0, 0.0, angle]))


def _rot_y(angle: float) -> np.ndarray:
    return rotation_from_axis_angle(np.array([0.0, angle, 0.0]))


def _base_frame_poses(n_sensors: int) -> list[Pose]:
    """Sensor poses in the base frame: spread in yaw, tilted toward the floor."""
    poses = []
    for k in range(n_sensors):
        yaw = 2.0 * math.pi * k / n_sensors
        tilt = math.radians(_MOUNT_TILTS[k % 2])
        height = _MOUNT_HEIGHTS[k % 2]
        rot = _rot_z(yaw) @ _rot_y(tilt)
        trans = np.array([_MOUNT_RADIUS * math.cos(yaw),
                          _MOUNT_RADIUS * math.sin(yaw),
                          height])
        poses.append(Pose(rot, trans))
    return poses


def default_mounts(n_sensors: int = 2, fov_deg: float = 70.4,
                   max_range: float = 12.0) -> tuple[SensorMount, ...]:
    """Mounts with extrinsics relative to sensor 0; mounts[0] is the identity."""
    if n_sensors < 2:
        raise ValueError("need at least 2 sensors")
    base = _base_frame_poses(n_sensors)
    ref_inv = base[0].inverse()
    return tuple(
        SensorMount(extrinsic=compose(ref_inv, pose), fov_deg=fov_deg, max_range=max_range)
        for pose in base
    )


def default_trajectory(n_stops: int = 16, n_sensors: int = 2) -> Trajectory:
    """In-place rotation about the base axis, expressed as reference-sensor poses."""
    if n_stops < 2:
        raise ValueError("need at least 2 stops")
    ref_in_base = _base_frame_poses(n_sensors)[0]
    poses = []
    for j in range(n_stops):
        base_pose = Pose(_rot_z(2.0 * math.pi * j / n_stops),
                         np.array([0.0, 0.0, BASE_HEIGHT]))
        poses.append(compose(base_pose, ref_in_base))
    return Trajectory(tuple(poses))


def default_schedule(n_stops: int = 16, points_per_scan: int = 24000,
                     n_sensors: int = 2) -> ScanSchedule:
    return ScanSchedule(trajectory=default_trajectory(n_stops, n_sensors),
                        points_per_scan=points_per_scan)


def ring_scene(kind: str = "box", n_objects: int = 14, radius: float = 1.8,
               seed: int = 0, walls: bool = False,
               clearance: float = 0.55) -> SceneSpec:
    """Objects of one kind, height 0.25 m, scattered around the platform.

    Placement is deliberately irregular (large angular jitter, wide radius and
    size spread): a regular ring of look-alike objects leaves the matching
    cost nearly invariant under rotating the whole trajectory by one slot.

    Placements are rejection-sampled until every pair of objects keeps at
    least `clearance` of free space between their footprints. Without that
    margin a misaligned initial guess can pair one object's points with a
    neighbor inside the matching gate and settle there.

    `walls` encloses the arena in four boxes. They bound the sparse far-floor
    tail, but their flat faces dominate the matching cost once segmented into
    the object clouds, and a square enclosure looks the same every quarter
    turn, so a perturbed start can settle against the walls displaced or
    rotated. Calibration scenes leave them off.
    """
    if kind not in ("box", "cylinder", "capsule"):
        raise ValueError(f"unknown object kind {kind!r}")
    rng = np.random.default_rng(seed)
    height = 0.25
    slot = 2.0 * math.pi / n_objects
    objects = []
    placed: list[tuple[np.ndarray, float]] = []
    for k in range(n_objects):
        for _attempt in range(200):
            angle = k * slot + rng.uniform(-0.35, 0.35) * slot
            r = radius + rng.uniform(-0.5, 0.5)
            xy = np.array([r * math.cos(angle), r * math.sin(angle)])
            yaw = rng.uniform(0.0, 2.0 * math.pi)
            if kind == "box":
                dims = (rng.uniform(0.25, 0.45), rng.uniform(0.18, 0.32), height)
                foot = math.hypot(dims[0], dims[1]) / 2.0
            elif kind == "cylinder":
                dims = (rng.uniform(0.08, 0.16), height)
                foot = dims[0]
            else:
                dims = (rng.uniform(0.075, 0.115), height)
                foot = dims[0]
            if all(np.linalg.norm(xy - p) - foot - f >= clearance
                   for p, f in placed):
                break
        placed.append((xy, foot))
        center = np.array([xy[0], xy[1], height / 2.0])
        objects.append(Primitive(kind=kind, pose=Pose(_rot_z(yaw), center),
                                 dimensions=dims))
    if walls:
        half = radius + 1.5
        wall_h = 1.6
        thick = 0.2
        span = 2.0 * half + thick
        for ax, sgn in ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)):
            center = np.zeros(3)
            center[ax] = sgn * (half + thick / 2.0)
            center[2] = wall_h / 2.0
            dims = [span, span, wall_h]
            dims[ax] = thick
            objects.append(Primitive(kind="box", pose=Pose(np.eye(3), center),
                                     dimensions=tuple(dims)))
    return SceneSpec(objects=tuple(objects))


# ---------------------------------------------------------------------------
# Dataset rendering
# ---------------------------------------------------------------------------


class EmptyScanError(RuntimeError):
    """Raised when a sensor records no returns at some stop."""


def render_dataset(
    scene: SceneSpec,
    mounts,
    schedule: ScanSchedule,
    noise: BleedingParams | None = None,
    seed: int = 0,
) -> tuple[tuple[tuple[PointCloud, ...], ...], GroundTruthBundle]:
    """Render labeled per-sensor, per-stop clouds plus the ground truth.

    Clouds are in each sensor's own frame. Bleeding noise uses an independent
    stream per (sensor, stop) so any scan can be re-rendered in isolation.
    """
    mounts = tuple(mounts)
    if len(mounts) < 2:
        raise ValueError("need at least 2 sensors")
    extrinsics = ExtrinsicSet(tuple(m.extrinsic for m in mounts[1:]))
    trajectory = schedule.trajectory
    ref_correction = mounts[0].extrinsic
    # mount[0].extrinsic is normally identity; fold any offset into the trajectory
    if np.linalg.norm(ref_correction.matrix() - np.eye(4)) > 1e-12:
        trajectory = Trajectory(tuple(compose(p, ref_correction) for p in trajectory))
        extrinsics = ExtrinsicSet(tuple(
            compose(ref_correction.inverse(), m.extrinsic) for m in mounts[1:]))

    clouds: list[list[PointCloud]] = []
    ids_out: list[list[np.ndarray]] = []
    for i, mount in enumerate(mounts):
        row_clouds: list[PointCloud] = []
        row_ids: list[np.ndarray] = []
        for j in range(len(trajectory)):
            pose = sensor_pose(trajectory, extrinsics, i, j)
            # Independent scanners are not phase-locked; a per-sensor offset
            # keeps one sensor's petal lattice from nesting into another's.
            dirs_local = rosette_directions(j, schedule.points_per_scan,
                                            schedule.phase(j) + i * math.sqrt(2.0),
                                            mount.fov_deg,
                                            boresight=mount.boresight)
            dirs_global = dirs_local @ pose.rotation.T
            ranges, surf = cast_rays(pose.translation, dirs_global, scene, mount.max_range)
            if not np.any(np.isfinite(ranges)):
                raise EmptyScanError(f"sensor {i} produced no returns at stop {j}")
            rng = np.random.default_rng([seed, i, j])
            if noise is None:
                hit = np.isfinite(ranges)
                pts = dirs_local[hit] * ranges[hit, None]
                cloud = PointCloud(pts, labels=np.full(len(pts), LABEL_SURFACE, dtype=np.int8))
                ids = surf[hit]
            else:
                cloud, ids = inject_bleeding_noise(dirs_local, ranges, surf, noise, rng)
            row_clouds.append(cloud)
            row_ids.append(ids)
        clouds.append(row_clouds)
        ids_out.append(row_ids)

    bundle = GroundTruthBundle(
        extrinsics=extrinsics,
        trajectory=trajectory,
        surface_ids=tuple(tuple(row) for row in ids_out),
    )
    return tuple(tuple(row) for row in clouds), bundle
