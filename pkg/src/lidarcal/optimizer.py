"""Joint refinement of the trajectory and extrinsics from object clouds.

The outer loop alternates, ICP-style, between (a) rebuilding the reference
map from the reference sensor's object clouds under the current trajectory,
(b) nearest-neighbor association of every sensor's object points against
that map, and (c) an inner Levenberg-Marquardt solve over all pose
parameters with the correspondences held fixed. Reference-sensor points are
matched only against map points observed at other stops; those cross-stop
pairs anchor the trajectory itself, which otherwise drifts in the weakly
observed tilt and height directions on smooth scenes.

Because the map itself moves with the trajectory, each correspondence keeps
its target in the reference sensor's local frame together with the stop it
was observed at; the inner solve then carries Jacobians for the target-side
trajectory pose as well as the source-side pose and extrinsic. Freezing
targets in global coordinates instead leaks a systematic bias into the
weakly-anchored stops and the alternation drifts.

Poses are parameterized per solve step as local increments
(axis-angle omega, translation delta): R <- exp(omega) R, t <- t + delta,
linearized at zero increment. The solver minimizes the sum of squared
residuals; the monitored cost is the plain sum of nearest-neighbor
distances, which shares its minimizer at alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    ExtrinsicSet,
    PointCloud,
    Pose,
    Trajectory,
    orthonormalize,
    rotation_from_axis_angle,
    sensor_pose,
    skew,
    transform_cloud,
)


class AssociationError(RuntimeError):
    """Raised when nearest-neighbor association yields no usable pairs."""


class NoReferenceObjectsError(ValueError):
    """Raised when the reference sensor contributed no object points."""


@dataclass(frozen=True)
class OptimizerConfig:
    outer_iterations: int = 200
    max_correspondence_distance: float = 0.5    # m
    inner_max_iterations: int = 10
    gradient_tol: float = 1e-10
    param_tol: float = 1e-12
    cost_rel_tol: float = 1e-10
    outer_cost_rel_tol: float = 1e-9
    lm_initial_damping: float = 1e-4
    optimize_trajectory: bool = True
    huber_delta: float | None = None            # None = plain least squares

    def __post_init__(self) -> None:
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        for name in ("max_correspondence_distance", "inner_max_iterations",
                     "gradient_tol", "param_tol", "cost_rel_tol",
                     "outer_cost_rel_tol", "lm_initial_damping"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.huber_delta is not None and self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")


@dataclass(frozen=True)
class CalibrationSession:
    """Per-sensor, per-stop clouds plus the current trajectory and extrinsics."""

    clouds: tuple[tuple[PointCloud, ...], ...]   # clouds[sensor][stop]
    extrinsics: ExtrinsicSet
    trajectory: Trajectory

    def __post_init__(self) -> None:
        clouds = tuple(tuple(per_sensor) for per_sensor in self.clouds)
        if len(clouds) != len(self.extrinsics) + 1:
            raise ValueError("need one cloud row per sensor (reference first)")
        for row in clouds:
            if len(row) != len(self.trajectory):
                raise ValueError("need one cloud per trajectory stop")
        object.__setattr__(self, "clouds", clouds)

    @property
    def n_sensors(self) -> int:
        return len(self.clouds)

    @property
    def n_stops(self) -> int:
        return len(self.trajectory)


@dataclass(frozen=True)
class Correspondence:
    """One matched pair: source in the sensor frame, target in global."""

    source: np.ndarray
    target: np.ndarray
    sensor_index: int
    timestamp_index: int


@dataclass(frozen=True)
class CorrespondenceBatch:
    """Pairs sharing one (sensor, source stop, target stop), as arrays.

    Targets are stored in the reference sensor's frame at `target_stop` so
    they follow the trajectory during the solve.
    """

    sensor_index: int
    timestamp_index: int
    target_stop: int
    sources: np.ndarray         # (n, 3) sensor frame
    targets_local: np.ndarray   # (n, 3) reference frame at target_stop

    def __len__(self) -> int:
        return len(self.sources)


@dataclass(frozen=True)
class Correspondences:
    batches: tuple[CorrespondenceBatch, ...]

    def __len__(self) -> int:
        return sum(len(b) for b in self.batches)

    def pairs(self, trajectory: Trajectory):
        """Flat view: one Correspondence per pair, targets in global coordinates."""
        for b in self.batches:
            targets = trajectory[b.target_stop].apply(b.targets_local)
            for s, t in zip(b.sources, targets):
                yield Correspondence(s, t, b.sensor_index, b.timestamp_index)


@dataclass(frozen=True)
class ReferenceMap:
    """Accumulated global object map of the reference sensor plus its index.

    Each map point remembers the stop it was observed at and its coordinates
    in the reference sensor's frame there.
    """

    points: PointCloud              # global coordinates at build time
    tree: cKDTree
    origin_stop: np.ndarray         # (N,) stop index per map point
    local_points: np.ndarray        # (N, 3) reference-frame coordinates
    stop_ids: tuple[int, ...]       # stops that contributed points, ascending
    stop_trees: tuple[cKDTree, ...]       # per-stop index over global coords
    stop_local: tuple[np.ndarray, ...]    # per-stop reference-frame points


@dataclass(frozen=True)
class OptimizationReport:
    extrinsics: ExtrinsicSet
    trajectory: Trajectory
    cost_trace: tuple[float, ...]              # distance sum at each association
    correspondence_counts: tuple[int, ...]
    convergence_reason: str
    extrinsics_trace: tuple[ExtrinsicSet, ...]  # entry k = state after k solves

    @property
    def iterations(self) -> int:
        return len(self.cost_trace)


def build_reference_map(trajectory: Trajectory, reference_clouds) -> ReferenceMap:
    """Concatenate the reference sensor's clouds in global coordinates and index them."""
    parts = []
    stops = []
    locals_ = []
    stop_ids = []
    for j, cloud in enumerate(reference_clouds):
        if len(cloud) == 0:
            continue
        parts.append(transform_cloud(trajectory[j], cloud).points)
        locals_.append(cloud.points)
        stops.append(np.full(len(cloud), j, dtype=np.intp))
        stop_ids.append(j)
    if not parts:
        raise NoReferenceObjectsError("no reference objects: all reference clouds are empty")
    pts = np.vstack(parts)
    # midpoint splitting: same exact neighbors, much cheaper gated queries
    # on surface-structured data, and the tree is rebuilt every iteration
    tree = cKDTree(pts, balanced_tree=False, compact_nodes=False)
    stop_trees = tuple(cKDTree(p, balanced_tree=False, compact_nodes=False)
                       for p in parts)
    return ReferenceMap(points=PointCloud(pts), tree=tree,
                        origin_stop=np.concatenate(stops),
                        local_points=np.vstack(locals_),
                        stop_ids=tuple(stop_ids), stop_trees=stop_trees,
                        stop_local=tuple(locals_))


def associate(
    ref_map: ReferenceMap,
    extrinsics: ExtrinsicSet,
    trajectory: Trajectory,
    clouds,
    max_distance: float,
) -> Correspondences:
    """Nearest-neighbor pairs for every sensor cloud, gated by distance.

    `clouds` is indexed [sensor][stop]. Non-reference points match against the
    whole map; reference points match only against map points observed at
    other stops, so a reference scan is never paired with itself. Pairs are
    grouped by (sensor, source stop, target stop).
    """
    batches = []
    for j in range(len(trajectory)):
        cloud = clouds[0][j]
        if len(cloud) == 0 or len(ref_map.stop_ids) < 2:
            continue
        world = trajectory[j].apply(cloud.points)
        best_d = np.full(len(world), np.inf)
        best_stop = np.full(len(world), -1, dtype=np.intp)
        best_idx = np.zeros(len(world), dtype=np.intp)
        for jj, tree in zip(ref_map.stop_ids, ref_map.stop_trees):
            if jj == j:
                continue
            d, idx = tree.query(world, distance_upper_bound=max_distance)
            better = d < best_d
            best_d[better] = d[better]
            best_stop[better] = jj
            best_idx[better] = idx[better]
        ok = np.isfinite(best_d)
        if not np.any(ok):
            continue
        sources = cloud.points[ok]
        tgt_stops = best_stop[ok]
        hit_idx = best_idx[ok]
        for stop in np.unique(tgt_stops):
            sel = tgt_stops == stop
            local = ref_map.stop_local[ref_map.stop_ids.index(int(stop))]
            batches.append(CorrespondenceBatch(
                sensor_index=0,
                timestamp_index=j,
                target_stop=int(stop),
                sources=sources[sel],
                targets_local=local[hit_idx[sel]],
            ))
    for i in range(1, len(extrinsics) + 1):
        for j in range(len(trajectory)):
            cloud = clouds[i][j]
            if len(cloud) == 0:
                continue
            world = sensor_pose(trajectory, extrinsics, i, j).apply(cloud.points)
            dists, idx = ref_map.tree.query(world, distance_upper_bound=max_distance)
            ok = np.isfinite(dists)
            if not np.any(ok):
                continue
            sources = cloud.points[ok]
            hit_idx = idx[ok]
            tgt_stops = ref_map.origin_stop[hit_idx]
            for stop in np.unique(tgt_stops):
                sel = tgt_stops == stop
                batches.append(CorrespondenceBatch(
                    sensor_index=i,
                    timestamp_index=j,
                    target_stop=int(stop),
                    sources=sources[sel],
                    targets_local=ref_map.local_points[hit_idx[sel]],
                ))
    corrs = Correspondences(tuple(batches))
    if len(corrs) == 0:
        raise AssociationError("association failed: no pairs within the gate")
    return corrs


def evaluate_error(corrs: Correspondences, extrinsics: ExtrinsicSet, trajectory: Trajectory) -> float:
    """Sum of Euclidean distances target - (R source + t) over all pairs."""
    total = 0.0
    for b in corrs.batches:
        delta = _batch_residuals(b, extrinsics, trajectory)[0]
        total += float(np.linalg.norm(delta, axis=1).sum())
    return total


def residual_jacobian(
    corr: Correspondence,
    extrinsics: ExtrinsicSet,
    trajectory: Trajectory,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual of one pair and its partials w.r.t. zero-increment parameters.

    Returns (residual, jac_trajectory, jac_extrinsic), each jacobian 3x6 over
    (axis-angle, translation) of the source stop pose and the sensor's
    extrinsic, with the target held fixed in global coordinates. The
    increment convention is R <- exp(omega) R, t <- t + delta. Reference
    pairs (sensor 0) have no extrinsic; their extrinsic block is zero.
    """
    pose_j = trajectory[corr.timestamp_index]
    if corr.sensor_index == 0:
        y = np.asarray(corr.source, dtype=float)
        a = pose_j.rotation @ y
        residual = corr.target - (a + pose_j.translation)
        return residual, np.hstack([skew(a), -np.eye(3)]), np.zeros((3, 6))
    ext = extrinsics[corr.sensor_index - 1]
    y = ext.rotation @ corr.source + ext.translation
    a = pose_j.rotation @ y
    residual = corr.target - (a + pose_j.translation)
    jac_pose = np.hstack([skew(a), -np.eye(3)])
    jac_ext = np.hstack([
        pose_j.rotation @ skew(ext.rotation @ corr.source),
        -pose_j.rotation,
    ])
    return residual, jac_pose, jac_ext


# ---------------------------------------------------------------------------
# Inner Levenberg-Marquardt solve (fixed correspondences)
# ---------------------------------------------------------------------------


@dataclass
class _ParamLayout:
    """Maps extrinsic / trajectory blocks to slices of the parameter vector."""

    ext_offsets: dict[int, int] = field(default_factory=dict)     # sensor index -> offset
    traj_offsets: dict[int, int] = field(default_factory=dict)    # stop index -> offset
    size: int = 0

    @classmethod
    def build(cls, corrs: Correspondences, n_sensors: int, n_stops: int,
              optimize_trajectory: bool) -> "_ParamLayout":
        ext_support = {i: 0 for i in range(n_sensors)}
        traj_support = {j: 0 for j in range(1, n_stops)}
        for b in corrs.batches:
            ext_support[b.sensor_index] += len(b)
            if b.timestamp_index > 0:
                traj_support[b.timestamp_index] += len(b)
            if b.target_stop > 0:
                traj_support[b.target_stop] += len(b)
        layout = cls()
        for i in range(1, n_sensors):
            if ext_support[i] > 0:
                layout.ext_offsets[i] = layout.size
                layout.size += 6
        if optimize_trajectory:
            for j in range(1, n_stops):
                if traj_support[j] > 0:
                    layout.traj_offsets[j] = layout.size
                    layout.size += 6
        return layout


def _batch_residuals(b: CorrespondenceBatch, extrinsics: ExtrinsicSet,
                     trajectory: Trajectory):
    """Residuals plus intermediates reused by the jacobian blocks.

    Returns (residuals, rotated_sources R_e p, source_world_rot a, target_rot bvec).
    Reference batches (sensor 0) use the identity extrinsic.
    """
    pose = trajectory[b.timestamp_index]
    tgt_pose = trajectory[b.target_stop]
    if b.sensor_index == 0:
        rotated = b.sources
        a = rotated @ pose.rotation.T                     # R_j p
    else:
        ext = extrinsics[b.sensor_index - 1]
        rotated = b.sources @ ext.rotation.T              # R_e p
        a = (rotated + ext.translation) @ pose.rotation.T  # R_j (R_e p + t_e)
    bvec = b.targets_local @ tgt_pose.rotation.T          # R_j' q
    residuals = (bvec + tgt_pose.translation) - (a + pose.translation)
    return residuals, rotated, a, bvec


def _huber_weights(residuals: np.ndarray, delta: float | None) -> np.ndarray | None:
    if delta is None:
        return None
    norms = np.linalg.norm(residuals, axis=1)
    w = np.ones(len(norms))
    big = norms > delta
    w[big] = delta / norms[big]
    return w


def _robust_cost(residuals: np.ndarray, delta: float | None) -> float:
    sq = np.einsum("ni,ni->n", residuals, residuals)
    if delta is None:
        return float(sq.sum())
    norms = np.sqrt(sq)
    out = np.where(norms <= delta, sq, 2.0 * delta * norms - delta * delta)
    return float(out.sum())


def _total_cost(corrs: Correspondences, extrinsics: ExtrinsicSet,
                trajectory: Trajectory, delta: float | None) -> float:
    total = 0.0
    for b in corrs.batches:
        residuals = _batch_residuals(b, extrinsics, trajectory)[0]
        total += _robust_cost(residuals, delta)
    return total


def _skew_stack(v: np.ndarray) -> np.ndarray:
    """(n, 3) vectors -> (n, 3, 3) cross-product matrices."""
    n = len(v)
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def _assemble(corrs: Correspondences, extrinsics: ExtrinsicSet, trajectory: Trajectory,
              layout: _ParamLayout, huber_delta: float | None):
    """Normal equations H, g and the robust squared cost at the current state."""
    H = np.zeros((layout.size, layout.size))
    g = np.zeros(layout.size)
    cost = 0.0
    eye3 = np.eye(3)
    for b in corrs.batches:
        residuals, rotated, a, bvec = _batch_residuals(b, extrinsics, trajectory)
        cost += _robust_cost(residuals, huber_delta)
        w = _huber_weights(residuals, huber_delta)
        n = len(b)
        pose = trajectory[b.timestamp_index]

        # per-offset jacobian blocks; same offset (source stop == target stop)
        # sums contributions, which zeroes the translation columns
        blocks: dict[int, np.ndarray] = {}

        ext_off = layout.ext_offsets.get(b.sensor_index)
        if ext_off is not None:
            jac = np.empty((n, 3, 6))
            jac[:, :, :3] = np.einsum("ab,nbc->nac", pose.rotation, _skew_stack(rotated))
            jac[:, :, 3:] = -pose.rotation
            blocks[ext_off] = jac
        src_off = layout.traj_offsets.get(b.timestamp_index)
        if src_off is not None:
            jac = np.empty((n, 3, 6))
            jac[:, :, :3] = _skew_stack(a)
            jac[:, :, 3:] = -eye3
            blocks[src_off] = jac
        tgt_off = layout.traj_offsets.get(b.target_stop)
        if tgt_off is not None:
            jac = np.empty((n, 3, 6))
            jac[:, :, :3] = -_skew_stack(bvec)
            jac[:, :, 3:] = eye3
            if tgt_off in blocks:
                blocks[tgt_off] = blocks[tgt_off] + jac
            else:
                blocks[tgt_off] = jac

        if not blocks:
            continue
        offsets = sorted(blocks)
        full = np.concatenate([blocks[o] for o in offsets], axis=2)
        if w is None:
            h_local = np.einsum("nij,nik->jk", full, full)
            g_local = np.einsum("nij,ni->j", full, residuals)
        else:
            h_local = np.einsum("n,nij,nik->jk", w, full, full)
            g_local = np.einsum("n,nij,ni->j", w, full, residuals)
        for ai, off_a in enumerate(offsets):
            g[off_a:off_a + 6] += g_local[6 * ai:6 * ai + 6]
            for bi, off_b in enumerate(offsets):
                H[off_a:off_a + 6, off_b:off_b + 6] += \
                    h_local[6 * ai:6 * ai + 6, 6 * bi:6 * bi + 6]
    return H, g, cost


def _retract(extrinsics: ExtrinsicSet, trajectory: Trajectory,
             layout: _ParamLayout, step: np.ndarray) -> tuple[ExtrinsicSet, Trajectory]:
    new_ext = list(extrinsics)
    for i, off in layout.ext_offsets.items():
        pose = new_ext[i - 1]
        rot = orthonormalize(rotation_from_axis_angle(step[off:off + 3]) @ pose.rotation)
        new_ext[i - 1] = Pose(rot, pose.translation + step[off + 3:off + 6])
    new_traj = list(trajectory)
    for j, off in layout.traj_offsets.items():
        pose = new_traj[j]
        rot = orthonormalize(rotation_from_axis_angle(step[off:off + 3]) @ pose.rotation)
        new_traj[j] = Pose(rot, pose.translation + step[off + 3:off + 6])
    return ExtrinsicSet(tuple(new_ext)), Trajectory(tuple(new_traj))


def solve_poses(
    corrs: Correspondences,
    extrinsics: ExtrinsicSet,
    trajectory: Trajectory,
    config: OptimizerConfig,
) -> tuple[ExtrinsicSet, Trajectory, list[float]]:
    """Levenberg-Marquardt over all supported pose blocks, correspondences fixed.

    Returns the updated (extrinsics, trajectory) and the accepted-step cost
    sequence (robust squared objective), which is strictly decreasing.
    """
    layout = _ParamLayout.build(corrs, len(extrinsics) + 1, len(trajectory),
                                config.optimize_trajectory)
    if layout.size == 0:
        return extrinsics, trajectory, [
            _total_cost(corrs, extrinsics, trajectory, config.huber_delta)]

    lam = config.lm_initial_damping
    C, S = extrinsics, trajectory
    H, g, cost = _assemble(corrs, C, S, layout, config.huber_delta)
    accepted = [cost]
    for _ in range(config.inner_max_iterations):
        if np.max(np.abs(g)) < config.gradient_tol:
            break
        diag = np.diag(H).copy()
        floor = 1e-12 * (diag.max() if diag.max() > 0 else 1.0)
        np.maximum(diag, floor, out=diag)
        improved = False
        for _attempt in range(12):
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial_C, trial_S = _retract(C, S, layout, step)
            trial_cost = _total_cost(corrs, trial_C, trial_S, config.huber_delta)
            if np.isfinite(trial_cost) and trial_cost < cost:
                C, S = trial_C, trial_S
                lam = max(lam / 3.0, 1e-14)
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
        new_H, new_g, new_cost = _assemble(corrs, C, S, layout, config.huber_delta)
        rel_drop = (cost - new_cost) / max(cost, 1e-300)
        H, g, cost = new_H, new_g, new_cost
        accepted.append(cost)
        if np.linalg.norm(step) < config.param_tol or rel_drop < config.cost_rel_tol:
            break
    return C, S, accepted


def optimize(session: CalibrationSession, config: OptimizerConfig) -> OptimizationReport:
    """Alternate association and pose solves until convergence or the iteration cap.

    Returns the best evaluated state, not necessarily the last one: an inner
    solve can overfit a sparse gated correspondence set and walk far off, and
    such an excursion must not leak into the result.
    """
    C, S = session.extrinsics, session.trajectory
    reference_clouds = session.clouds[0]
    cost_trace: list[float] = []
    counts: list[int] = []
    ext_trace: list[ExtrinsicSet] = []
    history: list[tuple[float, int, ExtrinsicSet, Trajectory]] = []
    reason = "max_outer_iterations"
    prev_cpc = None

    def record(corrs: Correspondences) -> float:
        cost = evaluate_error(corrs, C, S)
        cost_trace.append(cost)
        counts.append(len(corrs))
        ext_trace.append(C)
        if np.isfinite(cost):
            history.append((cost, len(corrs), C, S))
        return cost / len(corrs)

    for _ in range(config.outer_iterations):
        ref_map = build_reference_map(S, reference_clouds)
        corrs = associate(ref_map, C, S, session.clouds, config.max_correspondence_distance)
        cpc = record(corrs)
        if not np.isfinite(cpc):
            reason = "diverged"
            break
        if prev_cpc is not None and abs(prev_cpc - cpc) <= config.outer_cost_rel_tol * max(prev_cpc, 1e-300):
            reason = "converged"
            break
        prev_cpc = cpc
        C, S = solve_poses(corrs, C, S, config)[:2]

    if reason == "max_outer_iterations" and ext_trace and ext_trace[-1] is not C:
        # the last solve left a state the loop never scored
        try:
            ref_map = build_reference_map(S, reference_clouds)
            corrs = associate(ref_map, C, S, session.clouds,
                              config.max_correspondence_distance)
            record(corrs)
        except AssociationError:
            pass

    if history:
        # shedding most matches makes the gated sum meaningless, so compare
        # mean distances only between well-supported states
        floor = 0.5 * max(h[1] for h in history)
        _, _, C, S = min((h for h in history if h[1] >= floor),
                         key=lambda h: h[0] / h[1])
    return OptimizationReport(
        extrinsics=C,
        trajectory=S,
        cost_trace=tuple(cost_trace),
        correspondence_counts=tuple(counts),
        convergence_reason=reason,
        extrinsics_trace=tuple(ext_trace),
    )
