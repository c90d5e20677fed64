"""Targetless extrinsic calibration for multi-LiDAR rigs with non-overlapping views."""

from .geometry import (
    LABEL_NOISE,
    LABEL_SURFACE,
    ExtrinsicSet,
    Plane,
    PointCloud,
    Pose,
    Trajectory,
    compose,
    pose_error,
    rotation_error_deg,
    rotation_from_axis_angle,
    sensor_pose,
    transform_cloud,
    transform_plane,
    translation_error_m,
)
from .noise_filter import (
    FilterParams,
    FilterReport,
    InsufficientPointsError,
    determine_observation_center,
    dsor_filter,
    mean_knn_distances,
    pattern_filter,
    sor_filter,
)
from .segmentation import (
    FloorNotFoundError,
    NoPlaneError,
    SegParams,
    SegmentationResult,
    euclidean_cluster,
    ransac_plane,
    segment_floor_objects,
)
from .rough_refine import (
    MissingPlaneError,
    PlaneObservation,
    refine_extrinsics,
    refine_trajectory,
    rotation_between,
)
from .optimizer import (
    AssociationError,
    CalibrationSession,
    Correspondence,
    OptimizationReport,
    OptimizerConfig,
    associate,
    build_reference_map,
    evaluate_error,
    optimize,
    residual_jacobian,
)
from .simulator import (
    BleedingParams,
    GroundTruthBundle,
    Primitive,
    ScanSchedule,
    SceneSpec,
    SensorMount,
    cast_rays,
    default_mounts,
    default_schedule,
    default_trajectory,
    inject_bleeding_noise,
    perturb_parameters,
    ray_cast,
    render_dataset,
    ring_scene,
    rosette_directions,
)
from .pipeline import (
    PipelineStageError,
    PipelineVariant,
    RunReport,
    filter_metrics,
    metric_error,
    run_pipeline,
)
from .cloud_io import (
    CloudFormatError,
    ConfigError,
    Dataset,
    RunConfig,
    load_cloud,
    load_dataset,
    load_report,
    load_run_config,
    save_cloud,
    save_dataset,
    save_report,
)

__version__ = "0.1.0"
