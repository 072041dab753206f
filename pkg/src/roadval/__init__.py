"""Street-map based validation of drivable-area segmentation masks.

The library compares the road class of semantic segmentation masks against
road geometry from OpenStreetMap extracts: masks are warped to a metric
bird's-eye-view grid, map roads are rasterized into the same grid, and the
overlap yields the ios/iom/dice validation metrics, per-pixel error rasters,
corrected GPS poses, and batch-level statistics.
"""
from .bev import (
    DEFAULT_GRID,
    DEFAULT_VOID_ID,
    BevMask,
    CameraModel,
    GridSpec,
    LabelMask,
    RoadMask,
    ground_homography,
    pixel_to_ground,
    rasterize_roads,
    warp_to_bev,
)
from .geodesy import (
    EARTH_RADIUS_M,
    GeoBBox,
    GeoPoint,
    LocalFrame,
    LocalPoint,
    Pose,
    bbox_around,
    from_local,
    to_local,
    to_vehicle_frame,
)
from .localize import (
    Candidate,
    CorrectionFailedError,
    CorrectionResult,
    NoRoadInRangeError,
    SearchConfig,
    candidate_grid,
    correct_pose,
    score,
)
from .mapio import (
    DEFAULT_DRIVABLE_CLASSES,
    OsmParseError,
    RoadElement,
    RoadGraph,
    RoadWay,
    WidthConfig,
    filter_drivable,
    load_osm,
    parse_osm,
    to_elements,
    way_width,
    write_osm,
)
from .metrics import (
    CITYSCAPES_POLICY,
    SYNTHETIC_POLICY,
    ErrorMasks,
    LabelPolicy,
    OverlapCounts,
    ValidationMetrics,
    dice,
    error_masks,
    error_overlay,
    ios,
    iom,
    metrics_from_counts,
    overlap_counts,
)
from .synth import (
    BundleSpec,
    LayoutSpec,
    Patch,
    PerturbationSpec,
    SyntheticScene,
    gen_map,
    gen_scene,
    render_camera_view,
    write_bundle,
)
from .validate import (
    BatchSummary,
    EmptyBatchError,
    PixelPRF,
    SceneRecord,
    SceneResult,
    batch_stats,
    clean_scenes,
    compare_to_ground_truth,
    flag_outliers,
    gt_error_masks,
    read_manifest,
    relative_count_curve,
    run_batch,
    validate_scene,
    write_manifest,
)

__version__ = "0.1.0"
