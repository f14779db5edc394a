"""Unsupervised 4D instance pseudo-labels, online tracking and temporal
association metrics for Lidar point-cloud sequences."""

from .core import (
    GROUND_ID,
    UNKNOWN_ID,
    CapacityError,
    InstanceLabeling,
    MalformedFileError,
    Point,
    Pose,
    Scan,
    Segment4D,
    Sequence,
    transform_scan,
)
from .cluster4d import ClusterParams, aggregate, cluster_sequence, cluster_window, voxel_time_sample
from .density import hdbscan, mutual_reachability_linkage
from .ground import GroundParams, segment_ground
from .matching import (
    MatchResult,
    ToyFeatureModel,
    affinity,
    bce_loss,
    consistency_distributions,
    consistency_loss,
    cost_matrices,
    dice_coefficient,
    dice_loss,
    global_loss,
    hungarian,
)
from .metrics import (
    BoxAnnotation,
    EvalPair,
    best_iou,
    build_instance_gt,
    filter_small,
    s_assoc_scanwise,
    s_assoc_temporal,
    segments_from_labelings,
)
from .stitch import Hull3D, StitchParams, convex_hull, mc_iou, stitch_sequence, stitch_windows
from .synth import ObjectSpec, SceneSpec, generate, standard_scene
from .tracker import (
    FileFeatureProvider,
    IdAllocator,
    QueryState,
    ToyFeatureProvider,
    TrackerParams,
    assign_points,
    recycle,
    track_sequence,
)

__version__ = "0.1.0"
