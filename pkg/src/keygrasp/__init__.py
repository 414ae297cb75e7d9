"""Task-conditioned functional-grasp keypoints and hand-object pose estimation."""

from .numerics import DenseMap, PcaModel, ClusterResult, pca_fit, kmeans, bilinear_resize, finite_diff_gradient
from .lmsc import (
    RegionMask,
    FusionParams,
    MlpParams,
    Candidate,
    CandidateKeypointSet,
    fuse_layers,
    multiscale,
    reduce_features,
    extract_candidates,
)
from .cmka import (
    SelectionWeights,
    TrainConfig,
    ModelSpec,
    TrainedParams,
    TrainSample,
    select_keypoints,
    extract_region_feature,
    aggregate_keypoint_features,
    cosine_loss,
    classification_loss,
    cam_forward,
    extract_prototype,
    train,
    infer,
)
from .kgt import (
    HandModel,
    Frame,
    RigidTransform,
    AdjustedContacts,
    adjust_keypoints,
    build_frame,
    relative_pose,
    grasp_pose_for_execution,
)
from .metrics import (
    CameraIntrinsics,
    ContactRegion3D,
    kld,
    sim,
    nss,
    gaussian_gt_heatmap,
    project_to_3d,
    tpc,
    format_tpc_percent,
)

__version__ = "0.1.0"
