"""Fuse a dense pixel-aligned point cloud with a sparse SfM reconstruction."""

from .camera_align import (
    CameraPose,
    PoseErrorReport,
    align_camera_sets,
    camera_cloud_scale,
    relative_pose_error,
    rotation_points,
)
from .correspondence import (
    CorrespondenceSet,
    build_correspondences,
    project_point,
    select_reference_view,
)
from .geometry import (
    SimTransform,
    apply_sim3,
    compose_sim3,
    invert_sim3,
    quat_angle,
    quat_to_rotation,
    rotation_to_quat,
)
from .procrustes import alignment_residuals, solve_similarity
from .ransac import GlobalAlignment, RansacParams, apply_global, ransac_align
from .scene_io import (
    BinaryMask,
    CameraView,
    DensePointmap,
    LabelMap,
    SfMScene,
    read_labelmap,
    read_mask,
    read_pointmap,
    read_sfm_scene,
    write_ply,
)
from .semantic import (
    FusedCloud,
    OutlierGroup,
    file_provider,
    fuse,
    group_outliers,
    oracle_provider,
    solve_local,
)
from .synth import GroundTruthBundle, SceneSpec, generate, score

__version__ = "0.1.0"
