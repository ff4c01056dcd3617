"""Multi-view multi-person 3D pose estimation on voxel grids with a
sparse Sinkhorn-attention transformer, plus the tooling to verify it:
synthetic scenes, a minimal reverse-mode autodiff engine, evaluation
metrics, and a benchmark for the sparse attention's cost."""

from .attention import (
    AttentionConfig,
    EncoderLayerWeights,
    EncoderWeights,
    ScoreCounter,
    SinkhornResult,
    attention_sublayer,
    bin_means,
    correlation_matrix,
    dense_attention,
    embed_volume,
    encoder_forward,
    encoder_layer_forward,
    feed_forward,
    init_encoder_layer,
    init_encoder_weights,
    layer_norm,
    reorder_bins,
    sinkhorn_normalize,
    windowed_attention,
)
from .autodiff import (
    Adam,
    Tensor,
    as_tensor,
    concat,
    finite_diff_check,
    sgd_step,
    zero_grads,
)
from .config import (
    RunConfig,
    SceneConfig,
    load_json_config,
    run_config_from_json,
    run_config_to_json,
    scene_config_from_json,
    scene_config_to_json,
)
from .conv import (
    Conv3dLayer,
    ResidualBlock,
    conv3d_forward,
    init_conv3d,
    init_residual_block,
    residual_forward,
)
from .errors import ConfigError, NotDifferentiablePathError, NumericError
from .geometry import (
    CameraCalib,
    Heatmap,
    aggregate_feature_volume,
    cameras_to_json,
    load_cameras_json,
    project_point,
    sample_heatmap,
)
from .grid import (
    GridSpec,
    flat_index,
    flatten_volume,
    merge_bins,
    partition_bins,
    unflatten_volume,
)
from .metrics import (
    EvalConfig,
    MatchResult,
    MetricsReport,
    PcpResult,
    ap_k,
    evaluate_frames,
    match_poses,
    mpjpe,
    pcp3d,
    pose_error,
)
from .model import (
    ModelWeights,
    init_model,
    init_model_from_config,
    load_model,
    model_forward,
    save_model,
)
from .pipeline import (
    BenchRow,
    CheckItem,
    CheckReport,
    InferenceResult,
    TrainResult,
    bench_attention,
    coarse_center_proposal,
    propose_centers,
    run_checks,
    run_inference,
    train_toy,
    write_bench_csv,
    write_loss_csv,
)
from .posehead import (
    Pose3D,
    fuse_and_head,
    integral_regression,
    load_poses_json,
    poses_from_json,
    poses_to_json,
    regress_pose,
    save_poses_json,
)
from .synth import (
    JOINT_NAMES,
    SkeletonTemplate,
    SyntheticScene,
    camera_ring,
    default_skeleton,
    load_scene,
    render_heatmaps,
    sample_pose,
    save_scene,
    synth_scene,
)
from .tensorio import load_tensor, load_tensor_set, save_tensor, save_tensor_set

__version__ = "0.1.0"
