"""Bayesian model-based gaze estimation on synthetic desk-scale scenes."""

from .geometry import (
    CameraIntrinsics,
    GeometryError,
    NoIntersection,
    NonPositiveDepth,
    Pose,
    angular_error_deg,
    backproject,
    normalize,
    project,
    ray_sphere_intersect,
)
from .eye_model import (
    DegenerateConfiguration,
    EyeModelParams,
    InsufficientData,
    LandmarkSet,
    SingularCovariance,
    average_eye_model,
    estimate_gaze,
    estimate_gaze_batch,
    estimate_sigma_n,
    fit_pose,
    gaze_log_density,
)
from .scene import (
    Dataset,
    FormatError,
    NoiseSpec,
    OutOfFrame,
    SubjectParams,
    SyntheticSample,
    corrupt,
    generate_dataset,
    generate_scene,
    read_dataset,
    sample_subject,
    write_dataset,
)
from .network import (
    LandmarkDistribution,
    NetworkArch,
    Prior,
    ShapeMismatch,
    forward,
    init_weights,
    nll,
    potential_and_grad,
)
from .sghmc import (
    ChainState,
    NonFiniteState,
    OptimizerConfig,
    SamplerConfig,
    optimize_map,
    optimize_mle,
    run_chain,
    sghmc_step,
)
from .inference import (
    AllSamplesFailed,
    GazeEstimate,
    InferenceConfig,
    estimate_gaze_bayes,
    estimate_gaze_point,
    sample_landmarks,
)
from .cascade import (
    CascadeArch,
    ProbabilityMap,
    UncertaintySummary,
    cascade_forward,
    decompose_uncertainty,
    probability_map,
    train_cascade,
)

__version__ = "0.1.0"
