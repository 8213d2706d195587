"""softgen: adaptive demonstration generation for deformable manipulation.

Fits non-rigid warp fields between deformable-object configurations, adapts
source trajectories through them (with the constant rigid transform as a
baseline), executes the result in a built-in desk-scale PBD simulator, and
emits success-filtered demonstration datasets.
"""

from .geometry import Pose, compose, interpolate_poses, inverse, kabsch_fit, orthonormalize
from .registration import (
    DeformableConfig,
    RegistrationResult,
    RpmParams,
    WarpField,
    fit_tps,
    fit_tps_rpm,
    registration_cost,
    rigid_register,
)
from .warp import (
    BridgePolicy,
    TimedAction,
    TrajectorySegment,
    bridge,
    eval_field,
    eval_jacobian,
    rigid_transform_segment,
    transform_pose,
    warp_segment,
)

__version__ = "0.1.0"

__all__ = [
    "Pose",
    "compose",
    "inverse",
    "orthonormalize",
    "interpolate_poses",
    "kabsch_fit",
    "DeformableConfig",
    "WarpField",
    "RegistrationResult",
    "RpmParams",
    "fit_tps",
    "fit_tps_rpm",
    "registration_cost",
    "rigid_register",
    "TimedAction",
    "TrajectorySegment",
    "BridgePolicy",
    "eval_field",
    "eval_jacobian",
    "transform_pose",
    "warp_segment",
    "rigid_transform_segment",
    "bridge",
    "__version__",
]
