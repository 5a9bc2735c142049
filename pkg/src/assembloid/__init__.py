"""Zero-shot part assembly by iterative diffusion denoising and rigid alignment."""

from .assembler import AssemblyConfig, CollisionConfig, assemble, assemble_step, push_away, sds_gradient
from .datagen import LEVELS, ShapeSpec, generate_scene, perturb
from .diffusion import GaussianMixtureDenoiser, MemorizedShapeDenoiser, linear_schedule, sample
from .geometry import Part, Pose, Scene, apply_pose, chamfer, icp_align, kabsch_align
from .metrics import evaluate

__version__ = "0.1.0"

__all__ = [
    "AssemblyConfig", "CollisionConfig", "GaussianMixtureDenoiser", "LEVELS", "MemorizedShapeDenoiser",
    "Part", "Pose", "Scene", "ShapeSpec", "apply_pose", "assemble", "assemble_step", "chamfer",
    "evaluate", "generate_scene", "icp_align", "kabsch_align", "linear_schedule", "perturb",
    "push_away", "sample", "sds_gradient",
]
