"""Neural deformation fields for thin-shell cloth (Kirchhoff-Love) simulation."""
from .config import Problem, SamplingPlan, ScenarioConfig, TrainingConfig, load_config
from .energy import LoadSpec, MaterialParams, total_loss
from .errors import (CheckpointMismatch, ConfigurationError, DegenerateSurfaceError, DomainError, NdfError,
                     NumericAbort, TapeDomainError)
from .estimator import NeuralClothSimulator
from .geometry import SurfaceSpec, frame
from .kinematics import strains
from .ndf import ConstraintSpec, Factor, Motion, MotionBranch, eval_ndf, load_checkpoint, save_checkpoint
from .scenarios import benchmark_cases, get_scenario, run_benchmark
from .trainer import Edit, fine_tune_edit, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointMismatch", "ConfigurationError", "ConstraintSpec", "DegenerateSurfaceError", "DomainError", "Edit",
    "Factor", "LoadSpec", "MaterialParams", "Motion", "MotionBranch", "NdfError", "NeuralClothSimulator",
    "NumericAbort", "Problem", "SamplingPlan", "ScenarioConfig", "SurfaceSpec", "TapeDomainError", "TrainingConfig",
    "benchmark_cases", "eval_ndf", "fine_tune_edit", "frame", "get_scenario", "load_checkpoint", "load_config",
    "run_benchmark", "save_checkpoint", "strains", "total_loss", "train",
]
