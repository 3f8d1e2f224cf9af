"""Kinematic error compensation for six-axis industrial robots.

Physics branch (DH forward kinematics), data branch (masked-transformer
compensation network), hybrid spatial/data loss, rigid base-frame
calibration and gradient-descent inverse joint-angle compensation,
trained and validated against a synthetic error world.
"""

__version__ = "0.1.0"

from .kinematics import (DHRow, DHTable, ur5_table, forward_kinematics,
                         forward_kinematics_batch, joint_transform)
from .model import CompensationModel, ModelConfig, build_mask, predict
from .calibration import RigidTransform, fit_rigid_transform, apply_transform
from .dataset import (ErrorWorld, SampleSet, WorldBounds, generate_world,
                      measure, sample_dataset, read_dataset, write_dataset)
from .training import TrainConfig, MetricsReport, train, evaluate, run_ablation
from .inverse import SolverConfig, CompensationResult, compensate, verify_compensation
