"""Pre-trained physics-informed deep-learning reduced order models."""

from . import autodiff, metrics, model, networks, physics, pod, sampling, training
from .model import PTPIModel, build_model, evaluate_on_mesh, field_eval
from .physics import ADR2D, Eikonal, get_problem, generate_snapshots
from .pod import PODBasis, SnapshotSet, e_pod, pod_basis
from .training import LossWeights, StageConfig, TrainConfig, run_pipeline

__version__ = "0.1.0"
