"""Data-efficient surrogate modeling and inverse design of spinodoid metamaterials."""

from .geometry import StructureParams, VoxelGrid, WaveSet, generate_voxel_grid
from .homogenization import (DEFAULT_MATERIALS, PhaseMaterial, SolverConfig,
                             effective_elasticity)
from .surrogate import (SurrogateModel, extended_forward, load_model, save_model,
                        surrogate_forward)
from .tensors import ElasticityTensor, Rotation, directional_modulus, rodrigues
from .training import Dataset, TrainConfig, evaluate, train_multi_restart

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DEFAULT_MATERIALS", "ElasticityTensor", "PhaseMaterial",
    "Rotation", "SolverConfig", "StructureParams", "SurrogateModel",
    "TrainConfig", "VoxelGrid", "WaveSet", "directional_modulus",
    "effective_elasticity", "evaluate", "extended_forward",
    "generate_voxel_grid", "load_model", "rodrigues", "save_model",
    "surrogate_forward", "train_multi_restart",
]
