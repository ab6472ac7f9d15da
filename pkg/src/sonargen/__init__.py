"""Recursive tiled GAN for side-scan-sonar-style seabed imagery.

The pipeline: a procedural seabed renderer supplies (semantic map, image)
training pairs; a conditional generator learns to synthesize tiles that
continue their already-generated neighbors; missions of arbitrary length are
produced tile by tile at test time and scored for seam continuity, texture
fidelity, and downstream detector utility.
"""

from .errors import (DatasetFault, DependencyError, NoQuadError, TrainingFault,
                     ValidationError)
from .estimator import SonarImageGenerator
from .grid import (ConditionSet, Quad, SemanticMap, TileGridSpec, compose_quad,
                   extract_conditions, partition, replace_tile, stitch)
from .inference import (BenchmarkReport, Mission, MissionRequest,
                        benchmark_throughput, generate_mission,
                        generate_mission_wavefront)
from .networks import (DiscriminatorConfig, GeneratorConfig, ModelSet,
                       build_models, load_checkpoint, save_checkpoint)
from .seabed import TerrainParams, default_terrain_params, make_dataset
from .training import TrainingConfig, train, train_models

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport",
    "ConditionSet",
    "DatasetFault",
    "DependencyError",
    "DiscriminatorConfig",
    "GeneratorConfig",
    "Mission",
    "MissionRequest",
    "ModelSet",
    "NoQuadError",
    "Quad",
    "SemanticMap",
    "SonarImageGenerator",
    "TerrainParams",
    "TileGridSpec",
    "TrainingConfig",
    "TrainingFault",
    "ValidationError",
    "benchmark_throughput",
    "build_models",
    "compose_quad",
    "default_terrain_params",
    "extract_conditions",
    "generate_mission",
    "generate_mission_wavefront",
    "load_checkpoint",
    "make_dataset",
    "partition",
    "replace_tile",
    "save_checkpoint",
    "stitch",
    "train",
    "train_models",
    "__version__",
]
