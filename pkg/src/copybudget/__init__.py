"""Copyright-aware budget allocation simulator.

Library layout:

- ``config`` / ``rng``: experiment schema, validation, seeded streams
- ``attribution``: per-sample contribution scores plus a leave-one-out oracle
- ``copyright``: semantic + perceptual similarity and per-holder loss
- ``quality``: exact Fréchet distance and the quality transform
- ``envsim``: the multi-round recruitment world
- ``rl``: value networks, replay, and the two-level budget agents
- ``allocators``: baseline strategies and pairing
- ``harness``: seeded experiment matrices, correlation analysis, reports
"""

from .config import ExperimentConfig, HolderSpec, QualityTier, load_config, validate_config
from .rng import derive_stream

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "HolderSpec",
    "QualityTier",
    "derive_stream",
    "load_config",
    "validate_config",
    "__version__",
]
