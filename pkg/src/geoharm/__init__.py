"""Spherical-harmonic and sine/cosine location encoders with small numpy networks."""
from .dfs import EmbeddingSpec, embed, embed_dim
from .geom import PointSet, SpherePoint
from .net import Model, NetworkSpec
from .train import TrainConfig, evaluate, fit

__all__ = [
    "EmbeddingSpec",
    "Model",
    "NetworkSpec",
    "PointSet",
    "SpherePoint",
    "TrainConfig",
    "embed",
    "embed_dim",
    "evaluate",
    "fit",
]
__version__ = "0.1.0"
