"""Manifold-aware embedding for patch-based classification.

Pipeline: model each class of a labelled cube as a nonlinear manifold
(kNN graph + geodesic distances), partition classes into geodesically
compact sub-classes, then train a small feature extractor with a joint
loss (softmax cross-entropy + sub-class compactness + Hausdorff-margin
diversity). Every numerical component is verifiable against independent
oracles; all randomness flows from named, seeded streams.
"""

from manifold_embed.dataset import (
    HyperCube,
    Patch,
    PatchSet,
    SplitSpec,
    SyntheticDataset,
    SyntheticSpec,
    extract_patches,
    load_cube,
    save_cube,
    split,
    synthesize,
)
from manifold_embed.losses import FeatureBatch, LossParams, LossReport
from manifold_embed.manifold import ManifoldParams, SubClassPartition, model_manifolds
from manifold_embed.network import NetworkSpec
from manifold_embed.training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "HyperCube",
    "Patch",
    "PatchSet",
    "SplitSpec",
    "SyntheticDataset",
    "SyntheticSpec",
    "extract_patches",
    "load_cube",
    "save_cube",
    "split",
    "synthesize",
    "FeatureBatch",
    "LossParams",
    "LossReport",
    "ManifoldParams",
    "SubClassPartition",
    "model_manifolds",
    "NetworkSpec",
    "TrainConfig",
    "train",
]
