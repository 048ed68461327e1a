from metadepth.scenes.augment import AugmentSpec, augment, flip
from metadepth.scenes.dataset import (
    Dataset,
    FineGrainedTask,
    Region,
    RegionAnnotation,
    load_dataset,
    read_depth,
    save_dataset,
    write_depth,
)
from metadepth.scenes.generator import SceneGenConfig, generate_dataset, image_diversity
from metadepth.scenes.sampler import EpochSampler, sample_fine_grained_batch

__all__ = [
    "AugmentSpec",
    "Dataset",
    "EpochSampler",
    "FineGrainedTask",
    "Region",
    "RegionAnnotation",
    "SceneGenConfig",
    "augment",
    "flip",
    "generate_dataset",
    "image_diversity",
    "load_dataset",
    "read_depth",
    "sample_fine_grained_batch",
    "save_dataset",
    "write_depth",
]
