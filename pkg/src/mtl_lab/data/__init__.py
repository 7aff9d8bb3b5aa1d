from .datasets import (
    TOY_COVERAGE,
    TOY_STYLES,
    CoverageMatrix,
    DatasetReader,
    ToyDataset,
    assemble_dataset,
    build_toy_corpus,
    load_split,
    read_raster,
    tree_checksum,
    write_raster,
)
from .scene import SceneSample, generate_scene, warp_backward

__all__ = [
    "SceneSample",
    "generate_scene",
    "warp_backward",
    "CoverageMatrix",
    "DatasetReader",
    "ToyDataset",
    "TOY_COVERAGE",
    "TOY_STYLES",
    "assemble_dataset",
    "build_toy_corpus",
    "load_split",
    "read_raster",
    "write_raster",
    "tree_checksum",
]
