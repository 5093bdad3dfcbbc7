"""VGG16 pool5 feature dumper for retrieval datasets."""

from .extractor import (
    ExtractionJob,
    ImageTask,
    build_job,
    extract,
    load_backbone,
    pool5_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "ExtractionJob",
    "ImageTask",
    "build_job",
    "extract",
    "load_backbone",
    "pool5_tensor",
]
