"""deepagg: co-weighted aggregation of convolutional feature tensors into
compact global image descriptors, plus retrieval evaluation tooling."""

from .aggregation import (
    AggregationConfig,
    BatchFailure,
    BatchResult,
    aggregate,
    aggregate_batch,
    aggregate_raw,
)
from .channel import (
    EpsilonConstant,
    echannel_weights,
    element_value_items,
    schannel_weights,
    sparsity_items,
    weighted_channel_sums,
)
from .core import (
    ChannelWeightVector,
    DatasetManifest,
    FeatureTensor,
    GlobalDescriptor,
    SpatialWeightMap,
    grid_geometric_center,
)
from .evaluation import (
    DescriptorIndex,
    QueryGroundTruth,
    RankedResult,
    average_precision,
    build_index,
    load_oxford_ground_truth,
    mean_average_precision,
    search,
)
from .io import (
    load_descriptors,
    load_manifest,
    load_tensor,
    save_descriptors,
    save_manifest,
    save_tensor,
)
from .spatial import (
    AlphaFraction,
    GaussianParams,
    adaptive_gaussian,
    default_sigma,
    fixed_gaussian,
    gaussian_map,
    response_map,
    select_center,
)
from .whitening import (
    WhiteningModel,
    apply_whitening,
    fit_whitening,
    load_model,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "AlphaFraction",
    "BatchFailure",
    "BatchResult",
    "ChannelWeightVector",
    "DatasetManifest",
    "DescriptorIndex",
    "EpsilonConstant",
    "FeatureTensor",
    "GaussianParams",
    "GlobalDescriptor",
    "QueryGroundTruth",
    "RankedResult",
    "SpatialWeightMap",
    "WhiteningModel",
    "adaptive_gaussian",
    "aggregate",
    "aggregate_batch",
    "aggregate_raw",
    "apply_whitening",
    "average_precision",
    "build_index",
    "default_sigma",
    "echannel_weights",
    "element_value_items",
    "fit_whitening",
    "fixed_gaussian",
    "gaussian_map",
    "grid_geometric_center",
    "load_descriptors",
    "load_manifest",
    "load_model",
    "load_oxford_ground_truth",
    "load_tensor",
    "mean_average_precision",
    "response_map",
    "save_descriptors",
    "save_manifest",
    "save_model",
    "save_tensor",
    "schannel_weights",
    "search",
    "select_center",
    "sparsity_items",
    "weighted_channel_sums",
]
