"""End-to-end descriptor pipeline: spatial weighting, channel sums, channel
weighting, elementwise product, normalize, optional whiten, normalize again.

Spatial and channel weighting are independent and form an ablation matrix;
``none`` on either axis substitutes all-ones weights (plain sum pooling on
the spatial side).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import (
    EpsilonConstant,
    echannel_weights,
    element_value_items,
    schannel_weights,
    sparsity_items,
    weighted_channel_sums,
)
from .core import (
    RAW_STAGE,
    ChannelWeightVector,
    DatasetManifest,
    FeatureTensor,
    GlobalDescriptor,
    SpatialWeightMap,
)
from .errors import DeepAggError, DegenerateDescriptor, ModelDimMismatch
from .io import load_tensor
from .spatial import AlphaFraction, adaptive_gaussian, fixed_gaussian
from .whitening import WhiteningModel, apply_whitening

SPATIAL_MODES = ("none", "aGaussian", "nGaussian")
CHANNEL_MODES = ("none", "eChannel", "sChannel")


def thread_count() -> int:
    """Parallelism cap from DEEPAGG_THREADS (default 1, sequential)."""
    raw = os.environ.get("DEEPAGG_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class AggregationConfig:
    """Pipeline settings: weighting modes, their parameters, and the target dim.

    ``target_dim`` only constrains the whitened stage; ``None`` accepts
    whatever output dimensionality the supplied model has.
    """

    alpha: AlphaFraction = AlphaFraction(0.1)
    eps: EpsilonConstant = EpsilonConstant(1e-6)
    spatial_mode: str = "aGaussian"
    channel_mode: str = "eChannel"
    sigma_rule: str = "edge"
    target_dim: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.alpha, AlphaFraction):
            object.__setattr__(self, "alpha", AlphaFraction(float(self.alpha)))
        if not isinstance(self.eps, EpsilonConstant):
            object.__setattr__(self, "eps", EpsilonConstant(float(self.eps)))
        if self.spatial_mode not in SPATIAL_MODES:
            raise ValueError(
                f"spatial_mode must be one of {SPATIAL_MODES}, got {self.spatial_mode!r}"
            )
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError(
                f"channel_mode must be one of {CHANNEL_MODES}, got {self.channel_mode!r}"
            )
        if self.target_dim is not None and self.target_dim < 1:
            raise ValueError(f"target_dim must be positive, got {self.target_dim}")


def spatial_weights(tensor: FeatureTensor, cfg: AggregationConfig) -> SpatialWeightMap:
    """Weight map for the configured spatial mode (all ones for ``none``)."""
    if cfg.spatial_mode == "none":
        return SpatialWeightMap(values=np.ones((tensor.height, tensor.width)))
    if cfg.spatial_mode == "nGaussian":
        return fixed_gaussian(tensor.height, tensor.width, sigma_rule=cfg.sigma_rule)
    return adaptive_gaussian(tensor, cfg.alpha, sigma_rule=cfg.sigma_rule)


def channel_weights(
    tensor: FeatureTensor, omega: ChannelWeightVector, cfg: AggregationConfig
) -> ChannelWeightVector:
    """Weight vector for the configured channel mode (all ones for ``none``)."""
    if cfg.channel_mode == "none":
        return ChannelWeightVector(values=np.ones(tensor.channels))
    if cfg.channel_mode == "sChannel":
        return schannel_weights(sparsity_items(tensor), cfg.eps)
    items = element_value_items(omega, tensor.height, tensor.width)
    return echannel_weights(items, cfg.eps)


def aggregate_raw(tensor: FeatureTensor, cfg: AggregationConfig) -> GlobalDescriptor:
    """Steps 1-5 of the pipeline: weight, sum, re-weight, multiply, normalize."""
    s = spatial_weights(tensor, cfg)
    omega = weighted_channel_sums(tensor, s)
    b = channel_weights(tensor, omega, cfg)
    beta = b.values * omega.values
    norm = float(np.linalg.norm(beta))
    if norm == 0.0:
        raise DegenerateDescriptor(
            f"image {tensor.image_id!r} aggregates to the zero vector"
        )
    return GlobalDescriptor(values=beta / norm, image_id=tensor.image_id, stage=RAW_STAGE)


def aggregate(
    tensor: FeatureTensor, cfg: AggregationConfig, model: WhiteningModel
) -> GlobalDescriptor:
    """Full pipeline including whitening and the final re-normalization."""
    if cfg.target_dim is not None and model.output_dim != cfg.target_dim:
        raise ModelDimMismatch(
            f"model outputs dim {model.output_dim}, config requires {cfg.target_dim}"
        )
    if model.input_dim != tensor.channels:
        raise ModelDimMismatch(
            f"model input dim {model.input_dim} does not match tensor channels "
            f"{tensor.channels}"
        )
    return apply_whitening(model, aggregate_raw(tensor, cfg))


@dataclass(frozen=True)
class BatchFailure:
    image_id: str
    error: str


@dataclass(frozen=True)
class BatchResult:
    descriptors: tuple[GlobalDescriptor, ...]
    failures: tuple[BatchFailure, ...]


def aggregate_batch(
    manifest: DatasetManifest,
    cfg: AggregationConfig,
    model: WhiteningModel | None = None,
) -> BatchResult:
    """Aggregate every manifest entry, in manifest order.

    Per-image data errors (unreadable tensors, degenerate descriptors) are
    collected instead of aborting the batch.  Images may be processed
    concurrently (DEEPAGG_THREADS); outputs are emitted in manifest order
    regardless.
    """

    def one(entry: tuple[str, object]) -> GlobalDescriptor | BatchFailure:
        image_id, path = entry
        try:
            tensor = load_tensor(path, image_id=image_id)
            if model is None:
                return aggregate_raw(tensor, cfg)
            return aggregate(tensor, cfg, model)
        except DeepAggError as exc:
            return BatchFailure(image_id=image_id, error=str(exc))

    workers = thread_count()
    if workers > 1 and len(manifest) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, manifest.entries))
    else:
        results = [one(entry) for entry in manifest.entries]

    descriptors = tuple(r for r in results if isinstance(r, GlobalDescriptor))
    failures = tuple(r for r in results if isinstance(r, BatchFailure))
    return BatchResult(descriptors=descriptors, failures=failures)
