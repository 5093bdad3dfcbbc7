"""Channel weighting: spatially weighted sums, element-value items, and the
log-ratio weights that suppress bursty channels.

The element-value weights assign each channel

    B_k = log((K*eps + sum_c b_c) / (eps + b_k)),   b_k = (Omega_k / (W*H))^2,

so channels whose weighted feature-map sums are large get small weights.
The sparsity baseline applies the same log-ratio form to the fraction of
nonzero cells per channel instead of b.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ChannelWeightVector, FeatureTensor, SpatialWeightMap
from .errors import DimensionMismatch, IoFailure, MalformedFile


@dataclass(frozen=True)
class EpsilonConstant:
    """Small positive stabilizer added inside the log-ratio weights."""

    value: float = 1e-6

    def __post_init__(self) -> None:
        if not (math.isfinite(self.value) and self.value > 0.0):
            raise ValueError(f"epsilon must be positive, got {self.value!r}")


def _as_eps(eps: EpsilonConstant | float) -> EpsilonConstant:
    return eps if isinstance(eps, EpsilonConstant) else EpsilonConstant(float(eps))


def weighted_channel_sums(
    tensor: FeatureTensor, weights: SpatialWeightMap
) -> ChannelWeightVector:
    """Omega_k = sum_{i,j} X[k,i,j] * S[i,j], accumulated in float64."""
    if (tensor.height, tensor.width) != (weights.height, weights.width):
        raise DimensionMismatch(
            f"tensor grid {tensor.height}x{tensor.width} does not match "
            f"weight map {weights.height}x{weights.width}"
        )
    sums = np.einsum(
        "khw,hw->k", tensor.values.astype(np.float64), weights.values, optimize=False
    )
    return ChannelWeightVector(values=sums)


def element_value_items(
    omega: ChannelWeightVector, height: int, width: int
) -> ChannelWeightVector:
    """b_k = (Omega_k / (W*H))^2; nonnegative by construction."""
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {height}x{width}")
    scaled = omega.values / float(width * height)
    return ChannelWeightVector(values=scaled * scaled)


def _log_ratio_weights(items: np.ndarray, eps: float) -> np.ndarray:
    k = items.shape[0]
    numerator = k * eps + items.sum(dtype=np.float64)
    return np.log(numerator / (eps + items))


def echannel_weights(
    items: ChannelWeightVector, eps: EpsilonConstant | float = EpsilonConstant()
) -> ChannelWeightVector:
    """Element-value channel weights B_k = log((K*eps + sum b) / (eps + b_k)).

    Natural logarithm.  Constant item vectors map to log(K) for every channel;
    larger items always get strictly smaller weights.
    """
    eps = _as_eps(eps)
    if np.any(items.values < 0.0):
        raise ValueError("element-value items must be nonnegative")
    return ChannelWeightVector(values=_log_ratio_weights(items.values, eps.value))


def sparsity_items(tensor: FeatureTensor) -> ChannelWeightVector:
    """Fraction of exactly-nonzero cells per channel, in [0, 1].

    Activations following a rectifier are exactly zero where clamped, so the
    zero test is exact equality.
    """
    k = tensor.channels
    nonzero = np.count_nonzero(tensor.values.reshape(k, -1), axis=1)
    return ChannelWeightVector(values=nonzero / float(tensor.height * tensor.width))


def schannel_weights(
    items: ChannelWeightVector, eps: EpsilonConstant | float = EpsilonConstant()
) -> ChannelWeightVector:
    """Sparsity-baseline channel weights: the log-ratio form applied to the
    nonzero fractions instead of the element-value items."""
    eps = _as_eps(eps)
    if np.any(items.values < 0.0):
        raise ValueError("sparsity items must be nonnegative")
    return ChannelWeightVector(values=_log_ratio_weights(items.values, eps.value))


def save_channel_vector_csv(vector: ChannelWeightVector, path: str | Path) -> None:
    """Export a channel vector as CSV, one value per line."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for value in vector.values:
                writer.writerow([repr(float(value))])
    except OSError as exc:
        raise IoFailure(f"cannot write channel vector to {path}: {exc}") from exc


def load_channel_vector_csv(path: str | Path) -> ChannelWeightVector:
    path = Path(path)
    values: list[float] = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                values.append(float(row[0]))
    except OSError as exc:
        raise IoFailure(f"cannot read channel vector from {path}: {exc}") from exc
    except ValueError as exc:
        raise MalformedFile(f"{path}: non-numeric channel vector entry ({exc})") from exc
    if not values:
        raise MalformedFile(f"{path}: empty channel vector file")
    return ChannelWeightVector(values=np.asarray(values, dtype=np.float64))
