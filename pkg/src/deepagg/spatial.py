"""Spatial weighting: aggregated response maps and the adaptive Gaussian filter.

The response map sums the tensor over channels per cell.  The Gaussian
weight matrix places a 2-D isotropic Gaussian density at a center chosen as
the centroid of the top-fraction largest responses; with the full fraction
selected this degenerates to the fixed grid-center Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FeatureTensor, SpatialWeightMap, grid_geometric_center

SIGMA_RULES = ("edge", "corner")


@dataclass(frozen=True)
class AlphaFraction:
    """Fraction of grid cells, by largest response, that define the center."""

    value: float

    def __post_init__(self) -> None:
        if not (0.0 < self.value <= 1.0) or not math.isfinite(self.value):
            raise ValueError(f"alpha must lie in (0, 1], got {self.value!r}")


@dataclass(frozen=True)
class GaussianParams:
    """Center (1-based grid coordinates) and standard deviation of the weight map."""

    center_i: float
    center_j: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if not (math.isfinite(self.center_i) and math.isfinite(self.center_j)):
            raise ValueError("Gaussian center must be finite")


def _as_alpha(alpha: AlphaFraction | float) -> AlphaFraction:
    return alpha if isinstance(alpha, AlphaFraction) else AlphaFraction(float(alpha))


def response_map(tensor: FeatureTensor) -> SpatialWeightMap:
    """Per-cell sum of all channels, accumulated in float64."""
    values = tensor.values.astype(np.float64).sum(axis=0)
    return SpatialWeightMap(values=values)


def top_cell_count(alpha: AlphaFraction | float, height: int, width: int) -> int:
    """Number of cells covered by the fraction: max(1, round(alpha*H*W)).

    Rounding is half-away-from-zero so e.g. 2.5 cells select 3.
    """
    alpha = _as_alpha(alpha)
    return max(1, int(math.floor(alpha.value * height * width + 0.5)))


def select_center(
    s_prime: SpatialWeightMap, alpha: AlphaFraction | float
) -> tuple[float, float]:
    """Centroid (1-based coordinates) of the top-fraction largest response cells.

    Cells are ranked by value descending with ties broken by ascending
    row-major index, which makes constant maps deterministic.  Selecting every
    cell returns the grid geometric center exactly.
    """
    h, w = s_prime.height, s_prime.width
    n = top_cell_count(alpha, h, w)
    if n >= h * w:
        return grid_geometric_center(h, w)
    flat = s_prime.values.ravel()
    order = np.argsort(-flat, kind="stable")[:n]
    rows = order // w + 1
    cols = order % w + 1
    return (float(rows.mean(dtype=np.float64)), float(cols.mean(dtype=np.float64)))


def default_sigma(height: int, width: int, rule: str = "edge") -> float:
    """Standard deviation from the grid geometry.

    ``edge``: half the distance from the grid center to the farthest boundary
    edge, i.e. max(H, W)/4.  ``corner``: half the distance to the farthest
    corner, sqrt((H/2)^2 + (W/2)^2)/2.  A 1x1 grid has no usable extent and
    falls back to 0.5 so the Gaussian stays defined.
    """
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {height}x{width}")
    if rule not in SIGMA_RULES:
        raise ValueError(f"sigma rule must be one of {SIGMA_RULES}, got {rule!r}")
    if rule == "corner":
        return math.sqrt((height / 2.0) ** 2 + (width / 2.0) ** 2) / 2.0
    if height == 1 and width == 1:
        return 0.5
    return max(height, width) / 4.0


def gaussian_map(height: int, width: int, params: GaussianParams) -> SpatialWeightMap:
    """2-D Gaussian density evaluated at every grid cell.

    S[i, j] = exp(-((i - i0)^2 + (j - j0)^2) / (2 sigma^2)) / (2 pi sigma^2),
    strictly positive, maximal at the cell(s) nearest the center.  The map is
    deliberately not renormalized over the grid; the constant prefactor
    cancels under the L2 normalization applied downstream.
    """
    if not (1.0 <= params.center_i <= height and 1.0 <= params.center_j <= width):
        raise ValueError(
            f"center {params.center_i, params.center_j} outside {height}x{width} grid"
        )
    i = np.arange(1, height + 1, dtype=np.float64)
    j = np.arange(1, width + 1, dtype=np.float64)
    d2 = (i - params.center_i)[:, None] ** 2 + (j - params.center_j)[None, :] ** 2
    sigma2 = params.sigma * params.sigma
    values = np.exp(-d2 / (2.0 * sigma2)) / (2.0 * math.pi * sigma2)
    return SpatialWeightMap(values=values)


def adaptive_gaussian(
    tensor: FeatureTensor,
    alpha: AlphaFraction | float,
    sigma_rule: str = "edge",
) -> SpatialWeightMap:
    """Gaussian weight map centered on the top-response centroid of the tensor."""
    h, w = tensor.height, tensor.width
    center_i, center_j = select_center(response_map(tensor), alpha)
    params = GaussianParams(
        center_i=center_i,
        center_j=center_j,
        sigma=default_sigma(h, w, rule=sigma_rule),
    )
    return gaussian_map(h, w, params)


def fixed_gaussian(height: int, width: int, sigma_rule: str = "edge") -> SpatialWeightMap:
    """Gaussian weight map fixed at the grid geometric center.

    Identical, bit for bit, to the adaptive map with the full fraction
    selected.
    """
    center_i, center_j = grid_geometric_center(height, width)
    params = GaussianParams(
        center_i=center_i,
        center_j=center_j,
        sigma=default_sigma(height, width, rule=sigma_rule),
    )
    return gaussian_map(height, width, params)
