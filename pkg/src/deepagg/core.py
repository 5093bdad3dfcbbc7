"""Shared data model: feature tensors, weight maps, descriptors, manifests.

Coordinate convention used across the package: grid cell (i, j) of an H x W
map sits at real position (i, j) with 1-based indices, i down the rows
(1..H) and j across the columns (1..W).  Storage is 0-based numpy arrays;
every coordinate-returning operation reports 1-based grid coordinates.

Tensor values are held in float32 (matching the on-disk layout); reductions
over them accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, DuplicateId, MissingFile, NonFiniteValue

RAW_STAGE = "raw-normalized"
WHITENED_STAGE = "whitened-normalized"

MANIFEST_ROLES = ("database", "query", "whitening")


def grid_geometric_center(height: int, width: int) -> tuple[float, float]:
    """Geometric center of an H x W grid in 1-based coordinates.

    The center of the grid 1..H x 1..W is ((H+1)/2, (W+1)/2); this helper is
    the single source of that fact for center selection, the fixed-center
    Gaussian, and the sigma rule.
    """
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {height}x{width}")
    return ((height + 1) / 2.0, (width + 1) / 2.0)


def _require_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{what} contains NaN or infinite values")


@dataclass(frozen=True)
class FeatureTensor:
    """K x H x W activation tensor for one image.

    ``values`` is a read-only float32 array indexed [k, i-1, j-1] for channel
    k and grid cell (i, j).
    """

    values: np.ndarray
    image_id: str = ""

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 3:
            raise DimensionMismatch(
                f"feature tensor must be 3-D (K, H, W), got shape {arr.shape}"
            )
        if min(arr.shape) < 1:
            raise DimensionMismatch(f"tensor dimensions must be >= 1, got {arr.shape}")
        _require_finite(arr, f"tensor {self.image_id!r}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SpatialWeightMap:
    """H x W real weight matrix (spatial weights or aggregated responses)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"weight map must be 2-D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionMismatch(f"map dimensions must be >= 1, got {arr.shape}")
        _require_finite(arr, "spatial weight map")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ChannelWeightVector:
    """Length-K real vector of per-channel quantities (sums, items, weights)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise DimensionMismatch(f"channel vector must be 1-D, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise DimensionMismatch("channel vector must have at least one entry")
        _require_finite(arr, "channel weight vector")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class GlobalDescriptor:
    """Unit-norm global image vector, either raw-normalized or whitened."""

    values: np.ndarray
    image_id: str = ""
    stage: str = RAW_STAGE

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise DimensionMismatch(f"descriptor must be 1-D, got shape {arr.shape}")
        _require_finite(arr, f"descriptor {self.image_id!r}")
        if self.stage not in (RAW_STAGE, WHITENED_STAGE):
            raise ValueError(f"unknown descriptor stage {self.stage!r}")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(
                f"descriptor {self.image_id!r} must be unit-norm, got norm {norm!r}"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered (image_id, tensor path) entries, optionally tagged with a role."""

    entries: tuple[tuple[str, Path], ...]
    role: str | None = None

    def __post_init__(self) -> None:
        if self.role is not None and self.role not in MANIFEST_ROLES:
            raise ValueError(f"manifest role must be one of {MANIFEST_ROLES}")
        seen: set[str] = set()
        for image_id, _ in self.entries:
            if image_id in seen:
                raise DuplicateId(f"duplicate image id {image_id!r} in manifest")
            seen.add(image_id)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [image_id for image_id, _ in self.entries]

    def verify_files(self) -> None:
        for image_id, path in self.entries:
            if not path.is_file():
                raise MissingFile(f"manifest entry {image_id!r} points at missing file {path}")
