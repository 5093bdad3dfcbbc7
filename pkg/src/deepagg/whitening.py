"""PCA whitening of raw-normalized descriptors with dimensionality reduction.

Parameters are fit on a dataset disjoint from the one being searched: the
sample mean is subtracted, the covariance is eigendecomposed with a symmetric
solver, and the top output_dim eigenvectors are kept, each scaled by
1/sqrt(eigenvalue + eps_w).  Applying the model projects, then re-normalizes.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RAW_STAGE, WHITENED_STAGE, GlobalDescriptor
from .errors import (
    DegenerateDescriptor,
    DimensionMismatch,
    InsufficientSamples,
    IoFailure,
    MalformedFile,
    MissingFile,
    ModelDimMismatch,
    RankDeficientWarning,
)

WHM1_MAGIC = b"WHM1"
WHM1_VERSION = 1


@dataclass(frozen=True)
class WhiteningModel:
    """Mean vector plus scaled projection onto the top principal directions.

    ``projection`` rows are eigenvectors divided by sqrt(eigenvalue + eps_w);
    multiplying a row by that factor recovers the orthonormal direction.
    """

    mean: np.ndarray
    projection: np.ndarray
    eigenvalues: np.ndarray
    eps_w: float

    def __post_init__(self) -> None:
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        projection = np.ascontiguousarray(self.projection, dtype=np.float64)
        eigenvalues = np.ascontiguousarray(self.eigenvalues, dtype=np.float64)
        if mean.ndim != 1 or projection.ndim != 2 or eigenvalues.ndim != 1:
            raise DimensionMismatch("whitening model fields have wrong ranks")
        k_prime, k = projection.shape
        if mean.shape[0] != k or eigenvalues.shape[0] != k_prime or k_prime > k:
            raise DimensionMismatch(
                f"inconsistent whitening model shapes: mean {mean.shape}, "
                f"projection {projection.shape}, eigenvalues {eigenvalues.shape}"
            )
        for arr, name in ((mean, "mean"), (projection, "projection"), (eigenvalues, "eigenvalues")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"whitening model {name} contains non-finite values")
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", projection)
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @property
    def input_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def output_dim(self) -> int:
        return self.projection.shape[0]


def _fix_eigenvector_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its first significantly-nonzero entry is positive."""
    out = vectors.copy()
    for col in range(out.shape[1]):
        v = out[:, col]
        threshold = 1e-12 * max(float(np.abs(v).max()), 1e-300)
        nonzero = np.nonzero(np.abs(v) > threshold)[0]
        if nonzero.size and v[nonzero[0]] < 0.0:
            out[:, col] = -v
    return out


def fit_whitening(
    descriptors: list[GlobalDescriptor],
    k_prime: int,
    eps_w: float = 1e-8,
    whiten_scale: bool = True,
) -> WhiteningModel:
    """Fit whitening parameters on raw-normalized descriptors.

    ``whiten_scale=False`` keeps plain PCA rows (no inverse-sqrt eigenvalue
    scaling).  Directions whose eigenvalue falls below ``eps_w`` are retained
    but dominated by the regularizer; a RankDeficientWarning is emitted.
    """
    if len(descriptors) < 2:
        raise InsufficientSamples(
            f"need at least 2 descriptors to fit whitening, got {len(descriptors)}"
        )
    if eps_w <= 0.0:
        raise ValueError(f"eps_w must be positive, got {eps_w!r}")
    dims = {d.dim for d in descriptors}
    if len(dims) != 1:
        raise DimensionMismatch(f"training descriptors have mixed dims {sorted(dims)}")
    k = dims.pop()
    if not (1 <= k_prime <= k):
        raise ValueError(f"k_prime must lie in [1, {k}], got {k_prime}")
    for d in descriptors:
        if d.stage != RAW_STAGE:
            raise ValueError(
                f"whitening must be fit on raw-normalized descriptors, got {d.stage!r}"
            )

    samples = np.stack([d.values for d in descriptors]).astype(np.float64)
    mean = samples.mean(axis=0)
    centered = samples - mean
    covariance = centered.T @ centered / (samples.shape[0] - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues, kind="stable")[::-1][:k_prime]
    top_values = np.maximum(eigenvalues[order], 0.0)
    top_vectors = _fix_eigenvector_signs(eigenvectors[:, order])

    if np.any(top_values < eps_w):
        warnings.warn(
            f"{int(np.sum(top_values < eps_w))} retained eigenvalue(s) below "
            f"eps_w={eps_w!r}; those directions are dominated by the regularizer",
            RankDeficientWarning,
            stacklevel=2,
        )

    scales = 1.0 / np.sqrt(top_values + eps_w) if whiten_scale else np.ones(k_prime)
    projection = scales[:, None] * top_vectors.T
    return WhiteningModel(
        mean=mean, projection=projection, eigenvalues=top_values, eps_w=eps_w
    )


def apply_whitening(model: WhiteningModel, descriptor: GlobalDescriptor) -> GlobalDescriptor:
    """Project a raw-normalized descriptor and re-normalize to unit length."""
    if descriptor.stage != RAW_STAGE:
        raise ValueError(
            f"whitening applies to raw-normalized descriptors, got {descriptor.stage!r}"
        )
    if descriptor.dim != model.input_dim:
        raise ModelDimMismatch(
            f"descriptor dim {descriptor.dim} does not match model input dim "
            f"{model.input_dim}"
        )
    projected = model.projection @ (descriptor.values - model.mean)
    norm = float(np.linalg.norm(projected))
    if norm == 0.0:
        raise DegenerateDescriptor(
            f"descriptor {descriptor.image_id!r} projects to zero under whitening"
        )
    return GlobalDescriptor(
        values=projected / norm, image_id=descriptor.image_id, stage=WHITENED_STAGE
    )


def save_model(model: WhiteningModel, path: str | Path) -> None:
    """Write a model as a WHM1 file; float64 fields round-trip bit-exactly."""
    k_prime, k = model.projection.shape
    try:
        with open(path, "wb") as fh:
            fh.write(WHM1_MAGIC)
            fh.write(struct.pack("<IIId", WHM1_VERSION, k, k_prime, model.eps_w))
            fh.write(np.ascontiguousarray(model.mean, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.eigenvalues, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.projection, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write whitening model to {path}: {exc}") from exc


def load_model(path: str | Path) -> WhiteningModel:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"whitening model does not exist: {path}")
    data = path.read_bytes()
    header = 4 + struct.calcsize("<IIId")
    if len(data) < header:
        raise MalformedFile(f"{path}: truncated WHM1 header")
    if data[:4] != WHM1_MAGIC:
        raise MalformedFile(f"{path}: bad magic {data[:4]!r}")
    version, k, k_prime, eps_w = struct.unpack_from("<IIId", data, 4)
    if version != WHM1_VERSION:
        raise MalformedFile(f"{path}: unsupported WHM1 version {version}")
    offset = header
    expected = offset + 8 * (k + k_prime + k_prime * k)
    if len(data) != expected:
        raise MalformedFile(
            f"{path}: expected {expected} bytes for K={k}, K'={k_prime}, got {len(data)}"
        )
    mean = np.frombuffer(data, dtype="<f8", count=k, offset=offset)
    offset += 8 * k
    eigenvalues = np.frombuffer(data, dtype="<f8", count=k_prime, offset=offset)
    offset += 8 * k_prime
    projection = np.frombuffer(data, dtype="<f8", count=k_prime * k, offset=offset)
    return WhiteningModel(
        mean=mean,
        projection=projection.reshape(k_prime, k),
        eigenvalues=eigenvalues,
        eps_w=eps_w,
    )
