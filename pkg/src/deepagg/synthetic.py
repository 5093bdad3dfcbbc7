"""Synthetic retrieval datasets for end-to-end testing without real features.

Each image is a small activation tensor.  Class identity lives in three
signature channels activated inside a localized region of interest with a
fixed per-class amplitude pattern (plus a few percent of per-image jitter),
so images of a class form tight descriptor clusters.  The ``bursty`` variant
adds shared channels that fire at every location with a random per-image
amplitude; their sums dwarf the localized signatures, so plain sum pooling
ranks near-randomly, while spatial weighting plus the log-ratio channel
weights flatten them back out.  The ``separable`` variant keeps only the
signatures and noise and is easy for every weighting combination.

The generator writes tensors, database/query/whitening manifests, and
per-query ground-truth files in the standard good/ok/junk layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DatasetManifest, FeatureTensor
from .io import save_manifest, save_tensor

VARIANTS = ("bursty", "separable")

CHANNELS = 16
HEIGHT = 5
WIDTH = 5
CLASSES = 3
SIGNATURE_PER_CLASS = 3
BURSTY_CHANNELS = range(CLASSES * SIGNATURE_PER_CLASS, CHANNELS)

NOISE_HIGH = 0.01
# Per-class signature amplitudes (one per signature channel) and the fixed
# in-block pattern; the pattern pins which cells carry the top responses.
SIGNATURE_AMPLITUDES = ((2.6, 3.0, 3.4), (3.4, 2.6, 3.0), (3.0, 3.4, 2.6))
SIGNATURE_PATTERN = ((1.25, 1.0), (1.0, 0.75))
SIGNATURE_JITTER = 0.05
BURST_BASE = 3.0
BURST_SCALE_LOW, BURST_SCALE_HIGH = 0.5, 1.5
BURST_CELL_JITTER = 0.1

# 2x2 RoI placed at one of the four grid corners, away from the grid center.
_CORNERS = ((0, 0), (0, WIDTH - 2), (HEIGHT - 2, 0), (HEIGHT - 2, WIDTH - 2))


@dataclass(frozen=True)
class SyntheticDataset:
    """File layout produced by ``generate``."""

    root: Path
    database_manifest: Path
    queries_manifest: Path
    whitening_manifest: Path
    ground_truth_dir: Path


def _signature_channels(label: int) -> range:
    start = label * SIGNATURE_PER_CLASS
    return range(start, start + SIGNATURE_PER_CLASS)


def _sample_tensor(label: int, rng: np.random.Generator, variant: str) -> np.ndarray:
    values = rng.uniform(0.0, NOISE_HIGH, size=(CHANNELS, HEIGHT, WIDTH))

    corner = int(rng.integers(len(_CORNERS)))
    ri, rj = _CORNERS[corner]
    pattern = np.asarray(SIGNATURE_PATTERN)
    for offset, k in enumerate(_signature_channels(label)):
        amplitude = SIGNATURE_AMPLITUDES[label][offset] * rng.uniform(
            1.0 - SIGNATURE_JITTER, 1.0 + SIGNATURE_JITTER
        )
        values[k, ri : ri + 2, rj : rj + 2] += amplitude * pattern

    if variant == "bursty":
        for k in BURSTY_CHANNELS:
            scale = rng.uniform(BURST_SCALE_LOW, BURST_SCALE_HIGH)
            values[k] += BURST_BASE * scale * rng.uniform(
                1.0 - BURST_CELL_JITTER, 1.0 + BURST_CELL_JITTER, size=(HEIGHT, WIDTH)
            )

    return values.astype(np.float32)


def generate(
    out_dir: str | Path,
    variant: str = "bursty",
    seed: int = 7,
    images_per_class: int = 10,
    queries_per_class: int = 2,
) -> SyntheticDataset:
    """Write a complete synthetic dataset under ``out_dir``.

    Queries reuse the tensor of a database image; that source image is listed
    as junk for its query and the remaining same-class images as good, so a
    perfect system ranks all of them above every other class.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if images_per_class < queries_per_class + 2:
        raise ValueError("need at least queries_per_class + 2 images per class")
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    gt_dir = out_dir / "gt"
    tensor_dir.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)

    # Manifest entries are written relative to the manifest's own directory.
    def relative(image_id: str) -> Path:
        return Path("tensors") / f"{image_id}.dft"

    database: list[tuple[str, Path]] = []
    by_class: dict[int, list[str]] = {label: [] for label in range(CLASSES)}
    for label in range(CLASSES):
        for n in range(images_per_class):
            image_id = f"class{label}_img{n:02d}"
            save_tensor(
                FeatureTensor(values=_sample_tensor(label, rng, variant), image_id=image_id),
                tensor_dir / f"{image_id}.dft",
            )
            database.append((image_id, relative(image_id)))
            by_class[label].append(image_id)

    whitening: list[tuple[str, Path]] = []
    for label in range(CLASSES):
        for n in range(images_per_class):
            image_id = f"whiten{label}_img{n:02d}"
            save_tensor(
                FeatureTensor(values=_sample_tensor(label, rng, variant), image_id=image_id),
                tensor_dir / f"{image_id}.dft",
            )
            whitening.append((image_id, relative(image_id)))

    queries: list[tuple[str, Path]] = []
    for label in range(CLASSES):
        for q in range(queries_per_class):
            source_id = by_class[label][q]
            query_id = f"query{label}_{q}"
            (tensor_dir / f"{query_id}.dft").write_bytes(
                (tensor_dir / f"{source_id}.dft").read_bytes()
            )
            queries.append((query_id, relative(query_id)))

            positives = [i for i in by_class[label] if i != source_id]
            (gt_dir / f"{query_id}_query.txt").write_text(
                f"{source_id} 0.0 0.0 {float(WIDTH)} {float(HEIGHT)}\n", encoding="utf-8"
            )
            (gt_dir / f"{query_id}_good.txt").write_text(
                "".join(f"{i}\n" for i in positives), encoding="utf-8"
            )
            (gt_dir / f"{query_id}_ok.txt").write_text("", encoding="utf-8")
            (gt_dir / f"{query_id}_junk.txt").write_text(f"{source_id}\n", encoding="utf-8")

    database_manifest = out_dir / "database.tsv"
    queries_manifest = out_dir / "queries.tsv"
    whitening_manifest = out_dir / "whitening.tsv"
    save_manifest(DatasetManifest(entries=tuple(database), role="database"), database_manifest)
    save_manifest(DatasetManifest(entries=tuple(queries), role="query"), queries_manifest)
    save_manifest(
        DatasetManifest(entries=tuple(whitening), role="whitening"), whitening_manifest
    )
    return SyntheticDataset(
        root=out_dir,
        database_manifest=database_manifest,
        queries_manifest=queries_manifest,
        whitening_manifest=whitening_manifest,
        ground_truth_dir=gt_dir,
    )
