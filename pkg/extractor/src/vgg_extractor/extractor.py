"""Dump VGG16 pool5 activation tensors for retrieval datasets.

Produces one tensor file per image (NPY float32 or DFT1, both with axes
(channels, height, width)) plus tab-separated manifests the aggregation
tooling consumes directly.  Queries are cropped before the forward pass;
Holidays images are rotated upright from their EXIF orientation metadata.
Per-image failures are logged and skipped so a bad file never kills a run.
"""

from __future__ import annotations

import logging
import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageOps
from torchvision import models

logger = logging.getLogger("vgg_extractor")

POOL5_CHANNELS = 512
POOL5_STRIDE = 32
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

DATASETS = ("oxford", "paris", "holidays", "plain")


@dataclass(frozen=True)
class ImageTask:
    """One image to process: optional crop box (pixels) and upright flag."""

    image_id: str
    path: Path
    crop: tuple[float, float, float, float] | None = None
    upright: bool = False


@dataclass
class ExtractionJob:
    database: list[ImageTask]
    queries: list[ImageTask] = field(default_factory=list)
    ground_truth_dir: Path | None = None


@dataclass
class ExtractionSummary:
    written: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)


def load_backbone(weights: str | Path = "pretrained", device: str = "cpu"):
    """VGG16 feature stack up to and including pool5, in eval mode.

    ``weights`` is ``pretrained`` (torchvision download), ``random``
    (untrained; shapes only), or a path to a saved state dict.
    """
    if weights == "pretrained":
        model = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
        backbone = model.features
    elif weights == "random":
        backbone = models.vgg16(weights=None).features
    else:
        state = torch.load(weights, map_location="cpu", weights_only=True)
        if any(key.startswith("features.") for key in state):
            model = models.vgg16(weights=None)
            model.load_state_dict(state)
            backbone = model.features
        else:
            backbone = models.vgg16(weights=None).features
            backbone.load_state_dict(state)
    backbone.eval()
    backbone.to(device)
    for parameter in backbone.parameters():
        parameter.requires_grad_(False)
    return backbone


def prepare_image(
    path: Path,
    crop: tuple[float, float, float, float] | None = None,
    upright: bool = False,
    max_side: int = 1024,
) -> Image.Image:
    """Load, optionally rotate upright, crop, and cap the longest side."""
    image = Image.open(path)
    if upright:
        image = ImageOps.exif_transpose(image)
    image = image.convert("RGB")
    if crop is not None:
        x1, y1, x2, y2 = crop
        left = max(0, int(np.floor(x1)))
        upper = max(0, int(np.floor(y1)))
        right = min(image.width, int(np.ceil(x2)))
        lower = min(image.height, int(np.ceil(y2)))
        if right - left < 1 or lower - upper < 1:
            raise ValueError(f"degenerate crop {crop} for {path}")
        image = image.crop((left, upper, right, lower))
    if max(image.size) > max_side:
        scale = max_side / max(image.size)
        new_size = (max(1, round(image.width * scale)), max(1, round(image.height * scale)))
        image = image.resize(new_size, Image.LANCZOS)
    return image


def pool5_tensor(backbone, image: Image.Image, device: str = "cpu") -> np.ndarray:
    """Forward one image; returns float32 activations (512, H/32, W/32)."""
    if image.height < POOL5_STRIDE or image.width < POOL5_STRIDE:
        raise ValueError(
            f"image {image.width}x{image.height} smaller than the pool5 stride"
        )
    array = np.asarray(image, dtype=np.float32) / 255.0
    array = (array - np.asarray(IMAGENET_MEAN, dtype=np.float32)) / np.asarray(
        IMAGENET_STD, dtype=np.float32
    )
    batch = torch.from_numpy(array.transpose(2, 0, 1)).unsqueeze(0).to(device)
    with torch.no_grad():
        out = backbone(batch)
    return out.squeeze(0).cpu().numpy().astype(np.float32)


def write_dft1(values: np.ndarray, path: Path) -> None:
    """DFT1 layout: magic, u32 K/H/W little-endian, float32 payload."""
    k, h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"DFT1")
        fh.write(struct.pack("<III", k, h, w))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def _discover_images(images_dir: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for path in sorted(images_dir.rglob("*")):
        if path.suffix.lower() in IMAGE_EXTENSIONS and path.is_file():
            if path.stem not in found:
                found[path.stem] = path
    return found


def _parse_query_files(gt_dir: Path, available: dict[str, Path]) -> list[ImageTask]:
    tasks: list[ImageTask] = []
    for query_file in sorted(gt_dir.glob("*_query.txt")):
        query_id = query_file.name[: -len("_query.txt")]
        tokens = query_file.read_text(encoding="utf-8").split()
        if len(tokens) != 5:
            logger.warning("skipping malformed query file %s", query_file.name)
            continue
        name = tokens[0]
        if name.startswith("oxc1_"):
            name = name[len("oxc1_") :]
        path = available.get(name)
        if path is None:
            logger.warning("query %s: image %s not found", query_id, name)
            continue
        crop = tuple(float(v) for v in tokens[1:])
        tasks.append(ImageTask(image_id=query_id, path=path, crop=crop))
    return tasks


def build_job(dataset: str, images_dir: Path, gt_dir: Path | None = None) -> ExtractionJob:
    """Assemble the task list for a dataset layout.

    ``oxford``/``paris``: every image is database; cropped queries come from
    the ground-truth ``*_query.txt`` files.  ``holidays``: every image is
    database with EXIF upright rotation; images whose stem ends in ``00`` are
    the dataset's queries.  ``plain``: every image, nothing else.
    """
    if dataset not in DATASETS:
        raise ValueError(f"dataset must be one of {DATASETS}, got {dataset!r}")
    available = _discover_images(images_dir)
    if not available:
        raise ValueError(f"no images found under {images_dir}")

    upright = dataset == "holidays"
    database = [
        ImageTask(image_id=stem, path=path, upright=upright)
        for stem, path in available.items()
    ]

    queries: list[ImageTask] = []
    if dataset in ("oxford", "paris"):
        if gt_dir is None:
            raise ValueError(f"--gt is required for the {dataset} layout")
        queries = _parse_query_files(gt_dir, available)
    elif dataset == "holidays":
        queries = [
            ImageTask(image_id=f"{stem}_query", path=path, upright=True)
            for stem, path in available.items()
            if stem.endswith("00")
        ]
    return ExtractionJob(database=database, queries=queries, ground_truth_dir=gt_dir)


def _save_tensor(values: np.ndarray, path: Path, fmt: str) -> None:
    if fmt == "dft":
        write_dft1(values, path)
    else:
        np.save(path, values)


def _run_tasks(
    tasks: list[ImageTask],
    backbone,
    tensor_dir: Path,
    fmt: str,
    max_side: int,
    device: str,
    summary: ExtractionSummary,
    progress_every: int = 100,
) -> list[tuple[str, str]]:
    suffix = ".dft" if fmt == "dft" else ".npy"
    rows: list[tuple[str, str]] = []
    for count, task in enumerate(tasks, start=1):
        try:
            image = prepare_image(task.path, crop=task.crop, upright=task.upright,
                                  max_side=max_side)
            values = pool5_tensor(backbone, image, device=device)
        except Exception as exc:  # noqa: BLE001 - per-image failures must not kill the job
            logger.warning("skipping %s: %s", task.image_id, exc)
            summary.skipped.append((task.image_id, str(exc)))
            continue
        out_path = tensor_dir / f"{task.image_id}{suffix}"
        _save_tensor(values, out_path, fmt)
        rows.append((task.image_id, f"tensors/{out_path.name}"))
        summary.written += 1
        if count % progress_every == 0:
            logger.info("processed %d/%d images", count, len(tasks))
    return rows


def _write_manifest(rows: list[tuple[str, str]], path: Path) -> None:
    path.write_text("".join(f"{i}\t{p}\n" for i, p in rows), encoding="utf-8")


def extract(
    job: ExtractionJob,
    backbone,
    out_dir: Path,
    fmt: str = "npy",
    max_side: int = 1024,
    device: str = "cpu",
) -> ExtractionSummary:
    """Run a job: tensors under ``out_dir/tensors``, manifests at the top.

    Writes ``manifest.tsv`` for the database images and ``queries.tsv`` when
    the job has queries; ground-truth files, when supplied, are copied into
    ``out_dir/gt`` so the output directory is self-contained for evaluation.
    """
    if fmt not in ("npy", "dft"):
        raise ValueError(f"format must be 'npy' or 'dft', got {fmt!r}")
    out_dir = Path(out_dir)
    tensor_dir = out_dir / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    summary = ExtractionSummary()
    database_rows = _run_tasks(job.database, backbone, tensor_dir, fmt, max_side,
                               device, summary)
    _write_manifest(database_rows, out_dir / "manifest.tsv")

    if job.queries:
        query_rows = _run_tasks(job.queries, backbone, tensor_dir, fmt, max_side,
                                device, summary)
        _write_manifest(query_rows, out_dir / "queries.tsv")

    if job.ground_truth_dir is not None:
        gt_out = out_dir / "gt"
        gt_out.mkdir(exist_ok=True)
        for pattern in ("*_query.txt", "*_good.txt", "*_ok.txt", "*_junk.txt"):
            for source in sorted(job.ground_truth_dir.glob(pattern)):
                shutil.copy(source, gt_out / source.name)

    logger.info("wrote %d tensors, skipped %d", summary.written, len(summary.skipped))
    return summary
