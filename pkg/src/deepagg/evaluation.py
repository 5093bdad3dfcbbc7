"""Cosine-similarity retrieval and mean average precision under the
good/ok/junk protocol.

Descriptors are unit-norm, so ranking by dot product is ranking by cosine.
Junk images are removed from a ranking before precision is accumulated;
positives are the union of the good and ok sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GlobalDescriptor
from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyPositives,
    MalformedGroundTruth,
)

AP_MODES = ("trapezoid", "standard")


@dataclass(frozen=True)
class DescriptorIndex:
    """Searchable stack of unit-norm descriptors with their image ids."""

    ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(self.ids):
            raise DimensionMismatch(
                f"index matrix shape {matrix.shape} does not match {len(self.ids)} ids"
            )
        if len(self.ids):
            norms = np.linalg.norm(matrix, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                worst = float(np.abs(norms - 1.0).max())
                raise ValueError(f"index rows must be unit norm (worst deviation {worst:g})")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class QueryGroundTruth:
    """Positive (good plus ok) and junk image ids for one query."""

    query_id: str
    positives: frozenset[str]
    junk: frozenset[str]
    query_image: str = ""
    crop: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if not self.positives:
            raise EmptyPositives(f"query {self.query_id!r} has no positive images")
        overlap = self.positives & self.junk
        if overlap:
            raise MalformedGroundTruth(
                f"query {self.query_id!r}: ids in both positives and junk: {sorted(overlap)[:3]}"
            )


@dataclass(frozen=True)
class RankedResult:
    """Full ranking as (image_id, similarity) pairs, scores non-increasing."""

    entries: tuple[tuple[str, float], ...]

    def ids(self) -> list[str]:
        return [image_id for image_id, _ in self.entries]


def build_index(descriptors: list[GlobalDescriptor]) -> DescriptorIndex:
    """Stack descriptors into an index, preserving order and checking ids."""
    if not descriptors:
        return DescriptorIndex(ids=(), matrix=np.zeros((0, 0)))
    dims = {d.dim for d in descriptors}
    if len(dims) != 1:
        raise DimensionMismatch(f"descriptors have mixed dims {sorted(dims)}")
    ids = tuple(d.image_id for d in descriptors)
    if len(set(ids)) != len(ids):
        seen: set[str] = set()
        for image_id in ids:
            if image_id in seen:
                raise DuplicateId(f"duplicate image id {image_id!r} in index")
            seen.add(image_id)
    return DescriptorIndex(ids=ids, matrix=np.stack([d.values for d in descriptors]))


def search(index: DescriptorIndex, query: GlobalDescriptor) -> RankedResult:
    """Exact full ranking by descending dot product, ties by ascending id."""
    if len(index) == 0:
        return RankedResult(entries=())
    if query.dim != index.dim:
        raise DimensionMismatch(
            f"query dim {query.dim} does not match index dim {index.dim}"
        )
    scores = index.matrix @ query.values
    order = np.lexsort((np.asarray(index.ids), -scores))
    return RankedResult(
        entries=tuple((index.ids[i], float(scores[i])) for i in order)
    )


def average_precision(
    ranking: RankedResult, gt: QueryGroundTruth, mode: str = "trapezoid"
) -> float:
    """AP of one ranking after junk removal.

    ``standard``: mean over all positives of precision at each positive's
    filtered rank (positives missing from the ranking contribute zero).
    ``trapezoid``: the historical Oxford accumulation, adding
    (recall step) * (previous precision + current precision) / 2 at every
    non-junk document with the previous precision seeded at 1.
    """
    if mode not in AP_MODES:
        raise ValueError(f"ap mode must be one of {AP_MODES}, got {mode!r}")
    if not gt.positives:
        raise EmptyPositives(f"query {gt.query_id!r} has no positive images")
    filtered = [image_id for image_id, _ in ranking.entries if image_id not in gt.junk]
    total_positives = len(gt.positives)

    if mode == "standard":
        hits = 0
        total = 0.0
        for rank, image_id in enumerate(filtered, start=1):
            if image_id in gt.positives:
                hits += 1
                total += hits / rank
        return total / total_positives

    hits = 0
    ap = 0.0
    old_recall = 0.0
    old_precision = 1.0
    for rank, image_id in enumerate(filtered, start=1):
        if image_id in gt.positives:
            hits += 1
        recall = hits / total_positives
        precision = hits / rank
        ap += (recall - old_recall) * (old_precision + precision) / 2.0
        old_recall = recall
        old_precision = precision
    return ap


def evaluate_queries(
    index: DescriptorIndex,
    queries: list[tuple[GlobalDescriptor, QueryGroundTruth]],
    mode: str = "trapezoid",
) -> list[tuple[str, float]]:
    """Per-query AP table in input order."""
    if not queries:
        raise ValueError("need at least one query to evaluate")
    return [
        (gt.query_id, average_precision(search(index, descriptor), gt, mode=mode))
        for descriptor, gt in queries
    ]


def mean_average_precision(
    index: DescriptorIndex,
    queries: list[tuple[GlobalDescriptor, QueryGroundTruth]],
    mode: str = "trapezoid",
) -> float:
    """Arithmetic mean of per-query AP."""
    table = evaluate_queries(index, queries, mode=mode)
    return sum(ap for _, ap in table) / len(table)


def _read_id_list(path: Path) -> list[str]:
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_oxford_ground_truth(directory: str | Path) -> list[QueryGroundTruth]:
    """Parse the standard per-query ground-truth layout.

    For each ``<name>_query.txt`` (query image plus four crop coordinates)
    there must be ``<name>_good.txt``, ``<name>_ok.txt`` and
    ``<name>_junk.txt``.  Positives are good union ok; the query image name is
    stripped of its ``oxc1_`` prefix where present and crop coordinates are
    preserved for the extraction side.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MalformedGroundTruth(f"ground-truth directory does not exist: {directory}")
    query_files = sorted(directory.glob("*_query.txt"))
    if not query_files:
        raise MalformedGroundTruth(f"no *_query.txt files in {directory}")

    out: list[QueryGroundTruth] = []
    for query_file in query_files:
        query_id = query_file.name[: -len("_query.txt")]
        tokens = query_file.read_text(encoding="utf-8").split()
        if len(tokens) != 5:
            raise MalformedGroundTruth(
                f"{query_file}: expected 'image x1 y1 x2 y2', got {len(tokens)} tokens"
            )
        image_name = tokens[0]
        if image_name.startswith("oxc1_"):
            image_name = image_name[len("oxc1_") :]
        try:
            crop = tuple(float(v) for v in tokens[1:])
        except ValueError as exc:
            raise MalformedGroundTruth(f"{query_file}: bad crop coordinates") from exc

        sets: dict[str, list[str]] = {}
        for label in ("good", "ok", "junk"):
            label_path = directory / f"{query_id}_{label}.txt"
            if not label_path.is_file():
                raise MalformedGroundTruth(f"missing {label_path.name} for query {query_id!r}")
            sets[label] = _read_id_list(label_path)

        positives = frozenset(sets["good"]) | frozenset(sets["ok"])
        if not positives:
            raise MalformedGroundTruth(f"query {query_id!r} has empty good and ok sets")
        out.append(
            QueryGroundTruth(
                query_id=query_id,
                positives=positives,
                junk=frozenset(sets["junk"]),
                query_image=image_name,
                crop=crop,  # type: ignore[arg-type]
            )
        )
    return out
