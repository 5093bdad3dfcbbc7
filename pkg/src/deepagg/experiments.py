"""Experiment harnesses: the center-fraction sweep and the weighting ablation.

Both harnesses share one engine: aggregate raw descriptors for the database,
query, and whitening manifests under a weighting configuration, refit
whitening per output dimension, and score mean AP against the ground truth.
Rows come out in spec order and are pure functions of the inputs, so
repeated runs are byte-identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .aggregation import (
    CHANNEL_MODES,
    SPATIAL_MODES,
    AggregationConfig,
    aggregate_batch,
    thread_count,
)
from .core import DatasetManifest
from .errors import DeepAggError, MalformedGroundTruth
from .evaluation import (
    AP_MODES,
    QueryGroundTruth,
    build_index,
    load_oxford_ground_truth,
    mean_average_precision,
)
from .io import load_manifest
from .whitening import apply_whitening, fit_whitening

# The six weighting combinations exercised by the ablation: each scheme alone,
# the fixed-center/sparsity pairing, and the adaptive/element-value pairing.
DEFAULT_ABLATION_MODES = (
    ("none", "none"),
    ("nGaussian", "none"),
    ("aGaussian", "none"),
    ("none", "eChannel"),
    ("nGaussian", "sChannel"),
    ("aGaussian", "eChannel"),
)

ALL_MODES = tuple((s, c) for s in SPATIAL_MODES for c in CHANNEL_MODES)


@dataclass(frozen=True)
class ExperimentSpec:
    """Dataset paths plus the grid of settings a harness iterates over."""

    database_manifest: Path
    queries_manifest: Path
    whitening_manifest: Path
    ground_truth_dir: Path
    alphas: tuple[float, ...]
    dims: tuple[int, ...]
    modes: tuple[tuple[str, str], ...] = DEFAULT_ABLATION_MODES
    eps: float = 1e-6
    eps_w: float = 1e-8
    sigma_rule: str = "edge"
    ap_mode: str = "trapezoid"

    def __post_init__(self) -> None:
        if not self.alphas:
            raise ValueError("alpha list must not be empty")
        if not self.dims:
            raise ValueError("dim list must not be empty")
        if not self.modes:
            raise ValueError("mode list must not be empty")
        if self.ap_mode not in AP_MODES:
            raise ValueError(f"ap_mode must be one of {AP_MODES}")
        for spatial, channel in self.modes:
            if spatial not in SPATIAL_MODES or channel not in CHANNEL_MODES:
                raise ValueError(f"unknown weighting combination ({spatial}, {channel})")
        for path in (
            self.database_manifest,
            self.queries_manifest,
            self.whitening_manifest,
        ):
            if not Path(path).is_file():
                raise ValueError(f"manifest does not exist: {path}")
        if not Path(self.ground_truth_dir).is_dir():
            raise ValueError(f"ground-truth directory does not exist: {self.ground_truth_dir}")


@dataclass
class _Datasets:
    database: DatasetManifest
    queries: DatasetManifest
    whitening: DatasetManifest
    ground_truth: dict[str, QueryGroundTruth] = field(default_factory=dict)


def _load_datasets(spec: ExperimentSpec) -> _Datasets:
    datasets = _Datasets(
        database=load_manifest(spec.database_manifest, role="database"),
        queries=load_manifest(spec.queries_manifest, role="query"),
        whitening=load_manifest(spec.whitening_manifest, role="whitening"),
    )
    for gt in load_oxford_ground_truth(spec.ground_truth_dir):
        datasets.ground_truth[gt.query_id] = gt
    return datasets


def _raw_descriptors(manifest: DatasetManifest, cfg: AggregationConfig):
    result = aggregate_batch(manifest, cfg)
    if result.failures:
        summary = "; ".join(f"{f.image_id}: {f.error}" for f in result.failures[:5])
        raise DeepAggError(
            f"{len(result.failures)} image(s) failed to aggregate: {summary}"
        )
    return list(result.descriptors)


def _score_cell(
    datasets: _Datasets,
    cfg: AggregationConfig,
    dims: tuple[int, ...],
    ap_mode: str,
    eps_w: float,
) -> list[tuple[int, float]]:
    """mAP per output dimension for one weighting configuration."""
    database_raw = _raw_descriptors(datasets.database, cfg)
    queries_raw = _raw_descriptors(datasets.queries, cfg)
    whitening_raw = _raw_descriptors(datasets.whitening, cfg)

    paired_gt: list[QueryGroundTruth] = []
    for descriptor in queries_raw:
        gt = datasets.ground_truth.get(descriptor.image_id)
        if gt is None:
            raise MalformedGroundTruth(
                f"no ground truth for query id {descriptor.image_id!r}"
            )
        paired_gt.append(gt)

    scores: list[tuple[int, float]] = []
    for dim in dims:
        model = fit_whitening(whitening_raw, k_prime=dim, eps_w=eps_w)
        index = build_index([apply_whitening(model, d) for d in database_raw])
        queries = [
            (apply_whitening(model, d), gt) for d, gt in zip(queries_raw, paired_gt)
        ]
        scores.append((dim, mean_average_precision(index, queries, mode=ap_mode)))
    return scores


def _run_cells(
    datasets: _Datasets,
    configs: list[AggregationConfig],
    spec: ExperimentSpec,
) -> list[list[tuple[int, float]]]:
    workers = min(thread_count(), len(configs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(
                pool.map(
                    lambda cfg: _score_cell(datasets, cfg, spec.dims, spec.ap_mode, spec.eps_w),
                    configs,
                )
            )
    return [_score_cell(datasets, cfg, spec.dims, spec.ap_mode, spec.eps_w) for cfg in configs]


def run_alpha_sweep(spec: ExperimentSpec) -> list[dict]:
    """mAP per (center fraction, dim) with spatial weighting only.

    The sweep isolates the spatial scheme: channel weighting stays off, and
    whitening is refit for every cell since the descriptor distribution
    changes with the fraction.
    """
    datasets = _load_datasets(spec)
    configs = [
        AggregationConfig(
            alpha=alpha,
            eps=spec.eps,
            spatial_mode="aGaussian",
            channel_mode="none",
            sigma_rule=spec.sigma_rule,
        )
        for alpha in spec.alphas
    ]
    cells = _run_cells(datasets, configs, spec)
    rows: list[dict] = []
    for alpha, scores in zip(spec.alphas, cells):
        for dim, value in scores:
            rows.append({"alpha": alpha, "dim": dim, "map": value})
    return rows


def run_ablation(spec: ExperimentSpec) -> list[dict]:
    """mAP per (spatial_mode, channel_mode, dim) over the configured combinations.

    Adaptive spatial weighting uses the first entry of ``spec.alphas``.
    """
    datasets = _load_datasets(spec)
    alpha = spec.alphas[0]
    configs = [
        AggregationConfig(
            alpha=alpha,
            eps=spec.eps,
            spatial_mode=spatial,
            channel_mode=channel,
            sigma_rule=spec.sigma_rule,
        )
        for spatial, channel in spec.modes
    ]
    cells = _run_cells(datasets, configs, spec)
    rows: list[dict] = []
    for (spatial, channel), scores in zip(spec.modes, cells):
        for dim, value in scores:
            rows.append(
                {"spatial": spatial, "channel": channel, "dim": dim, "map": value}
            )
    return rows
