"""Diagnostic exports: response heat maps, weighted responses, and channel
vector correlation matrices.

The raw renderer emits binary PPM (P6) with a fully specified blue-to-red
linear colormap so outputs are byte-reproducible; the figure helpers render
the same data with matplotlib for human consumption.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ChannelWeightVector, SpatialWeightMap
from .errors import DimensionMismatch, IoFailure, ZeroVariance

CORRELATION_METRICS = ("pearson", "cosine")


@dataclass(frozen=True)
class HeatmapRendering:
    """RGB raster of a weight map, one color block per grid cell."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self) -> None:
        if len(self.pixels) != 3 * self.width * self.height:
            raise DimensionMismatch(
                f"pixel payload has {len(self.pixels)} bytes, expected "
                f"{3 * self.width * self.height}"
            )


@dataclass(frozen=True)
class CorrelationMatrix:
    """Pairwise similarity of channel vectors; symmetric with unit diagonal."""

    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if values.shape != (n, n):
            raise DimensionMismatch(f"matrix shape {values.shape} does not match {n} ids")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def colormap_rgb(normalized: np.ndarray) -> np.ndarray:
    """Blue-to-red linear ramp: t=0 maps to (0,0,255), t=1 to (255,0,0)."""
    t = np.clip(normalized, 0.0, 1.0)
    r = np.rint(255.0 * t).astype(np.uint8)
    b = np.rint(255.0 * (1.0 - t)).astype(np.uint8)
    g = np.zeros_like(r)
    return np.stack([r, g, b], axis=-1)


def render_heatmap(
    weight_map: SpatialWeightMap,
    center: tuple[float, float] | None = None,
    scale: int = 8,
) -> HeatmapRendering:
    """Rasterize a map with nearest-cell coloring at ``scale`` pixels per cell.

    Values are normalized by the map's own min/max (a constant map renders as
    the uniform mid color).  An optional center, in 1-based grid coordinates,
    is marked with a 3x3 yellow dot.
    """
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    values = weight_map.values
    vmin = float(values.min())
    vmax = float(values.max())
    if vmax > vmin:
        t = (values - vmin) / (vmax - vmin)
    else:
        t = np.full_like(values, 0.5)
    rgb = colormap_rgb(t)
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)

    if center is not None:
        center_i, center_j = center
        py = int(round((center_i - 0.5) * scale))
        px = int(round((center_j - 0.5) * scale))
        rgb = rgb.copy()
        y0, y1 = max(0, py - 1), min(rgb.shape[0], py + 2)
        x0, x1 = max(0, px - 1), min(rgb.shape[1], px + 2)
        rgb[y0:y1, x0:x1] = (255, 255, 0)

    return HeatmapRendering(
        width=rgb.shape[1], height=rgb.shape[0], pixels=rgb.tobytes()
    )


def write_ppm(rendering: HeatmapRendering, path: str | Path) -> None:
    """Write a rendering as binary PPM (P6, maxval 255)."""
    header = f"P6\n{rendering.width} {rendering.height}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + rendering.pixels)
    except OSError as exc:
        raise IoFailure(f"cannot write PPM to {path}: {exc}") from exc


def weighted_response(
    s_prime: SpatialWeightMap, s: SpatialWeightMap
) -> SpatialWeightMap:
    """Elementwise product of the response map and the spatial weights."""
    if (s_prime.height, s_prime.width) != (s.height, s.width):
        raise DimensionMismatch(
            f"map shapes differ: {s_prime.height}x{s_prime.width} vs {s.height}x{s.width}"
        )
    return SpatialWeightMap(values=s_prime.values * s.values)


def channel_correlation(
    vectors: list[ChannelWeightVector],
    ids: list[str] | None = None,
    metric: str = "pearson",
) -> CorrelationMatrix:
    """Pairwise Pearson correlation (or cosine similarity) of channel vectors."""
    if metric not in CORRELATION_METRICS:
        raise ValueError(f"metric must be one of {CORRELATION_METRICS}, got {metric!r}")
    if len(vectors) < 2:
        raise ValueError(f"need at least 2 vectors, got {len(vectors)}")
    lengths = {len(v) for v in vectors}
    if len(lengths) != 1:
        raise DimensionMismatch(f"vectors have mixed lengths {sorted(lengths)}")
    if ids is None:
        ids = [f"v{i}" for i in range(len(vectors))]
    if len(ids) != len(vectors):
        raise DimensionMismatch("ids and vectors must have equal length")

    rows = np.stack([v.values for v in vectors]).astype(np.float64)
    if metric == "pearson":
        rows = rows - rows.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(rows, axis=1)
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        kind = "constant" if metric == "pearson" else "all-zero"
        raise ZeroVariance(f"vector {ids[bad[0]]!r} is {kind}; correlation undefined")
    normalized = rows / norms[:, None]
    matrix = normalized @ normalized.T
    matrix = np.clip((matrix + matrix.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(matrix, 1.0)
    return CorrelationMatrix(ids=tuple(ids), values=matrix)


def save_correlation_csv(matrix: CorrelationMatrix, path: str | Path) -> None:
    """CSV with an id header row and one labelled row per vector."""
    lines = ["id," + ",".join(matrix.ids)]
    for image_id, row in zip(matrix.ids, matrix.values):
        lines.append(image_id + "," + ",".join(repr(float(v)) for v in row))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write correlation CSV to {path}: {exc}") from exc


# --- matplotlib figure output -------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_heatmap_figure(
    weight_map: SpatialWeightMap,
    path: str | Path,
    center: tuple[float, float] | None = None,
    title: str | None = None,
) -> None:
    """Render a map as a matplotlib figure, center marked with a yellow dot."""
    plt = _pyplot()
    from matplotlib.colors import LinearSegmentedColormap

    cmap = LinearSegmentedColormap.from_list("blue_red", ["blue", "red"])
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(weight_map.values, cmap=cmap, interpolation="nearest")
    if center is not None:
        ax.plot(center[1] - 1.0, center[0] - 1.0, marker="o", color="yellow",
                markersize=10, markeredgecolor="black")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_correlation_figure(matrix: CorrelationMatrix, path: str | Path,
                            title: str | None = None) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(matrix.values, vmin=-1.0, vmax=1.0, cmap="coolwarm",
                   interpolation="nearest")
    ax.set_xlabel("image")
    ax.set_ylabel("image")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, label="correlation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], path: str | Path) -> None:
    """Line plot of mAP against the center fraction, one line per dim."""
    plt = _pyplot()
    dims = sorted({row["dim"] for row in rows})
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for dim in dims:
        points = [(row["alpha"], row["map"]) for row in rows if row["dim"] == dim]
        points.sort()
        ax.plot([p[0] for p in points], [100.0 * p[1] for p in points],
                marker="o", label=f"dim {dim}")
    ax.set_xlabel("center-selection fraction")
    ax.set_ylabel("mAP (%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_figure(rows: list[dict], path: str | Path) -> None:
    """Grouped bar chart of mAP per weighting combination, grouped by dim."""
    plt = _pyplot()
    combos = list(dict.fromkeys((row["spatial"], row["channel"]) for row in rows))
    dims = sorted({row["dim"] for row in rows})
    lookup = {(row["spatial"], row["channel"], row["dim"]): row["map"] for row in rows}
    x = np.arange(len(dims))
    bar_width = 0.8 / max(1, len(combos))
    fig, ax = plt.subplots(figsize=(7, 4))
    for pos, combo in enumerate(combos):
        heights = [100.0 * lookup.get((combo[0], combo[1], dim), np.nan) for dim in dims]
        ax.bar(x + pos * bar_width, heights, bar_width, label=f"{combo[0]}+{combo[1]}")
    ax.set_xticks(x + 0.4 - bar_width / 2)
    ax.set_xticklabels([str(d) for d in dims])
    ax.set_xlabel("descriptor dim")
    ax.set_ylabel("mAP (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
