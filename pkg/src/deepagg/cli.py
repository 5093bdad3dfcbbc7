"""Command-line interface for the aggregation, retrieval, and experiment tools.

Exit codes: 0 success, 2 argument/validation error, 3 data error (bad files,
mismatched dimensions, degenerate inputs).  Every subcommand accepts
``--json`` for machine-readable output.  DEEPAGG_THREADS caps parallelism in
batch aggregation and the experiment harnesses.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .aggregation import AggregationConfig, aggregate_batch, spatial_weights
from .channel import (
    echannel_weights,
    element_value_items,
    load_channel_vector_csv,
    save_channel_vector_csv,
    schannel_weights,
    sparsity_items,
    weighted_channel_sums,
)
from .core import RAW_STAGE
from .errors import DeepAggError, MalformedGroundTruth
from .evaluation import (
    average_precision,
    build_index,
    load_oxford_ground_truth,
    search,
)
from .experiments import (
    ALL_MODES,
    DEFAULT_ABLATION_MODES,
    ExperimentSpec,
    run_ablation,
    run_alpha_sweep,
)
from .io import load_descriptors, load_manifest, load_tensor, save_descriptors
from .spatial import adaptive_gaussian, response_map, select_center
from .synthetic import VARIANTS, generate
from .viz import (
    channel_correlation,
    render_heatmap,
    save_ablation_figure,
    save_correlation_csv,
    save_correlation_figure,
    save_heatmap_figure,
    save_sweep_figure,
    weighted_response,
    write_ppm,
)
from .whitening import fit_whitening, load_model, save_model

SPATIAL_TOKENS = {"none": "none", "agauss": "aGaussian", "ngauss": "nGaussian"}
CHANNEL_TOKENS = {"none": "none", "echan": "eChannel", "schan": "sChannel"}


def _emit(args: argparse.Namespace, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, indent=2))
    elif text:
        print(text)


def _float_list(raw: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {raw!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _int_list(raw: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad int list {raw!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _config_from_args(args: argparse.Namespace) -> AggregationConfig:
    return AggregationConfig(
        alpha=args.alpha,
        eps=args.eps,
        spatial_mode=SPATIAL_TOKENS[args.spatial],
        channel_mode=CHANNEL_TOKENS[args.channel],
        sigma_rule=args.sigma_rule,
    )


def _add_weighting_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=0.1,
                        help="fraction of top responses defining the center")
    parser.add_argument("--eps", type=float, default=1e-6,
                        help="stabilizer inside the channel weight log ratio")
    parser.add_argument("--spatial", choices=sorted(SPATIAL_TOKENS), default="agauss")
    parser.add_argument("--channel", choices=sorted(CHANNEL_TOKENS), default="echan")
    parser.add_argument("--sigma-rule", choices=("edge", "corner"), default="edge")


# --- subcommand handlers -------------------------------------------------------

def cmd_aggregate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _config_from_args(args)
    model = load_model(args.whitening) if args.whitening else None
    result = aggregate_batch(manifest, cfg, model)
    save_descriptors(list(result.descriptors), args.out)
    payload = {
        "written": len(result.descriptors),
        "out": str(args.out),
        "failures": [{"image_id": f.image_id, "error": f.error} for f in result.failures],
    }
    lines = [f"wrote {len(result.descriptors)} descriptors to {args.out}"]
    for failure in result.failures:
        lines.append(f"failed {failure.image_id}: {failure.error}")
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_whiten_train(args: argparse.Namespace) -> int:
    descriptors = load_descriptors(args.descriptors, stage=RAW_STAGE)
    model = fit_whitening(
        descriptors,
        k_prime=args.dim,
        eps_w=args.eps_w,
        whiten_scale=not args.no_whiten_scale,
    )
    save_model(model, args.out)
    payload = {
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "samples": len(descriptors),
        "out": str(args.out),
    }
    _emit(args, payload,
          f"fit whitening {model.input_dim} -> {model.output_dim} on "
          f"{len(descriptors)} descriptors; wrote {args.out}")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    descriptors = []
    for path in args.descriptors:
        descriptors.extend(load_descriptors(path))
    build_index(descriptors)  # validates norms, dims, unique ids
    save_descriptors(descriptors, args.out)
    payload = {"entries": len(descriptors), "out": str(args.out)}
    _emit(args, payload, f"indexed {len(descriptors)} descriptors into {args.out}")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    index = build_index(load_descriptors(args.index))
    queries = load_descriptors(args.queries)
    top = args.top if args.top > 0 else None
    results = []
    lines = []
    for query in queries:
        ranking = search(index, query)
        entries = ranking.entries[:top] if top else ranking.entries
        results.append({
            "query": query.image_id,
            "results": [{"image_id": i, "score": s} for i, s in entries],
        })
        lines.append(f"query {query.image_id}:")
        for rank, (image_id, score) in enumerate(entries, start=1):
            lines.append(f"  {rank:4d}  {score:+.4f}  {image_id}")
    _emit(args, {"searches": results}, "\n".join(lines))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    index = build_index(load_descriptors(args.index))
    queries = load_descriptors(args.queries)
    ground_truth = {gt.query_id: gt for gt in load_oxford_ground_truth(args.gt)}
    rows = []
    lines = [f"{'query':<32} AP"]
    total = 0.0
    for query in queries:
        gt = ground_truth.get(query.image_id)
        if gt is None:
            raise MalformedGroundTruth(f"no ground truth for query id {query.image_id!r}")
        ap = average_precision(search(index, query), gt, mode=args.ap_mode)
        total += ap
        rows.append({"query": query.image_id, "ap": ap})
        lines.append(f"{query.image_id:<32} {ap:.4f}")
    if not rows:
        raise DeepAggError("query descriptor file contains no records")
    map_value = total / len(rows)
    lines.append(f"{'mAP':<32} {map_value:.4f}")
    payload = {"ap_mode": args.ap_mode, "queries": rows, "map": map_value}
    _emit(args, payload, "\n".join(lines))
    return 0


def _spec_from_args(args: argparse.Namespace,
                    alphas: tuple[float, ...],
                    modes: tuple[tuple[str, str], ...]) -> ExperimentSpec:
    try:
        return ExperimentSpec(
            database_manifest=Path(args.database),
            queries_manifest=Path(args.queries),
            whitening_manifest=Path(args.whitening),
            ground_truth_dir=Path(args.gt),
            alphas=alphas,
            dims=args.dims,
            modes=modes,
            eps=args.eps,
            eps_w=args.eps_w,
            sigma_rule=args.sigma_rule,
            ap_mode=args.ap_mode,
        )
    except ValueError:
        raise


def _write_table(path: str | None, header: list[str], rows: list[dict]) -> None:
    if not path:
        return
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(row[col]) for col in header))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_sweep_alpha(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args, alphas=args.alphas, modes=DEFAULT_ABLATION_MODES)
    rows = run_alpha_sweep(spec)
    _write_table(args.out, ["alpha", "dim", "map"], rows)
    if args.plot:
        save_sweep_figure(rows, args.plot)
    lines = [f"{'alpha':>8} {'dim':>6} {'mAP':>8}"]
    for row in rows:
        lines.append(f"{row['alpha']:>8.3f} {row['dim']:>6d} {row['map']:>8.4f}")
    _emit(args, {"ap_mode": spec.ap_mode, "rows": rows}, "\n".join(lines))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    modes = ALL_MODES if args.full else DEFAULT_ABLATION_MODES
    spec = _spec_from_args(args, alphas=(args.alpha,), modes=modes)
    rows = run_ablation(spec)
    _write_table(args.out, ["spatial", "channel", "dim", "map"], rows)
    if args.plot:
        save_ablation_figure(rows, args.plot)
    lines = [f"{'spatial':<10} {'channel':<9} {'dim':>6} {'mAP':>8}"]
    for row in rows:
        lines.append(
            f"{row['spatial']:<10} {row['channel']:<9} {row['dim']:>6d} {row['map']:>8.4f}"
        )
    _emit(args, {"ap_mode": spec.ap_mode, "alpha": args.alpha, "rows": rows},
          "\n".join(lines))
    return 0


def cmd_viz_heatmap(args: argparse.Namespace) -> int:
    tensor = load_tensor(args.tensor)
    s_prime = response_map(tensor)
    center = select_center(s_prime, args.alpha)
    if args.map == "response":
        shown = s_prime
    elif args.map == "gaussian":
        shown = adaptive_gaussian(tensor, args.alpha, sigma_rule=args.sigma_rule)
    else:
        shown = weighted_response(
            s_prime, adaptive_gaussian(tensor, args.alpha, sigma_rule=args.sigma_rule)
        )
    rendering = render_heatmap(shown, center=center, scale=args.scale)
    write_ppm(rendering, args.out)
    if args.png:
        save_heatmap_figure(shown, args.png, center=center,
                            title=f"{args.map} ({tensor.image_id})")
    payload = {
        "out": str(args.out),
        "png": str(args.png) if args.png else None,
        "center_i": center[0],
        "center_j": center[1],
        "width": rendering.width,
        "height": rendering.height,
    }
    _emit(args, payload,
          f"wrote {rendering.width}x{rendering.height} heat map to {args.out} "
          f"(center {center[0]:.2f},{center[1]:.2f})")
    return 0


def cmd_viz_corr(args: argparse.Namespace) -> int:
    directory = Path(args.vectors)
    if not directory.is_dir():
        raise DeepAggError(f"vector directory does not exist: {directory}")
    files = sorted(directory.glob("*.csv"))
    if len(files) < 2:
        raise DeepAggError(f"need at least 2 vector CSVs in {directory}, found {len(files)}")
    vectors = [load_channel_vector_csv(f) for f in files]
    ids = [f.stem for f in files]
    matrix = channel_correlation(vectors, ids=ids, metric=args.metric)
    save_correlation_csv(matrix, args.out)
    if args.plot:
        save_correlation_figure(matrix, args.plot, title=f"{args.metric} correlation")
    payload = {"out": str(args.out), "n": len(ids), "metric": args.metric}
    _emit(args, payload, f"wrote {len(ids)}x{len(ids)} correlation matrix to {args.out}")
    return 0


def cmd_viz_vectors(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _config_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for image_id, path in manifest.entries:
        tensor = load_tensor(path, image_id=image_id)
        if args.kind == "sparsity":
            vector = sparsity_items(tensor)
        elif args.kind == "schannel":
            vector = schannel_weights(sparsity_items(tensor), cfg.eps)
        else:
            omega = weighted_channel_sums(tensor, spatial_weights(tensor, cfg))
            items = element_value_items(omega, tensor.height, tensor.width)
            vector = items if args.kind == "element" else echannel_weights(items, cfg.eps)
        target = out_dir / f"{image_id}.csv"
        save_channel_vector_csv(vector, target)
        written.append(str(target))
    _emit(args, {"written": written},
          f"wrote {len(written)} {args.kind} vectors to {out_dir}")
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    dataset = generate(
        args.out,
        variant=args.variant,
        seed=args.seed,
        images_per_class=args.images_per_class,
        queries_per_class=args.queries_per_class,
    )
    payload = {
        "root": str(dataset.root),
        "database": str(dataset.database_manifest),
        "queries": str(dataset.queries_manifest),
        "whitening": str(dataset.whitening_manifest),
        "gt": str(dataset.ground_truth_dir),
        "variant": args.variant,
        "seed": args.seed,
    }
    _emit(args, payload,
          f"generated {args.variant} dataset under {dataset.root}")
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepagg",
        description="Aggregate convolutional feature tensors into global "
                    "descriptors and evaluate retrieval quality.",
    )
    parser.add_argument("--version", action="version", version=f"deepagg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="aggregate tensors from a manifest into descriptors")
    p.add_argument("--manifest", required=True)
    _add_weighting_flags(p)
    p.add_argument("--whitening", help="WHM1 model; output is whitened when given")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("whiten-train", help="fit PCA-whitening on raw descriptors")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--eps-w", type=float, default=1e-8)
    p.add_argument("--no-whiten-scale", action="store_true",
                   help="plain PCA: skip the inverse-sqrt eigenvalue scaling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_whiten_train)

    p = sub.add_parser("index", help="validate and merge descriptor files")
    p.add_argument("--descriptors", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="rank an index against query descriptors")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--top", type=int, default=10, help="rows per query, 0 for all")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="mean average precision under good/ok/junk")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--ap-mode", choices=("trapezoid", "standard"), default="trapezoid")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-alpha", help="mAP across center-selection fractions")
    p.add_argument("--database", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--whitening", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--alphas", type=_float_list, default=(0.05, 0.1, 0.5, 1.0))
    p.add_argument("--dims", type=_int_list, default=(8,))
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--eps-w", type=float, default=1e-8)
    p.add_argument("--sigma-rule", choices=("edge", "corner"), default="edge")
    p.add_argument("--ap-mode", choices=("trapezoid", "standard"), default="trapezoid")
    p.add_argument("--out", help="CSV table destination")
    p.add_argument("--plot", help="PNG figure destination")
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("ablate", help="mAP across weighting combinations")
    p.add_argument("--database", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--whitening", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--dims", type=_int_list, default=(8,))
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--eps-w", type=float, default=1e-8)
    p.add_argument("--sigma-rule", choices=("edge", "corner"), default="edge")
    p.add_argument("--ap-mode", choices=("trapezoid", "standard"), default="trapezoid")
    p.add_argument("--full", action="store_true",
                   help="run all nine combinations instead of the default six")
    p.add_argument("--out", help="CSV table destination")
    p.add_argument("--plot", help="PNG figure destination")
    p.set_defaults(func=cmd_ablate)

    viz = sub.add_parser("viz", help="figure and matrix exports")
    viz_sub = viz.add_subparsers(dest="viz_command", required=True)

    p = viz_sub.add_parser("heatmap", help="render response/weight maps to PPM")
    p.add_argument("--tensor", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--sigma-rule", choices=("edge", "corner"), default="edge")
    p.add_argument("--map", choices=("response", "gaussian", "weighted"),
                   default="response")
    p.add_argument("--scale", type=int, default=16, help="pixels per grid cell")
    p.add_argument("--out", required=True, help="PPM destination")
    p.add_argument("--png", help="optional matplotlib PNG destination")
    p.set_defaults(func=cmd_viz_heatmap)

    p = viz_sub.add_parser("corr", help="pairwise correlation of channel vector CSVs")
    p.add_argument("--vectors", required=True, help="directory of per-image CSVs")
    p.add_argument("--metric", choices=("pearson", "cosine"), default="pearson")
    p.add_argument("--out", required=True, help="CSV destination")
    p.add_argument("--plot", help="PNG figure destination")
    p.set_defaults(func=cmd_viz_corr)

    p = viz_sub.add_parser("vectors", help="export per-image channel vectors as CSV")
    p.add_argument("--manifest", required=True)
    _add_weighting_flags(p)
    p.add_argument("--kind", choices=("element", "sparsity", "echannel", "schannel"),
                   default="element")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_viz_vectors)

    p = sub.add_parser("gen-synthetic", help="emit the synthetic test dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="bursty")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--images-per-class", type=int, default=10)
    p.add_argument("--queries-per-class", type=int, default=2)
    p.set_defaults(func=cmd_gen_synthetic)

    for sp in sub.choices.values():
        _ensure_json_flag(sp)
    for sp in viz_sub.choices.values():
        _ensure_json_flag(sp)
    return parser


def _ensure_json_flag(parser: argparse.ArgumentParser) -> None:
    options = {o for action in parser._actions for o in action.option_strings}
    if "--json" not in options:
        parser.add_argument("--json", action="store_true",
                            help="emit machine-readable JSON")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except DeepAggError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
