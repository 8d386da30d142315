"""Command-line interface.

Every lab subcommand prints a human-readable table to stdout; with --out it
also writes a machine JSON report, and curve-producing commands emit plot
data as a CSV (x,y columns) next to the JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibrate, judge, pipeline, review
from .config import PipelineConfig, load_config, with_overrides

logger = logging.getLogger(__name__)


def _load_cli_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    return with_overrides(config, seed=args.seed, jobs=args.jobs)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {path}")


def _write_csv(path: Path, header: tuple[str, str], rows: list[tuple[float, float]]) -> None:
    lines = [f"{header[0]},{header[1]}"]
    lines.extend(f"{x:.10g},{y:.10g}" for x, y in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")


def _out_base(args: argparse.Namespace, default_stem: str) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    if out.is_dir():
        return out / default_stem
    return out.with_suffix("") if out.suffix else out


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_cli_config(args)
    result = pipeline.run_pipeline(args.pairs, config)
    out = Path(args.out) if args.out else Path("dataset.jsonl")
    pipeline.write_dataset(result.records, out)
    print(f"wrote {out} ({len(result.records)} rows)")
    for name, value in result.stats.to_json_dict().items():
        print(f"{name}: {value}")
    for pair_id, message in result.errors:
        print(f"pair {pair_id} skipped: {message}", file=sys.stderr)
    stats_path = out.with_suffix(".stats.json")
    _write_json(stats_path, {"stats": result.stats.to_json_dict(), "errors": result.errors})
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    records, malformed = pipeline.read_dataset(args.dataset)
    report = pipeline.dataset_stats(records, malformed)
    print(report.format_table())
    base = _out_base(args, "dataset_stats")
    if base:
        _write_json(base.with_suffix(".json"), report.to_json_dict())
    return 0


def cmd_random_crop_audit(args: argparse.Namespace) -> int:
    config = _load_cli_config(args)
    report = pipeline.random_crop_audit(args.pairs, args.crops, config)
    print(f"crops: {report.n_crops}")
    print(f"passed: {report.passed} (pass rate {report.pass_rate:.4%})")
    print(f"rejected by patch filter: {report.rejected_patch}")
    print(f"rejected by encoder: {report.rejected_encoder}")
    print(f"rejected by judge: {report.rejected_judge}")
    base = _out_base(args, "random_crop_audit")
    if base:
        _write_json(base.with_suffix(".json"), report.to_json_dict())
    return 0


def cmd_calibrate_iou(args: argparse.Namespace) -> int:
    data = calibrate.load_labeled_scores(args.scores)
    result = calibrate.roc_sweep(data, direction=args.direction)
    print(f"samples: {len(data)}")
    print(f"auc: {result.auc:.4f}")
    print(f"best threshold (Youden): {result.best_threshold:.4f}")
    print(f"youden j: {result.youden_j:.4f}")
    base = _out_base(args, "calibrate_iou")
    if base:
        _write_json(base.with_suffix(".json"), result.to_json_dict())
        _write_csv(base.with_suffix(".csv"), ("fpr", "tpr"), list(result.points))
    return 0


def cmd_eval_topk(args: argparse.Namespace) -> int:
    records = _read_annotations(args.annotations)
    flags = calibrate.topk_flags_from_annotations(records, args.k_max)
    curve = calibrate.topk_consistency(flags, args.k_max)
    print("k\tA(k)")
    for k, value in curve:
        print(f"{k}\t{value:.4f}")
    base = _out_base(args, "eval_topk")
    if base:
        _write_json(base.with_suffix(".json"), {"curve": [{"k": k, "a": v} for k, v in curve]})
        _write_csv(base.with_suffix(".csv"), ("k", "a_k"), [(float(k), v) for k, v in curve])
    return 0


def cmd_eval_metrics(args: argparse.Namespace) -> int:
    records = _read_annotations(args.annotations)
    approvals = calibrate.metric_approvals_from_annotations(records)
    rates = calibrate.metric_agreement(approvals)
    print("metric\tagreement")
    for metric in sorted(rates):
        print(f"{metric}\t{rates[metric]:.4f}")
    base = _out_base(args, "eval_metrics")
    if base:
        _write_json(base.with_suffix(".json"), {"agreement": rates})
    return 0


def cmd_simulate_bon(args: argparse.Namespace) -> int:
    config = _load_cli_config(args)
    p_values = [float(v) for v in args.p.split(",")]
    n_values = [int(v) for v in args.n.split(",")]
    rng = np.random.default_rng(config.seed)
    rows = []
    print("p\tN\tclosed_form\tmonte_carlo\tdiff_se")
    for p in p_values:
        for n in n_values:
            exact = judge.acceptance_probability(p, n)
            estimate = judge.monte_carlo_acceptance(p, n, args.trials, rng)
            se = max(np.sqrt(exact * (1.0 - exact) / args.trials), 1e-12)
            diff_se = abs(estimate - exact) / se
            rows.append({"p": p, "n": n, "closed_form": exact, "monte_carlo": estimate, "diff_se": diff_se})
            print(f"{p}\t{n}\t{exact:.6f}\t{estimate:.6f}\t{diff_se:.2f}")
    base = _out_base(args, "simulate_bon")
    if base:
        _write_json(base.with_suffix(".json"), {"trials": args.trials, "grid": rows})
        _write_csv(
            base.with_suffix(".csv"),
            ("n", "acceptance"),
            [(float(r["n"]), float(r["monte_carlo"])) for r in rows],
        )
    return 0


def cmd_simulate_convergence(args: argparse.Namespace) -> int:
    config = _load_cli_config(args)
    n_values = [int(v) for v in args.n.split(",")]
    points = calibrate.simulate_convergence(args.epsilon, n_values, args.trials, seed=config.seed)
    print("n\tmean_error\tstderr")
    for point in points:
        print(f"{point.n}\t{point.mean_error:.6f}\t{point.stderr:.6f}")
    base = _out_base(args, "simulate_convergence")
    if base:
        _write_json(
            base.with_suffix(".json"),
            {
                "epsilon": args.epsilon,
                "trials": args.trials,
                "curve": [
                    {"n": p.n, "mean_error": p.mean_error, "stderr": p.stderr} for p in points
                ],
            },
        )
        _write_csv(
            base.with_suffix(".csv"),
            ("n", "mean_error"),
            [(float(p.n), p.mean_error) for p in points],
        )
    return 0


def cmd_review_serve(args: argparse.Namespace) -> int:
    service = review.ReviewService.from_paths(
        args.dataset,
        args.store,
        pairs_path=args.pairs,
        static_dir=args.static,
        panel_size=args.panel,
    )
    host, _, port = args.bind.partition(":")
    server = review.serve(service, host or "127.0.0.1", int(port or "8765"))
    print(f"review server listening on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.server_close()
    return 0


def _read_annotations(path: str) -> list[review.AnnotationRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(review.AnnotationRecord.from_json_dict(json.loads(line)))
    return records


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="changeqa", description="Change-QA dataset curation pipeline")
    parser.add_argument("--config", help="pipeline config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, help="worker pool size")
    parser.add_argument("--out", help="output path (file or directory)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the curation pipeline over a pairs manifest")
    p.add_argument("--pairs", required=True, help="pairs manifest JSONL")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("stats", help="per-class and length statistics of a dataset")
    p.add_argument("--dataset", required=True, help="dataset JSONL")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("random-crop-audit", help="push random crops through screen + judge")
    p.add_argument("--pairs", required=True)
    p.add_argument("--crops", type=int, default=1000)
    p.set_defaults(fn=cmd_random_crop_audit)

    p = sub.add_parser("calibrate-iou", help="ROC sweep + Youden threshold over labeled scores")
    p.add_argument("--scores", required=True, help="CSV of sample_id,score,label")
    p.add_argument(
        "--direction",
        default="lower_is_positive",
        choices=["higher_is_positive", "lower_is_positive"],
        help="lower_is_positive treats low temporal IoU as change",
    )
    p.set_defaults(fn=cmd_calibrate_iou)

    p = sub.add_parser("eval-topk", help="top-k retrieval consistency curve from annotations")
    p.add_argument("--annotations", required=True, help="review-server export JSONL")
    p.add_argument("--k-max", type=int, default=10, dest="k_max")
    p.set_defaults(fn=cmd_eval_topk)

    p = sub.add_parser("eval-metrics", help="per-metric human agreement from annotations")
    p.add_argument("--annotations", required=True)
    p.set_defaults(fn=cmd_eval_metrics)

    p = sub.add_parser("simulate-bon", help="Monte Carlo check of the acceptance closed form")
    p.add_argument("--p", default="0.05,0.2,0.5", help="comma-separated acceptance probabilities")
    p.add_argument("--n", default="1,2,5,10", help="comma-separated hypothesis counts")
    p.add_argument("--trials", type=int, default=100_000)
    p.set_defaults(fn=cmd_simulate_bon)

    p = sub.add_parser("simulate-convergence", help="ERM error under noisy pseudo-labels")
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--n", default="100,500,2000,5000", help="comma-separated sample sizes")
    p.add_argument("--trials", type=int, default=50)
    p.set_defaults(fn=cmd_simulate_convergence)

    p = sub.add_parser("review-serve", help="serve the annotation review UI and API")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True, help="append-only annotations JSONL")
    p.add_argument("--pairs", help="pairs manifest for image serving")
    p.add_argument("--static", help="static UI bundle directory")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--panel", type=int, default=3, help="annotators per sample")
    p.set_defaults(fn=cmd_review_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
