"""Command-line entry point.

Subcommands mirror the pipeline stages; each runs the pipeline through its
stage (reusing cached results), `synth` generates a self-contained input
bundle plus a ready config, and `grid` runs the clustering comparison.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import timedelta
from pathlib import Path

from . import report, synth
from .config import PipelineConfig, load_config, write_config
from .errors import EpicastError
from .ingest import write_embeddings, write_posts, write_series_csv

STAGE_COMMANDS = ("ingest", "reduce", "cluster", "features", "threshold",
                  "forecast", "report")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epicast",
        description="Social-media epidemic signal pipeline",
    )
    parser.add_argument("--config", default="config.ini",
                        help="path to the INI config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    parser.add_argument("--out", default=None,
                        help="override the configured output directory")
    parser.add_argument("--region", default=None,
                        help="override the configured region")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        sub.add_parser(name, help=f"run the pipeline through the {name} stage")
    sub.add_parser("grid", help="clustering comparison grid")
    sp = sub.add_parser("synth", help="generate a synthetic input bundle")
    sp.add_argument("--days", type=int, default=200)
    sp.add_argument("--clusters", type=int, default=8)
    sp.add_argument("--lead", type=int, default=7)
    sp.add_argument("--snr", type=float, default=5.0)
    sp.add_argument("--dim", type=int, default=50)
    return parser


def _cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    region = args.region or "WA"
    out = Path(args.out or "synth")
    out.mkdir(parents=True, exist_ok=True)
    data = synth.synth_generate(
        seed=seed, n_days=args.days, n_clusters=args.clusters,
        lead=args.lead, snr=args.snr, dim=args.dim, region=region,
    )
    write_posts(out / "posts.jsonl", data.posts)
    write_embeddings(out / "embeddings.jsonl", data.embeddings)
    write_series_csv(out / "caseload.csv", data.caseload)
    mobility, gov = [], []
    for name, s in sorted(data.mobility.items()):
        write_series_csv(out / f"{name}.csv", s)
        mobility.append(f"{name}.csv")
    for name, s in sorted(data.gov_response.items()):
        write_series_csv(out / f"{name}.csv", s)
        gov.append(f"{name}.csv")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(data.manifest, fh, sort_keys=True, indent=2)
    start = data.caseload.start
    end = data.caseload.end
    span = (end - start).days
    cfg = PipelineConfig(
        posts="posts.jsonl", embeddings="embeddings.jsonl",
        caseload="caseload.csv", mobility=mobility, gov_response=gov,
        region=region, start=start, end=end,
        forecast_train_end=start + timedelta(days=int(span * 0.7)),
        forecast_test_end=end, seed=seed,
    )
    write_config(cfg, out / "config.ini")
    print(f"wrote synthetic bundle with {len(data.posts)} posts to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth":
        try:
            return _cmd_synth(args)
        except EpicastError as exc:
            print(f"error in stage 'synth': {exc}", file=sys.stderr)
            return 1
    try:
        cfg = load_config(args.config)
    except EpicastError as exc:
        print(f"error in stage 'config': {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if args.region is not None:
        cfg = dataclasses.replace(cfg, region=args.region)
    base = Path(args.config).resolve().parent
    try:
        if args.command == "grid":
            path = report.appendix_grid(cfg, base)
            print(f"wrote {path}")
        else:
            result = report.run_pipeline(cfg, base, upto=args.command)
            for stage, state in result["status"].items():
                print(f"{stage}: {state}")
            for key, value in result.items():
                if key.endswith(("_csv", "_jsonl")):
                    print(f"wrote {value}")
    except report.StageError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 1
    except EpicastError as exc:
        print(f"error in stage '{args.command}': {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
