"""Command-line entry point: `embed-exporter export ...`."""

from __future__ import annotations

import argparse
import sys
from datetime import date
from pathlib import Path

from .encode import encode_texts, get_encoder, write_embeddings_jsonl
from .errors import ExporterError
from .fetch import fetch_comments, to_post_rows, write_posts_jsonl
from .job import ENCODERS, ExportJob


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-exporter",
        description="Export subreddit comments as tokenized posts plus "
                    "sentence embeddings (JSONL)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="fetch, tokenize and encode comments")
    exp.add_argument("--subreddit", required=True)
    exp.add_argument("--from", dest="date_from", required=True,
                     type=date.fromisoformat, metavar="YYYY-MM-DD")
    exp.add_argument("--to", dest="date_to", required=True,
                     type=date.fromisoformat, metavar="YYYY-MM-DD")
    exp.add_argument("--encoder", default=ENCODERS[0], choices=ENCODERS)
    exp.add_argument("--out", required=True, type=Path,
                     help="output directory for posts.jsonl / embeddings.jsonl")
    exp.add_argument("--endpoint", default=None,
                     help="archive API endpoint URL")
    exp.add_argument("--dump", default=None, type=Path,
                     help="local JSONL comment dump (offline fallback)")
    exp.add_argument("--encoder-checkpoint", default=None, type=Path,
                     help="local sentence-transformers checkpoint directory")
    exp.add_argument("--batch-size", default=64, type=int)
    exp.add_argument("--page-size", default=500, type=int)
    return parser


def run_export(job: ExportJob) -> int:
    """Returns the number of exported posts."""
    encoder = get_encoder(job.encoder, job.encoder_checkpoint)
    comments = fetch_comments(job)
    rows = to_post_rows(comments)
    body_by_id = {c["id"]: c["body"] for c in comments}
    vectors = encode_texts(
        encoder, [body_by_id[r["id"]] for r in rows], job.batch_size
    )
    job.out_dir.mkdir(parents=True, exist_ok=True)
    write_posts_jsonl(job.posts_path, rows)
    write_embeddings_jsonl(job.embeddings_path, [r["id"] for r in rows],
                           vectors)
    return len(rows)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    job = None
    try:
        job = ExportJob(
            subreddit=args.subreddit, date_from=args.date_from,
            date_to=args.date_to, out_dir=args.out, encoder=args.encoder,
            batch_size=args.batch_size, page_size=args.page_size,
            endpoint=args.endpoint, dump_path=args.dump,
            encoder_checkpoint=args.encoder_checkpoint,
        )
        n = run_export(job)
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if job is not None and job.checkpoint_path.exists():
            print(f"fetch progress kept at {job.checkpoint_path}; "
                  "rerun the same command to resume", file=sys.stderr)
        return 1
    print(f"exported {n} posts to {job.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
