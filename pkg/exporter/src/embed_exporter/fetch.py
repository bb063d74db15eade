"""Comment acquisition: paginated archive client with backoff and resume.

Two sources are supported: an HTTP archive endpoint (Pushshift-style
``?subreddit=&after=&before=&size=`` returning ``{"data": [...]}``) and a
local JSONL dump for offline runs. Only the fields needed downstream
(id, created_utc, subreddit, body) are retained; user fields are dropped
at the source. Fetch progress is appended to a checkpoint file so an
interrupted run resumes where it stopped.
"""

from __future__ import annotations

import json
import re
import time
import urllib.error
import urllib.parse
import urllib.request
from datetime import datetime, timezone
from pathlib import Path

from .errors import FetchError, ValidationError
from .job import ExportJob

COMMENT_FIELDS = ("id", "created_utc", "subreddit", "body")
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased, punctuation-stripped tokens."""
    return _TOKEN_RE.findall(text.lower())


def _sanitize(raw: dict) -> dict:
    missing = [k for k in COMMENT_FIELDS if k not in raw]
    if missing:
        raise FetchError(f"comment record missing fields {missing}")
    return {
        "id": str(raw["id"]),
        "created_utc": int(raw["created_utc"]),
        "subreddit": str(raw["subreddit"]),
        "body": str(raw["body"]),
    }


class StaticDumpClient:
    """Reads a local JSONL dump and serves it with archive-API semantics."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise FetchError(f"dump file not found: {self.path}")
        self._rows = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    self._rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FetchError(
                        f"invalid JSON in dump at line {lineno}: {exc.msg}"
                    ) from exc
        self._rows.sort(key=lambda r: (int(r["created_utc"]), str(r["id"])))

    def fetch(self, subreddit: str, after: int, before: int,
              size: int) -> list[dict]:
        hits = [
            r for r in self._rows
            if r.get("subreddit") == subreddit
            and after < int(r["created_utc"]) < before
        ]
        return hits[:size]


class HttpArchiveClient:
    """GETs pages from an archive endpoint, retrying with backoff."""

    def __init__(self, endpoint: str, retries: int = 3, backoff: float = 1.0,
                 timeout: float = 30.0, sleep=time.sleep,
                 opener=urllib.request.urlopen):
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sleep = sleep
        self._opener = opener

    def fetch(self, subreddit: str, after: int, before: int,
              size: int) -> list[dict]:
        query = urllib.parse.urlencode({
            "subreddit": subreddit, "after": after, "before": before,
            "size": size,
        })
        url = f"{self.endpoint}?{query}"
        last_error = None
        for attempt in range(self.retries):
            try:
                with self._opener(url, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return list(payload["data"])
            except (urllib.error.URLError, TimeoutError, OSError,
                    json.JSONDecodeError, KeyError) as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    self._sleep(self.backoff * 2 ** attempt)
        raise FetchError(
            f"endpoint unavailable after {self.retries} attempts: {last_error}"
        )


def _load_checkpoint(path: Path) -> list[dict]:
    comments = []
    if path.exists():
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    comments.append(json.loads(line))
    return comments


def fetch_comments(job: ExportJob, client=None) -> list[dict]:
    """All comments for the job's subreddit/date range, oldest first.

    Pages through `client`, appending each new page to the checkpoint file;
    a rerun after a failure resumes from the last checkpointed timestamp.
    The checkpoint is removed once the fetch completes.
    """
    if client is None:
        if job.dump_path is not None:
            client = StaticDumpClient(job.dump_path)
        elif job.endpoint is not None:
            client = HttpArchiveClient(job.endpoint)
        else:
            raise ValidationError("no comment source: set --endpoint or --dump")

    job.out_dir.mkdir(parents=True, exist_ok=True)
    comments = _load_checkpoint(job.checkpoint_path)
    seen = {c["id"] for c in comments}
    # pages overlap by one second so a timestamp group split across a page
    # boundary is not lost; the id set removes the duplicates
    after = max(
        [job.from_ts - 1] + [int(c["created_utc"]) - 1 for c in comments]
    )

    while True:
        page = client.fetch(job.subreddit, after, job.to_ts, job.page_size)
        new = []
        for raw in page:
            c = _sanitize(raw)
            if c["id"] not in seen:
                seen.add(c["id"])
                new.append(c)
        if not new:
            break
        with open(job.checkpoint_path, "a", encoding="utf-8") as fh:
            for c in new:
                fh.write(json.dumps(c, sort_keys=True) + "\n")
        comments.extend(new)
        if len(page) < job.page_size:
            break
        if len({int(r["created_utc"]) for r in page}) <= 1:
            raise FetchError(
                "a full page shares one timestamp; increase --page-size"
            )
        after = max(c["created_utc"] for c in new) - 1

    job.checkpoint_path.unlink(missing_ok=True)
    comments.sort(key=lambda c: (c["created_utc"], c["id"]))
    return comments


def to_post_rows(comments: list[dict]) -> list[dict]:
    """Posts-file rows ({id, utc, region, tokens}) in stable file order.

    Comments whose body yields no tokens are dropped (the schema requires
    non-empty token lists). Rows are ordered by (UTC day, id), the same
    order the downstream parser normalizes to.
    """
    rows = []
    for c in comments:
        tokens = tokenize(c["body"])
        if not tokens:
            continue
        rows.append({
            "id": c["id"],
            "utc": c["created_utc"],
            "region": c["subreddit"],
            "tokens": tokens,
        })
    rows.sort(key=lambda r: (_utc_day(r["utc"]), r["id"]))
    return rows


def _utc_day(ts: int):
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).date()


def write_posts_jsonl(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
