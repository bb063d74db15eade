"""Parsing and alignment of posts, embeddings and daily covariate series.

All inputs arrive as flat files (JSON-lines for posts/embeddings, CSV for
daily series) and are turned into immutable, date-indexed values. Gaps in a
daily series are encoded as NaN until :func:`align_bundle` fills them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone

import numpy as np

from .errors import CoverageError, DimensionError, ParseError, ValidationError


@dataclass(frozen=True)
class PostRecord:
    id: str
    day: date
    region: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class EmbeddingMatrix:
    ids: tuple[str, ...]
    vectors: np.ndarray  # n x D, float32, row order matches ids

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise DimensionError("vectors must be n x D with one row per id")
        if not np.isfinite(self.vectors).all():
            raise ValidationError("embedding matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class DailySeries:
    """One value per consecutive calendar day starting at `start`.

    Missing observations inside the span are NaN until filled.
    """

    region: str
    name: str
    start: date
    values: np.ndarray = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end(self) -> date:
        return self.start + timedelta(days=len(self.values) - 1)

    def index_of(self, day: date) -> int:
        return (day - self.start).days

    def value_on(self, day: date) -> float:
        i = self.index_of(day)
        if not 0 <= i < len(self.values):
            raise CoverageError(f"{day} outside series span {self.start}..{self.end}")
        return float(self.values[i])

    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(len(self.values))]


@dataclass(frozen=True)
class CovariateBundle:
    caseload: DailySeries
    mobility: dict[str, DailySeries]
    gov_response: dict[str, DailySeries]
    post_count: DailySeries

    def all_series(self) -> list[DailySeries]:
        return (
            [self.caseload]
            + [self.mobility[k] for k in sorted(self.mobility)]
            + [self.gov_response[k] for k in sorted(self.gov_response)]
            + [self.post_count]
        )


def _utc_day(ts: int) -> date:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).date()


def parse_posts(path) -> list[PostRecord]:
    """Parse a JSON-lines posts file: {id, utc, region, tokens} per line."""
    records = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            for key in ("id", "utc", "region", "tokens"):
                if key not in obj:
                    raise ParseError(f"missing field {key!r}", line=lineno)
            if not obj["tokens"]:
                raise ParseError("tokens must be non-empty", line=lineno)
            pid = str(obj["id"])
            if pid in seen:
                raise ValidationError(f"duplicate post id {pid!r} at line {lineno}")
            seen.add(pid)
            records.append(
                PostRecord(
                    id=pid,
                    day=_utc_day(obj["utc"]),
                    region=str(obj["region"]),
                    tokens=tuple(str(t) for t in obj["tokens"]),
                )
            )
    records.sort(key=lambda r: (r.day, r.id))
    return records


def write_posts(path, posts: list[PostRecord]) -> None:
    """Inverse of parse_posts (day is written back as midnight UTC)."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in posts:
            utc = int(datetime(p.day.year, p.day.month, p.day.day, tzinfo=timezone.utc).timestamp())
            fh.write(
                json.dumps(
                    {"id": p.id, "utc": utc, "region": p.region, "tokens": list(p.tokens)}
                )
                + "\n"
            )


def parse_embeddings(path) -> EmbeddingMatrix:
    """Parse a JSON-lines embeddings file: {id, v: [float]} per line."""
    ids: list[str] = []
    rows: list[np.ndarray] = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if "id" not in obj or "v" not in obj:
                raise ParseError("missing field 'id' or 'v'", line=lineno)
            v = np.asarray(obj["v"], dtype=np.float32)
            if v.ndim != 1:
                raise ParseError("'v' must be a flat numeric array", line=lineno)
            if dim is None:
                dim = len(v)
            elif len(v) != dim:
                raise DimensionError(
                    f"line {lineno}: vector length {len(v)} != expected {dim}"
                )
            if not np.isfinite(v).all():
                raise ValidationError(f"line {lineno}: non-finite embedding value")
            ids.append(str(obj["id"]))
            rows.append(v)
    if not rows:
        raise ParseError("empty embeddings file")
    return EmbeddingMatrix(ids=tuple(ids), vectors=np.vstack(rows))


def write_embeddings(path, emb: EmbeddingMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pid, row in zip(emb.ids, emb.vectors):
            fh.write(json.dumps({"id": pid, "v": [float(x) for x in row]}) + "\n")


def load_series_csv(path, schema: dict[str, str], region: str) -> DailySeries:
    """Load one value column of a daily CSV into a DailySeries.

    `schema` maps {"date": <date column>, "value": <value column>}; missing
    dates inside the observed span become NaN gaps.
    """
    date_col, value_col = schema["date"], schema["value"]
    obs: dict[date, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty series file")
        for rowno, row in enumerate(reader, start=2):
            try:
                d = date.fromisoformat(row[date_col])
            except (ValueError, KeyError) as exc:
                raise ParseError(f"bad date in column {date_col!r}", line=rowno) from exc
            raw = row.get(value_col, "")
            if raw is None or raw == "":
                continue
            obs[d] = float(raw)
    if not obs:
        raise ParseError("series file has no data rows")
    start, end = min(obs), max(obs)
    n = (end - start).days + 1
    values = np.full(n, np.nan)
    for d, v in obs.items():
        values[(d - start).days] = v
    return DailySeries(region=region, name=value_col, start=start, values=values)


def write_series_csv(path, series: DailySeries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", series.name])
        for d, v in zip(series.dates(), series.values):
            writer.writerow([d.isoformat(), "" if np.isnan(v) else repr(float(v))])


def clip_and_fill(series: DailySeries, start: date, end: date) -> DailySeries:
    """Clip to [start, end]; forward-fill interior gaps; leading gaps take
    the first observed value."""
    if series.start > end or series.end < start:
        raise CoverageError(
            f"series {series.name!r} ({series.start}..{series.end}) "
            f"does not overlap {start}..{end}"
        )
    n = (end - start).days + 1
    values = np.full(n, np.nan)
    lo = max(series.start, start)
    hi = min(series.end, end)
    src = series.values[series.index_of(lo) : series.index_of(hi) + 1]
    values[(lo - start).days : (lo - start).days + len(src)] = src
    finite = np.flatnonzero(np.isfinite(values))
    if finite.size == 0:
        raise CoverageError(f"series {series.name!r} has no observations in range")
    # leading gaps <- first observation; everything after: forward fill
    values[: finite[0]] = values[finite[0]]
    for i in range(finite[0] + 1, n):
        if np.isnan(values[i]):
            values[i] = values[i - 1]
    return DailySeries(region=series.region, name=series.name, start=start, values=values)


def align_bundle(bundle: CovariateBundle, start: date, end: date) -> CovariateBundle:
    """Clip every member to [start, end] and fill gaps (see clip_and_fill)."""
    return CovariateBundle(
        caseload=clip_and_fill(bundle.caseload, start, end),
        mobility={k: clip_and_fill(v, start, end) for k, v in bundle.mobility.items()},
        gov_response={
            k: clip_and_fill(v, start, end) for k, v in bundle.gov_response.items()
        },
        post_count=clip_and_fill(bundle.post_count, start, end),
    )


def daily_post_counts(posts: list[PostRecord], region: str,
                      start: date | None = None, end: date | None = None) -> DailySeries:
    """Number of posts per day; days with no posts are explicit zeros."""
    days = [p.day for p in posts if p.region == region]
    if not days and (start is None or end is None):
        raise ValidationError(f"no posts for region {region!r}")
    start = start or min(days)
    end = end or max(days)
    n = (end - start).days + 1
    values = np.zeros(n)
    for d in days:
        i = (d - start).days
        if 0 <= i < n:
            values[i] += 1
    return DailySeries(region=region, name="post_count", start=start, values=values)
