"""Export job description and output layout."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path

from .errors import ValidationError

ENCODERS = (
    "sbert-nli-stsb-base",
    "sroberta-nli-stsb-base",
    "sdistilbert-nli-stsb-base",
)


@dataclass(frozen=True)
class ExportJob:
    subreddit: str
    date_from: date
    date_to: date
    out_dir: Path
    encoder: str = ENCODERS[0]
    batch_size: int = 64
    page_size: int = 500
    endpoint: str | None = None
    dump_path: Path | None = None
    encoder_checkpoint: Path | None = None

    def __post_init__(self):
        if not self.subreddit:
            raise ValidationError("subreddit must be non-empty")
        if self.date_from > self.date_to:
            raise ValidationError("date range is reversed")
        if self.encoder not in ENCODERS:
            raise ValidationError(
                f"unknown encoder {self.encoder!r}; choose one of {ENCODERS}"
            )
        if self.batch_size < 1 or self.page_size < 1:
            raise ValidationError("batch_size and page_size must be >= 1")
        object.__setattr__(self, "out_dir", Path(self.out_dir))

    @property
    def from_ts(self) -> int:
        return _midnight_utc(self.date_from)

    @property
    def to_ts(self) -> int:
        """Exclusive upper bound: midnight after the last requested day."""
        return _midnight_utc(self.date_to) + 86400

    @property
    def posts_path(self) -> Path:
        return self.out_dir / "posts.jsonl"

    @property
    def embeddings_path(self) -> Path:
        return self.out_dir / "embeddings.jsonl"

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / "fetch.checkpoint.jsonl"


def _midnight_utc(day: date) -> int:
    return int(
        datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp()
    )
