"""Pipeline configuration: an INI file with one section per stage.

Every value has a default, so a config file only needs to name its inputs.
The SHA-256 of the canonical key-value dump identifies the configuration in
emitted tables and cache keys.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path

from .errors import ValidationError


def _parse_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


@dataclass
class PipelineConfig:
    # [data]
    posts: str = "posts.jsonl"
    embeddings: str = "embeddings.jsonl"
    caseload: str = "caseload.csv"
    mobility: list[str] = field(default_factory=list)
    gov_response: list[str] = field(default_factory=list)
    region: str = "WA"
    start: date = date(2020, 3, 7)
    end: date = date(2021, 1, 17)
    # [dimred]
    reduce_dim: int = 50
    n_neighbors: int = 15
    min_dist: float = 0.1
    umap_epochs: int = 200
    # [cluster]
    min_cluster_size: int = 25
    min_samples: int | None = None
    # [features]
    top_features: int = 25
    ma_window: int = 7
    # [threshold]
    taus: list[int] = field(default_factory=lambda: [7, 14, 21, 28])
    thresholds: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8, 1.0])
    # [forecast]
    horizons: list[int] = field(default_factory=lambda: [7, 14, 21])
    context_len: int = 28
    epochs: int = 50
    gp_restarts: int = 16
    models: list[str] = field(
        default_factory=lambda: ["martingale", "gp", "transformer"]
    )
    forecast_train_end: date = date(2020, 12, 31)
    forecast_test_end: date = date(2021, 3, 1)
    # [grid]
    k_grid: list[int] = field(default_factory=lambda: [25, 50, 75, 100, 125, 150])
    # [run]
    seed: int = 0
    out_dir: str = "out"

    def config_hash(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


_INT_LISTS = {"taus", "horizons", "k_grid"}
_FLOAT_LISTS = {"thresholds"}
_STR_LISTS = {"mobility", "gov_response", "models"}
_DATES = {"start", "end", "forecast_train_end", "forecast_test_end"}

_SECTIONS = {
    "data": ["posts", "embeddings", "caseload", "mobility", "gov_response",
             "region", "start", "end"],
    "dimred": ["reduce_dim", "n_neighbors", "min_dist", "umap_epochs"],
    "cluster": ["min_cluster_size", "min_samples"],
    "features": ["top_features", "ma_window"],
    "threshold": ["taus", "thresholds"],
    "forecast": ["horizons", "context_len", "epochs", "gp_restarts", "models",
                 "forecast_train_end", "forecast_test_end"],
    "grid": ["k_grid"],
    "run": ["seed", "out_dir"],
}


def load_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValidationError(f"config file not found: {path}")
    cfg = PipelineConfig()
    types = {f.name: f.type for f in fields(PipelineConfig)}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if not parser.has_option(section, key):
                continue
            raw = parser.get(section, key)
            if key in _DATES:
                value = date.fromisoformat(raw)
            elif key in _INT_LISTS:
                value = [int(x) for x in _parse_list(raw)]
            elif key in _FLOAT_LISTS:
                value = [float(x) for x in _parse_list(raw)]
            elif key in _STR_LISTS:
                value = _parse_list(raw)
            elif types[key] in ("int", "int | None"):
                value = int(raw)
            elif types[key] == "float":
                value = float(raw)
            else:
                value = raw
            setattr(cfg, key, value)
    if cfg.start >= cfg.end:
        raise ValidationError("start date must precede end date")
    return cfg


def write_config(cfg: PipelineConfig, path) -> None:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser.add_section(section)
        for key in keys:
            value = getattr(cfg, key)
            if value is None:
                continue
            if isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            parser.set(section, key, str(value))
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def resolve_inputs(cfg: PipelineConfig, base: Path) -> dict[str, Path]:
    """Absolute input paths; every referenced file must exist."""
    paths = {"posts": base / cfg.posts, "embeddings": base / cfg.embeddings,
             "caseload": base / cfg.caseload}
    for i, m in enumerate(cfg.mobility):
        paths[f"mobility_{i}"] = base / m
    for i, g in enumerate(cfg.gov_response):
        paths[f"gov_{i}"] = base / g
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise ValidationError(f"missing input files: {', '.join(missing)}")
    return paths
