"""Deterministic synthetic corpus generator for desk-scale experiments.

Produces a full input bundle: posts with planted per-cluster vocabulary,
Gaussian-blob embeddings, a caseload built from logistic waves, and smoothed
random-walk mobility / government-response covariates. Exactly one "signal"
cluster's daily post rate is a noisy copy of the caseload increase shifted
`lead` days earlier, so the generated corpus carries a known predictive
signal with a configurable signal-to-noise ratio.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .errors import ValidationError
from .ingest import CovariateBundle, DailySeries, EmbeddingMatrix, PostRecord

STOPWORDS = (
    "the", "and", "to", "of", "a", "in", "is", "it", "that", "for",
    "on", "with", "as", "was", "at", "be", "this", "are", "or", "but",
)


@dataclass
class SynthData:
    posts: list[PostRecord]
    embeddings: EmbeddingMatrix
    caseload: DailySeries
    mobility: dict[str, DailySeries]
    gov_response: dict[str, DailySeries]
    true_labels: np.ndarray  # planted cluster per post, aligned to posts
    signal_cluster: int
    vocab: dict[int, list[str]]
    manifest: dict

    def bundle(self, post_count: DailySeries) -> CovariateBundle:
        return CovariateBundle(
            caseload=self.caseload, mobility=self.mobility,
            gov_response=self.gov_response, post_count=post_count,
        )

    def true_counts(self):
        """Day x cluster count matrix implied by the planted assignment."""
        from .features import daily_cluster_counts

        return daily_cluster_counts(
            self.posts, self.true_labels,
            start=self.caseload.start, end=self.caseload.end,
        )


def _logistic(t: np.ndarray, amplitude: float, center: float, rate: float) -> np.ndarray:
    return amplitude / (1.0 + np.exp(-rate * (t - center)))


def _smooth_walk(rng: np.random.Generator, n: int, w: int = 7) -> np.ndarray:
    walk = np.cumsum(rng.standard_normal(n + w))
    kernel = np.ones(w) / w
    sm = np.convolve(walk, kernel, mode="valid")[:n]
    span = sm.max() - sm.min()
    return (sm - sm.min()) / span if span > 0 else np.zeros(n)


def synth_generate(seed: int = 0, n_days: int = 200, n_clusters: int = 8,
                   lead: int = 7, snr: float = 5.0, dim: int = 50,
                   region: str = "WA",
                   start: date = date(2020, 3, 7)) -> SynthData:
    """Generate a corpus with one cluster predictive of the caseload.

    The signal cluster's rate at day t tracks the caseload increase at day
    t + lead, corrupted with Gaussian noise of standard deviation
    sd(increase) / snr.
    """
    if lead < 1:
        raise ValidationError("lead must be >= 1")
    if n_days <= lead + 28:
        raise ValidationError("n_days must exceed lead + 28")
    if n_clusters < 2:
        raise ValidationError("need at least 2 clusters")
    rng = np.random.default_rng(seed)
    t = np.arange(n_days, dtype=float)

    # caseload: baseline plus successively larger logistic waves
    caseload_values = np.full(n_days, 50.0)
    # successive waves are larger but shallower: later surges grow the
    # caseload more in absolute terms while the relative growth rate falls
    for amp, frac, rate in ((300.0, 0.22, 0.6), (900.0, 0.5, 0.25),
                            (2700.0, 0.78, 0.2)):
        caseload_values += _logistic(t, amp, frac * n_days, rate)
    caseload_values *= 1.0 + 0.005 * rng.standard_normal(n_days)
    caseload_values = np.maximum(caseload_values, 1.0)
    increase = np.concatenate([[0.0], np.diff(caseload_values)])

    # per-cluster daily rates: the signal cluster tracks the relative
    # caseload increase (growth rate) shifted `lead` days earlier, so the
    # strength of the planted signal scales with the severity of the event
    signal_cluster = 0
    rel_increase = increase / np.maximum(
        np.concatenate([[caseload_values[0]], caseload_values[:-1]]), 1.0
    )
    led = np.concatenate([rel_increase[lead:], np.full(lead, rel_increase[-1])])
    max_rel = max(rel_increase.max(), 1e-9)
    noisy = led + (max_rel / snr) * rng.standard_normal(n_days)
    rates = np.empty((n_days, n_clusters))
    rates[:, signal_cluster] = 2.0 + 25.0 * np.maximum(noisy, 0.0) / max_rel
    for c in range(1, n_clusters):
        rates[:, c] = 3.0 + 5.0 * _smooth_walk(rng, n_days)
    counts = np.maximum(np.round(rates), 0).astype(int)

    # planted vocabulary and posts
    vocab = {
        c: [f"topic{c}w{j}" for j in range(8)] for c in range(n_clusters)
    }
    posts: list[PostRecord] = []
    labels: list[int] = []
    serial = 0
    for day_idx in range(n_days):
        day = start + timedelta(days=day_idx)
        for c in range(n_clusters):
            for _ in range(counts[day_idx, c]):
                words = list(rng.choice(vocab[c], size=4))
                words += list(rng.choice(STOPWORDS, size=3))
                posts.append(
                    PostRecord(
                        id=f"p{serial:07d}", day=day, region=region,
                        tokens=tuple(words),
                    )
                )
                labels.append(c)
                serial += 1

    # embeddings: well-separated Gaussian blobs
    centers = rng.standard_normal((n_clusters, dim))
    centers = 10.0 * centers / np.linalg.norm(centers, axis=1)[:, None]
    vectors = np.empty((len(posts), dim), dtype=np.float32)
    label_arr = np.array(labels, dtype=np.int64)
    for c in range(n_clusters):
        mask = label_arr == c
        vectors[mask] = (
            centers[c] + 0.5 * rng.standard_normal((int(mask.sum()), dim))
        ).astype(np.float32)

    end = start + timedelta(days=n_days - 1)
    caseload = DailySeries(region=region, name="caseload", start=start,
                           values=caseload_values)
    mobility = {
        name: DailySeries(region=region, name=name, start=start,
                          values=100.0 * _smooth_walk(rng, n_days) - 50.0)
        for name in ("mobility_retail", "mobility_work")
    }
    gov = {
        name: DailySeries(region=region, name=name, start=start,
                          values=100.0 * _smooth_walk(rng, n_days))
        for name in ("gov_stringency", "gov_containment")
    }
    manifest = {
        "seed": seed, "n_days": n_days, "n_clusters": n_clusters,
        "lead": lead, "snr": snr, "dim": dim, "region": region,
        "start": start.isoformat(), "end": end.isoformat(),
        "signal_cluster": signal_cluster,
        "cluster_sizes": np.bincount(label_arr, minlength=n_clusters).tolist(),
    }
    return SynthData(
        posts=posts,
        embeddings=EmbeddingMatrix(
            ids=tuple(p.id for p in posts), vectors=vectors
        ),
        caseload=caseload, mobility=mobility, gov_response=gov,
        true_labels=label_arr, signal_cluster=signal_cluster,
        vocab=vocab, manifest=manifest,
    )
