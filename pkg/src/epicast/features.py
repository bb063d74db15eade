"""Daily count features and univariate feature selection.

Cluster assignments become per-day count columns; selection keeps the top 25
columns by chi-squared score (binary targets) or by the F-test p-value of the
Pearson correlation (continuous targets).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np
from scipy import stats as sps

from .errors import ValidationError
from .ingest import DailySeries, PostRecord


@dataclass(frozen=True)
class FeatureTable:
    region: str
    start: date
    names: tuple[str, ...]
    X: np.ndarray  # day x feature

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        object.__setattr__(self, "X", X)
        if X.ndim != 2 or X.shape[1] != len(self.names):
            raise ValidationError("X must be day x feature with one column per name")
        if X.size and not np.isfinite(X).all():
            raise ValidationError("feature table contains non-finite entries")

    @property
    def n_days(self) -> int:
        return self.X.shape[0]

    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def select(self, names: list[str]) -> "FeatureTable":
        idx = [self.names.index(n) for n in names]
        return FeatureTable(self.region, self.start, tuple(names), self.X[:, idx])

    def hstack(self, other: "FeatureTable") -> "FeatureTable":
        if other.start != self.start or other.n_days != self.n_days:
            raise ValidationError("feature tables are not date-aligned")
        return FeatureTable(
            self.region, self.start, self.names + other.names,
            np.hstack([self.X, other.X]),
        )


@dataclass(frozen=True)
class SelectionResult:
    kept: tuple[tuple[str, float, float], ...]  # (name, score, p_value)
    method: str

    def names(self) -> list[str]:
        return [name for name, _, _ in self.kept]


def daily_cluster_counts(posts: list[PostRecord], labels,
                         start: date | None = None,
                         end: date | None = None) -> FeatureTable:
    """One column per cluster id; entry = posts of that cluster that day.

    Noise posts (label -1) are excluded. Days with no posts are explicit
    zero rows.
    """
    labels = np.asarray(labels)
    if len(labels) != len(posts):
        raise ValidationError("labels must align one-to-one with posts")
    days = [p.day for p in posts]
    start = start or min(days)
    end = end or max(days)
    n = (end - start).days + 1
    ids = sorted(int(c) for c in set(labels.tolist()) if c != -1)
    X = np.zeros((n, len(ids)))
    col = {c: j for j, c in enumerate(ids)}
    for p, lab in zip(posts, labels):
        lab = int(lab)
        if lab == -1:
            continue
        i = (p.day - start).days
        if 0 <= i < n:
            X[i, col[lab]] += 1
    names = tuple(f"cluster_{c}" for c in ids)
    region = posts[0].region if posts else ""
    return FeatureTable(region=region, start=start, names=names, X=X)


def moving_average(s: DailySeries, w: int = 7) -> DailySeries:
    """Trailing moving average; the first w-1 days use the available prefix."""
    if w < 1:
        raise ValidationError("window must be >= 1")
    v = s.values
    out = np.empty_like(v)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    for t in range(len(v)):
        lo = max(0, t - w + 1)
        out[t] = (csum[t + 1] - csum[lo]) / (t + 1 - lo)
    return DailySeries(region=s.region, name=s.name, start=s.start, values=out)


def moving_average_table(table: FeatureTable, w: int = 7) -> FeatureTable:
    cols = []
    for j in range(table.X.shape[1]):
        s = DailySeries(table.region, table.names[j], table.start, table.X[:, j])
        cols.append(moving_average(s, w).values)
    X = np.column_stack(cols) if cols else table.X
    return FeatureTable(table.region, table.start, table.names, X)


def _rank_and_keep(names, scores, pvals, top: int, method: str) -> SelectionResult:
    order = sorted(range(len(names)), key=lambda i: (pvals[i], -scores[i], names[i]))
    kept = tuple(
        (names[i], float(scores[i]), float(pvals[i])) for i in order[:top]
    )
    return SelectionResult(kept=kept, method=method)


def chi2_select(X: FeatureTable, y, top: int = 25) -> SelectionResult:
    """Chi-squared ranking of non-negative count columns against binary y.

    Observed = class-wise column sums; expected = column total x class prior;
    one degree of freedom.
    """
    y = np.asarray(y)
    if len(y) != X.n_days:
        raise ValidationError("y must have one label per day row")
    if (X.X < 0).any():
        raise ValidationError("chi-squared requires non-negative counts")
    priors = np.array([(y == 0).mean(), (y == 1).mean()])
    observed = np.vstack([X.X[y == 0].sum(axis=0), X.X[y == 1].sum(axis=0)])
    totals = observed.sum(axis=0)
    expected = np.outer(priors, totals)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(
            totals > 0,
            ((observed - expected) ** 2 / np.where(expected > 0, expected, 1.0)).sum(axis=0),
            0.0,
        )
    pvals = sps.chi2.sf(scores, df=1)
    pvals = np.where(totals > 0, pvals, 1.0)
    return _rank_and_keep(X.names, scores, pvals, top, "chi2")


def f_regression_scores(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column Pearson correlation turned into F(1, n-2) statistics.

    Returns (F, p). Constant columns get F=0, p=1.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 3:
        raise ValidationError("need at least 3 rows for the F-test")
    yc = y - y.mean()
    sy = np.linalg.norm(yc)
    if sy == 0:
        raise ValidationError("target is constant")
    Xc = X - X.mean(axis=0)
    sx = np.linalg.norm(Xc, axis=0)
    ok = sx > 0
    rho = np.zeros(X.shape[1])
    rho[ok] = (Xc[:, ok].T @ yc) / (sx[ok] * sy)
    rho = np.clip(rho, -1.0, 1.0)
    denom = 1.0 - rho**2
    F = np.zeros_like(rho)
    exact = denom <= np.finfo(float).eps
    with np.errstate(divide="ignore"):
        F[~exact] = rho[~exact] ** 2 / denom[~exact] * (n - 2)
    F[exact] = np.inf
    p = np.where(exact, 0.0, sps.f.sf(F, 1, n - 2))
    p[~ok] = 1.0
    F[~ok] = 0.0
    return F, p


def f_regression_select(X: FeatureTable, y, top: int = 25) -> SelectionResult:
    y = np.asarray(y, dtype=float)
    if len(y) != X.n_days:
        raise ValidationError("y must have one value per day row")
    F, p = f_regression_scores(X.X, y)
    return _rank_and_keep(X.names, F, p, top, "f_regression")


def keyword_counts(posts: list[PostRecord], lexicon: list[str],
                   start: date | None = None,
                   end: date | None = None) -> FeatureTable:
    """Daily occurrence count of each lexicon word over all post tokens."""
    if not lexicon:
        raise ValidationError("lexicon must be non-empty")
    days = [p.day for p in posts]
    start = start or min(days)
    end = end or max(days)
    n = (end - start).days + 1
    col = {w: j for j, w in enumerate(lexicon)}
    X = np.zeros((n, len(lexicon)))
    for p in posts:
        i = (p.day - start).days
        if not 0 <= i < n:
            continue
        for tok in p.tokens:
            j = col.get(tok)
            if j is not None:
                X[i, j] += 1
    region = posts[0].region if posts else ""
    return FeatureTable(region=region, start=start, names=tuple(lexicon), X=X)


def overrepresented_word_scores(target_posts: list[PostRecord],
                                background_counts: dict[str, int]
                                ) -> dict[str, float]:
    """2x2 chi-squared score per target word (word vs rest, target vs
    background). Words under-represented in the target get a negated score
    so they never outrank over-represented ones."""
    if not target_posts:
        raise ValidationError("target corpus is empty")
    tcounts: dict[str, int] = {}
    for p in target_posts:
        for tok in p.tokens:
            tcounts[tok] = tcounts.get(tok, 0) + 1
    t_total = sum(tcounts.values())
    b_total = sum(background_counts.values())
    scores: dict[str, float] = {}
    for w, a in tcounts.items():
        c = background_counts.get(w, 0)
        b = t_total - a
        d = b_total - c
        n = a + b + c + d
        row1, row2 = a + b, c + d
        col1, col2 = a + c, b + d
        if min(row1, row2, col1, col2) == 0:
            score = 0.0
        else:
            score = n * (a * d - b * c) ** 2 / (row1 * row2 * col1 * col2)
        over = b_total == 0 or a / t_total > c / b_total
        scores[w] = float(score) if over else -float(score)
    return scores


def overrepresented_words(target_posts: list[PostRecord],
                          background_counts: dict[str, int],
                          top: int) -> list[str]:
    """Top `top` words over-represented in the target corpus."""
    scores = overrepresented_word_scores(target_posts, background_counts)
    ranked = sorted(
        ((w, s) for w, s in scores.items() if s > 0),
        key=lambda x: (-x[1], x[0]),
    )
    return [w for w, _ in ranked[:top]]
