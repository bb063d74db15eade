"""PCA and UMAP projections with out-of-sample transform.

PCA is an eigendecomposition of the sample covariance (deterministic, sign
fixed). UMAP follows the standard pipeline: exact k-NN, per-point bandwidth
solved by bisection, fuzzy-union symmetrization and negative-sampling SGD on
the cross-entropy layout objective. New points are placed at the membership-
weighted average of their reference neighbors and refined with a few SGD
steps against the frozen reference layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .errors import DimensionError, ValidationError


@dataclass(frozen=True)
class UmapParams:
    n_neighbors: int = 15
    min_dist: float = 0.1
    n_epochs: int = 200
    out_dim: int = 2
    seed: int = 0
    negative_sample_rate: int = 5
    learning_rate: float = 1.0

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ValidationError("n_neighbors must be >= 2")
        if not 0 <= self.min_dist < 1:
            raise ValidationError("min_dist must be in [0, 1)")


@dataclass
class Projection:
    kind: str  # "pca" | "umap"
    in_dim: int
    out_dim: int
    # pca
    mean: np.ndarray | None = None
    components: np.ndarray | None = None  # k x D rows, orthonormal
    explained_variance: np.ndarray | None = None
    explained_variance_total: float = 0.0
    # umap
    params: UmapParams | None = None
    ref_X: np.ndarray | None = None
    ref_Y: np.ndarray | None = None
    rho: np.ndarray | None = None
    sigma: np.ndarray | None = None
    curve_a: float | None = None
    curve_b: float | None = None

    def explained_variance_ratio(self) -> np.ndarray:
        return self.explained_variance / self.explained_variance_total


def _pairwise_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def fit_pca(X: np.ndarray, k: int) -> Projection:
    """Top-k principal components via eigendecomposition of the covariance.

    Deterministic: components in descending-eigenvalue order, sign fixed so
    the largest-magnitude entry of each component is positive.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > d or n <= k:
        raise ValidationError(f"need 1 <= k <= D and n > k (got n={n}, D={d}, k={k})")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.maximum(evals[order], 0.0)
    comps = evecs[:, order].T  # k x D
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return Projection(
        kind="pca",
        in_dim=d,
        out_dim=k,
        mean=mean,
        components=comps,
        explained_variance=evals,
        explained_variance_total=float(np.trace(cov)),
    )


def _fit_curve_params(min_dist: float) -> tuple[float, float]:
    """Least-squares fit of 1/(1 + a d^(2b)) to the min_dist offset curve."""
    xv = np.linspace(0, 3.0, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist)))

    def f(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    (a, b), _ = curve_fit(f, xv, yv, p0=(1.0, 1.0), maxfev=10_000)
    return float(a), float(b)


def _smooth_knn(dists: np.ndarray, n_neighbors: int,
                n_iter: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (rho, sigma): rho is the nearest-neighbor distance, sigma
    solves sum_j exp(-max(0, d_ij - rho)/sigma) = log2(n_neighbors)."""
    n = dists.shape[0]
    target = np.log2(n_neighbors)
    rho = dists[:, 0].copy()
    sigma = np.empty(n)
    for i in range(n):
        lo, hi, mid = 0.0, np.inf, 1.0
        d = np.maximum(dists[i] - rho[i], 0.0)
        for _ in range(n_iter):
            val = np.exp(-d / mid).sum()
            if abs(val - target) < 1e-5:
                break
            if val > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        # guard against degenerate all-identical neighborhoods
        mean_d = dists[i].mean()
        sigma[i] = max(mid, 1e-3 * mean_d) if mean_d > 0 else 1.0
    return rho, sigma


def _knn(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors (self excluded)."""
    D = _pairwise_distances(X, X)
    np.fill_diagonal(D, np.inf)
    idx = np.argsort(D, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(D, idx, axis=1)


def _membership(dists: np.ndarray, rho: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None])


def _symmetrize(idx: np.ndarray, weights: np.ndarray,
                n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fuzzy union w = a + b - a*b over the directed k-NN graph.

    Returns undirected edge arrays (head, tail, weight) with head < tail.
    """
    directed: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j, w in zip(idx[i], weights[i]):
            directed[(i, int(j))] = float(w)
    combined: dict[tuple[int, int], float] = {}
    for (i, j), w in directed.items():
        key = (i, j) if i < j else (j, i)
        if key in combined:
            continue
        w_rev = directed.get((j, i), 0.0)
        combined[key] = w + w_rev - w * w_rev
    keys = sorted(combined)
    head = np.array([k[0] for k in keys], dtype=np.int64)
    tail = np.array([k[1] for k in keys], dtype=np.int64)
    weight = np.array([combined[k] for k in keys])
    return head, tail, weight


def _sgd_layout(Y: np.ndarray, head: np.ndarray, tail: np.ndarray,
                weight: np.ndarray, a: float, b: float, n_epochs: int,
                rng: np.random.Generator, negative_sample_rate: int,
                initial_alpha: float, move_other: bool = True,
                frozen_ref: np.ndarray | None = None) -> np.ndarray:
    """Negative-sampling SGD on the layout cross-entropy.

    Edges fire on the reference epochs_per_sample schedule; attraction and
    repulsion forces are applied in per-epoch vectorized batches. When
    `frozen_ref` is given, tails index into it and only heads move.
    """
    n_points = Y.shape[0]
    other = frozen_ref if frozen_ref is not None else Y
    w_max = weight.max()
    eps = w_max / np.maximum(weight, 1e-12)  # epochs between samples per edge
    next_sample = eps.copy()
    clip = 4.0
    for epoch in range(1, n_epochs + 1):
        alpha = initial_alpha * (1.0 - (epoch - 1) / n_epochs)
        live = next_sample <= epoch
        if not live.any():
            continue
        h, t = head[live], tail[live]
        diff = Y[h] - other[t]
        d2 = np.sum(diff**2, axis=1)
        att = np.where(
            d2 > 0.0,
            (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2**b + 1.0),
            0.0,
        )
        grad = np.clip(att[:, None] * diff, -clip, clip)
        np.add.at(Y, h, alpha * grad)
        if move_other and frozen_ref is None:
            np.add.at(Y, t, -alpha * grad)
        # repulsion via uniform negative samples
        for _ in range(negative_sample_rate):
            neg = rng.integers(0, other.shape[0], size=h.shape[0])
            diff_n = Y[h] - other[neg]
            d2n = np.sum(diff_n**2, axis=1)
            rep = (2.0 * b) / ((0.001 + d2n) * (a * d2n**b + 1.0))
            grad_n = np.where(
                d2n[:, None] > 0.0, np.clip(rep[:, None] * diff_n, -clip, clip), clip
            )
            np.add.at(Y, h, alpha * grad_n)
        next_sample[live] += eps[live]
    return Y


def fit_umap(X: np.ndarray, p: UmapParams) -> Projection:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n <= p.n_neighbors:
        raise ValidationError(f"need n > n_neighbors (got n={n}, k={p.n_neighbors})")
    idx, dists = _knn(X, p.n_neighbors)
    rho, sigma = _smooth_knn(dists, p.n_neighbors)
    weights = _membership(dists, rho, sigma)
    head, tail, weight = _symmetrize(idx, weights, n)
    a, b = _fit_curve_params(p.min_dist)
    rng = np.random.default_rng(p.seed)
    Y = rng.uniform(-10.0, 10.0, size=(n, p.out_dim))
    Y = _sgd_layout(
        Y, head, tail, weight, a, b, p.n_epochs, rng,
        p.negative_sample_rate, p.learning_rate,
    )
    if not np.isfinite(Y).all():
        raise ValidationError("UMAP layout diverged to non-finite coordinates")
    return Projection(
        kind="umap", in_dim=d, out_dim=p.out_dim, params=p,
        ref_X=X, ref_Y=Y, rho=rho, sigma=sigma, curve_a=a, curve_b=b,
    )


def transform(proj: Projection, X: np.ndarray) -> np.ndarray:
    """Project new rows through a fitted Projection."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != proj.in_dim:
        raise DimensionError(
            f"expected m x {proj.in_dim} input, got {X.shape}"
        )
    if proj.kind == "pca":
        return (X - proj.mean) @ proj.components.T
    return _umap_transform(proj, X)


def _umap_transform(proj: Projection, X: np.ndarray) -> np.ndarray:
    p = proj.params
    k = p.n_neighbors
    D = _pairwise_distances(X, proj.ref_X)
    idx = np.argsort(D, axis=1, kind="stable")[:, :k]
    dists = np.take_along_axis(D, idx, axis=1)
    rho, sigma = _smooth_knn(dists, k)
    W = _membership(dists, rho, sigma)
    W = W / np.maximum(W.sum(axis=1, keepdims=True), 1e-12)
    Y = np.einsum("mk,mkd->md", W, proj.ref_Y[idx])
    # refinement SGD against the frozen reference layout
    m = X.shape[0]
    head = np.repeat(np.arange(m), k)
    tail = idx.ravel()
    weight = W.ravel()
    keep = weight > 1e-12
    rng = np.random.default_rng(p.seed + 1)
    Y = _sgd_layout(
        Y, head[keep], tail[keep], weight[keep], proj.curve_a, proj.curve_b,
        5, rng, p.negative_sample_rate, p.learning_rate / 4.0,
        frozen_ref=proj.ref_Y,
    )
    return Y


def trustworthiness(X: np.ndarray, Y: np.ndarray, k: int) -> float:
    """Standard trustworthiness of an embedding Y of X; 1.0 is perfect."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = X.shape[0]
    if Y.shape[0] != n:
        raise DimensionError("X and Y must have the same number of rows")
    if not 0 < k < n / 2:
        raise ValidationError("need 0 < k < n/2")
    DX = _pairwise_distances(X, X)
    DY = _pairwise_distances(Y, Y)
    np.fill_diagonal(DX, np.inf)
    np.fill_diagonal(DY, np.inf)
    order_X = np.argsort(DX, axis=1, kind="stable")
    ranks_X = np.empty_like(order_X)
    rows = np.arange(n)[:, None]
    ranks_X[rows, order_X] = np.arange(n)[None, :] + 1  # rank 1 = nearest
    nn_Y = np.argsort(DY, axis=1, kind="stable")[:, :k]
    nn_X = order_X[:, :k]
    total = 0.0
    for i in range(n):
        missing = np.setdiff1d(nn_Y[i], nn_X[i], assume_unique=True)
        total += np.maximum(ranks_X[i, missing] - k, 0).sum()
    return float(1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * total)


def save_projection(proj: Projection, path) -> None:
    obj: dict = {"kind": proj.kind, "in_dim": proj.in_dim, "out_dim": proj.out_dim}
    if proj.kind == "pca":
        obj["mean"] = proj.mean.tolist()
        obj["components"] = proj.components.tolist()
        obj["explained_variance"] = proj.explained_variance.tolist()
        obj["explained_variance_total"] = proj.explained_variance_total
    else:
        p = proj.params
        obj["params"] = {
            "n_neighbors": p.n_neighbors, "min_dist": p.min_dist,
            "n_epochs": p.n_epochs, "out_dim": p.out_dim, "seed": p.seed,
            "negative_sample_rate": p.negative_sample_rate,
            "learning_rate": p.learning_rate,
        }
        obj["ref_X"] = proj.ref_X.tolist()
        obj["ref_Y"] = proj.ref_Y.tolist()
        obj["rho"] = proj.rho.tolist()
        obj["sigma"] = proj.sigma.tolist()
        obj["curve_a"] = proj.curve_a
        obj["curve_b"] = proj.curve_b
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_projection(path) -> Projection:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj["kind"] == "pca":
        return Projection(
            kind="pca", in_dim=obj["in_dim"], out_dim=obj["out_dim"],
            mean=np.array(obj["mean"]),
            components=np.array(obj["components"]),
            explained_variance=np.array(obj["explained_variance"]),
            explained_variance_total=obj["explained_variance_total"],
        )
    return Projection(
        kind="umap", in_dim=obj["in_dim"], out_dim=obj["out_dim"],
        params=UmapParams(**obj["params"]),
        ref_X=np.array(obj["ref_X"]), ref_Y=np.array(obj["ref_Y"]),
        rho=np.array(obj["rho"]), sigma=np.array(obj["sigma"]),
        curve_a=obj["curve_a"], curve_b=obj["curve_b"],
    )
