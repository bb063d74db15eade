import numpy as np
import pytest

from epicast.dimred import (UmapParams, fit_pca, fit_umap,
                            load_projection, save_projection, transform,
                            trustworthiness)
from epicast.errors import ValidationError


def _blobs(rng, centers, n_per=50, scale=0.5):
    X = np.vstack([
        c + scale * rng.standard_normal((n_per, len(c))) for c in centers
    ])
    labels = np.repeat(np.arange(len(centers)), n_per)
    return X, labels


def test_pca_line_direction():
    t = np.linspace(-1, 1, 30)[:, None]
    direction = np.array([1.0, 2.0, -1.0])
    X = t * direction
    proj = fit_pca(X, 1)
    comp = proj.components[0]
    cos = abs(comp @ direction) / (np.linalg.norm(comp) * np.linalg.norm(direction))
    assert cos > 1 - 1e-6


def test_pca_matches_2x2_closed_form():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((500, 2)) * np.array([10.0, 1.0])
    proj = fit_pca(X, 2)
    # closed-form eigenvalues of the 2x2 covariance
    C = np.cov(X, rowvar=False, bias=True)
    tr, det = C[0, 0] + C[1, 1], C[0, 0] * C[1, 1] - C[0, 1] * C[1, 0]
    disc = np.sqrt(tr * tr / 4 - det)
    lam = np.array([tr / 2 + disc, tr / 2 - disc])
    ratio = proj.explained_variance_ratio()
    np.testing.assert_allclose(ratio, lam / lam.sum(), atol=1e-8)


def test_pca_k_zero_errors():
    with pytest.raises(ValidationError):
        fit_pca(np.eye(4), 0)


def test_pca_transform_of_mean_is_zero():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((20, 5))
    proj = fit_pca(X, 3)
    out = transform(proj, X.mean(axis=0)[None, :])
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_pca_transform_matches_naive_matmul():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 8))
    proj = fit_pca(X, 4)
    Z = rng.standard_normal((5, 8))
    exp = (Z - proj.mean) @ proj.components.T
    np.testing.assert_allclose(transform(proj, Z), exp, atol=1e-10)


def test_umap_blobs_trustworthy_and_separated():
    rng = np.random.default_rng(3)
    centers = [np.r_[np.full(20, v)] for v in (0.0, 8.0, -8.0)]
    X, labels = _blobs(rng, centers, n_per=50, scale=0.5)
    proj = fit_umap(X, UmapParams(n_neighbors=10, n_epochs=200, seed=0))
    Y = proj.ref_Y
    assert trustworthiness(X, Y, k=10) >= 0.90
    cents = np.array([Y[labels == c].mean(axis=0) for c in range(3)])
    inter = np.mean([np.linalg.norm(cents[i] - cents[j])
                     for i in range(3) for j in range(i + 1, 3)])
    intra = np.mean([np.linalg.norm(Y[labels == c] - cents[c], axis=1).mean()
                     for c in range(3)])
    assert inter > intra


def test_umap_deterministic():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((60, 10))
    p = UmapParams(n_neighbors=8, n_epochs=50, seed=11)
    Y1 = fit_umap(X, p).ref_Y
    Y2 = fit_umap(X, p).ref_Y
    np.testing.assert_array_equal(Y1, Y2)


def test_umap_transform_locality():
    rng = np.random.default_rng(5)
    centers = [np.full(10, 0.0), np.full(10, 9.0)]
    X, labels = _blobs(rng, centers, n_per=40, scale=0.4)
    proj = fit_umap(X, UmapParams(n_neighbors=10, n_epochs=100, seed=0))
    Y = proj.ref_Y
    out = transform(proj, X[:5])
    blob_coords = Y[labels == 0]
    radius = np.linalg.norm(
        blob_coords - blob_coords.mean(axis=0), axis=1).max()
    for i in range(5):
        assert np.linalg.norm(out[i] - Y[i]) <= 2 * radius


def test_trustworthiness_identity_and_errors():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((30, 4))
    assert trustworthiness(X, X.copy(), k=5) == 1.0
    with pytest.raises(ValidationError):
        trustworthiness(X, X, k=30)


def test_trustworthiness_matches_brute_force():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((25, 5))
    Y = X[rng.permutation(25)]
    k = 6
    got = trustworthiness(X, Y, k=k)

    # textbook O(n^2) re-implementation
    n = len(X)
    dx = np.linalg.norm(X[:, None] - X[None], axis=2)
    dy = np.linalg.norm(Y[:, None] - Y[None], axis=2)
    total = 0.0
    for i in range(n):
        rank_x = np.argsort(np.argsort(np.delete(dx[i], i), kind="stable"),
                            kind="stable")
        order_x = {j: r for r, j in enumerate(
            [j for j in np.argsort(dx[i], kind="stable") if j != i])}
        nn_y = [j for j in np.argsort(dy[i], kind="stable") if j != i][:k]
        nn_x = set([j for j in np.argsort(dx[i], kind="stable") if j != i][:k])
        for j in nn_y:
            if j not in nn_x:
                total += order_x[j] + 1 - k
    exp = 1 - 2 / (n * k * (2 * n - 3 * k - 1)) * total
    assert got == pytest.approx(exp, abs=1e-9)


def test_projection_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    X = rng.standard_normal((40, 6))
    proj = fit_umap(X, UmapParams(n_neighbors=6, n_epochs=30, seed=1))
    path = tmp_path / "proj.json"
    save_projection(proj, path)
    back = load_projection(path)
    np.testing.assert_allclose(back.ref_Y, proj.ref_Y)
    np.testing.assert_array_equal(
        transform(back, X[:3]), transform(proj, X[:3])
    )
