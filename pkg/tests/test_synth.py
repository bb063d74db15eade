import numpy as np
import pytest

from epicast.errors import ValidationError
from epicast.features import f_regression_select
from epicast.synth import synth_generate


def test_preconditions():
    with pytest.raises(ValidationError):
        synth_generate(lead=0)
    with pytest.raises(ValidationError):
        synth_generate(n_days=30, lead=7)


def test_fixed_seed_identical_corpus():
    a = synth_generate(seed=4, n_days=60, n_clusters=3, dim=8)
    b = synth_generate(seed=4, n_days=60, n_clusters=3, dim=8)
    assert a.posts == b.posts
    np.testing.assert_array_equal(a.embeddings.vectors, b.embeddings.vectors)
    np.testing.assert_array_equal(a.caseload.values, b.caseload.values)
    assert a.manifest == b.manifest


def test_high_snr_counts_track_led_relative_increase():
    d = synth_generate(seed=0, n_days=200, n_clusters=4, lead=7, snr=1e9,
                       dim=8)
    counts = d.true_counts().column(f"cluster_{d.signal_cluster}")
    cv = d.caseload.values
    rel = np.concatenate([[0.0], np.diff(cv) / cv[:-1]])
    led = np.concatenate([rel[7:], np.full(7, rel[-1])])
    led = np.maximum(led, 0.0)  # negative growth floors the posting rate
    rho = np.corrcoef(counts, led)[0, 1]
    assert rho > 0.99


def test_f_regression_ranks_signal_cluster_first():
    hits = 0
    for seed in range(10):
        d = synth_generate(seed=seed, n_days=200, n_clusters=8, dim=8)
        counts = d.true_counts()
        cv = d.caseload.values
        rel = np.concatenate([[0.0], np.diff(cv) / cv[:-1]])
        led = np.concatenate([rel[7:], np.full(7, rel[-1])])
        res = f_regression_select(counts, led, top=8)
        hits += res.names()[0] == f"cluster_{d.signal_cluster}"
    assert hits >= 9


def test_manifest_and_embedding_geometry():
    d = synth_generate(seed=1, n_days=60, n_clusters=3, dim=16)
    assert d.manifest["cluster_sizes"][d.signal_cluster] > 0
    assert len(d.posts) == len(d.embeddings.ids) == len(d.true_labels)
    # blobs are well separated: same-cluster distances < cross-cluster
    V = d.embeddings.vectors.astype(float)
    c0 = V[d.true_labels == 0].mean(axis=0)
    c1 = V[d.true_labels == 1].mean(axis=0)
    spread = np.linalg.norm(V[d.true_labels == 0] - c0, axis=1).max()
    assert np.linalg.norm(c0 - c1) > 3 * spread


def test_covariates_present_and_finite():
    d = synth_generate(seed=2, n_days=60, n_clusters=3, dim=8)
    assert set(d.mobility) == {"mobility_retail", "mobility_work"}
    assert set(d.gov_response) == {"gov_stringency", "gov_containment"}
    for s in list(d.mobility.values()) + list(d.gov_response.values()):
        assert np.isfinite(s.values).all()
        assert len(s) == 60
