"""Acceptance suite: one scaled-down, fully seeded check per headline claim.

Every test prints a single [PASS]/[FAIL] line (visible with `pytest -s`)
and enforces its own wall-clock budget. All fixtures are generated by
epicast.synth; no external data or services are required.
"""

import dataclasses
import time
from datetime import timedelta
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy import stats as sps
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from epicast import cli
from epicast.cluster import (build_mst, core_distances, hdbscan_fit,
                             silhouette, spherical_kmeans)
from epicast.config import load_config
from epicast.dimred import UmapParams, fit_pca, fit_umap, transform
from epicast.features import (FeatureTable, chi2_select, f_regression_scores,
                              moving_average, moving_average_table,
                              overrepresented_word_scores)
from epicast.forecast import ForecastProblem, difference, run_forecast
from epicast.gp import gp_fit, gp_predict, rbf_kernel
from epicast.ingest import PostRecord
from epicast.report import run_pipeline
from epicast.stats import ErrorDistribution, stars_for_p, z_test
from epicast.synth import synth_generate
from epicast.threshold import (ThresholdSpec, balance_and_split, evaluate,
                               label_days, train_forest)
from epicast.transformer import (TransformerHp, encoder_forward, init_params,
                                 loss_and_grads, make_windows,
                                 transformer_fit, transformer_predict)


def _report(name, ok, budget, elapsed, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}" \
           f" [{elapsed:.1f}s / budget {budget:.0f}s]"
    print(line)
    assert ok and elapsed < budget, line


# --- shared fixture helpers --------------------------------------------------

def _two_blobs_with_outliers(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([
        rng.normal(0.0, 0.3, size=(30, 2)),
        rng.normal(10.0, 0.3, size=(30, 2)),
        rng.uniform(40.0, 80.0, size=(5, 2)),
    ])
    truth = np.array([0] * 30 + [1] * 30 + [-1] * 5)
    return X, truth


def _mutual_reachability(X, min_samples):
    core = core_distances(X, min_samples)
    d = np.linalg.norm(X[:, None] - X[None], axis=2)
    return np.maximum(d, np.maximum(core[:, None], core[None, :]))


def _oracle_stabilities(mr, mcs):
    """Condensed-tree stabilities recomputed through scipy single linkage."""
    n = mr.shape[0]
    Z = linkage(squareform(mr, checks=False), method="single")
    children = {n + i: [int(a), int(b)] for i, (a, b, _, _) in enumerate(Z)}

    def leaves(node):
        if node < n:
            return [node]
        return leaves(children[node][0]) + leaves(children[node][1])

    height = {n + i: Z[i, 2] for i in range(len(Z))}
    stabilities = {}

    def condense(node, lam_birth):
        pts = frozenset(leaves(node))
        total = 0.0
        while True:
            a, b = children[node]
            la, lb = len(leaves(a)), len(leaves(b))
            lam = 1.0 / max(height[node], 1e-12)
            if la >= mcs and lb >= mcs:
                total += (la + lb) * (lam - lam_birth)
                stabilities[pts] = total
                condense(a, lam)
                condense(b, lam)
                return
            if la < mcs and lb < mcs:
                total += (la + lb) * (lam - lam_birth)
                stabilities[pts] = total
                return
            small, big = (a, b) if la < lb else (b, a)
            total += len(leaves(small)) * (lam - lam_birth)
            node = big

    root = n + len(Z) - 1
    condense(root, 1.0 / max(height[root], 1e-12))
    return stabilities


def _rf_accuracy(data, counts, m, tau=7, seed=0):
    mu = moving_average(data.caseload, 7)
    labelled = label_days(mu, ThresholdSpec(tau, m))
    table = moving_average_table(counts, 7)
    idx = [(d - table.start).days for d in labelled.days]
    ds = balance_and_split(table.X[idx], labelled.labels, labelled.days,
                           seed=seed)
    forest = train_forest(ds, feature_names=table.names)
    return evaluate(forest, ds)


# --- 1. oracle equivalence ----------------------------------------------------

def test_oracle_equivalence():
    t0 = time.monotonic()
    ok, details = True, []

    # PCA explained variance vs closed-form 2x2 eigensolver
    rng = np.random.default_rng(0)
    X = rng.standard_normal((500, 2)) * np.array([10.0, 1.0])
    C = np.cov(X, rowvar=False, bias=True)
    tr, det = C[0, 0] + C[1, 1], C[0, 0] * C[1, 1] - C[0, 1] * C[1, 0]
    disc = np.sqrt(tr * tr / 4 - det)
    lam = np.array([tr / 2 + disc, tr / 2 - disc])
    err = np.abs(fit_pca(X, 2).explained_variance_ratio()
                 - lam / lam.sum()).max()
    ok &= err < 1e-8
    details.append(f"pca {err:.1e}")

    # MST total weight vs independent Kruskal
    X = rng.standard_normal((15, 2))
    ms = 3
    got = sum(e.weight for e in build_mst(X, core_distances(X, ms)))
    mr = _mutual_reachability(X, ms)
    edges = sorted((mr[i, j], i, j)
                   for i in range(15) for j in range(i + 1, 15))
    parent = list(range(15))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    total = 0.0
    for w, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            total += w
    ok &= abs(got - total) < 1e-12
    details.append(f"mst {abs(got - total):.1e}")

    # silhouette vs O(n^2) textbook oracle
    X = rng.standard_normal((12, 2))
    labels = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2])
    d = np.linalg.norm(X[:, None] - X[None], axis=2)
    vals = []
    for i in range(12):
        a = np.mean([d[i, j] for j in range(12)
                     if labels[j] == labels[i] and j != i])
        b = min(np.mean([d[i, j] for j in range(12) if labels[j] == c])
                for c in set(labels.tolist()) if c != labels[i])
        vals.append((b - a) / max(a, b))
    err = abs(silhouette(X, labels) - np.mean(vals))
    ok &= err < 1e-12
    details.append(f"silhouette {err:.1e}")

    # f_regression p-value vs quadrature of the F(1, n-2) tail
    Xf = rng.standard_normal((20, 1))
    y = rng.standard_normal(20)
    F, p = f_regression_scores(Xf, y)
    tail, _ = integrate.quad(lambda x: sps.f.pdf(x, 1, 18), F[0], np.inf)
    ok &= abs(p[0] - tail) < 1e-6
    details.append(f"f_reg {abs(p[0] - tail):.1e}")

    # chi-squared vs hand-computed 2x2 tables (exact)
    D0 = synth_generate(seed=0, n_days=40, n_clusters=2, lead=1,
                        dim=4).caseload.start
    t = chi2_select(
        FeatureTable("WA", D0, ("a",), np.array([[0.0], [0.0], [5.0], [5.0]])),
        np.array([0, 0, 1, 1]),
    )
    ok &= t.kept[0][1] == 10.0
    post = PostRecord(id="p0", day=D0, region="WA", tokens=("a", "a", "b"))
    scores = overrepresented_word_scores([post], {"a": 1, "b": 6})
    a, b, c, dd, n = 2, 1, 1, 6, 10
    hand = n * (a * dd - b * c) ** 2 / ((a + b) * (c + dd) * (a + c) * (b + dd))
    ok &= scores["a"] == hand
    details.append("chi2 exact")

    _report("oracle equivalence", ok, 10.0, time.monotonic() - t0,
            "; ".join(details))


# --- 2. stability ledger -------------------------------------------------------

def test_stability_ledger():
    t0 = time.monotonic()
    worst = 0.0
    checked = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_blobs = 2 + seed % 2
        mcs = 15 + (seed % 3) * 5
        X = np.vstack([
            rng.normal(6.0 * i, 0.3 + 0.1 * (seed % 4), size=(25 + seed, 2))
            for i in range(n_blobs)
        ])
        model = hdbscan_fit(X, min_cluster_size=mcs)
        oracle = _oracle_stabilities(_mutual_reachability(X, mcs), mcs)
        for cid, _, stored in model.clusters:
            members = frozenset(np.flatnonzero(model.labels == cid).tolist())
            errs = [abs(stored - s) for pts, s in oracle.items()
                    if members <= pts or pts <= members]
            assert errs, "selected cluster missing from oracle tree"
            worst = max(worst, min(errs))
            checked += 1
    _report("stability ledger", worst < 1e-9, 30.0, time.monotonic() - t0,
            f"{checked} clusters over 20 fixtures, worst |dS|={worst:.1e}")


# --- 3. planted-cluster recovery ------------------------------------------------

def test_planted_cluster_recovery():
    t0 = time.monotonic()
    ok = True
    for seed in range(10):
        X, truth = _two_blobs_with_outliers(seed)
        model = hdbscan_fit(X, min_cluster_size=25)
        ok &= len(model.clusters) == 2
        ok &= int((model.labels == -1).sum()) == 5
        ok &= (model.labels[truth == -1] == -1).all()
    _report("planted-cluster recovery", ok, 5.0, time.monotonic() - t0,
            "2 clusters + 5 noise on all 10 seeds")


# --- 4. threshold monotonicity --------------------------------------------------

def test_threshold_monotonicity():
    t0 = time.monotonic()
    acc = {0.2: [], 1.0: []}
    for seed in range(10):
        data = synth_generate(seed=seed, n_days=200, n_clusters=8, dim=10)
        counts = data.true_counts()
        for m in acc:
            acc[m].append(_rf_accuracy(data, counts, m, tau=7, seed=seed))
    lo, hi = float(np.median(acc[0.2])), float(np.median(acc[1.0]))
    ok = hi >= lo + 0.05 and hi >= 0.90
    _report("threshold monotonicity", ok, 120.0, time.monotonic() - t0,
            f"median acc m=1.0 {hi:.3f} vs m=0.2 {lo:.3f}")


# --- 5. reduction/clustering grid ordering ---------------------------------------

def test_grid_ordering():
    t0 = time.monotonic()
    res = {"umap+hdbscan": [], "pca+hdbscan": [], "umap+km": []}
    for seed in range(10):
        data = synth_generate(seed=seed, n_days=100, n_clusters=12, dim=25)
        X = data.embeddings.vectors.astype(float)
        up = fit_umap(X, UmapParams(n_neighbors=10, n_epochs=80, out_dim=5,
                                    seed=seed))
        variants = {
            "umap+hdbscan": hdbscan_fit(up.ref_Y, min_cluster_size=25).labels,
            "pca+hdbscan": hdbscan_fit(transform(fit_pca(X, 5), X),
                                       min_cluster_size=25).labels,
            "umap+km": spherical_kmeans(up.ref_Y, 8, seed=seed).labels,
        }
        for name, labels in variants.items():
            from epicast.features import daily_cluster_counts
            counts = daily_cluster_counts(data.posts, labels,
                                          start=data.caseload.start,
                                          end=data.caseload.end)
            accs = [_rf_accuracy(data, counts, m, tau=7, seed=seed)
                    for m in (0.2, 0.4, 0.6)]
            res[name].append(float(np.mean(accs)))
    med = {k: float(np.median(v)) for k, v in res.items()}
    ok = (med["umap+hdbscan"] >= med["pca+hdbscan"]
          and med["umap+hdbscan"] >= med["umap+km"])
    _report("grid ordering", ok, 600.0, time.monotonic() - t0,
            ", ".join(f"{k} {v:.3f}" for k, v in med.items()))


# --- 6. transformer soundness -----------------------------------------------------

def test_transformer_soundness():
    t0 = time.monotonic()
    ok, details = True, []

    # analytic gradients vs central finite differences
    hp = TransformerHp(d_model=16, n_heads=2, n_layers=2, context_len=8,
                       horizon=2, d_ff=32)
    rng = np.random.default_rng(0)
    params = init_params(3, hp, seed=0)
    Z = rng.standard_normal((4, hp.context_len, 3))
    Y = rng.standard_normal((4, hp.horizon))
    _, grads = loss_and_grads(params, hp, Z, Y)

    def rel_err(key, i, eps):
        flat = params[key].reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        lp, _ = loss_and_grads(params, hp, Z, Y)
        flat[i] = orig - eps
        lm, _ = loss_and_grads(params, hp, Z, Y)
        flat[i] = orig
        num = (lp - lm) / (2 * eps)
        ana = grads[key].reshape(-1)[i]
        return abs(num - ana) / max(abs(num), abs(ana), 1e-6)

    worst = 0.0
    for key in sorted(params):
        W = params[key]
        for i in rng.choice(W.size, size=min(4, W.size), replace=False):
            err = rel_err(key, i, 1e-3)
            if err >= 1e-4:  # a 1e-3 step can hop a ReLU kink
                err = rel_err(key, i, 1e-4)
            worst = max(worst, err)
    ok &= worst < 1e-4
    details.append(f"gradcheck {worst:.1e}")

    # causal mask: perturbing future inputs leaves past states bit-exact
    hp2 = TransformerHp(d_model=16, n_heads=2, n_layers=2, context_len=10,
                        horizon=2)
    p2 = init_params(2, hp2, seed=0)
    Zc = rng.standard_normal((1, hp2.context_len, 2))
    H1, _ = encoder_forward(p2, hp2, Zc)
    Zc2 = Zc.copy()
    Zc2[0, 6:, :] += 100.0
    H2, _ = encoder_forward(p2, hp2, Zc2)
    causal = np.array_equal(H1[0, :6], H2[0, :6])
    ok &= causal
    details.append("causal bit-exact" if causal else "causal VIOLATED")

    # planted covariate halves the horizon-7 error vs univariate
    T = 7
    full = np.random.default_rng(3).uniform(0, 1, 400 + T)
    y = full[:400]
    cov = full[T:400 + T][:, None]
    hp3 = TransformerHp(d_model=16, n_heads=2, n_layers=1, context_len=14,
                        horizon=T, epochs=60)
    Z_uni, Yw, origins = make_windows(y, None, hp3.context_len, T)
    Z_mul, _, _ = make_windows(y, cov, hp3.context_len, T)
    split = int(0.8 * len(origins))

    def final_rmse(Zw):
        model = transformer_fit(Zw[:split], Yw[:split], hp3, seed=0)
        point, _ = transformer_predict(model, Zw[split:], n_draws=1, seed=0)
        diff = point[:, -1] - Yw[split:, -1]
        return float(np.sqrt(np.mean(diff ** 2)))

    r_uni, r_mul = final_rmse(Z_uni), final_rmse(Z_mul)
    ok &= r_mul < 0.5 * r_uni
    details.append(f"rmse multi/uni {r_mul / r_uni:.2f}")

    _report("transformer soundness", ok, 300.0, time.monotonic() - t0,
            "; ".join(details))


# --- 7. GP sanity ------------------------------------------------------------------

def test_gp_sanity():
    t0 = time.monotonic()
    ok, details = True, []

    # noise-free interpolation
    X = np.linspace(0, 2 * np.pi, 25)
    y = np.sin(X)
    model = gp_fit(X, y, n_restarts=8, seed=0)
    mean, _, _ = gp_predict(model, X, n_draws=1, seed=0)
    err = np.abs(mean - y).max()
    ok &= err < 1e-4
    details.append(f"interp {err:.1e}")

    # predictive mean vs the naive-inverse formula on 5 points
    rng = np.random.default_rng(0)
    X5 = rng.uniform(0, 5, size=5)
    y5 = rng.standard_normal(5)
    sv, ls, nv = 1.3, 0.8, 0.05
    m5 = gp_fit(X5, y5, fixed_params=(sv, ls, nv), seed=0)
    Xs = np.linspace(0, 5, 7)
    mean5, _, _ = gp_predict(m5, Xs, n_draws=1, seed=0)
    K = rbf_kernel(X5[:, None], X5[:, None], sv, ls) + nv * np.eye(5)
    Ks = rbf_kernel(Xs[:, None], X5[:, None], sv, ls)
    exp = y5.mean() + Ks @ np.linalg.inv(K) @ (y5 - y5.mean())
    err = np.abs(mean5 - exp).max()
    ok &= err < 1e-8
    details.append(f"naive-inverse {err:.1e}")

    # GP with the planted signal covariate beats the martingale
    gp_rmse, mart_rmse = [], []
    for seed in range(10):
        data = synth_generate(seed=seed, n_days=150, n_clusters=4, dim=8)
        target = difference(data.caseload)
        table = moving_average_table(data.true_counts(), 7)
        covariates = FeatureTable(
            table.region, target.start,
            (f"cluster_{data.signal_cluster}",),
            table.X[1:, [data.signal_cluster]],
        )
        n = len(target)
        kw = dict(context_len=14, horizon=7,
                  train_end=target.start + timedelta(days=int(0.75 * n)),
                  test_end=target.start + timedelta(days=n - 1))
        mart = run_forecast(
            ForecastProblem(target=target, covariates=None, **kw),
            "martingale", "uni", seed=seed, n_draws=50)
        gp = run_forecast(
            ForecastProblem(target=target, covariates=covariates, **kw),
            "gp", "+T", seed=seed, n_draws=50, gp_restarts=4)
        mart_rmse.append(mart.rmse)
        gp_rmse.append(gp.rmse)
    g, m = float(np.median(gp_rmse)), float(np.median(mart_rmse))
    ok &= g < m
    details.append(f"gp {g:.3f} vs martingale {m:.3f}")

    _report("gp sanity", ok, 120.0, time.monotonic() - t0, "; ".join(details))


# --- 8. significance machinery -------------------------------------------------------

def test_significance_machinery():
    t0 = time.monotonic()
    ok, details = True, []

    same = ErrorDistribution(np.array([1.0, 3.0] * 50))
    rep = z_test(ErrorDistribution(same.samples.copy()), same)
    ok &= rep.z == 0.0 and rep.p == 0.5 and rep.stars == ""
    details.append("identical -> Z=0, p=0.5")

    ok &= stars_for_p(0.2) == "" and stars_for_p(0.19) == "*"
    ok &= stars_for_p(0.05) == "*" and stars_for_p(0.049) == "†"
    ok &= stars_for_p(0.01) == "†" and stars_for_p(0.009) == "‡"
    details.append("star boundaries exact")

    # exact moments: pop N(1, 0.04), sample N(0.5, 0.05) -> Z = 0.5/0.3
    pop = ErrorDistribution(np.array([0.8, 1.2] * 50))
    samp = ErrorDistribution(
        np.array([0.5 - np.sqrt(0.05), 0.5 + np.sqrt(0.05)] * 50))
    rep = z_test(pop, samp)
    ok &= abs(rep.z - 5.0 / 3.0) < 1e-9 and rep.stars == "†"
    details.append(f"Z={rep.z:.4f} -> '{rep.stars}'")

    _report("significance machinery", ok, 1.0, time.monotonic() - t0,
            "; ".join(details))


# --- 9. end-to-end determinism ---------------------------------------------------------

def test_end_to_end_determinism(tmp_path):
    t0 = time.monotonic()
    snapshots = []
    for name in ("a", "b"):
        base = tmp_path / name
        rc = cli.main(["--out", str(base), "--config", "unused", "synth",
                       "--days", "90", "--clusters", "4", "--dim", "20"])
        assert rc == 0
        cfg = dataclasses.replace(
            load_config(base / "config.ini"),
            umap_epochs=40, reduce_dim=8, epochs=3, gp_restarts=2,
            horizons=[7], taus=[7], thresholds=[0.4], context_len=14,
        )
        result = run_pipeline(cfg, base)
        out = Path(result["out_dir"])
        snapshots.append({
            str(p.relative_to(base)): p.read_bytes()
            for p in sorted(out.rglob("*"))
            if p.is_file() and "cache" not in p.parts
        })
    first, second = snapshots
    ok = set(first) == set(second) and all(
        first[k] == second[k] for k in first)
    _report("end-to-end determinism", ok, 300.0, time.monotonic() - t0,
            f"{len(first)} artifacts byte-identical across fresh runs")
