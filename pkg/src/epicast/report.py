"""Pipeline orchestration, cluster labelling and table emission.

Stages run in a fixed order (ingest, reduce, cluster, features, threshold,
forecast, report) with a content-addressed cache so expensive stages are
reused across reruns. Every emitted table row carries the config hash and
seed. All output files are written deterministically: identical config and
inputs produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import cluster as cl
from . import dimred, forecast, stats, threshold
from .config import PipelineConfig, resolve_inputs
from .errors import EpicastError
from .features import (FeatureTable, chi2_select, daily_cluster_counts,
                       f_regression_select, moving_average,
                       moving_average_table)
from .ingest import (DailySeries, daily_post_counts, load_series_csv,
                     parse_embeddings, parse_posts)
from .stopwords import STOPWORDS

STAGES = ("ingest", "reduce", "cluster", "features", "threshold", "forecast",
          "report")


class StageError(EpicastError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class ClusterLabel:
    cluster_id: int
    frequency: int
    top_words: tuple[str, ...]


def label_clusters(model: cl.ClusterModel, posts,
                   stopwords=STOPWORDS, top: int = 5) -> list[ClusterLabel]:
    """Per cluster: member count and the top non-stopword tokens by
    in-cluster frequency (ties alphabetical); largest clusters first."""
    out = []
    labels = np.asarray(model.labels)
    for cid, freq, _ in model.clusters:
        counts: dict[str, int] = {}
        for post, lab in zip(posts, labels):
            if lab != cid:
                continue
            for tok in post.tokens:
                if tok not in stopwords:
                    counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        out.append(
            ClusterLabel(
                cluster_id=int(cid), frequency=int(freq),
                top_words=tuple(w for w, _ in ranked[:top]),
            )
        )
    out.sort(key=lambda c: (-c.frequency, c.cluster_id))
    return out


def _load_series_auto(path, region: str) -> DailySeries:
    """Load a two-column daily CSV, taking the non-date header as the value."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or "date" not in header:
        raise EpicastError(f"{path}: expected a 'date' column")
    value_cols = [c for c in header if c != "date"]
    if len(value_cols) != 1:
        raise EpicastError(f"{path}: expected exactly one value column")
    return load_series_csv(path, {"date": "date", "value": value_cols[0]}, region)


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class StageCache:
    """Content-addressed npz/json store with atomic writes."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def key(self, stage: str, params: dict, input_keys: list[str]) -> str:
        blob = json.dumps(
            {"stage": stage, "params": params, "inputs": input_keys},
            sort_keys=True, default=str,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:24]

    def _path(self, stage: str, key: str) -> Path:
        return self.root / f"{stage}-{key}.npz"

    def load(self, stage: str, key: str) -> dict | None:
        p = self._path(stage, key)
        if not p.exists():
            return None
        with np.load(p, allow_pickle=False) as z:
            out = {k: z[k] for k in z.files}
        meta_raw = out.pop("__meta__", None)
        meta = json.loads(bytes(meta_raw).decode()) if meta_raw is not None else {}
        return {"arrays": out, "meta": meta}

    def store(self, stage: str, key: str, arrays: dict, meta: dict) -> None:
        p = self._path(stage, key)
        tmp = p.with_suffix(".tmp.npz")
        payload = dict(arrays)
        payload["__meta__"] = np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
        )
        with open(tmp, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, p)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                repr(float(v)) if isinstance(v, (float, np.floating)) else v
                for v in row
            ])
    os.replace(tmp, path)


def _series_table(series_by_name: dict[str, DailySeries], start, n_days,
                  region: str) -> FeatureTable:
    cols, names = [], []
    for name in sorted(series_by_name):
        s = series_by_name[name]
        i0 = s.index_of(start)
        cols.append(s.values[i0 : i0 + n_days])
        names.append(name)
    X = np.column_stack(cols) if cols else np.zeros((n_days, 0))
    return FeatureTable(region=region, start=start, names=tuple(names), X=X)


def run_pipeline(cfg: PipelineConfig, base_dir, upto: str = "report") -> dict:
    """Execute the pipeline through stage `upto`; returns artifact paths,
    per-stage cache status and headline results."""
    if upto not in STAGES:
        raise EpicastError(f"unknown stage {upto!r}")
    base = Path(base_dir)
    out = base / cfg.out_dir
    cache = StageCache(out / "cache")
    chash = cfg.config_hash()
    status: dict[str, str] = {}
    result: dict = {"config_hash": chash, "status": status, "out_dir": str(out)}
    last = STAGES.index(upto)

    # ---- ingest -----------------------------------------------------------
    try:
        paths = resolve_inputs(cfg, base)
        input_hashes = {k: _file_hash(p) for k, p in sorted(paths.items())}
        ikey = cache.key("ingest", {}, list(input_hashes.values()))
        marker = cache.root / f"ingest-{ikey}.ok"
        status["ingest"] = "hit" if marker.exists() else "computed"
        posts = parse_posts(paths["posts"])
        emb = parse_embeddings(paths["embeddings"])
        if set(emb.ids) != {p.id for p in posts}:
            raise EpicastError("embedding ids do not match post ids")
        caseload = _load_series_auto(paths["caseload"], cfg.region)
        mobility = {
            f"M{i}": _load_series_auto(paths[f"mobility_{i}"], cfg.region)
            for i in range(len(cfg.mobility))
        }
        gov = {
            f"G{i}": _load_series_auto(paths[f"gov_{i}"], cfg.region)
            for i in range(len(cfg.gov_response))
        }
        marker.touch()
    except Exception as exc:
        raise StageError("ingest", exc) from exc
    if last < 1:
        return result

    # align posts to embedding row order
    order = {pid: i for i, pid in enumerate(emb.ids)}
    posts = sorted(posts, key=lambda p: order[p.id])

    # ---- reduce -----------------------------------------------------------
    try:
        dr_params = {"dim": cfg.reduce_dim, "n_neighbors": cfg.n_neighbors,
                     "min_dist": cfg.min_dist, "epochs": cfg.umap_epochs,
                     "seed": cfg.seed}
        rkey = cache.key("reduce", dr_params, [input_hashes["embeddings"]])
        hit = cache.load("reduce", rkey)
        if hit is not None:
            coords = hit["arrays"]["coords"]
            coords2d = hit["arrays"]["coords2d"]
            status["reduce"] = "hit"
        else:
            X = emb.vectors.astype(float)
            reduce_dim = min(cfg.reduce_dim, X.shape[1] - 1)
            proj = dimred.fit_umap(X, dimred.UmapParams(
                n_neighbors=cfg.n_neighbors, min_dist=cfg.min_dist,
                n_epochs=cfg.umap_epochs, out_dim=reduce_dim, seed=cfg.seed,
            ))
            coords = proj.ref_Y
            proj2 = dimred.fit_umap(X, dimred.UmapParams(
                n_neighbors=cfg.n_neighbors, min_dist=cfg.min_dist,
                n_epochs=cfg.umap_epochs, out_dim=2, seed=cfg.seed,
            ))
            coords2d = proj2.ref_Y
            cache.store("reduce", rkey,
                        {"coords": coords, "coords2d": coords2d}, dr_params)
            status["reduce"] = "computed"
    except Exception as exc:
        raise StageError("reduce", exc) from exc
    if last < 2:
        return result

    # ---- cluster ----------------------------------------------------------
    try:
        cl_params = {"min_cluster_size": cfg.min_cluster_size,
                     "min_samples": cfg.min_samples}
        ckey = cache.key("cluster", cl_params, [rkey])
        hit = cache.load("cluster", ckey)
        if hit is not None:
            labels = hit["arrays"]["labels"]
            cluster_table = [tuple(row) for row in json.loads(hit["meta"]["clusters"])]
            status["cluster"] = "hit"
        else:
            model = cl.hdbscan_fit(coords, cfg.min_cluster_size, cfg.min_samples)
            labels = model.labels
            cluster_table = model.clusters
            cache.store("cluster", ckey, {"labels": labels},
                        {"clusters": json.dumps(
                            [[int(c), int(m), float(s)] for c, m, s in model.clusters]
                        )})
            status["cluster"] = "computed"
        result["n_clusters"] = len(cluster_table)
    except Exception as exc:
        raise StageError("cluster", exc) from exc
    if last < 3:
        return result

    # ---- features ---------------------------------------------------------
    try:
        counts = daily_cluster_counts(posts, labels, start=cfg.start, end=cfg.end)
        t_table = moving_average_table(counts, cfg.ma_window)
        mu = moving_average(
            forecast_clip(caseload, cfg.start, cfg.end), cfg.ma_window
        )
        n_days = len(mu)
        m_table = moving_average_table(
            _series_table(
                {k: forecast_clip(v, cfg.start, cfg.end) for k, v in mobility.items()},
                cfg.start, n_days, cfg.region,
            ), cfg.ma_window)
        g_table = moving_average_table(
            _series_table(
                {k: forecast_clip(v, cfg.start, cfg.end) for k, v in gov.items()},
                cfg.start, n_days, cfg.region,
            ), cfg.ma_window)
        pcounts = daily_post_counts(posts, cfg.region, cfg.start, cfg.end)
        p_table = FeatureTable(cfg.region, cfg.start, ("post_count",),
                               moving_average(pcounts, cfg.ma_window).values[:, None])
        c_table = FeatureTable(cfg.region, cfg.start, ("caseload",),
                               mu.values[:, None])
        feature_csv = out / "tables" / "features.csv"
        _write_csv(
            feature_csv,
            ["date"] + list(t_table.names),
            [[d.isoformat()] + list(row) for d, row in zip(t_table.dates(), t_table.X)],
        )
        status["features"] = "computed"
        result["features_csv"] = str(feature_csv)
    except Exception as exc:
        raise StageError("features", exc) from exc
    if last < 4:
        return result

    # ---- threshold --------------------------------------------------------
    try:
        feature_sets = {"T": t_table, "M": m_table, "G": g_table,
                        "P": p_table, "C": c_table}
        feature_sets["T++"] = (
            t_table.hstack(m_table).hstack(g_table).hstack(p_table).hstack(c_table)
        )
        acc_rows, imp_rows = [], []
        for tau in cfg.taus:
            for m in cfg.thresholds:
                labelled = threshold.label_days(mu, threshold.ThresholdSpec(tau, m))
                if labelled.labels.sum() in (0, len(labelled.labels)):
                    continue  # single-class day set at this (tau, m)
                day_idx = [mu.index_of(d) for d in labelled.days]
                for set_name, table in feature_sets.items():
                    Xfull = table.X[day_idx]
                    names = table.names
                    ds = threshold.balance_and_split(
                        Xfull, labelled.labels, labelled.days, seed=cfg.seed
                    )
                    # selection on training rows only
                    keep = np.arange(Xfull.shape[1])
                    if Xfull.shape[1] > cfg.top_features:
                        sel = chi2_select(
                            FeatureTable(cfg.region, cfg.start, names,
                                         np.maximum(ds.X_train, 0.0)),
                            ds.y_train, top=cfg.top_features,
                        )
                        keep = np.array([names.index(n) for n in sel.names()])
                        ds = threshold.balance_and_split(
                            Xfull[:, keep], labelled.labels, labelled.days,
                            seed=cfg.seed,
                        )
                    kept_names = tuple(names[j] for j in keep)
                    forest = threshold.train_forest(ds, feature_names=kept_names)
                    acc = threshold.evaluate(forest, ds)
                    acc_rows.append([cfg.region, set_name, tau, m, cfg.seed,
                                     chash, acc])
                    if set_name == "T++":
                        groups = {
                            n: ("T" if n.startswith("cluster_") else
                                "M" if n.startswith("M") else
                                "G" if n.startswith("G") else
                                "P" if n == "post_count" else "C")
                            for n in kept_names
                        }
                        for tag, v in sorted(
                            threshold.grouped_importance(forest, groups).items()
                        ):
                            imp_rows.append([cfg.region, set_name, tau, m,
                                             tag, v, cfg.seed, chash])
        acc_csv = out / "tables" / "threshold_accuracy.csv"
        _write_csv(acc_csv, ["region", "feature_set", "tau", "m", "seed",
                             "config", "accuracy"], acc_rows)
        imp_csv = out / "tables" / "group_importance.csv"
        _write_csv(imp_csv, ["region", "feature_set", "tau", "m", "group",
                             "importance", "seed", "config"], imp_rows)
        status["threshold"] = "computed"
        result["threshold_csv"] = str(acc_csv)
        result["importance_csv"] = str(imp_csv)
    except Exception as exc:
        raise StageError("threshold", exc) from exc
    if last < 5:
        return result

    # ---- forecast ---------------------------------------------------------
    try:
        clipped = forecast_clip(caseload, cfg.start, cfg.end)
        target = forecast.difference(clipped)
        tstart = target.start
        tn = len(target)

        def aligned(table: FeatureTable) -> FeatureTable:
            i0 = (tstart - table.start).days
            return FeatureTable(table.region, tstart, table.names,
                                table.X[i0 : i0 + tn])

        groups: dict[str, FeatureTable] = {}
        t_al = aligned(t_table)
        if t_al.X.shape[1] > 0:
            split = (cfg.forecast_train_end - tstart).days + 1
            split = max(3, min(split, tn))
            sel = f_regression_select(
                FeatureTable(cfg.region, tstart, t_al.names, t_al.X[:split]),
                target.values[:split], top=cfg.top_features,
            )
            groups["T"] = t_al.select(sel.names())
        if m_table.X.shape[1] > 0:
            groups["M"] = aligned(m_table)
        if g_table.X.shape[1] > 0:
            groups["G"] = aligned(g_table)
        train_end = min(cfg.forecast_train_end, target.end - timedelta(days=1))
        test_end = min(cfg.forecast_test_end, target.end)
        runs = forecast.ablation_run(
            target, groups, train_end, test_end,
            models=cfg.models, horizons=cfg.horizons,
            context_len=cfg.context_len, seed=cfg.seed,
            gp_restarts=cfg.gp_restarts, epochs=cfg.epochs,
        )
        uni = {(r.model, r.horizon): r for r in runs if r.covariate_set == "uni"}
        run_rows = []
        pred_rows = []
        for r in runs:
            z = p = ""
            star = ""
            base_run = uni.get((r.model, r.horizon))
            if base_run is not None and r.covariate_set != "uni":
                rep = stats.z_test(
                    stats.build_error_distribution(base_run.draws, base_run.actual),
                    stats.build_error_distribution(r.draws, r.actual),
                )
                z, p, star = rep.z, rep.p, rep.stars
            run_rows.append({
                "model": r.model, "set": r.covariate_set, "horizon": r.horizon,
                "state": r.region, "seed": r.seed, "rmse": r.rmse,
                "n_samples": int(r.draws.size), "z": z, "p": p, "stars": star,
                "config": chash,
            })
            for d, pr, ac in zip(r.test_days, r.predictions, r.actual):
                pred_rows.append([r.model, r.covariate_set, r.horizon,
                                  d.isoformat(), float(pr), float(ac)])
        runs_path = out / "tables" / "forecast_runs.jsonl"
        runs_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = runs_path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for row in run_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        os.replace(tmp, runs_path)
        pred_csv = out / "tables" / "forecast_predictions.csv"
        _write_csv(pred_csv, ["model", "set", "horizon", "date", "pred",
                              "actual"], pred_rows)
        status["forecast"] = "computed"
        result["forecast_jsonl"] = str(runs_path)
        result["predictions_csv"] = str(pred_csv)
    except Exception as exc:
        raise StageError("forecast", exc) from exc
    if last < 6:
        return result

    # ---- report -----------------------------------------------------------
    try:
        model = cl.ClusterModel(
            algorithm="hdbscan", labels=np.asarray(labels),
            clusters=[(int(c), int(m_), float(s)) for c, m_, s in cluster_table],
            params={},
        )
        clabels = label_clusters(model, posts)
        label_rows = [
            [c.cluster_id, c.frequency, " ".join(c.top_words), cfg.seed, chash]
            for c in clabels
        ]
        labels_csv = out / "tables" / "cluster_labels.csv"
        _write_csv(labels_csv, ["cluster", "frequency", "top_words", "seed",
                                "config"], label_rows)
        plot_rows = [
            [float(x), float(y), int(lab)]
            for (x, y), lab in zip(coords2d, labels)
        ]
        plot_csv = out / "plots" / "umap2d.csv"
        _write_csv(plot_csv, ["x", "y", "cluster"], plot_rows)
        status["report"] = "computed"
        result["labels_csv"] = str(labels_csv)
        result["plot_csv"] = str(plot_csv)
    except Exception as exc:
        raise StageError("report", exc) from exc
    return result


def forecast_clip(series: DailySeries, start, end) -> DailySeries:
    from .ingest import clip_and_fill

    return clip_and_fill(series, start, end)


def appendix_grid(cfg: PipelineConfig, base_dir) -> Path:
    """Accuracy of every (dimensionality reduction x clustering) pipeline on
    the threshold task, plus a silhouette-vs-k curve for spherical k-means.
    """
    base = Path(base_dir)
    out = base / cfg.out_dir
    chash = cfg.config_hash()
    paths = resolve_inputs(cfg, base)
    posts = parse_posts(paths["posts"])
    emb = parse_embeddings(paths["embeddings"])
    order = {pid: i for i, pid in enumerate(emb.ids)}
    posts = sorted(posts, key=lambda p: order[p.id])
    caseload = _load_series_auto(paths["caseload"], cfg.region)
    mu = moving_average(forecast_clip(caseload, cfg.start, cfg.end), cfg.ma_window)
    X = emb.vectors.astype(float)
    reduce_dim = min(cfg.reduce_dim, X.shape[1] - 1)
    reductions = {
        "pca": dimred.transform(dimred.fit_pca(X, reduce_dim), X),
        "umap": dimred.fit_umap(X, dimred.UmapParams(
            n_neighbors=cfg.n_neighbors, min_dist=cfg.min_dist,
            n_epochs=cfg.umap_epochs, out_dim=reduce_dim, seed=cfg.seed,
        )).ref_Y,
    }
    k_grid = [k for k in cfg.k_grid if k < X.shape[0]]
    rows = []
    sil_rows = []
    for red_name, coords in reductions.items():
        models: list[tuple[str, int | None, np.ndarray]] = [
            ("hdbscan", None,
             cl.hdbscan_fit(coords, cfg.min_cluster_size, cfg.min_samples).labels),
        ]
        for k in k_grid:
            km = cl.spherical_kmeans(coords, k, seed=cfg.seed)
            models.append(("km", k, km.labels))
            if red_name == "umap":
                try:
                    sil_rows.append([k, cl.silhouette(coords, km.labels),
                                     cfg.seed, chash])
                except EpicastError:
                    pass
            gmm = cl.gmm_fit(coords, k, seed=cfg.seed)
            models.append(("gmm", k, gmm.labels))
        for algo, k, labels in models:
            counts = daily_cluster_counts(posts, labels, start=cfg.start,
                                          end=cfg.end)
            table = moving_average_table(counts, cfg.ma_window)
            for tau in cfg.taus:
                accs = []
                for m in cfg.thresholds:
                    labelled = threshold.label_days(
                        mu, threshold.ThresholdSpec(tau, m)
                    )
                    if labelled.labels.sum() in (0, len(labelled.labels)):
                        continue
                    day_idx = [mu.index_of(d) for d in labelled.days]
                    ds = threshold.balance_and_split(
                        table.X[day_idx], labelled.labels, labelled.days,
                        seed=cfg.seed,
                    )
                    forest = threshold.train_forest(ds, feature_names=table.names)
                    accs.append(threshold.evaluate(forest, ds))
                if accs:
                    rows.append([red_name, algo, k if k is not None else "",
                                 tau, float(np.mean(accs)), cfg.seed, chash])
    grid_csv = out / "tables" / "appendix_grid.csv"
    _write_csv(grid_csv, ["dimred", "algorithm", "k", "tau", "accuracy",
                          "seed", "config"], rows)
    _write_csv(out / "tables" / "silhouette_vs_k.csv",
               ["k", "silhouette", "seed", "config"], sil_rows)
    return grid_csv
