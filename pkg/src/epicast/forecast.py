"""Forecasting task plumbing: differencing, min-max scaling, the martingale
baseline, and the ablation harness that runs every (model, covariate set,
horizon) combination on a shared train/test split.

All models are fitted and scored on the min-max-scaled daily *increase* in
caseload (differenced target); scaling parameters come from training rows
only. The martingale predicts no change in caseload, i.e. the scaled image
of a zero increase, and ignores covariates entirely.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from . import gp as gp_mod
from . import transformer as tf_mod
from .errors import ValidationError
from .features import FeatureTable
from .ingest import DailySeries
from .stats import DEFAULT_N_SAMPLES


@dataclass(frozen=True)
class ScaleParams:
    lo: np.ndarray
    hi: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.hi - self.lo
        out = np.empty_like(X, dtype=float)
        const = span == 0
        out[..., ~const] = (X[..., ~const] - self.lo[~const]) / span[~const]
        out[..., const] = 0.5
        return out

    def invert(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.hi - self.lo
        return X * span + self.lo


@dataclass
class ForecastProblem:
    target: DailySeries  # differenced daily increase
    covariates: FeatureTable | None
    context_len: int
    horizon: int
    train_end: date  # last day in the training span
    test_end: date

    def __post_init__(self):
        if self.covariates is not None:
            if (self.covariates.start != self.target.start
                    or self.covariates.n_days != len(self.target)):
                raise ValidationError("covariates must be date-aligned with target")


@dataclass
class ForecastRun:
    model: str  # "martingale" | "gp" | "transformer"
    covariate_set: str
    horizon: int
    region: str
    seed: int
    test_days: tuple[date, ...]
    predictions: np.ndarray  # scaled point forecast per test day
    actual: np.ndarray  # scaled actual per test day
    draws: np.ndarray  # test day x draw, scaled
    rmse: float = field(init=False)

    def __post_init__(self):
        diff = self.predictions - self.actual
        self.rmse = float(np.sqrt(np.mean(diff**2)))


def difference(s: DailySeries) -> DailySeries:
    """Day-over-day change; output starts one day after the input."""
    if len(s) < 2:
        raise ValidationError("need at least 2 values to difference")
    return DailySeries(
        region=s.region, name=f"{s.name}_diff",
        start=s.start + timedelta(days=1), values=np.diff(s.values),
    )


def undifference(diffed: DailySeries, first_value: float) -> DailySeries:
    values = np.concatenate([[first_value], first_value + np.cumsum(diffed.values)])
    return DailySeries(
        region=diffed.region, name=diffed.name.removesuffix("_diff"),
        start=diffed.start - timedelta(days=1), values=values,
    )


def minmax_fit_apply(train: np.ndarray, test: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, ScaleParams]:
    """Scale train columns to [0, 1]; apply the same transform to test.

    Constant train columns map everything to 0.5 with a warning.
    """
    train = np.asarray(train, dtype=float)
    test = np.asarray(test, dtype=float)
    if train.ndim == 1:
        train, test = train[:, None], test[:, None]
    lo = train.min(axis=0)
    hi = train.max(axis=0)
    if (hi == lo).any():
        warnings.warn("constant training column(s) scaled to 0.5", stacklevel=2)
    params = ScaleParams(lo=lo, hi=hi)
    return params.apply(train), params.apply(test), params


def martingale_forecast(mu: DailySeries, T: int, origins: list[int]) -> np.ndarray:
    """Persistence: the caseload T days ahead equals the last observation."""
    return np.array([mu.values[t] for t in origins])


def _split_index(problem: ForecastProblem) -> int:
    """Index of the first test day within the target series."""
    return (problem.train_end - problem.target.start).days + 1


def run_forecast(problem: ForecastProblem, model: str, covariate_set: str,
                 seed: int = 0, n_draws: int | None = None,
                 gp_restarts: int = 16,
                 hp: tf_mod.TransformerHp | None = None) -> ForecastRun:
    """Fit one model on the training span and forecast every test day.

    The forecast for test day d is made at origin d - horizon using only
    data available at the origin. Everything happens on the scaled
    differenced target; `covariate_set` is a label for reporting.
    """
    T = problem.horizon
    y = problem.target.values
    n = len(y)
    split = _split_index(problem)
    test_end_idx = min((problem.test_end - problem.target.start).days, n - 1)
    if not 0 < split <= test_end_idx:
        raise ValidationError("train/test boundary outside the series")
    cov = problem.covariates.X if problem.covariates is not None else None

    y_train = y[:split]
    y_scaled_train, _, y_scale = minmax_fit_apply(y_train, y[split:])
    y_scaled = y_scale.apply(y[:, None])[:, 0]
    cov_scaled = None
    if cov is not None and cov.shape[1] > 0:
        _, _, c_scale = minmax_fit_apply(cov[:split], cov[split:])
        cov_scaled = c_scale.apply(cov)

    test_days_idx = list(range(split, test_end_idx + 1))
    origins = [d - T for d in test_days_idx]
    actual = y_scaled[test_days_idx]
    all_days = problem.target.dates()
    test_days = tuple(all_days[d] for d in test_days_idx)
    if n_draws is None:
        n_draws = -(-DEFAULT_N_SAMPLES // len(test_days_idx))

    if model == "martingale":
        # zero increase in caseload, on the scaled differenced axis
        zero_scaled = float(y_scale.apply(np.zeros((1, 1)))[0, 0])
        preds = np.full(len(test_days_idx), zero_scaled)
        draws = np.repeat(preds[:, None], n_draws, axis=1)
    elif model == "gp":
        t_idx = np.arange(n, dtype=float)[:, None] / max(n - 1, 1)
        X_all = t_idx if cov_scaled is None else np.hstack([t_idx, cov_scaled])
        train_origins = np.arange(0, split - T)
        gpm = gp_mod.gp_fit(
            X_all[train_origins], y_scaled[train_origins + T],
            n_restarts=gp_restarts, seed=seed,
        )
        preds, _, draws = gp_mod.gp_predict(
            gpm, X_all[origins], n_draws=n_draws, seed=seed
        )
    elif model == "transformer":
        hp = hp or tf_mod.TransformerHp(horizon=T, context_len=problem.context_len)
        if hp.horizon != T:
            raise ValidationError("transformer horizon must match the problem")
        Z_all, Y_all, win_origins = tf_mod.make_windows(
            y_scaled, cov_scaled, hp.context_len, T
        )
        train_mask = win_origins + T < split  # full horizon inside training span
        tm = tf_mod.transformer_fit(Z_all[train_mask], Y_all[train_mask], hp, seed=seed)
        origin_to_window = {int(t): i for i, t in enumerate(win_origins)}
        rows = [origin_to_window[t] for t in origins]
        point, draws = tf_mod.transformer_predict(
            tm, Z_all[rows], n_draws=n_draws, seed=seed
        )
        preds = point[:, -1]
    else:
        raise ValidationError(f"unknown model {model!r}")

    return ForecastRun(
        model=model, covariate_set=covariate_set, horizon=T,
        region=problem.target.region, seed=seed, test_days=test_days,
        predictions=np.asarray(preds), actual=actual, draws=np.asarray(draws),
    )


def covariate_subsets(groups: dict[str, FeatureTable]) -> dict[str, list[str]]:
    """The published ablation grid over up to three covariate groups."""
    keys = list(groups)
    sets: dict[str, list[str]] = {"uni": []}
    for k in keys:
        sets[f"+{k}"] = [k]
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            sets[f"+{a}+{b}"] = [a, b]
    if len(keys) >= 3:
        sets["+" + "+".join(keys)] = keys
    return sets


def ablation_run(target: DailySeries, groups: dict[str, FeatureTable],
                 train_end: date, test_end: date,
                 models: list[str], horizons: list[int],
                 context_len: int = 28, seed: int = 0,
                 gp_restarts: int = 16,
                 epochs: int = 50) -> list[ForecastRun]:
    """All (model x covariate set x horizon) runs; the martingale ignores
    covariates so it runs once per horizon under the 'uni' label."""
    sets = covariate_subsets(groups)
    runs: list[ForecastRun] = []
    for T in horizons:
        for model in models:
            applicable = {"uni": []} if model == "martingale" else sets
            for label, members in applicable.items():
                cov = None
                for m in members:
                    cov = groups[m] if cov is None else cov.hstack(groups[m])
                hp = None
                if model == "transformer":
                    hp = tf_mod.TransformerHp(
                        horizon=T, context_len=context_len, epochs=epochs
                    )
                problem = ForecastProblem(
                    target=target, covariates=cov, context_len=context_len,
                    horizon=T, train_end=train_end, test_end=test_end,
                )
                runs.append(
                    run_forecast(problem, model, label, seed=seed,
                                 gp_restarts=gp_restarts, hp=hp)
                )
    return runs
