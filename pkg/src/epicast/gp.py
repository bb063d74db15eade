"""Exact Gaussian-process regression with an RBF kernel.

Hyperparameters (signal variance, lengthscale, noise variance) are chosen by
maximizing the log marginal likelihood with a gradient-free multi-start
search: 16 log-uniform starting points, each refined by Nelder-Mead in
log-parameter space. Prediction uses the Cholesky factor of K + sigma_n^2 I.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ValidationError


@dataclass
class GpModel:
    X: np.ndarray  # n x d training inputs
    y: np.ndarray
    y_mean: float
    signal_var: float
    lengthscale: float
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray  # (K + noise I)^-1 (y - y_mean)


def rbf_kernel(A: np.ndarray, B: np.ndarray, signal_var: float,
               lengthscale: float) -> np.ndarray:
    d2 = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return signal_var * np.exp(-d2 / (2.0 * lengthscale**2))


def _chol_with_jitter(K: np.ndarray) -> np.ndarray:
    scale = float(np.mean(np.diag(K))) or 1.0
    for jitter in (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2):
        try:
            return np.linalg.cholesky(K + jitter * scale * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise ValidationError("kernel matrix not positive definite after jitter")


def log_marginal_likelihood(X: np.ndarray, y: np.ndarray, signal_var: float,
                            lengthscale: float, noise_var: float) -> float:
    n = len(y)
    K = rbf_kernel(X, X, signal_var, lengthscale) + noise_var * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
    return float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    )


def gp_fit(X: np.ndarray, y: np.ndarray, n_restarts: int = 16,
           seed: int = 0, fixed_params: tuple[float, float, float] | None = None
           ) -> GpModel:
    """Fit hyperparameters by multi-start gradient-free ML-II, then factor.

    `fixed_params` = (signal_var, lengthscale, noise_var) skips the search.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] != len(y):
        raise ValidationError("X must have one row per target value")
    if len(y) < 10 and fixed_params is None:
        raise ValidationError("need at least 10 training rows to fit hyperparameters")
    y_mean = float(y.mean())
    yc = y - y_mean
    if fixed_params is not None:
        sv, ls, nv = fixed_params
    else:
        rng = np.random.default_rng(seed)
        y_var = max(float(yc.var()), 1e-12)
        span = max(float(np.ptp(X, axis=0).max()), 1e-6)

        def neg_lml(log_params):
            sv, ls, nv = np.exp(log_params)
            return -log_marginal_likelihood(X, yc, sv, ls, nv)

        best_val, best_params = np.inf, None
        for _ in range(n_restarts):
            start = np.log([
                y_var * 10 ** rng.uniform(-1, 1),
                span * 10 ** rng.uniform(-2, 0.5),
                y_var * 10 ** rng.uniform(-6, 0),
            ])
            res = minimize(neg_lml, start, method="Nelder-Mead",
                           options={"maxiter": 200, "xatol": 1e-3, "fatol": 1e-6})
            if res.fun < best_val:
                best_val, best_params = res.fun, res.x
        sv, ls, nv = np.exp(best_params)
    K = rbf_kernel(X, X, sv, ls) + nv * np.eye(len(y))
    L = _chol_with_jitter(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, yc))
    return GpModel(
        X=X, y=y, y_mean=y_mean, signal_var=float(sv), lengthscale=float(ls),
        noise_var=float(nv), chol=L, alpha=alpha,
    )


def gp_predict(model: GpModel, X_new: np.ndarray,
               n_draws: int = 0, seed: int = 0
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Predictive mean and variance; optional draws from the predictive
    normal, returned as (n_points x n_draws)."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new[:, None]
    if X_new.shape[1] != model.X.shape[1]:
        raise ValidationError(
            f"expected {model.X.shape[1]} input dims, got {X_new.shape[1]}"
        )
    Ks = rbf_kernel(X_new, model.X, model.signal_var, model.lengthscale)
    mean = Ks @ model.alpha + model.y_mean
    v = np.linalg.solve(model.chol, Ks.T)
    var = np.maximum(model.signal_var - np.sum(v**2, axis=0), 0.0)
    draws = None
    if n_draws > 0:
        rng = np.random.default_rng(seed)
        draws = mean[:, None] + np.sqrt(var)[:, None] * rng.standard_normal(
            (len(mean), n_draws)
        )
    return mean, var, draws
