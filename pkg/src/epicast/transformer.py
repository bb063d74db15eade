"""A small causal transformer encoder for multivariate forecasting.

Forward and backward passes are written directly in numpy (float64). The
encoder stacks post-norm self-attention blocks with a strictly causal mask;
a direct multi-horizon head reads the last position and emits all horizon
steps at once. Training uses squared error and adaptive-moment gradient
descent with cosine learning-rate decay. Probabilistic draws come from a
residual bootstrap over training errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

LN_EPS = 1e-5


@dataclass(frozen=True)
class TransformerHp:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    context_len: int = 28
    horizon: int = 7
    d_ff: int | None = None  # default 4 * d_model
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValidationError("d_model must be divisible by n_heads")
        if self.context_len < self.horizon:
            raise ValidationError("context_len must be >= horizon")


@dataclass
class TransformerModel:
    hp: TransformerHp
    n_inputs: int
    params: dict[str, np.ndarray]
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(1))
    losses: list[float] = field(default_factory=list)
    seed: int = 0


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(float)
    i = np.arange(d_model // 2)[None, :].astype(float)
    angles = pos / np.power(10000.0, 2.0 * i / d_model)
    enc = np.zeros((length, d_model))
    enc[:, 0::2] = np.sin(angles)
    enc[:, 1::2] = np.cos(angles)
    return enc


def init_params(n_inputs: int, hp: TransformerHp, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}

    def glorot(shape):
        bound = math.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-bound, bound, size=shape)

    d, ff = hp.d_model, hp.ff_dim
    p["W_in"] = glorot((n_inputs, d))
    p["b_in"] = np.zeros(d)
    for l in range(hp.n_layers):
        p[f"L{l}.Wq"] = glorot((d, d))
        p[f"L{l}.bq"] = np.zeros(d)
        p[f"L{l}.Wk"] = glorot((d, d))
        p[f"L{l}.bk"] = np.zeros(d)
        p[f"L{l}.Wv"] = glorot((d, d))
        p[f"L{l}.bv"] = np.zeros(d)
        p[f"L{l}.Wo"] = glorot((d, d))
        p[f"L{l}.bo"] = np.zeros(d)
        p[f"L{l}.g1"] = np.ones(d)
        p[f"L{l}.c1"] = np.zeros(d)
        p[f"L{l}.W1"] = glorot((d, ff))
        p[f"L{l}.b1"] = np.zeros(ff)
        p[f"L{l}.W2"] = glorot((ff, d))
        p[f"L{l}.b2"] = np.zeros(d)
        p[f"L{l}.g2"] = np.ones(d)
        p[f"L{l}.c2"] = np.zeros(d)
    p["W_head"] = glorot((d, hp.horizon))
    p["b_head"] = np.zeros(hp.horizon)
    return p


def _layernorm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _layernorm_backward(dout, cache):
    xhat, inv, gain = cache
    dz = dout * gain
    dgain = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    dbias = dout.sum(axis=tuple(range(dout.ndim - 1)))
    mean_dz = dz.mean(axis=-1, keepdims=True)
    mean_dzx = (dz * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dz - mean_dz - xhat * mean_dzx)
    return dx, dgain, dbias


def _split_heads(x, n_heads):
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def encoder_forward(params: dict, hp: TransformerHp, Z: np.ndarray):
    """Per-position encoder outputs plus the caches needed for backprop.

    Z is batch x length x inputs; the attention mask is strictly causal, so
    outputs at position i depend only on inputs at positions <= i.
    """
    b, L, _ = Z.shape
    d, nh = hp.d_model, hp.n_heads
    dh = d // nh
    pos = sinusoidal_positions(L, d)
    mask = np.triu(np.full((L, L), -np.inf), k=1)
    h = Z @ params["W_in"] + params["b_in"] + pos
    caches = {"Z": Z, "mask": mask, "layers": []}
    for l in range(hp.n_layers):
        pre = h
        q = _split_heads(pre @ params[f"L{l}.Wq"] + params[f"L{l}.bq"], nh)
        k = _split_heads(pre @ params[f"L{l}.Wk"] + params[f"L{l}.bk"], nh)
        v = _split_heads(pre @ params[f"L{l}.Wv"] + params[f"L{l}.bv"], nh)
        scores = np.einsum("bhid,bhjd->bhij", q, k) / math.sqrt(dh) + mask
        mx = np.max(scores, axis=-1, keepdims=True)
        e = np.exp(scores - mx)
        p_att = e / e.sum(axis=-1, keepdims=True)
        att = np.einsum("bhij,bhjd->bhid", p_att, v)
        merged = _merge_heads(att)
        ao = merged @ params[f"L{l}.Wo"] + params[f"L{l}.bo"]
        r1 = pre + ao
        h1, ln1 = _layernorm_forward(r1, params[f"L{l}.g1"], params[f"L{l}.c1"])
        z1 = h1 @ params[f"L{l}.W1"] + params[f"L{l}.b1"]
        a1 = np.maximum(z1, 0.0)
        f_out = a1 @ params[f"L{l}.W2"] + params[f"L{l}.b2"]
        r2 = h1 + f_out
        h, ln2 = _layernorm_forward(r2, params[f"L{l}.g2"], params[f"L{l}.c2"])
        caches["layers"].append(
            {"pre": pre, "q": q, "k": k, "v": v, "p_att": p_att, "merged": merged,
             "ln1": ln1, "h1": h1, "z1": z1, "a1": a1, "ln2": ln2}
        )
    caches["h_final"] = h
    return h, caches


def forward(params: dict, hp: TransformerHp, Z: np.ndarray):
    h, caches = encoder_forward(params, hp, Z)
    pred = h[:, -1, :] @ params["W_head"] + params["b_head"]
    return pred, caches


def backward(params: dict, hp: TransformerHp, caches: dict,
             dpred: np.ndarray) -> dict[str, np.ndarray]:
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    h = caches["h_final"]
    grads["W_head"] = h[:, -1, :].T @ dpred
    grads["b_head"] = dpred.sum(axis=0)
    dh = np.zeros_like(h)
    dh[:, -1, :] = dpred @ params["W_head"].T
    nh = hp.n_heads
    dhead = hp.d_model // nh
    for l in reversed(range(hp.n_layers)):
        c = caches["layers"][l]
        dr2, grads[f"L{l}.g2"], grads[f"L{l}.c2"] = _layernorm_backward(dh, c["ln2"])
        # feed-forward branch
        df = dr2
        grads[f"L{l}.W2"] = np.einsum("bli,blo->io", c["a1"], df)
        grads[f"L{l}.b2"] = df.sum(axis=(0, 1))
        da1 = df @ params[f"L{l}.W2"].T
        dz1 = da1 * (c["z1"] > 0)
        grads[f"L{l}.W1"] = np.einsum("bli,blo->io", c["h1"], dz1)
        grads[f"L{l}.b1"] = dz1.sum(axis=(0, 1))
        dh1 = dr2 + dz1 @ params[f"L{l}.W1"].T
        dr1, grads[f"L{l}.g1"], grads[f"L{l}.c1"] = _layernorm_backward(dh1, c["ln1"])
        # attention branch
        dao = dr1
        grads[f"L{l}.Wo"] = np.einsum("bli,blo->io", c["merged"], dao)
        grads[f"L{l}.bo"] = dao.sum(axis=(0, 1))
        dmerged = dao @ params[f"L{l}.Wo"].T
        datt = _split_heads(dmerged, nh)
        dp = np.einsum("bhid,bhjd->bhij", datt, c["v"])
        dv = np.einsum("bhij,bhid->bhjd", c["p_att"], datt)
        # softmax backward (masked entries have p = 0, so they stay 0)
        p = c["p_att"]
        dscores = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
        dscores /= math.sqrt(dhead)
        dq = np.einsum("bhij,bhjd->bhid", dscores, c["k"])
        dk = np.einsum("bhij,bhid->bhjd", dscores, c["q"])
        dpre = dr1
        for name, grad_heads in (("q", dq), ("k", dk), ("v", dv)):
            gm = _merge_heads(grad_heads)
            grads[f"L{l}.W{name}"] = np.einsum("bli,blo->io", c["pre"], gm)
            grads[f"L{l}.b{name}"] = gm.sum(axis=(0, 1))
            dpre = dpre + gm @ params[f"L{l}.W{name}"].T
        dh = dpre
    grads["W_in"] = np.einsum("bli,blo->io", caches["Z"], dh)
    grads["b_in"] = dh.sum(axis=(0, 1))
    return grads


def loss_and_grads(params: dict, hp: TransformerHp, Z: np.ndarray,
                   Y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over batch and horizon steps, with gradients."""
    pred, caches = forward(params, hp, Z)
    diff = pred - Y
    loss = float(np.mean(diff**2))
    dpred = 2.0 * diff / diff.size
    return loss, backward(params, hp, caches, dpred)


def make_windows(series: np.ndarray, covariates: np.ndarray | None,
                 context_len: int, horizon: int
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding context windows over a (scaled) target with optional
    covariate columns; returns (Z, Y, origins) where origin t is the last
    day visible in the window and Y holds the next `horizon` values."""
    series = np.asarray(series, dtype=float)
    n = len(series)
    feats = series[:, None]
    if covariates is not None and covariates.size:
        cov = np.asarray(covariates, dtype=float)
        if cov.shape[0] != n:
            raise ValidationError("covariates must align with the target")
        feats = np.hstack([feats, cov])
    Z, Y, origins = [], [], []
    for t in range(context_len - 1, n - horizon):
        Z.append(feats[t - context_len + 1 : t + 1])
        Y.append(series[t + 1 : t + 1 + horizon])
        origins.append(t)
    if not Z:
        raise ValidationError("series too short for the requested windows")
    return np.stack(Z), np.stack(Y), np.array(origins)


def transformer_fit(Z: np.ndarray, Y: np.ndarray, hp: TransformerHp,
                    seed: int = 0) -> TransformerModel:
    """Adam over shuffled mini-batches for hp.epochs; deterministic per seed."""
    if Z.shape[0] < 32:
        raise ValidationError("need at least 32 training windows")
    n_inputs = Z.shape[2]
    params = init_params(n_inputs, hp, seed)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.items()}
    rng = np.random.default_rng(seed + 1)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    losses = []
    n = Z.shape[0]
    for epoch in range(hp.epochs):
        lr = hp.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / hp.epochs))
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            loss, grads = loss_and_grads(params, hp, Z[idx], Y[idx])
            if not math.isfinite(loss):
                raise ValidationError(
                    f"NaN loss at epoch {epoch}, batch {n_batches}, lr {lr:g}"
                )
            epoch_loss += loss
            n_batches += 1
            step += 1
            for k in params:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1**step)
                vhat = v[k] / (1 - b2**step)
                params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
        losses.append(epoch_loss / n_batches)
    model = TransformerModel(
        hp=hp, n_inputs=n_inputs, params=params, losses=losses, seed=seed
    )
    pred, _ = forward(params, hp, Z)
    model.residuals = (Y - pred).ravel()
    return model


def transformer_predict(model: TransformerModel, Z: np.ndarray,
                        n_draws: int = 0, seed: int = 0
                        ) -> tuple[np.ndarray, np.ndarray | None]:
    """Point forecasts (batch x horizon); optional residual-bootstrap draws
    for the last horizon step, returned as (batch x n_draws)."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 3 or Z.shape[2] != model.n_inputs:
        raise ValidationError(
            f"expected windows with {model.n_inputs} input columns"
        )
    pred, _ = forward(model.params, model.hp, Z)
    draws = None
    if n_draws > 0:
        rng = np.random.default_rng(seed)
        res = rng.choice(model.residuals, size=(Z.shape[0], n_draws))
        draws = pred[:, -1][:, None] + res
    return pred, draws
