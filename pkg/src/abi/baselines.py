"""Comparison samplers (rejection ABC, Wasserstein ABC, neural-summary ABC) and evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .models import SimulatorBundle
from .quantile_net import he_init, mlp_backward, mlp_forward

W1_CAP = 2000
W1_MAX_DIM = 16


# ---------------------------------------------------------------- metrics

def _as_points(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def exact_w1(a, b) -> float:
    """Empirical W1 between equal-size point sets via an optimal assignment."""
    a, b = _as_points(a), _as_points(b)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] > W1_CAP or a.shape[1] > W1_MAX_DIM:
        raise ValueError(f"exact W1 is capped at {W1_CAP} points in dimension <= {W1_MAX_DIM}")
    if a.shape[0] == 0:
        raise ValueError("empty input")
    cost = cdist(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / a.shape[0])


def mmd_gaussian(a, b, bandwidth: float | None = None) -> float:
    """Square root of the (clipped) unbiased MMD^2 with a Gaussian kernel.

    The default bandwidth is the median pairwise distance of the pooled sample.
    """
    a, b = _as_points(a), _as_points(b)
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise ValueError("each sample needs at least two points")
    if bandwidth is None:
        pooled = np.vstack([a, b])
        bandwidth = float(np.median(pdist(pooled)))
        if bandwidth <= 0:
            bandwidth = 1.0
    g = -0.5 / bandwidth**2
    kaa = np.exp(g * cdist(a, a, "sqeuclidean"))
    kbb = np.exp(g * cdist(b, b, "sqeuclidean"))
    kab = np.exp(g * cdist(a, b, "sqeuclidean"))
    mmd2 = (
        (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        + (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
        - 2.0 * kab.mean()
    )
    return math.sqrt(max(mmd2, 0.0))


def mmd2_unbiased(a, b, bandwidth: float) -> float:
    """Unclipped unbiased MMD^2 (used for calibration checks)."""
    a, b = _as_points(a), _as_points(b)
    m, n = a.shape[0], b.shape[0]
    g = -0.5 / bandwidth**2
    kaa = np.exp(g * cdist(a, a, "sqeuclidean"))
    kbb = np.exp(g * cdist(b, b, "sqeuclidean"))
    kab = np.exp(g * cdist(a, b, "sqeuclidean"))
    return float(
        (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        + (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
        - 2.0 * kab.mean()
    )


@dataclass
class EvalReport:
    mmd: float
    w1: float
    mean_bias: list
    corr_bias: float

    def to_dict(self) -> dict:
        return {"mmd": self.mmd, "w1": self.w1, "mean_bias": list(self.mean_bias), "corr_bias": self.corr_bias}


def _corr(x):
    if x.shape[1] == 1:
        return np.ones((1, 1))
    c = np.corrcoef(x, rowvar=False)
    return np.nan_to_num(c)


def evaluate(posterior_draws, reference_draws, seed: int = 0) -> EvalReport:
    """MMD, W1 (subsampled to the cap), per-parameter |mean difference|, and correlation deviation."""
    a, b = _as_points(posterior_draws), _as_points(reference_draws)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("empty draws")
    n = min(a.shape[0], b.shape[0], W1_CAP)

    def subsample(x):
        # same pinned stream for both sides, so identical inputs stay identical
        if x.shape[0] <= n:
            return x
        return x[np.random.default_rng(seed).choice(x.shape[0], n, replace=False)]

    sub_a, sub_b = subsample(a), subsample(b)
    w1 = exact_w1(sub_a, sub_b)
    mmd = mmd_gaussian(sub_a, sub_b)
    mean_bias = np.abs(a.mean(axis=0) - b.mean(axis=0))
    diff = np.abs(_corr(a) - _corr(b))
    corr_bias = float(diff.sum() - np.trace(diff))
    return EvalReport(mmd, w1, mean_bias.tolist(), corr_bias)


# ---------------------------------------------------------------- ABC samplers

@dataclass
class AbcOutput:
    thetas: np.ndarray
    distances: np.ndarray
    epsilon: float
    simulations: int


def rejection_abc(model: SimulatorBundle, x_star, budget: int, keep_fraction: float,
                  rng: np.random.Generator, distance: Callable | None = None,
                  thetas=None, data=None) -> AbcOutput:
    """Single-round rejection ABC keeping the ``keep_fraction`` closest prior-predictive draws.

    ``distance(data_batch, x_star)`` defaults to Euclidean distance on the
    raw data.  Pre-simulated ``thetas``/``data`` may be supplied.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    x_star = np.asarray(x_star, dtype=float).ravel()
    if thetas is None:
        thetas = model.sample_prior(budget, rng)
        data, valid = model.simulate(thetas, rng)
        thetas, data = thetas[valid], data[valid]
    distance = distance or (lambda xs, xo: np.linalg.norm(xs - xo[None, :], axis=1))
    dist = np.asarray(distance(data, x_star), dtype=float)
    k = max(1, math.ceil(keep_fraction * dist.size - 1e-12))
    order = np.argsort(dist, kind="stable")[:k]
    return AbcOutput(thetas[order], dist[order], float(dist[order[-1]]), int(budget))


def wasserstein_data_distance(obs_dim: int) -> Callable:
    """W2 between datasets read as empirical measures of ``obs_dim``-dimensional observations."""

    def distance(batch, x_star):
        batch = np.atleast_2d(batch)
        if obs_dim == 1:
            ref = np.sort(x_star)
            return np.sqrt(np.mean((np.sort(batch, axis=1) - ref[None, :]) ** 2, axis=1))
        ref = x_star.reshape(-1, obs_dim)
        out = np.empty(batch.shape[0])
        for i, row in enumerate(batch):
            cost = cdist(row.reshape(-1, obs_dim), ref, "sqeuclidean")
            r, c = linear_sum_assignment(cost)
            out[i] = math.sqrt(cost[r, c].mean())
        return out

    return distance


def wasserstein_abc(model: SimulatorBundle, x_star, budget: int, keep_fraction: float,
                    rng: np.random.Generator) -> AbcOutput:
    return rejection_abc(model, x_star, budget, keep_fraction, rng,
                         distance=wasserstein_data_distance(model.obs_dim))


@dataclass
class RegressorConfig:
    hidden: tuple = (128, 128, 128)
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    holdout_fraction: float = 0.1
    patience: int = 15
    train_fraction: float = 0.5  # share of the budget spent fitting the summary network
    seed: int = 0


@dataclass
class MeanRegressor:
    weights: list
    biases: list
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    loss_history: list = field(default_factory=list)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out, _ = mlp_forward(self.weights, self.biases, (x - self.x_mean) / self.x_std)
        return self.y_mean + self.y_std * out


def _std(a):
    s = a.std(axis=0)
    return np.where(s > 1e-12, s, 1.0)


def train_mean_regressor(data, thetas, cfg: RegressorConfig) -> MeanRegressor:
    """ReLU network x -> E[theta | x] fitted by Adam on squared error."""
    x = np.atleast_2d(np.asarray(data, dtype=float))
    y = _as_points(thetas)
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("data and thetas must be nonempty and aligned")
    rng = np.random.default_rng(cfg.seed)
    xm, xs, ym, ys = x.mean(axis=0), _std(x), y.mean(axis=0), _std(y)
    xn, yn = (x - xm) / xs, (y - ym) / ys
    widths = (x.shape[1],) + tuple(cfg.hidden) + (y.shape[1],)
    W, B = he_init(widths, rng)
    order = rng.permutation(x.shape[0])
    n_hold = int(round(cfg.holdout_fraction * x.shape[0])) if x.shape[0] >= 20 else 0
    hold, fit = order[:n_hold], order[n_hold:]
    params = W + B
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    best = (np.inf, [p.copy() for p in params])
    stale = 0
    history = []
    for _ in range(cfg.epochs):
        perm = fit[rng.permutation(fit.size)]
        total = 0.0
        for start in range(0, perm.size, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            out, acts = mlp_forward(W, B, xn[idx])
            resid = out - yn[idx]
            total += float((resid**2).sum())
            gW, gB = mlp_backward(W, acts, 2.0 * resid / resid.size)
            step += 1
            for i, (p, g) in enumerate(zip(params, gW + gB)):
                m[i] = 0.9 * m[i] + 0.1 * g
                v[i] = 0.999 * v[i] + 0.001 * g * g
                p -= cfg.learning_rate * (m[i] / (1 - 0.9**step)) / (np.sqrt(v[i] / (1 - 0.999**step)) + 1e-8)
        history.append(total / max(fit.size * y.shape[1], 1))
        if n_hold:
            out, _ = mlp_forward(W, B, xn[hold])
            hl = float(((out - yn[hold]) ** 2).mean())
            if hl < best[0] - 1e-12:
                best, stale = (hl, [p.copy() for p in params]), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if n_hold:
        k = len(W)
        W, B = best[1][:k], best[1][k:]
    return MeanRegressor(W, B, xm, xs, ym, ys, history)


def abc_ss(model: SimulatorBundle, x_star, budget: int, keep_fraction: float,
           rng: np.random.Generator, cfg: RegressorConfig | None = None) -> AbcOutput:
    """Rejection ABC on learned posterior-mean summaries.

    A fraction of the budget trains the summary network; the remainder is
    used for the rejection step.  ``budget`` counts all simulations.
    """
    cfg = cfg or RegressorConfig()
    if budget < 2:
        raise ValueError("budget must be >= 2")
    x_star = np.asarray(x_star, dtype=float).ravel()
    n_train = min(max(1, int(round(cfg.train_fraction * budget))), budget - 1)
    th_tr = model.sample_prior(n_train, rng)
    x_tr, ok = model.simulate(th_tr, rng)
    reg = train_mean_regressor(x_tr[ok], th_tr[ok], cfg)
    s_star = reg.predict(x_star)[0]
    scale = reg.y_std

    def distance(batch, _x):
        return np.linalg.norm((reg.predict(batch) - s_star[None, :]) / scale, axis=1)

    out = rejection_abc(model, x_star, budget - n_train, keep_fraction, rng, distance=distance)
    out.simulations = budget
    return out
