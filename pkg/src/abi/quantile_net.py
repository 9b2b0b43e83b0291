"""Conditional quantile regression with a multilayer ReLU network.

A single network maps a data vector to a ``K' x (H + 1)`` table holding the
conditional quantiles of every projection of the parameter.  Training
minimizes the Huber quantile loss with Adam; gradients are computed by hand
so they can be checked against finite differences.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .msw import MswConfig, ProjectionSet, QuantileGrid, msw_from_quantile_tables

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    kappa: float = 0.01
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    holdout_fraction: float = 0.1
    patience: int = 20
    lr_decay_patience: int = 5
    lr_decay_factor: float = 0.5
    ema_decay: float = 0.99
    cosine: bool = True
    weight_decay: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def huber_quantile_loss(u, tau, kappa: float):
    """Huber quantile loss ``rho_{tau,kappa}(u)`` (elementwise)."""
    u = np.asarray(u, dtype=float)
    weight = np.abs(tau - (u < 0))
    au = np.abs(u)
    out = np.where(au <= kappa, 0.5 * u * u / kappa, au - 0.5 * kappa) * weight
    return float(out) if out.ndim == 0 else out


def huber_quantile_grad(u, tau, kappa: float):
    """Derivative of ``huber_quantile_loss`` with respect to ``u``."""
    u = np.asarray(u, dtype=float)
    return np.abs(tau - (u < 0)) * np.clip(u / kappa, -1.0, 1.0)


def he_init(widths, rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        # nonzero biases spread the ReLU kinks away from the input origin
        bound = 1.0 / np.sqrt(fan_in)
        biases.append(rng.uniform(-bound, bound, fan_out))
    return weights, biases


def mlp_forward(weights, biases, x):
    """Forward pass; returns the output and the list of layer activations."""
    acts = [x]
    h = x
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        h = h @ W + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def mlp_backward(weights, acts, grad_out):
    """Backpropagate ``grad_out`` (d loss / d output) through the ReLU MLP."""
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    g = grad_out
    for i in range(len(weights) - 1, -1, -1):
        gW[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ weights[i].T) * (acts[i] > 0)
    return gW, gb


def quantile_loss_and_grads(weights, biases, x, targets, levels, kappa, with_grad=True):
    """Summed Huber quantile loss over samples, slices and levels.

    ``targets`` is (n, K'); the network output is read as (n, K', H + 1) in
    row-major order, i.e. entry ``[k, h]`` sits at flat index ``(H+1) k + h``.
    """
    out, acts = mlp_forward(weights, biases, x)
    n, n_dirs = targets.shape
    table = out.reshape(n, n_dirs, levels.size)
    u = targets[:, :, None] - table
    loss = float(huber_quantile_loss(u, levels, kappa).sum())
    if not with_grad:
        return loss, None, None
    grad_out = -huber_quantile_grad(u, levels, kappa).reshape(n, -1)
    gW, gb = mlp_backward(weights, acts, grad_out)
    return loss, gW, gb


@dataclass
class QuantileNet:
    widths: tuple
    weights: list
    biases: list
    projections: ProjectionSet
    grid: QuantileGrid
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    loss_history: list = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def table_shape(self):
        return (self.projections.num_directions, self.grid.num_bins + 1)

    def copy(self) -> "QuantileNet":
        return copy.deepcopy(self)


def build_quantile_net(
    input_dim: int,
    projections: ProjectionSet,
    grid: QuantileGrid,
    hidden=(128, 128, 128),
    rng: np.random.Generator | None = None,
) -> QuantileNet:
    hidden = tuple(int(h) for h in hidden)
    if not hidden or min(hidden) < 1 or input_dim < 1:
        raise ValueError("need at least one hidden layer and positive widths")
    n_out = projections.num_directions * (grid.num_bins + 1)
    widths = (int(input_dim),) + hidden + (n_out,)
    rng = rng if rng is not None else np.random.default_rng(0)
    weights, biases = he_init(widths, rng)
    n_dirs = projections.num_directions
    return QuantileNet(
        widths=widths,
        weights=weights,
        biases=biases,
        projections=projections,
        grid=grid,
        x_mean=np.zeros(input_dim),
        x_std=np.ones(input_dim),
        y_mean=np.zeros(n_dirs),
        y_std=np.ones(n_dirs),
    )


def _safe_std(a, axis=0):
    s = a.std(axis=axis)
    return np.where(s > 1e-12, s, 1.0)


def train(data, thetas, net: QuantileNet, cfg: TrainConfig, epochs: int | None = None) -> QuantileNet:
    """Fit (or fine-tune) ``net`` on pairs ``(data[m], thetas[m])``.

    The existing weights are the starting point, so passing a previously
    trained net performs warm-started fine-tuning with a fresh optimizer.
    Input and target standardization are re-estimated from ``data``.
    """
    x = np.atleast_2d(np.asarray(data, dtype=float))
    theta = np.asarray(thetas, dtype=float)
    if theta.ndim == 1:
        theta = theta[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if x.shape[0] != theta.shape[0]:
        raise ValueError("data and thetas have different lengths")
    if x.shape[1] != net.input_dim:
        raise ValueError(f"data dimension {x.shape[1]} != network input {net.input_dim}")
    if theta.shape[1] != net.projections.dimension:
        raise ValueError(
            f"parameter dimension {theta.shape[1]} != projection dimension {net.projections.dimension}"
        )
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng(cfg.seed)
    net = net.copy()

    targets = net.projections.project(theta)
    net.x_mean = x.mean(axis=0)
    net.x_std = _safe_std(x)
    net.y_mean = targets.mean(axis=0)
    net.y_std = _safe_std(targets)
    xs = (x - net.x_mean) / net.x_std
    ts = (targets - net.y_mean) / net.y_std
    levels = net.grid.levels

    n = xs.shape[0]
    order = rng.permutation(n)
    n_hold = int(round(cfg.holdout_fraction * n)) if n >= 20 else 0
    hold, fit = order[:n_hold], order[n_hold:]
    per_sample = net.projections.num_directions * levels.size

    W, B = net.weights, net.biases
    mW = [np.zeros_like(w) for w in W]
    vW = [np.zeros_like(w) for w in W]
    mB = [np.zeros_like(b) for b in B]
    vB = [np.zeros_like(b) for b in B]
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    step = 0
    ema = cfg.ema_decay
    eW = [w.copy() for w in W]
    eB = [b.copy() for b in B]
    best = (np.inf, [w.copy() for w in W], [b.copy() for b in B])
    stale = 0
    since_decay = 0
    history = []
    for epoch in range(epochs):
        if cfg.cosine:
            lr = 0.5 * cfg.learning_rate * (1.0 + np.cos(np.pi * epoch / epochs))
        perm = fit[rng.permutation(fit.size)]
        total = 0.0
        for start in range(0, perm.size, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, gW, gB = quantile_loss_and_grads(W, B, xs[idx], ts[idx], levels, cfg.kappa)
            total += loss
            scale = 1.0 / (idx.size * per_sample)
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            if cfg.weight_decay > 0:
                for w in W[:-1]:
                    w *= 1.0 - lr * cfg.weight_decay
            for params, grads, m, v in ((W, gW, mW, vW), (B, gB, mB, vB)):
                for i in range(len(params)):
                    g = grads[i] * scale
                    m[i] *= b1
                    m[i] += (1.0 - b1) * g
                    v[i] *= b2
                    v[i] += (1.0 - b2) * g * g
                    params[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
            if ema > 0:
                # warm-up keeps early averages from clinging to the initial weights
                decay = min(ema, (1.0 + step) / (10.0 + step))
                for avg, cur in zip(eW + eB, W + B):
                    avg *= decay
                    avg += (1.0 - decay) * cur
        history.append(total / (fit.size * per_sample))
        # evaluation uses the running parameter average when enabled
        cW, cB = (eW, eB) if ema > 0 else (W, B)
        if n_hold:
            hold_loss, _, _ = quantile_loss_and_grads(cW, cB, xs[hold], ts[hold], levels, cfg.kappa, False)
            if hold_loss < best[0] - 1e-12:
                best = (hold_loss, [w.copy() for w in cW], [b.copy() for b in cB])
                stale = since_decay = 0
            else:
                stale += 1
                since_decay += 1
                if since_decay >= cfg.lr_decay_patience and not cfg.cosine:
                    lr *= cfg.lr_decay_factor
                    since_decay = 0
                if stale >= cfg.patience and not cfg.cosine:
                    logger.debug("early stop at epoch %d", epoch + 1)
                    break
    if n_hold:
        net.weights, net.biases = best[1], best[2]
    elif ema > 0:
        net.weights, net.biases = eW, eB
    net.loss_history = history
    return net


def predict_quantiles(net: QuantileNet, x) -> np.ndarray:
    """Quantile table(s) for data vector(s) ``x``; each row sorted ascending.

    A single vector gives ``(K', H + 1)``; a 2-D batch gives ``(n, K', H + 1)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != net.input_dim:
        raise ValueError(f"data dimension {x2.shape[1]} != network input {net.input_dim}")
    out, _ = mlp_forward(net.weights, net.biases, (x2 - net.x_mean) / net.x_std)
    table = out.reshape((x2.shape[0],) + net.table_shape)
    table = net.y_mean[:, None] + net.y_std[:, None] * table
    table.sort(axis=-1)
    return table[0] if single else table


def estimated_msw(net: QuantileNet, x, x_star, cfg: MswConfig):
    """Kernel statistic: MSW between predicted posteriors at ``x`` and ``x_star``.

    ``x`` may be a batch of data vectors, in which case an array is returned.
    """
    return msw_from_quantile_tables(
        predict_quantiles(net, x), predict_quantiles(net, x_star), cfg, net.projections.dimension
    )


def save_net(net: QuantileNet, path) -> None:
    """Write a structured-text checkpoint (JSON, shortest round-trip floats)."""
    payload = {
        "widths": list(net.widths),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "directions": net.projections.directions.tolist(),
        "dimension": net.projections.dimension,
        "delta": net.grid.delta,
        "num_bins": net.grid.num_bins,
        "x_mean": net.x_mean.tolist(),
        "x_std": net.x_std.tolist(),
        "y_mean": net.y_mean.tolist(),
        "y_std": net.y_std.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_net(path) -> QuantileNet:
    with open(path) as fh:
        p = json.load(fh)
    return QuantileNet(
        widths=tuple(p["widths"]),
        weights=[np.array(w, dtype=float) for w in p["weights"]],
        biases=[np.array(b, dtype=float) for b in p["biases"]],
        projections=ProjectionSet(np.array(p["directions"], dtype=float), p["dimension"]),
        grid=QuantileGrid(p["delta"], p["num_bins"]),
        x_mean=np.array(p["x_mean"]),
        x_std=np.array(p["x_std"]),
        y_mean=np.array(p["y_mean"]),
        y_std=np.array(p["y_std"]),
    )
