"""Trimmed Marginally-augmented Sliced Wasserstein (MSW) distance.

Two evaluation routes are provided:

* ``msw_empirical`` works on point clouds and integrates the 1-D quantile
  functions exactly (piecewise-constant over merged rank breakpoints).
* ``msw_from_quantile_tables`` works on tables of quantiles evaluated on the
  grid ``tau_h = delta + h * (1 - 2 delta) / H`` and uses the trapezoid rule.
  This is the route used with the quantile network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MswConfig:
    p: float = 1.0
    delta: float = 0.02
    lam: float = 0.5
    num_slices: int = 5
    num_quantile_bins: int = 10

    def __post_init__(self):
        if not 0.0 <= self.delta < 0.5:
            raise ValueError(f"delta must lie in [0, 0.5), got {self.delta}")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must lie in (0, 1), got {self.lam}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.num_slices < 1 or self.num_quantile_bins < 1:
            raise ValueError("num_slices and num_quantile_bins must be positive")


@dataclass(frozen=True)
class ProjectionSet:
    """``K`` random unit directions followed by the ``d`` coordinate axes."""

    directions: np.ndarray  # (K + d, d)
    dimension: int

    @property
    def num_random(self) -> int:
        return self.directions.shape[0] - self.dimension

    @property
    def num_directions(self) -> int:
        return self.directions.shape[0]

    def project(self, points: np.ndarray) -> np.ndarray:
        """Scalar projections of ``points`` (n, d) onto every direction -> (n, K')."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dimension:
            raise ValueError(
                f"point dimension {points.shape[1]} != projection dimension {self.dimension}"
            )
        return points @ self.directions.T


@dataclass(frozen=True)
class QuantileGrid:
    delta: float
    num_bins: int

    @property
    def step(self) -> float:
        return (1.0 - 2.0 * self.delta) / self.num_bins

    @property
    def levels(self) -> np.ndarray:
        levels = self.delta + self.step * np.arange(self.num_bins + 1)
        levels[-1] = 1.0 - self.delta
        return levels


def sample_projections(d: int, K: int, rng: np.random.Generator) -> ProjectionSet:
    if d < 1 or K < 1:
        raise ValueError("d and K must be positive")
    raw = rng.standard_normal((K, d))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return ProjectionSet(np.vstack([raw, np.eye(d)]), d)


def empirical_quantile(sample, tau: float) -> float:
    """Left-continuous inverse CDF of the empirical measure of ``sample``."""
    values = np.sort(np.asarray(sample, dtype=float).ravel())
    m = values.size
    if m == 0:
        raise ValueError("empty sample")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    rank = min(max(math.ceil(tau * m), 1), m)
    return float(values[rank - 1])


def _quantile_pieces(a: np.ndarray, b: np.ndarray, delta: float):
    """Interval lengths and quantile values of two sorted samples on [delta, 1 - delta]."""
    m, mb = a.size, b.size
    lo, hi = delta, 1.0 - delta
    cuts = np.concatenate([np.arange(1, m) / m, np.arange(1, mb) / mb])
    cuts = cuts[(cuts > lo) & (cuts < hi)]
    knots = np.unique(np.concatenate([[lo, hi], cuts]))
    widths = np.diff(knots)
    mids = 0.5 * (knots[1:] + knots[:-1])
    ia = np.clip(np.ceil(mids * m).astype(np.int64), 1, m) - 1
    ib = np.clip(np.ceil(mids * mb).astype(np.int64), 1, mb) - 1
    return widths, a[ia], b[ib]


def trimmed_w_1d_pow(a, b, p: float = 1.0, delta: float = 0.0, presorted: bool = False) -> float:
    """``W_{p,delta}^p`` between two 1-D empirical measures (exact)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if not presorted:
        a, b = np.sort(a), np.sort(b)
    if a.size == b.size:
        # common breakpoints i/m; trimmed ends get fractional weights
        m = a.size
        left = np.arange(m) / m
        right = np.arange(1, m + 1) / m
        w = np.clip(np.minimum(right, 1.0 - delta) - np.maximum(left, delta), 0.0, None)
        gaps = np.abs(a - b) ** p
        return float(np.dot(w, gaps) / (1.0 - 2.0 * delta))
    widths, qa, qb = _quantile_pieces(a, b, delta)
    return float(np.dot(widths, np.abs(qa - qb) ** p) / (1.0 - 2.0 * delta))


def trimmed_w_1d(a, b, p: float = 1.0, delta: float = 0.0) -> float:
    """delta-trimmed p-Wasserstein distance between two 1-D empirical measures.

    The quantile functions are piecewise constant, so the integral over
    ``[delta, 1 - delta]`` is evaluated exactly on the merged breakpoints.
    """
    return trimmed_w_1d_pow(a, b, p, delta) ** (1.0 / p)


def i_h_trapezoid(q1, q2, p: float, delta: float, H: int) -> np.ndarray | float:
    """Trapezoid approximation of ``(1/(1-2 delta)) int |q1 - q2|^p`` on the grid.

    The result is the p-th power integral (not rooted).  Leading axes are
    treated as a batch; the last axis must have length ``H + 1``.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    if q1.shape != q2.shape or q1.shape[-1] != H + 1:
        raise ValueError(f"expected matching quantile arrays of length {H + 1}")
    step = (1.0 - 2.0 * delta) / H
    weights = np.full(H + 1, 2.0)
    weights[0] = weights[-1] = 1.0
    out = (np.abs(q1 - q2) ** p) @ weights * step / (2.0 * (1.0 - 2.0 * delta))
    return float(out) if out.ndim == 0 else out


def _combine(marginal_pow: np.ndarray, sliced_pow: np.ndarray, cfg: MswConfig):
    # marginal terms are rooted one by one, the slice average is rooted once
    marginal = np.mean(marginal_pow ** (1.0 / cfg.p), axis=-1)
    sliced = np.mean(sliced_pow, axis=-1) ** (1.0 / cfg.p)
    return cfg.lam * marginal + (1.0 - cfg.lam) * sliced


def msw_empirical(samples_a, samples_b, cfg: MswConfig, proj: ProjectionSet) -> float:
    """Trimmed MSW distance between two empirical measures on R^d."""
    pa = proj.project(samples_a)
    pb = proj.project(samples_b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("empty sample")
    pa.sort(axis=0)
    pb.sort(axis=0)
    terms = np.array(
        [
            trimmed_w_1d_pow(pa[:, k], pb[:, k], cfg.p, cfg.delta, presorted=True)
            for k in range(proj.num_directions)
        ]
    )
    K = proj.num_random
    return float(_combine(terms[K:], terms[:K], cfg))


def msw_from_quantile_tables(qx, qstar, cfg: MswConfig, d: int):
    """MSW estimate from two ``(K + d, H + 1)`` quantile tables.

    Rows follow the ``ProjectionSet`` order (random slices, then axes).  A
    leading batch axis on either argument is broadcast.
    """
    qx = np.asarray(qx, dtype=float)
    qstar = np.asarray(qstar, dtype=float)
    if qx.shape[-2:] != qstar.shape[-2:]:
        raise ValueError(f"table shapes differ: {qx.shape} vs {qstar.shape}")
    qx, qstar = np.broadcast_arrays(qx, qstar)
    n_rows, n_cols = qx.shape[-2:]
    K = n_rows - d
    if K < 1:
        raise ValueError(f"table has {n_rows} rows, need more than d={d}")
    H = n_cols - 1
    terms = np.asarray(i_h_trapezoid(qx, qstar, cfg.p, cfg.delta, H))
    out = _combine(terms[..., K:], terms[..., :K], cfg)
    return float(out) if np.ndim(out) == 0 else out
