"""Gaussian mixture proposal model fitted by EM with BIC model selection."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


class MixtureFitError(RuntimeError):
    pass


@dataclass
class FitConfig:
    component_range: tuple = (1, 8)
    em_max_iters: int = 500
    em_tol: float = 1e-6
    cov_regularization: float = 1e-6
    max_retries: int = 3
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.component_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid component_range {self.component_range}")
        if self.em_tol <= 0:
            raise ValueError("em_tol must be positive")


@dataclass
class GaussianMixture:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d)
    log_likelihood_trace: list = field(default_factory=list)
    bic: float = float("nan")

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        diff = self.means - mu
        within = np.einsum("k,kij->ij", self.weights, self.covariances)
        between = np.einsum("k,ki,kj->ij", self.weights, diff, diff)
        return within + between

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GaussianMixture":
        return cls(
            weights=np.array(payload["weights"], dtype=float),
            means=np.array(payload["means"], dtype=float),
            covariances=np.array(payload["covariances"], dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "GaussianMixture":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _component_logpdf(x, means, covariances):
    """(n, k) matrix of Gaussian log densities; raises LinAlgError if not PD."""
    d = x.shape[1]
    chol = np.linalg.cholesky(covariances)  # (k, d, d)
    diff = x[None, :, :] - means[:, None, :]  # (k, n, d)
    z = np.linalg.inv(chol) @ np.swapaxes(diff, 1, 2)  # (k, d, n)
    log_det = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return (-0.5 * (z * z).sum(axis=1) - log_det[:, None] - 0.5 * d * _LOG_2PI).T


def log_density(model: GaussianMixture, points) -> np.ndarray | float:
    x = np.asarray(points, dtype=float)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    lp = logsumexp(_component_logpdf(x, model.means, model.covariances) + log_w, axis=1)
    return float(lp[0]) if single else lp


def sample(model: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling: pick a component, then draw through its Cholesky factor."""
    if n < 1:
        raise ValueError("n must be >= 1")
    comp = rng.choice(model.n_components, size=n, p=model.weights)
    z = rng.standard_normal((n, model.dim))
    chols = np.linalg.cholesky(model.covariances)
    return model.means[comp] + np.einsum("nij,nj->ni", chols[comp], z)


def _kmeans_pp(x, k, rng):
    centers = [x[rng.integers(x.shape[0])]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        centers.append(x[rng.choice(x.shape[0], p=d2 / total)])
        d2 = np.minimum(d2, ((x - centers[-1]) ** 2).sum(axis=1))
    return np.array(centers)


def _m_step(x, resp, reg):
    nk = resp.sum(axis=0) + 1e-300
    weights = nk / nk.sum()
    means = (resp.T @ x) / nk[:, None]
    d = x.shape[1]
    diff = x[None, :, :] - means[:, None, :]  # (k, n, d)
    covs = np.swapaxes(resp.T[:, :, None] * diff, 1, 2) @ diff / nk[:, None, None]
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2)) + reg * np.eye(d)
    return weights, means, covs


def _em(x, k, reg, cfg: FitConfig, rng):
    centers = _kmeans_pp(x, k, rng)
    if centers.shape[0] < k:
        raise MixtureFitError(f"fewer than {k} distinct points")
    labels = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2).argmin(axis=1)
    resp = np.zeros((x.shape[0], k))
    resp[np.arange(x.shape[0]), labels] = 1.0
    weights, means, covs = _m_step(x, resp, reg)
    trace = []
    for _ in range(cfg.em_max_iters):
        logp = _component_logpdf(x, means, covs) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.mean())
        if not np.isfinite(ll):
            raise MixtureFitError("non-finite log-likelihood")
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= cfg.em_tol * max(abs(trace[-2]), 1.0):
            break
        resp = np.exp(logp - norm[:, None])
        weights, means, covs = _m_step(x, resp, reg)
    # trace[-1] always corresponds to the returned parameters
    return GaussianMixture(weights, means, covs, trace)


def _n_params(k, d):
    return (k - 1) + k * d + k * d * (d + 1) // 2


def fit(samples, cfg: FitConfig | None = None) -> GaussianMixture:
    """Fit a full-covariance Gaussian mixture, choosing the component count by BIC."""
    cfg = cfg or FitConfig()
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < 2 * d or n < 2:
        raise MixtureFitError(f"insufficient retained draws: {n} points in dimension {d}")
    med_var = float(np.median(x.var(axis=0)))
    base_reg = cfg.cov_regularization * (med_var if med_var > 0 else 1.0)

    lo, hi = cfg.component_range
    best = None
    for k in range(lo, hi + 1):
        if _n_params(k, d) >= n and k > lo:
            break
        reg = base_reg
        model = None
        for attempt in range(cfg.max_retries + 1):
            rng = np.random.default_rng([cfg.seed, k, attempt])
            try:
                model = _em(x, k, reg, cfg, rng)
                break
            except (np.linalg.LinAlgError, MixtureFitError) as exc:
                logger.debug("EM k=%d failed (%s); regularization -> %g", k, exc, 2 * reg)
                reg *= 2.0
        if model is None:
            continue
        model.bic = -2.0 * n * model.log_likelihood_trace[-1] + _n_params(k, d) * np.log(n)
        if best is None or model.bic < best.bic:
            best = model
    if best is None:
        raise MixtureFitError("EM failed for every component count")
    return best
