"""Adaptive Bayesian Inference loop.

Each iteration draws parameter/data pairs from the current proposal by
approximate rejection sampling under the previous tolerance, (re)trains the
quantile network, scores the proposal pairs with the estimated posterior MSW
to x*, picks the next tolerance as a quantile of those scores, prunes, and
fits a Gaussian mixture that becomes the next proposal.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import mixture
from .mixture import FitConfig, GaussianMixture
from .models import SimulatorBundle
from .msw import MswConfig, QuantileGrid, sample_projections
from .quantile_net import QuantileNet, TrainConfig, build_quantile_net, estimated_msw, train

logger = logging.getLogger(__name__)

# stream tags for seed derivation
_TAG_PROJ, _TAG_TRAIN, _TAG_PROP, _TAG_NET, _TAG_DENSITY = 1, 2, 3, 4, 5


class AbiError(RuntimeError):
    pass


class ArsExhausted(AbiError):
    pass


@dataclass
class AbiConfig:
    iterations: int = 5
    proposals_per_iter: int = 5000
    train_pairs_per_iter: int = 5000
    ars_budget: int = 20
    quantile_fraction: float = 0.1
    msw: MswConfig = field(default_factory=MswConfig)
    net: TrainConfig = field(default_factory=TrainConfig)
    hidden: tuple = (128, 128, 128)
    density: FitConfig = field(default_factory=FitConfig)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if min(self.proposals_per_iter, self.train_pairs_per_iter, self.ars_budget) < 1:
            raise ValueError("proposals_per_iter, train_pairs_per_iter and ars_budget must be >= 1")
        if not 0.0 < self.quantile_fraction <= 1.0:
            raise ValueError("quantile_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        out["density"]["component_range"] = list(self.density.component_range)
        return out


@dataclass
class IterationReport:
    index: int
    epsilon: float
    ars_acceptance_rate: float
    retained_count: int
    discarded_budget_exhausted: int
    quantile_train_loss: float
    proposal_pairs: int = 0
    train_pairs: int = 0
    simulator_calls: int = 0
    fallback_all_candidates: bool = False
    wall_clock: float = 0.0


@dataclass
class AbiResult:
    posterior_model: GaussianMixture
    transform: object
    reports: list
    final_net: QuantileNet | None
    retained: np.ndarray
    # final-iteration proposal pairs and their statistics, for pruning checks
    proposal_thetas: np.ndarray | None = None
    statistics: np.ndarray | None = None
    proposal_data: np.ndarray | None = None

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draws from the final proposal, mapped back to parameter space."""
        return self.transform.inverse(mixture.sample(self.posterior_model, n, rng))


@dataclass
class ArsOutput:
    thetas: np.ndarray
    data: np.ndarray
    simulator_calls: int
    dropped: int

    @property
    def acceptance_rate(self) -> float:
        return self.thetas.shape[0] / self.simulator_calls if self.simulator_calls else 0.0


def ars_sample(theta_source: Callable, simulator: Callable, accept: Callable, N: int, R: int,
               rng: np.random.Generator, max_batch: int = 1 << 16) -> ArsOutput:
    """Approximate rejection sampling with a per-parameter budget of ``R`` simulations.

    ``theta_source(rng, n)`` returns ``(n, d)`` parameters, ``simulator(thetas,
    rng)`` returns ``(data, valid)``, and ``accept(data)`` returns a boolean
    mask.  Invalid simulations never pass.  Each round gives every pending
    parameter ``k`` consecutive attempts (``k`` doubles per round, bounded by
    ``max_batch`` simulations per round) and keeps its first success, which is
    distributionally the same as retrying one attempt at a time.
    ``simulator_calls`` counts attempts up to each parameter's first success.
    Results are ordered by draw index.
    """
    if N < 1 or R < 1:
        raise ValueError("N and R must be >= 1")
    thetas = np.asarray(theta_source(rng, N), dtype=float)
    pending = np.arange(N)
    kept_idx, kept_rows = [], []
    calls = 0
    used = 0
    k = 1
    while pending.size and used < R:
        k = int(min(k, R - used, max(1, max_batch // pending.size)))
        rep = np.repeat(pending, k)
        data, valid = simulator(thetas[rep], rng)
        ok = np.asarray(valid, dtype=bool).copy()
        if ok.any():
            ok[ok] = np.asarray(accept(data[ok]), dtype=bool)
        ok = ok.reshape(pending.size, k)
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        calls += int(np.where(hit, first + 1, k).sum())
        kept_idx.append(pending[hit])
        kept_rows.append(data[np.flatnonzero(hit) * k + first[hit]])
        pending = pending[~hit]
        used += k
        k *= 2
    idx = np.concatenate(kept_idx) if kept_idx else np.empty(0, dtype=int)
    if idx.size == 0:
        raise ArsExhausted("ARS retained nothing: relax ε or raise R")
    order = np.argsort(idx, kind="stable")
    return ArsOutput(thetas[idx[order]], np.concatenate(kept_rows)[order], calls, int(pending.size))


def adaptive_threshold(distances, alpha: float) -> float:
    """Left-continuous empirical ``alpha``-quantile (rank ``ceil(alpha * n)``)."""
    d = np.sort(np.asarray(distances, dtype=float).ravel())
    if d.size == 0:
        raise ValueError("empty distances")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    rank = min(max(math.ceil(alpha * d.size - 1e-12), 1), d.size)
    return float(d[rank - 1])


def _stream(seed, t, tag):
    return np.random.default_rng([seed, t, tag])


class _Proposal:
    """Current proposal: the prior or a mixture fitted in transformed space."""

    def __init__(self, model: SimulatorBundle, density: GaussianMixture | None = None):
        self.model = model
        self.density = density

    def __call__(self, rng, n):
        if self.density is None:
            return self.model.sample_prior(n, rng)
        return self.model.transform.inverse(mixture.sample(self.density, n, rng))


def _fit_density(model, thetas, cfg: AbiConfig, t):
    fit_cfg = FitConfig(**{**asdict(cfg.density), "seed": cfg.density.seed + 1000 * t})
    return mixture.fit(model.transform.forward(thetas), fit_cfg)


def _kernel_statistic(model, net, x_star, msw_cfg):
    f_star = model.network_features(x_star)
    return lambda data: np.asarray(estimated_msw(net, model.network_features(data), f_star, msw_cfg))


def _kernel_predicate(model, net, x_star, eps, msw_cfg):
    if not np.isfinite(eps):
        return lambda data: np.ones(data.shape[0], dtype=bool)
    stat = _kernel_statistic(model, net, x_star, msw_cfg)
    return lambda data: stat(data) <= eps


def _progress(report: IterationReport):
    logger.info(
        "iter %d  eps=%.6g  acc=%.4f  retained=%d  dropped=%d",
        report.index, report.epsilon, report.ars_acceptance_rate,
        report.retained_count, report.discarded_budget_exhausted,
    )


def _loop(model: SimulatorBundle, x_star, cfg: AbiConfig, thresholds=None, distance=None) -> AbiResult:
    x_star = np.asarray(x_star, dtype=float).ravel()
    if x_star.size != model.data_dim:
        raise ValueError(f"x_star has length {x_star.size}, model {model.name} emits {model.data_dim}")
    T = cfg.iterations if thresholds is None else len(thresholds)
    d = model.theta_dim
    grid = QuantileGrid(cfg.msw.delta, cfg.msw.num_quantile_bins)
    use_net = distance is None
    proposal = _Proposal(model)
    net = None
    eps_prev = math.inf
    accept_prev = lambda data: np.ones(data.shape[0], dtype=bool)  # noqa: E731
    reports = []
    retained = None
    density = None
    for t in range(1, T + 1):
        start = time.perf_counter()
        try:
            loss = float("nan")
            train_count = 0
            calls = 0
            if use_net:
                proj = sample_projections(d, cfg.msw.num_slices, _stream(cfg.seed, t, _TAG_PROJ))
                pairs = ars_sample(proposal, model.simulate, accept_prev, cfg.train_pairs_per_iter,
                                   cfg.ars_budget, _stream(cfg.seed, t, _TAG_TRAIN))
                calls += pairs.simulator_calls
                train_count = pairs.thetas.shape[0]
                if net is None:
                    net = build_quantile_net(model.feature_dim, proj, grid, cfg.hidden, _stream(cfg.seed, t, _TAG_NET))
                    epochs = cfg.net.epochs
                else:
                    net = net.copy()
                    net.projections = proj
                    epochs = max(1, cfg.net.epochs // 2)
                net_cfg = TrainConfig(**{**asdict(cfg.net), "seed": cfg.net.seed + t})
                net = train(model.network_features(pairs.data), pairs.thetas, net, net_cfg, epochs=epochs)
                loss = net.loss_history[-1] if net.loss_history else float("nan")
            props = ars_sample(proposal, model.simulate, accept_prev, cfg.proposals_per_iter,
                               cfg.ars_budget, _stream(cfg.seed, t, _TAG_PROP))
            calls += props.simulator_calls
            if use_net:
                stats = _kernel_statistic(model, net, x_star, cfg.msw)(props.data)
            else:
                stats = np.asarray(distance(props.data, x_star), dtype=float)
            fallback = False
            if thresholds is None:
                candidates = stats[stats <= eps_prev]
                if candidates.size == 0:
                    # the refreshed network scores every pair above the old tolerance
                    logger.warning("iteration %d: no statistic <= previous tolerance; using all", t)
                    candidates = stats
                    fallback = True
                eps = adaptive_threshold(candidates, cfg.quantile_fraction)
            else:
                eps = float(thresholds[t - 1])
            keep = stats <= eps
            retained = props.thetas[keep]
            if retained.shape[0] == 0:
                raise AbiError("no proposal pair within the tolerance")
            density = _fit_density(model, retained, cfg, t)
        except Exception as exc:
            raise AbiError(f"iteration {t}: {exc}") from exc
        report = IterationReport(
            index=t,
            epsilon=eps,
            ars_acceptance_rate=props.acceptance_rate,
            retained_count=int(retained.shape[0]),
            discarded_budget_exhausted=props.dropped,
            quantile_train_loss=loss,
            proposal_pairs=int(props.thetas.shape[0]),
            train_pairs=train_count,
            simulator_calls=calls,
            fallback_all_candidates=fallback,
            wall_clock=time.perf_counter() - start,
        )
        reports.append(report)
        _progress(report)
        proposal = _Proposal(model, density)
        eps_prev = eps
        if use_net:
            accept_prev = _kernel_predicate(model, net, x_star, eps, cfg.msw)
        else:
            accept_prev = (lambda e: lambda data: np.asarray(distance(data, x_star)) <= e)(eps)
    return AbiResult(density, model.transform, reports, net, retained, props.thetas, stats, props.data)


def run_abi(model: SimulatorBundle, x_star, cfg: AbiConfig) -> AbiResult:
    """Adaptive-tolerance ABI with the network-estimated posterior MSW as statistic."""
    return _loop(model, x_star, cfg)


def run_abi_fixed_schedule(model: SimulatorBundle, x_star, thresholds, cfg: AbiConfig,
                           distance: Callable | None = None) -> AbiResult:
    """ABI with an explicit tolerance list.

    ``distance(data_batch, x_star) -> statistics`` replaces the network
    statistic when given (e.g. a Euclidean data-space distance); ``None``
    keeps the estimated posterior MSW.
    """
    thresholds = [float(e) for e in thresholds]
    if not thresholds:
        raise ValueError("thresholds must be nonempty")
    if any(b > a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be nonincreasing")
    return _loop(model, x_star, cfg, thresholds=thresholds, distance=distance)


def euclidean_distance(data, x_star):
    return np.linalg.norm(np.atleast_2d(data) - np.asarray(x_star)[None, :], axis=1)
