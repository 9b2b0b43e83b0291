"""Benchmark simulators packaged as prior sampler + simulator bundles.

Simulators are vectorized: ``simulate(thetas, rng)`` takes an ``(n, d)``
array and returns ``(data, valid)`` with ``data`` of shape ``(n, data_dim)``
and a boolean validity mask.  Invalid draws (e.g. a population explosion in
the Lotka-Volterra model) are rejected automatically by the sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy.special import expit

OBSERVATION_SEED = 20240501


@dataclass(frozen=True)
class SupportTransform:
    """Coordinatewise bijection from a box-shaped support onto R^d.

    Coordinates with two finite bounds use a scaled logit; coordinates with
    infinite bounds are passed through unchanged.
    """

    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "SupportTransform":
        return cls(np.full(d, -np.inf), np.full(d, np.inf))

    @property
    def bounded(self) -> np.ndarray:
        return np.isfinite(self.lower) & np.isfinite(self.upper)

    def forward(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        b = self.bounded
        if b.any():
            lo, hi = self.lower[b], self.upper[b]
            u = theta[..., b]
            out[..., b] = np.log(u - lo) - np.log(hi - u)
        return out

    def inverse(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = z.copy()
        b = self.bounded
        if b.any():
            lo, hi = self.lower[b], self.upper[b]
            out[..., b] = lo + (hi - lo) * expit(z[..., b])
        return out


@dataclass
class SimulatorBundle:
    name: str
    param_names: tuple
    data_dim: int
    prior_sampler: Callable  # (rng, n) -> (n, d)
    simulator: Callable  # (thetas (n, d), rng) -> (data (n, D), valid (n,))
    transform: SupportTransform
    truth: np.ndarray | None = None
    reference_mean: np.ndarray | None = None
    reference_var: np.ndarray | None = None
    fixed_observation: np.ndarray | None = None
    obs_dim: int = 1  # coordinates per observation in the flattened data vector
    # fixed injective map applied to data before it reaches the quantile network
    features: Callable | None = None
    notes: dict = field(default_factory=dict)

    @property
    def theta_dim(self) -> int:
        return len(self.param_names)

    def sample_prior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self.prior_sampler(rng, n), dtype=float).reshape(n, self.theta_dim)

    def simulate(self, thetas, rng: np.random.Generator):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.theta_dim:
            raise ValueError(f"{self.name}: expected parameter dimension {self.theta_dim}")
        data, valid = self.simulator(thetas, rng)
        return np.asarray(data, dtype=float), np.asarray(valid, dtype=bool)

    def simulate_one(self, theta, rng: np.random.Generator) -> np.ndarray:
        data, _ = self.simulate(np.asarray(theta, dtype=float)[None, :], rng)
        return data[0]

    def network_features(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        return data if self.features is None else self.features(data)

    @property
    def feature_dim(self) -> int:
        return int(self.network_features(np.ones((1, self.data_dim))).shape[1])

    def observation(self, seed: int = OBSERVATION_SEED) -> np.ndarray:
        """Observed data x*: the fixed vector if the model has one, else a pinned draw at the truth."""
        if self.fixed_observation is not None:
            return self.fixed_observation.copy()
        if self.truth is None:
            raise ValueError(f"{self.name} has neither an observation nor a true parameter")
        return self.simulate_one(self.truth, np.random.default_rng(seed))


def _all_valid(data):
    return data, np.ones(data.shape[0], dtype=bool)


def _uniform_prior(lower, upper):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def sampler(rng, n):
        return lower + (upper - lower) * rng.random((n, lower.size))

    return sampler


# ---------------------------------------------------------------- multimodal

def _multimodal_sim(thetas, rng, n_draws=4):
    n = thetas.shape[0]
    mu = thetas[:, :2]
    s1 = thetas[:, 2] ** 2
    s2 = thetas[:, 3] ** 2
    rho = np.tanh(thetas[:, 4])
    # closed-form Cholesky factor of [[s1^2, rho s1 s2], [rho s1 s2, s2^2]];
    # valid even when s1 or s2 is zero
    z = rng.standard_normal((n, n_draws, 2))
    x = mu[:, None, 0] + s1[:, None] * z[..., 0]
    y = mu[:, None, 1] + s2[:, None] * (rho[:, None] * z[..., 0] + np.sqrt(1.0 - rho**2)[:, None] * z[..., 1])
    return _all_valid(np.stack([x, y], axis=-1).reshape(n, 2 * n_draws))


MULTIMODAL_TRUTH = np.array([0.7, -2.9, -1.0, -0.9, 0.6])


def multimodal_gaussian() -> SimulatorBundle:
    return SimulatorBundle(
        name="multimodal_gaussian",
        param_names=("theta1", "theta2", "theta3", "theta4", "theta5"),
        data_dim=8,
        prior_sampler=_uniform_prior([-3.0] * 5, [3.0] * 5),
        simulator=_multimodal_sim,
        transform=SupportTransform(np.full(5, -3.0), np.full(5, 3.0)),
        truth=MULTIMODAL_TRUTH.copy(),
        obs_dim=2,
    )


# ---------------------------------------------------------------- M/G/1 queue

def _mg1_sim(thetas, rng, n_obs=50):
    """Interdeparture times; parameters are (service min, service width, arrival rate)."""
    n = thetas.shape[0]
    lo = thetas[:, 0]
    width = thetas[:, 1]
    rate = thetas[:, 2]
    service = lo[:, None] + width[:, None] * rng.random((n, n_obs))
    with np.errstate(divide="ignore"):
        gaps = rng.standard_exponential((n, n_obs)) / rate[:, None]
    arrival = np.cumsum(gaps, axis=1)
    out = np.empty((n, n_obs))
    last_departure = np.zeros(n)
    for i in range(n_obs):
        y = service[:, i] + np.maximum(0.0, arrival[:, i] - last_departure)
        out[:, i] = y
        last_departure = last_departure + y
    return out, np.isfinite(out).all(axis=1)


def _mg1_features(data):
    # log times followed by their order statistics; injective, so nothing is lost
    logs = np.log(data)
    return np.concatenate([logs, np.sort(logs, axis=-1)], axis=-1)


def mg1_queue() -> SimulatorBundle:
    lower = np.array([0.0, 0.0, 0.0])
    upper = np.array([10.0, 10.0, 1.0 / 3.0])
    return SimulatorBundle(
        name="mg1_queue",
        param_names=("theta1", "theta2_minus_theta1", "theta3"),
        data_dim=50,
        prior_sampler=_uniform_prior(lower, upper),
        simulator=_mg1_sim,
        transform=SupportTransform(lower, upper),
        truth=np.array([4.0, 3.0, 0.15]),
        reference_mean=np.array([3.96, 2.99, 0.177]),
        features=_mg1_features,
    )


# ---------------------------------------------------------------- cosine

def _cosine_sim(thetas, rng, n_obs=100):
    t = np.arange(1, n_obs + 1, dtype=float)
    omega, phi = thetas[:, 0:1], thetas[:, 1:2]
    sigma, amp = np.exp(thetas[:, 2:3]), np.exp(thetas[:, 3:4])
    signal = amp * np.cos(2.0 * np.pi * omega * t + phi)
    return _all_valid(signal + sigma * rng.standard_normal((thetas.shape[0], n_obs)))


def _cosine_prior(rng, n):
    return np.column_stack(
        [
            0.1 * rng.random(n),
            2.0 * np.pi * rng.random(n),
            rng.standard_normal(n),
            rng.standard_normal(n),
        ]
    )


def cosine_model() -> SimulatorBundle:
    return SimulatorBundle(
        name="cosine",
        param_names=("omega", "phi", "log_sigma", "log_A"),
        data_dim=100,
        prior_sampler=_cosine_prior,
        simulator=_cosine_sim,
        transform=SupportTransform(
            np.array([0.0, 0.0, -np.inf, -np.inf]), np.array([0.1, 2.0 * np.pi, np.inf, np.inf])
        ),
        truth=np.array([1.0 / 80.0, np.pi / 4.0, 0.0, math.log(2.0)]),
    )


# ---------------------------------------------------------------- Lotka-Volterra

LV_MAX_EVENTS = 1_000_000
LV_MAX_POPULATION = 50_000
LV_GRID = np.round(np.arange(101) * 0.1, 10)


@numba.njit(cache=True)
def _gillespie_lv(alpha, beta, gamma, delta, x0, y0, grid, max_events, max_pop, seed):
    """Exact SSA for the predator-prey jump process.

    Records the state in force at each grid time (latest event at or before
    it).  The run stops when either population reaches zero.  Returns the
    (len(grid), 2) record, a validity flag, and the number of events.
    """
    np.random.seed(seed)
    n_grid = grid.size
    out = np.empty((n_grid, 2))
    x, y = x0, y0
    t = 0.0
    g = 0
    events = 0
    valid = True
    while g < n_grid:
        r1 = alpha * x
        r2 = beta * x * y
        r3 = gamma * y
        r4 = delta * x * y
        total = r1 + r2 + r3 + r4
        if x == 0 or y == 0 or total <= 0.0:
            break
        if events >= max_events or x > max_pop or y > max_pop:
            valid = False
            break
        t_next = t + np.random.exponential(1.0 / total)
        while g < n_grid and grid[g] < t_next:
            out[g, 0] = x
            out[g, 1] = y
            g += 1
        u = np.random.random() * total
        if u < r1:
            x += 1
        elif u < r1 + r2:
            x -= 1
            y -= 1
        elif u < r1 + r2 + r3:
            y -= 1
        else:
            y += 1
        events += 1
        t = t_next
    xf = min(x, max_pop)
    yf = min(y, max_pop)
    while g < n_grid:
        out[g, 0] = xf
        out[g, 1] = yf
        g += 1
    return out, valid, events


def gillespie_lv(theta, rng: np.random.Generator, x0=50, y0=100, grid=LV_GRID,
                 max_events=LV_MAX_EVENTS, max_pop=LV_MAX_POPULATION):
    """Single Lotka-Volterra trajectory; returns (record, valid, n_events)."""
    a, b, c, d = (float(v) for v in theta)
    seed = int(rng.integers(0, 2**31 - 1))
    return _gillespie_lv(a, b, c, d, int(x0), int(y0), np.asarray(grid, dtype=float),
                         int(max_events), int(max_pop), seed)


def _lv_sim(thetas, rng):
    n = thetas.shape[0]
    out = np.empty((n, 2 * LV_GRID.size))
    valid = np.empty(n, dtype=bool)
    for i in range(n):
        rec, ok, _ = gillespie_lv(thetas[i], rng)
        out[i] = rec.ravel()
        valid[i] = ok
    return out, valid


def lotka_volterra() -> SimulatorBundle:
    lower = np.zeros(4)
    upper = np.array([1.0, 0.1, 2.0, 0.1])
    return SimulatorBundle(
        name="lotka_volterra",
        param_names=("alpha", "beta", "gamma", "delta"),
        data_dim=2 * LV_GRID.size,
        prior_sampler=_uniform_prior(lower, upper),
        simulator=_lv_sim,
        transform=SupportTransform(lower, upper),
        truth=np.array([0.5, 0.01, 1.0, 0.01]),
        obs_dim=2,
        features=np.log1p,
    )


# ---------------------------------------------------------------- Gaussian-Gaussian

GG_PRIOR_VAR = 20.0
GG_X_STAR = 6.24


def gaussian_gaussian_posterior(x_star: float = GG_X_STAR):
    """Conjugate posterior (mean, variance) for a N(0, 20) prior and unit-variance likelihood."""
    shrink = GG_PRIOR_VAR / (GG_PRIOR_VAR + 1.0)
    return x_star * shrink, shrink


def _gg_sim(thetas, rng):
    return _all_valid(thetas + rng.standard_normal(thetas.shape))


def gaussian_gaussian() -> SimulatorBundle:
    mean, var = gaussian_gaussian_posterior()
    return SimulatorBundle(
        name="gaussian_gaussian",
        param_names=("theta",),
        data_dim=1,
        prior_sampler=lambda rng, n: math.sqrt(GG_PRIOR_VAR) * rng.standard_normal((n, 1)),
        simulator=_gg_sim,
        transform=SupportTransform.identity(1),
        reference_mean=np.array([mean]),
        reference_var=np.array([var]),
        fixed_observation=np.array([GG_X_STAR]),
    )


# ---------------------------------------------------------------- registry

REGISTRY = {
    "multimodal_gaussian": multimodal_gaussian,
    "mg1_queue": mg1_queue,
    "cosine": cosine_model,
    "lotka_volterra": lotka_volterra,
    "gaussian_gaussian": gaussian_gaussian,
}


def get_model(name: str) -> SimulatorBundle:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {', '.join(sorted(REGISTRY))}") from None


# ---------------------------------------------------------------- x* files

def write_observation(path, values, model: str, seed: int) -> None:
    with open(path, "w") as fh:
        fh.write(f"# model={model} seed={seed}\n")
        for v in np.asarray(values, dtype=float).ravel():
            fh.write(f"{v:.17g}\n")


def read_observation(path):
    """Returns (values, header dict) from a one-value-per-line file."""
    header = {}
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    key, _, val = item.partition("=")
                    header[key] = val
                continue
            values.append(float(line))
    if not values:
        raise ValueError(f"{path}: no values")
    return np.array(values), header


# ---------------------------------------------------------------- curse of dimensionality

def curse_of_dim_demo(dims, epsilon: float, trials: int, sigma: float = 1.0, seed: int = 0):
    """Monte Carlo rate of landing in an epsilon-ball around x* as the data dimension grows.

    Model: theta ~ U(-1, 1), X | theta ~ N(theta e_1, sigma^2 I_n), x* = 0.
    Returns (rows, slope) where rows are (n, rate) and the slope is the
    least-squares fit of log(rate) on n over nonzero rates (nan if < 2).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    dims = [int(n) for n in dims]
    if not dims:
        raise ValueError("dims must be nonempty")
    rows = []
    for n in dims:
        rng = np.random.default_rng([seed, n])
        hits = 0
        done = 0
        chunk = max(1, min(trials, 2_000_000 // max(n, 1)))
        while done < trials:
            m = min(chunk, trials - done)
            theta = rng.uniform(-1.0, 1.0, m)
            x = sigma * rng.standard_normal((m, n))
            x[:, 0] += theta
            hits += int(((x * x).sum(axis=1) <= epsilon * epsilon).sum())
            done += m
        rows.append((n, hits / trials))
    pts = [(n, math.log(r)) for n, r in rows if r > 0]
    slope = float("nan")
    if len(pts) >= 2:
        ns, lr = np.array(pts).T
        slope = float(np.polyfit(ns, lr, 1)[0])
    return rows, slope
