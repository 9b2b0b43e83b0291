import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from abi.engine import (
    AbiConfig,
    AbiError,
    ArsExhausted,
    adaptive_threshold,
    ars_sample,
    euclidean_distance,
    run_abi,
    run_abi_fixed_schedule,
)
from abi.models import SimulatorBundle, SupportTransform, gaussian_gaussian, gaussian_gaussian_posterior
from abi.msw import MswConfig, msw_empirical, sample_projections
from abi.quantile_net import TrainConfig, estimated_msw

GG_MEAN, GG_VAR = gaussian_gaussian_posterior()
X_STAR = 6.24


def counting_simulator(counter):
    def sim(thetas, rng):
        counter[0] += thetas.shape[0]
        return thetas + rng.standard_normal(thetas.shape), np.ones(thetas.shape[0], dtype=bool)

    return sim


def normal_source(mean, var):
    return lambda rng, n: mean + math.sqrt(var) * rng.standard_normal((n, 1))


def band(x_star, eps):
    return lambda data: np.abs(data[:, 0] - x_star) <= eps


def small_cfg(**kw):
    base = dict(
        iterations=3,
        proposals_per_iter=1500,
        train_pairs_per_iter=1500,
        net=TrainConfig(epochs=8),
        hidden=(32, 32),
    )
    base.update(kw)
    return AbiConfig(**base)


# ---------------------------------------------------------------- ARS

def test_ars_accept_all():
    calls = [0]
    out = ars_sample(normal_source(0, 1), counting_simulator(calls), lambda d: np.ones(len(d), bool),
                     100, 7, np.random.default_rng(0))
    assert out.thetas.shape == (100, 1) and out.data.shape == (100, 1)
    assert out.simulator_calls == 100 == calls[0]
    assert out.dropped == 0 and out.acceptance_rate == 1.0


def test_ars_accept_none_raises_after_full_budget():
    calls = [0]
    with pytest.raises(ArsExhausted, match="ARS retained nothing: relax ε or raise R"):
        ars_sample(normal_source(0, 1), counting_simulator(calls), lambda d: np.zeros(len(d), bool),
                   100, 5, np.random.default_rng(0))
    assert calls[0] == 500


def test_ars_invalid_simulations_never_pass():
    def sim(thetas, rng):
        valid = thetas[:, 0] > 0
        return np.zeros_like(thetas), valid

    out = ars_sample(normal_source(0, 1), sim, lambda d: np.ones(len(d), bool), 400, 3, np.random.default_rng(1))
    assert np.all(out.thetas > 0)


def test_ars_per_draw_rate_matches_geometric_oracle():
    rng = np.random.default_rng(2)
    source = normal_source(GG_MEAN, GG_VAR)
    eps, R, N = 0.001, 20, 100_000
    # brute-force estimate of the single-attempt acceptance probability q
    hits, total = 0, 0
    for _ in range(10):
        th = source(rng, 2_000_000)
        x = th + rng.standard_normal(th.shape)
        hits += int(np.count_nonzero(np.abs(x[:, 0] - X_STAR) <= eps))
        total += th.shape[0]
    q = hits / total
    q_se = math.sqrt(q * (1 - q) / total)
    expected = 1 - (1 - q) ** R
    out = ars_sample(source, lambda t, r: (t + r.standard_normal(t.shape), np.ones(t.shape[0], bool)),
                     band(X_STAR, eps), N, R, rng)
    rate = out.thetas.shape[0] / N
    se = math.sqrt(expected * (1 - expected) / N + (R * (1 - q) ** (R - 1) * q_se) ** 2)
    assert abs(rate - expected) <= 3 * se


def test_ars_output_ordered_and_reproducible():
    src = normal_source(0, 1)
    sim = lambda t, r: (t + r.standard_normal(t.shape), np.ones(t.shape[0], bool))  # noqa: E731
    a = ars_sample(src, sim, band(0.0, 0.5), 300, 4, np.random.default_rng(3))
    b = ars_sample(src, sim, band(0.0, 0.5), 300, 4, np.random.default_rng(3))
    assert np.array_equal(a.thetas, b.thetas) and np.array_equal(a.data, b.data)
    assert a.thetas.shape[0] + a.dropped == 300
    with pytest.raises(ValueError):
        ars_sample(src, sim, band(0.0, 0.5), 0, 4, np.random.default_rng(3))


# ---------------------------------------------------------------- ARS bias

def _ars_mean_theory(R, eps=0.05, mean=GG_MEAN, var=GG_VAR):
    """Mean of the ARS_R theta-marginal by quadrature: proposal density times 1 - (1 - q)^R."""
    sd = math.sqrt(var)

    def q(th):
        return norm.cdf(X_STAR + eps - th) - norm.cdf(X_STAR - eps - th)

    def w(th):
        return norm.pdf(th, mean, sd) * (1 - (1 - q(th)) ** R)

    lo, hi = mean - 12 * sd, mean + 12 * sd
    z = quad(w, lo, hi, limit=200)[0]
    return quad(lambda th: th * w(th), lo, hi, limit=200)[0] / z


def _ars_thetas(R, n_keep, seed, eps=0.05):
    sim = lambda t, r: (t + r.standard_normal(t.shape), np.ones(t.shape[0], bool))  # noqa: E731
    src = normal_source(GG_MEAN, GG_VAR)
    rng = np.random.default_rng(seed)
    kept = []
    count = 0
    while count < n_keep:
        out = ars_sample(src, sim, band(X_STAR, eps), 20_000, R, rng)
        kept.append(out.thetas[:, 0])
        count += out.thetas.shape[0]
    return np.concatenate(kept)[:n_keep]


@pytest.mark.parametrize("R", [1, 25])
def test_ars_mean_matches_quadrature(R):
    th = _ars_thetas(R, 10_000, seed=R)
    se = th.std() / math.sqrt(th.size)
    assert abs(th.mean() - _ars_mean_theory(R)) <= 3 * se


def test_ars_bias_vanishes_for_large_budget():
    # unbounded retry keeps every proposed theta, so its theta-sample is the proposal itself
    exact = normal_source(GG_MEAN, GG_VAR)(np.random.default_rng(7), 10_000)[:, 0]
    th = _ars_thetas(20_000, 10_000, seed=8)
    se = math.sqrt(th.var() / th.size + exact.var() / exact.size)
    assert abs(th.mean() - exact.mean()) <= 3 * se


@pytest.mark.xfail(reason="ARS_50 keeps a bias near 0.11 at eps=0.05; see the decisions ledger", strict=False)
def test_ars_budget_50_matches_exact_rejection():
    exact = normal_source(GG_MEAN, GG_VAR)(np.random.default_rng(9), 10_000)[:, 0]
    th = _ars_thetas(50, 10_000, seed=10)
    se = math.sqrt(th.var() / th.size + exact.var() / exact.size)
    assert abs(th.mean() - exact.mean()) <= 3 * se


# ---------------------------------------------------------------- adaptive_threshold

def test_adaptive_threshold_examples():
    assert adaptive_threshold(np.arange(1, 11), 0.3) == 3
    assert adaptive_threshold([2.5] * 7, 0.1) == 2.5
    assert adaptive_threshold([4.0, 1.0], 1.0) == 4.0
    with pytest.raises(ValueError):
        adaptive_threshold([], 0.5)
    with pytest.raises(ValueError):
        adaptive_threshold([1.0], 0.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=300, unique=True), st.floats(0.001, 1.0))
def test_adaptive_threshold_retention_rank(values, alpha):
    eps = adaptive_threshold(values, alpha)
    kept = sum(v <= eps for v in values)
    assert kept == max(1, math.ceil(alpha * len(values) - 1e-12))


# ---------------------------------------------------------------- configuration

def test_config_validation():
    with pytest.raises(ValueError):
        AbiConfig(iterations=0)
    with pytest.raises(ValueError):
        AbiConfig(ars_budget=0)
    with pytest.raises(ValueError):
        AbiConfig(quantile_fraction=0.0)
    assert AbiConfig().to_dict()["hidden"] == [128, 128, 128]


def test_x_star_dimension_checked():
    with pytest.raises(ValueError):
        run_abi(gaussian_gaussian(), np.zeros(3), small_cfg(iterations=1))


def test_fixed_schedule_rejects_increasing_thresholds():
    with pytest.raises(ValueError):
        run_abi_fixed_schedule(gaussian_gaussian(), [X_STAR], [1.0, 2.0], small_cfg())
    with pytest.raises(ValueError):
        run_abi_fixed_schedule(gaussian_gaussian(), [X_STAR], [], small_cfg())


# ---------------------------------------------------------------- null calibration

def std_normal_2d():
    return SimulatorBundle(
        name="std_normal_2d",
        param_names=("a", "b"),
        data_dim=2,
        prior_sampler=lambda rng, n: rng.standard_normal((n, 2)),
        simulator=lambda th, rng: (th + rng.standard_normal(th.shape), np.ones(th.shape[0], bool)),
        transform=SupportTransform.identity(2),
    )


def _null_distance(result):
    rng = np.random.default_rng(123)
    prior = rng.standard_normal((10_000, 2))
    draws = result.sample(10_000, rng)
    ps = sample_projections(2, 5, rng)
    return msw_empirical(prior, draws, MswConfig(), ps)


def test_single_iteration_alpha_one_returns_prior():
    cfg = small_cfg(iterations=1, quantile_fraction=1.0, proposals_per_iter=10_000, train_pairs_per_iter=500,
                    net=TrainConfig(epochs=2))
    res = run_abi(std_normal_2d(), np.zeros(2), cfg)
    assert res.retained.shape[0] == 10_000
    assert _null_distance(res) <= 0.1


def test_huge_threshold_schedule_returns_prior():
    cfg = small_cfg(proposals_per_iter=10_000)
    res = run_abi_fixed_schedule(std_normal_2d(), np.zeros(2), [1e300], cfg, distance=euclidean_distance)
    assert res.final_net is None and len(res.reports) == 1
    assert _null_distance(res) <= 0.1


def test_single_threshold_is_rejection_abc():
    cfg = small_cfg(proposals_per_iter=4000)
    res = run_abi_fixed_schedule(gaussian_gaussian(), [X_STAR], [1.0], cfg, distance=euclidean_distance)
    d = euclidean_distance(res.proposal_data, np.array([X_STAR]))
    assert np.array_equal(res.retained, res.proposal_thetas[d <= 1.0])
    # retained draws are prior draws with |x - x*| <= 1, hence near the posterior
    assert abs(res.retained.mean() - GG_MEAN) < 0.2


# ---------------------------------------------------------------- Gaussian-Gaussian schedule

SCHEDULE = (2, 0.7, 0.3, 0.01, 0.005, 0.003, 0.001, 0.001, 0.001)


@pytest.fixture(scope="module")
def gg_schedule_run():
    # exact rejection retries until success; a budget of 10^6 stands in for that
    cfg = AbiConfig(proposals_per_iter=10_000, train_pairs_per_iter=10_000, ars_budget=1_000_000, seed=4)
    return run_abi_fixed_schedule(gaussian_gaussian(), [X_STAR], SCHEDULE, cfg, distance=euclidean_distance)


def test_gg_schedule_posterior_moments(gg_schedule_run):
    draws = gg_schedule_run.sample(100_000, np.random.default_rng(0))
    assert abs(draws.mean() - 5.94) <= 0.2
    assert 0.6 * 0.952 <= draws.var() <= 1.4 * 0.952


def test_gg_schedule_final_retention_matches_exact_posterior_proposal(gg_schedule_run):
    # retention: share of pairs drawn from a proposal whose data land within the final tolerance
    n = 1_000_000
    eps = SCHEDULE[-1]

    def retention(thetas, rng):
        x = thetas[:, 0] + rng.standard_normal(thetas.shape[0])
        return np.count_nonzero(np.abs(x - X_STAR) <= eps) / thetas.shape[0]

    rate = retention(gg_schedule_run.sample(n, np.random.default_rng(1)), np.random.default_rng(2))
    oracle = retention(normal_source(5.94, 0.952)(np.random.default_rng(3), n), np.random.default_rng(4))
    sd = math.sqrt(2 * oracle * (1 - oracle) / n)
    assert abs(rate - oracle) <= 2 * sd


def test_gg_schedule_reports(gg_schedule_run):
    reps = gg_schedule_run.reports
    assert [r.index for r in reps] == list(range(1, 10))
    assert [r.epsilon for r in reps] == [float(e) for e in SCHEDULE]
    assert all(r.retained_count >= 1 for r in reps)
    assert reps[0].ars_acceptance_rate == 1.0


# ---------------------------------------------------------------- adaptive loop

@pytest.fixture(scope="module")
def gg_adaptive_run():
    return run_abi(gaussian_gaussian(), [X_STAR], small_cfg(iterations=3, quantile_fraction=0.2, seed=1))


def test_adaptive_epsilons_strictly_decrease(gg_adaptive_run):
    eps = [r.epsilon for r in gg_adaptive_run.reports]
    assert len(eps) == 3
    assert all(b < a for a, b in zip(eps, eps[1:]))


def test_pruning_soundness(gg_adaptive_run):
    res = gg_adaptive_run
    eps = res.reports[-1].epsilon
    # statistics recomputed independently from the stored proposal data
    stats = estimated_msw(res.final_net, res.proposal_data, np.array([X_STAR]), MswConfig())
    np.testing.assert_allclose(stats, res.statistics, rtol=0, atol=0)
    keep = stats <= eps
    assert np.array_equal(res.retained, res.proposal_thetas[keep])
    assert np.all(stats[~keep] > eps)
    assert res.retained.shape[0] == res.reports[-1].retained_count


def test_adaptive_run_is_deterministic(gg_adaptive_run):
    again = run_abi(gaussian_gaussian(), [X_STAR], small_cfg(iterations=3, quantile_fraction=0.2, seed=1))
    assert np.array_equal(again.retained, gg_adaptive_run.retained)
    pm, qm = again.posterior_model, gg_adaptive_run.posterior_model
    assert np.array_equal(pm.means, qm.means) and np.array_equal(pm.covariances, qm.covariances)
    for a, b in zip(again.reports, gg_adaptive_run.reports):
        assert a.epsilon == b.epsilon and a.quantile_train_loss == b.quantile_train_loss


def test_stage_failure_names_iteration():
    # a tolerance no proposal can meet triggers an ARS failure in iteration 2
    cfg = small_cfg(proposals_per_iter=200, ars_budget=1)
    with pytest.raises(AbiError, match="iteration 2"):
        run_abi_fixed_schedule(gaussian_gaussian(), [X_STAR], [5.0, 1e-12], cfg, distance=euclidean_distance)
