import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abi.baselines import (
    RegressorConfig,
    abc_ss,
    evaluate,
    exact_w1,
    mmd2_unbiased,
    mmd_gaussian,
    rejection_abc,
    train_mean_regressor,
    wasserstein_abc,
    wasserstein_data_distance,
)
from abi.models import gaussian_gaussian, lotka_volterra

X_STAR = np.array([6.24])


# ---------------------------------------------------------------- exact W1

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60), st.integers(0, 2**31 - 1))
def test_w1_matches_sorted_formula_in_1d(a, seed):
    b = np.random.default_rng(seed).normal(scale=20, size=len(a))
    expected = np.mean(np.abs(np.sort(a) - np.sort(b)))
    assert abs(exact_w1(a, b) - expected) <= 1e-9


def brute_w1(a, b):
    n = a.shape[0]
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n


def test_w1_matches_permutation_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        d = int(rng.integers(1, 5))
        a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        assert abs(exact_w1(a, b) - brute_w1(a, b)) <= 1e-9


def test_w1_metric_axioms():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 200))
        d = int(rng.integers(1, 5))
        a, b, c = (rng.normal(size=(n, d)) * rng.uniform(0.5, 2) + rng.normal(size=d) for _ in range(3))
        assert exact_w1(a, a) == 0.0
        assert abs(exact_w1(a, b) - exact_w1(b, a)) <= 1e-9
        assert exact_w1(a, c) <= exact_w1(a, b) + exact_w1(b, c) + 1e-9


def test_w1_errors():
    with pytest.raises(ValueError):
        exact_w1(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        exact_w1(np.zeros((2001, 1)), np.zeros((2001, 1)))
    with pytest.raises(ValueError):
        exact_w1(np.zeros((3, 17)), np.zeros((3, 17)))


# ---------------------------------------------------------------- MMD

def test_mmd_identical_samples_near_zero():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(300, 2))
    # permutation null: split the pooled sample at random many times
    pooled = np.vstack([a, a])
    h = float(np.median(np.linalg.norm(pooled[:, None] - pooled[None], axis=2)[np.triu_indices(600, 1)]))
    null = []
    for _ in range(100):
        p = rng.permutation(600)
        null.append(mmd2_unbiased(pooled[p[:300]], pooled[p[300:]], h))
    assert abs(mmd2_unbiased(a, a, h)) <= 3 * np.std(null)
    assert mmd_gaussian(a, a) <= math.sqrt(3 * np.std(null))


def test_mmd_separated_clusters():
    rng = np.random.default_rng(3)
    e1 = np.array([10.0, 0.0])
    assert mmd_gaussian(rng.normal(size=(200, 2)) + e1, rng.normal(size=(200, 2)) - e1) > 0.5


def test_mmd_bandwidth_preserves_ordering():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(200, 2))
    near, far = rng.normal(size=(200, 2)) + 0.3, rng.normal(size=(200, 2)) + 1.5
    for h in (0.5, 1.0, 2.0, 4.0):
        assert mmd_gaussian(a, near, h) < mmd_gaussian(a, far, h)
    assert mmd_gaussian(a, near, 1.0) != mmd_gaussian(a, near, 2.0)


def test_mmd2_unbiased_on_average():
    rng = np.random.default_rng(5)
    vals = [mmd2_unbiased(rng.normal(size=(60, 2)), rng.normal(size=(60, 2)), 1.0) for _ in range(200)]
    assert abs(np.mean(vals)) <= 3 * np.std(vals) / math.sqrt(len(vals))


def test_mmd_needs_two_points():
    with pytest.raises(ValueError):
        mmd_gaussian(np.zeros((1, 2)), np.zeros((5, 2)))


# ---------------------------------------------------------------- evaluate

def test_evaluate_self_and_translation():
    rng = np.random.default_rng(6)
    a = rng.multivariate_normal([0, 1, 2], [[1, 0.5, 0], [0.5, 1, 0.2], [0, 0.2, 1]], size=3000)
    r = evaluate(a, a)
    assert r.mean_bias == [0.0, 0.0, 0.0] and r.corr_bias == 0.0 and r.w1 == 0.0
    shifted = a.copy()
    shifted[:, 1] += 0.7
    r = evaluate(shifted, a)
    np.testing.assert_allclose(r.mean_bias, [0.0, 0.7, 0.0], atol=1e-12)
    assert r.corr_bias == pytest.approx(0.0, abs=1e-12)


def test_evaluate_independent_normals():
    rng = np.random.default_rng(7)
    r = evaluate(rng.normal(size=(10_000, 2)), rng.normal(size=(10_000, 2)))
    assert r.corr_bias <= 0.1
    d = r.to_dict()
    assert set(d) == {"mmd", "w1", "mean_bias", "corr_bias"}
    assert all(np.isfinite(v) and v >= 0 for v in [d["mmd"], d["w1"], d["corr_bias"], *d["mean_bias"]])


def test_evaluate_corr_bias_counts_both_triangles():
    a = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    b = np.array([[0.0, 2.0], [1.0, 1.0], [2.0, 0.0]])
    assert evaluate(a, b).corr_bias == pytest.approx(4.0)


def test_evaluate_subsample_is_pinned():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=(2500, 2)), rng.normal(size=(2600, 2))
    assert evaluate(a, b, seed=3).w1 == evaluate(a, b, seed=3).w1
    with pytest.raises(ValueError):
        evaluate(a, rng.normal(size=(10, 3)))


# ---------------------------------------------------------------- samplers

def test_rejection_keep_all_returns_prior_draws():
    m = gaussian_gaussian()
    out = rejection_abc(m, X_STAR, 500, 1.0, np.random.default_rng(9))
    prior = m.sample_prior(500, np.random.default_rng(9))
    assert out.thetas.shape == (500, 1)
    assert np.array_equal(np.sort(out.thetas[:, 0]), np.sort(prior[:, 0]))


def test_wasserstein_keep_all_returns_prior_draws():
    out = wasserstein_abc(gaussian_gaussian(), X_STAR, 400, 1.0, np.random.default_rng(10))
    assert out.thetas.shape == (400, 1) and out.simulations == 400


def test_wasserstein_gaussian_gaussian():
    out = wasserstein_abc(gaussian_gaussian(), X_STAR, 100_000, 0.001, np.random.default_rng(11))
    assert out.thetas.shape[0] == 100
    assert abs(out.thetas.mean() - 5.94) <= 0.3


def test_generating_theta_retained_when_data_matches():
    m = gaussian_gaussian()
    thetas = np.array([[1.0], [6.0], [-3.0]])
    data = np.array([[0.5], X_STAR, [-2.0]])
    out = rejection_abc(m, X_STAR, 3, 0.3, np.random.default_rng(0),
                        distance=wasserstein_data_distance(1), thetas=thetas, data=data)
    assert out.thetas.tolist() == [[6.0]] and out.distances[0] == 0.0


def test_wasserstein_distance_sorted_and_multivariate():
    d1 = wasserstein_data_distance(1)
    x = np.array([3.0, 1.0, 2.0])
    assert d1(np.array([[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]), x).tolist() == [0.0, 1.0]
    d2 = wasserstein_data_distance(2)
    ref = np.array([0.0, 0.0, 5.0, 5.0])
    swapped = np.array([[5.0, 5.0, 0.0, 0.0]])
    assert d2(swapped, ref)[0] == 0.0
    assert d2(np.array([[1.0, 0.0, 5.0, 5.0]]), ref)[0] == pytest.approx(math.sqrt(0.5))


def test_lv_wasserstein_self_distance():
    m = lotka_volterra()
    x = m.observation()
    assert wasserstein_data_distance(m.obs_dim)(x[None], x)[0] == 0.0


def test_wasserstein_reduces_to_rejection_on_scalar_data():
    # one scalar observation: sorted W2 is |x - x*|, i.e. the Euclidean distance
    m = gaussian_gaussian()
    a = wasserstein_abc(m, X_STAR, 3000, 0.05, np.random.default_rng(12))
    b = rejection_abc(m, X_STAR, 3000, 0.05, np.random.default_rng(12))
    assert np.array_equal(a.thetas, b.thetas)
    np.testing.assert_allclose(a.distances, b.distances, rtol=1e-15)


def test_summary_regressor_linear_gaussian():
    m = gaussian_gaussian()
    rng = np.random.default_rng(13)
    th = m.sample_prior(6000, rng)
    x, _ = m.simulate(th, rng)
    reg = train_mean_regressor(x[:5000], th[:5000], RegressorConfig(hidden=(32, 32), epochs=30))
    pred = reg.predict(x[5000:])[:, 0]
    assert np.corrcoef(pred, th[5000:, 0])[0, 1] >= 0.9
    # analytic posterior mean is 20/21 x
    np.testing.assert_allclose(reg.predict(np.array([[2.0]]))[0, 0], 40 / 21, atol=0.3)


def test_abc_ss_keep_all_and_budget():
    m = gaussian_gaussian()
    out = abc_ss(m, X_STAR, 1000, 1.0, np.random.default_rng(14), RegressorConfig(hidden=(8,), epochs=2))
    assert out.simulations == 1000 and out.thetas.shape == (500, 1)
    with pytest.raises(ValueError):
        abc_ss(m, X_STAR, 1, 0.5, np.random.default_rng(0))


def test_abc_ss_recovers_gaussian_posterior():
    out = abc_ss(gaussian_gaussian(), X_STAR, 40_000, 0.01, np.random.default_rng(15),
                 RegressorConfig(hidden=(32, 32), epochs=30))
    assert abs(out.thetas.mean() - 5.94) <= 0.3


def test_abc_ss_rejection_step_is_shared_harness():
    # rerunning the rejection step on the same draws with the same summaries gives the same answer
    m = gaussian_gaussian()
    cfg = RegressorConfig(hidden=(16,), epochs=5)
    budget = 2000
    out = abc_ss(m, X_STAR, budget, 0.1, np.random.default_rng(16), cfg)
    rng = np.random.default_rng(16)
    n_train = budget // 2
    th_tr = m.sample_prior(n_train, rng)
    x_tr, _ = m.simulate(th_tr, rng)
    reg = train_mean_regressor(x_tr, th_tr, cfg)
    s_star = reg.predict(X_STAR)[0]

    def dist(batch, _x):
        return np.linalg.norm((reg.predict(batch) - s_star) / reg.y_std, axis=1)

    again = rejection_abc(m, X_STAR, budget - n_train, 0.1, rng, distance=dist)
    assert np.array_equal(out.thetas, again.thetas)


def test_rejection_argument_checks():
    m = gaussian_gaussian()
    with pytest.raises(ValueError):
        rejection_abc(m, X_STAR, 0, 0.5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        rejection_abc(m, X_STAR, 10, 0.0, np.random.default_rng(0))
