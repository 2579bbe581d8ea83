"""Sampler moment/CDF checks, divergence oracles, and determinism."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs
from scipy import integrate, special

from rgbn import stats
from rgbn.exceptions import DegenerateAllocationError, ParameterError
from rgbn.stats import GammaParams, RngStream, WeibullParams


# ---------------------------------------------------------------------------
# gamma
# ---------------------------------------------------------------------------


def test_gamma_exponential_reduction():
    rng = RngStream(11)
    draws = np.array([stats.gamma_sample(GammaParams(1.0, 1.0), rng) for _ in range(10**5)])
    assert abs(draws.mean() - 1.0) < 0.02


def test_gamma_moments():
    rng = RngStream(12)
    draws = np.array([stats.gamma_sample(GammaParams(3.0, 2.0), rng) for _ in range(10**5)])
    assert abs(draws.mean() - 1.5) < 0.03
    assert abs(draws.var() - 0.75) < 0.05


def test_gamma_small_shape_cdf_matches_quadrature():
    # quadrature oracle on the density, independent of any closed-form CDF
    shape = 0.1
    rng = RngStream(13)
    draws = stats.gamma_unit_sample(np.full(10**5, shape), rng)

    def density(x):
        return np.exp((shape - 1.0) * np.log(x) - x - special.gammaln(shape))

    grid = np.quantile(draws, np.linspace(0.02, 0.98, 25))
    cdf_quad = []
    for q in grid:
        val, _ = integrate.quad(density, 0.0, q, points=[min(q, 1e-6)], limit=200)
        cdf_quad.append(val)
    emp = np.searchsorted(np.sort(draws), grid, side="right") / draws.size
    assert np.max(np.abs(emp - np.asarray(cdf_quad))) < 0.01


def test_gamma_domain_errors():
    with pytest.raises(ParameterError):
        GammaParams(0.0, 1.0)
    with pytest.raises(ParameterError):
        GammaParams(1.0, -2.0)
    with pytest.raises(ParameterError):
        GammaParams(np.nan, 1.0)
    with pytest.raises(ParameterError):
        stats.gamma_unit_sample(np.array([1.0, -1.0]), RngStream(0))


# ---------------------------------------------------------------------------
# dirichlet
# ---------------------------------------------------------------------------


def test_dirichlet_concentration():
    rng = RngStream(21)
    draw = stats.dirichlet_sample(np.array([1e6, 1e6]), rng)
    assert np.all(np.abs(draw - 0.5) < 0.01)


def test_dirichlet_normalization():
    rng = RngStream(22)
    for _ in range(100):
        draw = stats.dirichlet_sample(np.full(30, 0.1), rng)
        assert np.all(draw >= 0)
        assert abs(draw.sum() - 1.0) < 1e-12


def test_dirichlet_mean():
    rng = RngStream(23)
    first = np.array([stats.dirichlet_sample(np.array([2.0, 1.0]), rng)[0] for _ in range(10**5)])
    assert abs(first.mean() - 2.0 / 3.0) < 0.01


def test_dirichlet_errors():
    with pytest.raises(ParameterError):
        stats.dirichlet_sample(np.array([]), RngStream(0))
    with pytest.raises(ParameterError):
        stats.dirichlet_sample(np.array([1.0, 0.0]), RngStream(0))


# ---------------------------------------------------------------------------
# poisson
# ---------------------------------------------------------------------------


def test_poisson_zero_rate():
    rng = RngStream(31)
    assert all(stats.poisson_sample(0.0, rng) == 0 for _ in range(100))


def test_poisson_moments():
    rng = RngStream(32)
    draws = np.array([stats.poisson_sample(4.0, rng) for _ in range(10**5)])
    assert abs(draws.mean() - 4.0) < 0.05
    assert abs(draws.var() - 4.0) < 0.15


def test_poisson_mass_at_zero():
    rng = RngStream(33)
    draws = np.array([stats.poisson_sample(0.3, rng) for _ in range(10**5)])
    assert abs(np.mean(draws == 0) - np.exp(-0.3)) < 0.005


def test_poisson_negative_rate():
    with pytest.raises(ParameterError):
        stats.poisson_sample(-0.1, RngStream(0))


# ---------------------------------------------------------------------------
# Weibull reparameterization
# ---------------------------------------------------------------------------


def test_weibull_reparam_unit_inner_term():
    eps = 1.0 - np.exp(-1.0)
    for k in (0.3, 1.0, 7.5):
        assert stats.weibull_sample_reparam(WeibullParams(k, 3.0), eps) == pytest.approx(3.0, abs=1e-12)


def test_weibull_reparam_exponential_inverse_cdf():
    out = stats.weibull_sample_reparam(WeibullParams(1.0, 2.0), 0.5)
    assert out == pytest.approx(2.0 * np.log(2.0), abs=1e-12)


def test_weibull_reparam_median_formula():
    out = stats.weibull_sample_reparam(WeibullParams(2.0, 1.0), 0.5)
    assert out == pytest.approx(np.log(2.0) ** 0.5, abs=1e-12)


def test_weibull_reparam_boundary_eps_rejected():
    for eps in (0.0, 1.0):
        with pytest.raises(ParameterError):
            stats.weibull_sample_reparam(WeibullParams(1.0, 1.0), eps)


def test_weibull_reparam_matches_cdf():
    # Kolmogorov-Smirnov against the closed-form CDF
    k, lam = 1.7, 2.3
    rng = RngStream(41)
    eps = rng.gen.random(10**5)
    eps = np.clip(eps, 1e-12, 1 - 1e-12)
    draws = np.sort(stats.weibull_sample_reparam(WeibullParams(k, lam), eps))
    cdf = 1.0 - np.exp(-((draws / lam) ** k))
    n = draws.size
    upper = np.max(np.arange(1, n + 1) / n - cdf)
    lower = np.max(cdf - np.arange(0, n) / n)
    assert max(upper, lower) < 0.01


# ---------------------------------------------------------------------------
# KL(Weibull || gamma)
# ---------------------------------------------------------------------------


def mc_kl_oracle(k, lam, alpha, beta, rng, n=10**6):
    """Stratified Monte Carlo estimate of E_q[ln q - ln p]."""
    u = (np.arange(n) + rng.gen.random(n)) / n
    u = np.clip(u, 1e-300, 1 - 1e-16)
    w = -np.log1p(-u)
    x = lam * w ** (1.0 / k)
    ln_q = np.log(k) - np.log(lam) + (k - 1.0) * (np.log(x) - np.log(lam)) - w
    ln_p = alpha * np.log(beta) - special.gammaln(alpha) + (alpha - 1.0) * np.log(x) - beta * x
    return float(np.mean(ln_q - ln_p))


def test_kl_exponential_identity():
    # Weibull(1, 2) and Gamma(1, 1/2) are both Exponential(rate 0.5)
    assert abs(stats.kl_weibull_gamma(WeibullParams(1.0, 2.0), GammaParams(1.0, 0.5))) < 1e-9


def test_kl_against_monte_carlo_case1():
    val = stats.kl_weibull_gamma(WeibullParams(2.0, 1.0), GammaParams(1.0, 1.0))
    oracle = mc_kl_oracle(2.0, 1.0, 1.0, 1.0, RngStream(51))
    assert abs(val - oracle) < 0.005


def test_kl_against_monte_carlo_case2():
    val = stats.kl_weibull_gamma(WeibullParams(0.5, 3.0), GammaParams(2.0, 1.0))
    oracle = mc_kl_oracle(0.5, 3.0, 2.0, 1.0, RngStream(52))
    assert abs(val - oracle) < 0.01


def test_kl_nonnegative_over_random_parameters():
    rng = RngStream(53)
    quads = np.exp(rng.gen.uniform(np.log(0.1), np.log(10.0), size=(1000, 4)))
    vals = stats.kl_weibull_gamma_fields(quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3])
    assert np.all(vals >= -1e-9)


def test_kl_gradients_match_finite_differences():
    rng = RngStream(54)
    for _ in range(20):
        k, lam, alpha = np.exp(rng.gen.uniform(np.log(0.3), np.log(5.0), size=3))
        beta = float(np.exp(rng.gen.uniform(np.log(0.3), np.log(5.0))))
        dk, dlam, dalpha = stats.kl_weibull_gamma_grads(k, lam, alpha, beta)
        h = 1e-6
        for target, grad in (("k", dk), ("lam", dlam), ("alpha", dalpha)):
            args = {"k": k, "lam": lam, "alpha": alpha}
            hi, lo = dict(args), dict(args)
            hi[target] += h
            lo[target] -= h
            fd = (stats.kl_weibull_gamma_fields(hi["k"], hi["lam"], hi["alpha"], beta)
                  - stats.kl_weibull_gamma_fields(lo["k"], lo["lam"], lo["alpha"], beta)) / (2 * h)
            assert abs(fd - grad) < 1e-4 * max(1.0, abs(grad))


# ---------------------------------------------------------------------------
# CRT
# ---------------------------------------------------------------------------


def test_crt_empty_sum():
    assert stats.crt_sample(0, 5.0, RngStream(61)) == 0


def test_crt_first_bernoulli_certain():
    rng = RngStream(62)
    assert all(stats.crt_sample(1, 0.3, rng) == 1 for _ in range(200))


def test_crt_mean_matches_closed_form():
    rng = RngStream(63)
    draws = np.array([stats.crt_sample(3, 1.0, rng) for _ in range(10**5)])
    assert abs(draws.mean() - (1.0 + 0.5 + 1.0 / 3.0)) < 0.01


def test_crt_array_matches_scalar_semantics():
    rng = RngStream(64)
    n = np.array([[0, 1], [5, 3]])
    out = stats.crt_sample_array(n, np.array(2.0), rng)
    assert out.shape == n.shape
    assert out[0, 0] == 0 and out[0, 1] == 1
    assert np.all(out <= n) and np.all(out >= np.minimum(n, 1))


@settings(max_examples=50, deadline=None)
@given(n=hs.integers(min_value=0, max_value=200),
       r=hs.floats(min_value=1e-3, max_value=100.0, allow_nan=False),
       seed=hs.integers(min_value=0, max_value=2**31))
def test_crt_output_bounds(n, r, seed):
    out = stats.crt_sample(n, r, RngStream(seed))
    assert min(n, 1) <= out <= n


# ---------------------------------------------------------------------------
# multinomial partition
# ---------------------------------------------------------------------------


def test_partition_point_mass():
    out = stats.multinomial_partition(7, np.array([1.0, 0.0, 0.0]), RngStream(71))
    assert np.array_equal(out, [7, 0, 0])


def test_partition_zero_total():
    out = stats.multinomial_partition(0, np.array([0.2, 0.8]), RngStream(72))
    assert np.array_equal(out, [0, 0])


def test_partition_symmetry():
    rng = RngStream(73)
    firsts = np.array([
        stats.multinomial_partition(100, np.array([1.0, 1.0]), rng)[0] for _ in range(10**4)
    ])
    assert abs(firsts.mean() - 50.0) < 0.5


def test_partition_degenerate_weights():
    with pytest.raises(DegenerateAllocationError):
        stats.multinomial_partition(3, np.array([0.0, 0.0]), RngStream(74))
    with pytest.raises(DegenerateAllocationError):
        stats.multinomial_partition_rows(
            np.array([2]), np.array([[0.0, 0.0]]), RngStream(74))


@settings(max_examples=100, deadline=None)
@given(total=hs.integers(min_value=0, max_value=10**6),
       weights=hs.lists(hs.floats(min_value=0.0, max_value=10.0), min_size=1, max_size=12),
       seed=hs.integers(min_value=0, max_value=2**31))
def test_partition_conserves_total(total, weights, seed):
    w = np.asarray(weights)
    if total > 0 and w.sum() == 0:
        w[0] = 1.0
    out = stats.multinomial_partition(total, w, RngStream(seed))
    assert out.sum() == total
    assert np.all(out >= 0)


# ---------------------------------------------------------------------------
# PRG count posterior
# ---------------------------------------------------------------------------


def prg_posterior_pmf_oracle(x, rate, c, rmax=200):
    """Direct enumeration of the unnormalized product over r."""
    r = np.arange(rmax + 1, dtype=np.float64)
    logw = np.full(rmax + 1, -np.inf)
    logw[1:] = (r[1:] * np.log(rate * c * x)
                - special.gammaln(r[1:] + 1.0) - special.gammaln(r[1:]))
    w = np.exp(logw - logw.max())
    return w / w.sum()


def test_prg_zero_observation_is_point_mass():
    rng = RngStream(81)
    for rate in (0.1, 3.0, 50.0):
        assert stats.prg_count_posterior_sample(0.0, rate, 1.0, rng) == 0


def test_prg_posterior_pmf_total_variation():
    rng = RngStream(82)
    draws = stats.prg_count_posterior_array(
        np.full(10**5, 2.0), np.full(10**5, 3.0), 1.0, rng)
    pmf = prg_posterior_pmf_oracle(2.0, 3.0, 1.0)
    emp = np.bincount(draws, minlength=pmf.size)[: pmf.size] / draws.size
    assert 0.5 * np.abs(emp - pmf).sum() < 0.01


def test_prg_posterior_mean_matches_oracle():
    rng = RngStream(83)
    draws = stats.prg_count_posterior_array(
        np.full(10**5, 10.0), np.full(10**5, 1.0), 2.0, rng)
    pmf = prg_posterior_pmf_oracle(10.0, 1.0, 2.0)
    oracle_mean = np.sum(np.arange(pmf.size) * pmf)
    assert abs(draws.mean() - oracle_mean) < 0.05


def test_prg_domain_errors():
    with pytest.raises(ParameterError):
        stats.prg_count_posterior_sample(-1.0, 1.0, 1.0, RngStream(0))
    with pytest.raises(ParameterError):
        stats.prg_count_posterior_sample(1.0, 0.0, 1.0, RngStream(0))
    with pytest.raises(ParameterError):
        stats.prg_count_posterior_sample(1.0, 1.0, -1.0, RngStream(0))


# ---------------------------------------------------------------------------
# softplus
# ---------------------------------------------------------------------------


def test_softplus_values():
    assert stats.softplus(0.0) == pytest.approx(np.log(2.0), abs=1e-12)
    assert stats.softplus(100.0) == pytest.approx(100.0, abs=1e-9)
    assert stats.softplus(-100.0) == pytest.approx(np.exp(-100.0), rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(x=hs.floats(min_value=-700, max_value=700, allow_nan=False))
def test_softplus_positive_and_monotone_tail(x):
    val = stats.softplus(x)
    assert val >= 0.0
    assert np.isfinite(val)


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_every_sampler_is_bit_reproducible():
    def run(seed):
        rng = RngStream(seed)
        out = [stats.gamma_sample(GammaParams(0.3, 2.0), rng) for _ in range(5)]
        out += list(stats.dirichlet_sample(np.full(6, 0.1), rng))
        out += [stats.poisson_sample(3.0, rng) for _ in range(5)]
        out += [stats.crt_sample(10, 1.5, rng)]
        out += list(stats.multinomial_partition(20, np.array([1.0, 2.0, 3.0]), rng))
        out += [stats.prg_count_posterior_sample(4.0, 2.0, 1.0, rng)]
        out += list(stats.crt_sample_array(np.array([3, 7]), np.array(1.0), rng))
        return np.asarray(out, dtype=np.float64)

    a, b = run(97), run(97)
    assert np.array_equal(a, b)
    assert not np.array_equal(run(97), run(98))


def test_child_streams_are_independent_and_reproducible():
    base = RngStream(5)
    c0, c1 = base.child(0), base.child(1)
    again = RngStream(5).child(0)
    assert c0.gen.random(4).tolist() == again.gen.random(4).tolist()
    assert c0.gen.random(4).tolist() != c1.gen.random(4).tolist()
