"""Sampler checks: energies, leapfrog geometry, chain correctness, ESS."""

import numpy as np
import pytest
from scipy import stats

from bnnlab.errors import ConfigError, NumericalError
from bnnlab.hmc import (
    ChainDiagnostics,
    HMCConfig,
    HyperPriorSpec,
    effective_sample_size,
    gibbs_update_precisions,
    hmc_chain,
    hmc_sample,
    kinetic_energy,
    leapfrog,
    potential_energy,
    random_walk_mh,
    sample_momentum,
)
from bnnlab.nets import LayerSpec, NetworkSpec, ParameterSet, init_params
from bnnlab.prob import LikelihoodSpec, PriorSpec, log_posterior_unnorm


def _mlp_spec():
    return NetworkSpec(
        layers=(LayerSpec.dense(2, 3), LayerSpec.activation("tanh"), LayerSpec.dense(3, 1)),
        input_shape=(2,),
        task="regression",
    )


def _linear_spec(d):
    return NetworkSpec(layers=(LayerSpec.dense(d, 1, bias=False),), input_shape=(d,),
                       task="regression")


# ---------------------------------------------------------------------------
# energies

def test_kinetic_energy_values():
    assert kinetic_energy(np.zeros(3), 1.0) == 0.0
    assert kinetic_energy(np.array([2.0]), 1.0) == pytest.approx(2.0)
    # heavier coordinate contributes less: 0.5 * 2^2 / 4
    assert kinetic_energy(np.array([2.0]), np.array([4.0])) == pytest.approx(0.5)


def test_kinetic_energy_rejects_bad_mass():
    with pytest.raises(ConfigError):
        kinetic_energy(np.ones(2), np.array([1.0, -1.0]))


def test_momentum_marginal_and_equipartition():
    # v ~ N(0, M) implies Var v_i = m_i and E[K] = d/2
    rng = np.random.default_rng(11)
    mass = np.array([1.0, 4.0, 0.25])
    draws = np.stack([sample_momentum(mass, 3, rng) for _ in range(100_000)])
    se = np.sqrt(2.0 / draws.shape[0]) * mass  # Var(v^2) = 2 m^2
    assert np.all(np.abs(draws.var(axis=0) - mass) < 3 * se)
    k = 0.5 * np.sum(draws**2 / mass, axis=1)
    se_k = np.sqrt(1.5 / draws.shape[0])       # Var(K) = d/2
    assert abs(k.mean() - 1.5) < 3 * se_k


def test_potential_matches_unnormalised_posterior():
    # same density code, so the two routes agree to float precision
    spec = _mlp_spec()
    rng = np.random.default_rng(5)
    X = rng.standard_normal((8, 2))
    y = rng.standard_normal((8, 1))
    params = init_params(spec, rng)
    prior = PriorSpec.gaussian(0.0, 0.7)
    lik = LikelihoodSpec.gaussian(0.3)
    u, _ = potential_energy(prior, lik, spec, (X, y), params.to_vector())
    ref = -log_posterior_unnorm(prior, lik, spec, params, (X, y))
    assert u == pytest.approx(ref, rel=1e-12)


def test_potential_spike_slab_matches_posterior():
    spec = _linear_spec(3)
    rng = np.random.default_rng(6)
    X = rng.standard_normal((10, 3))
    y = rng.standard_normal((10, 1))
    params = init_params(spec, rng)
    prior = PriorSpec.spike_slab(0.5, 1.0, 0.05)
    lik = LikelihoodSpec.gaussian(0.4)
    u, _ = potential_energy(prior, lik, spec, (X, y), params.to_vector())
    ref = -log_posterior_unnorm(prior, lik, spec, params, (X, y))
    assert u == pytest.approx(ref, rel=1e-12)


def test_potential_gradient_linear_oracle():
    # linear-Gaussian model: grad U = tau_p w - tau_n X^T (y - X w) exactly
    d = 4
    spec = _linear_spec(d)
    rng = np.random.default_rng(7)
    X = rng.standard_normal((12, d))
    y = rng.standard_normal((12, 1))
    w = rng.standard_normal(d)
    tau_p, tau_n = 2.5, 4.0
    prior = PriorSpec.gaussian(0.0, tau_p**-0.5)
    lik = LikelihoodSpec.gaussian(tau_n**-0.5)
    _, g = potential_energy(prior, lik, spec, (X, y), w, gamma=(tau_p, tau_n))
    resid = y - X @ w[:, None]
    expected = tau_p * w - tau_n * (X.T @ resid).ravel()
    assert np.max(np.abs(g - expected)) < 1e-8 * (1 + np.max(np.abs(expected)))


def test_potential_nonfinite_raises():
    spec = _linear_spec(2)
    X = np.ones((3, 2))
    y = np.ones((3, 1))
    prior = PriorSpec.gaussian(0.0, 1.0)
    lik = LikelihoodSpec.gaussian(1.0)
    with pytest.raises(NumericalError, match="non-finite potential"):
        potential_energy(prior, lik, spec, (X, y), np.array([1e200, 1e200]))


# ---------------------------------------------------------------------------
# leapfrog integrator

def _harmonic(scales):
    scales = np.asarray(scales, dtype=np.float64)

    def pot(x):
        return float(0.5 * np.sum(scales * x * x)), scales * x

    return pot


def test_leapfrog_reversibility():
    pot = _harmonic([1.0, 3.0])
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(2)
    v0 = rng.standard_normal(2)
    _, g0 = 0.0, pot(x0)[1]
    x1, v1, _, g1, div = leapfrog(x0, v0, g0, 0.13, 25, pot)
    assert not div
    # integrate back with flipped momentum: recovers the start exactly
    x2, v2, _, _, _ = leapfrog(x1, -v1, g1, 0.13, 25, pot)
    assert np.max(np.abs(x2 - x0)) < 1e-8
    assert np.max(np.abs(-v2 - v0)) < 1e-8


def test_leapfrog_reversibility_network_potential():
    spec = _mlp_spec()
    rng = np.random.default_rng(4)
    X = rng.standard_normal((6, 2))
    y = rng.standard_normal((6, 1))
    prior = PriorSpec.gaussian(0.0, 1.0)
    lik = LikelihoodSpec.gaussian(0.5)

    def pot(w):
        return potential_energy(prior, lik, spec, (X, y), w, gamma=(1.0, 4.0))

    w0 = init_params(spec, rng).to_vector()
    v0 = rng.standard_normal(w0.size)
    g0 = pot(w0)[1]
    w1, v1, _, g1, _ = leapfrog(w0, v0, g0, 0.05, 12, pot)
    w2, v2, _, _, _ = leapfrog(w1, -v1, g1, 0.05, 12, pot)
    assert np.max(np.abs(w2 - w0)) < 1e-8
    assert np.max(np.abs(-v2 - v0)) < 1e-8


def test_leapfrog_second_order_error():
    # endpoint error of the integrator shrinks ~4x when the step halves
    pot = _harmonic([1.0])
    x0, v0 = np.array([1.0]), np.array([0.0])
    t_end = 1.0
    errs = []
    for eps in (0.1, 0.05):
        steps = int(round(t_end / eps))
        x, v, _, _, _ = leapfrog(x0, v0, pot(x0)[1], eps, steps, pot)
        exact_x, exact_v = np.cos(t_end), -np.sin(t_end)
        errs.append(np.hypot(x[0] - exact_x, v[0] - exact_v))
    ratio = errs[0] / errs[1]
    assert 3.5 < ratio < 4.5


def test_leapfrog_flags_divergence():
    # quartic well + absurd step: the trajectory overflows within a few kicks
    def pot(x):
        with np.errstate(over="ignore"):
            return float(np.sum(x**4)), 4.0 * x**3

    x0 = np.array([1.0])
    *_, div = leapfrog(x0, np.array([1.0]), pot(x0)[1], 1e10, 6, pot)
    assert div


# ---------------------------------------------------------------------------
# fixed-target chains

def test_tiny_step_accepts_everything():
    pot = _harmonic([1.0, 1.0])
    cfg = HMCConfig(step_size=1e-5, n_leapfrog=1, n_samples=2000, burn_in=0, seed=0)
    _, diag = hmc_chain(pot, np.array([0.3, -0.2]), cfg)
    assert diag.acceptance_rate >= 0.999
    assert np.max(np.abs(diag.energy_errors)) < 1e-8


def test_low_acceptance_warning():
    pot = _harmonic([1.0])
    cfg = HMCConfig(step_size=50.0, n_leapfrog=5, n_samples=400, burn_in=0, seed=1)
    _, diag = hmc_chain(pot, np.array([0.5]), cfg)
    assert diag.acceptance_rate < 0.01
    assert any("below 1%" in w for w in diag.warnings)


def test_hmc_recovers_correlated_gaussian():
    # N(0, [[1, .9], [.9, 1]]): covariance within 10% from 10k draws
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    prec = np.linalg.inv(cov)

    def pot(x):
        return float(0.5 * x @ prec @ x), prec @ x

    cfg = HMCConfig(step_size=0.12, n_leapfrog=12, n_samples=10_000, burn_in=500, seed=2)
    samples, diag = hmc_chain(pot, np.zeros(2), cfg)
    est = np.cov(samples.T, ddof=0)
    assert abs(est[0, 0] - 1.0) < 0.1
    assert abs(est[1, 1] - 1.0) < 0.1
    assert abs(est[0, 1] - 0.9) < 0.09
    assert diag.acceptance_rate > 0.6


def test_random_walk_normal_target():
    logp = lambda x: -0.5 * float(x @ x)
    rng = np.random.default_rng(9)
    samples, diag = random_walk_mh(logp, 1.0, 20_000, rng, np.zeros(1), burn_in=500)
    ess = diag.ess[0]
    se = np.sqrt(samples.var() / ess)
    assert abs(samples.mean()) < 4 * se
    assert abs(samples.var() - 1.0) < 0.1
    assert 0.1 < diag.acceptance_rate < 0.9


def test_random_walk_tiny_steps_always_accept():
    logp = lambda x: -0.5 * float(x @ x)
    rng = np.random.default_rng(10)
    _, diag = random_walk_mh(logp, 1e-8, 3000, rng, np.zeros(1))
    assert diag.acceptance_rate > 0.999


def test_random_walk_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        random_walk_mh(lambda x: 0.0, 0.0, 10, np.random.default_rng(0), np.zeros(1))


def test_detailed_balance_three_state_flows():
    # coarse-grain a long chain into 3 bins; i->j and j->i flows must balance
    logp = lambda x: -0.5 * float(x[0] * x[0])
    rng = np.random.default_rng(12)
    samples, _ = random_walk_mh(logp, 0.8, 1_000_000, rng, np.zeros(1), burn_in=1000)
    bins = np.digitize(samples[:, 0], [-0.5, 0.5])
    flows = np.zeros((3, 3))
    np.add.at(flows, (bins[:-1], bins[1:]), 1.0)
    for i in range(3):
        for j in range(i + 1, 3):
            fwd, back = flows[i, j], flows[j, i]
            assert abs(fwd - back) / max(fwd, back) < 0.02


# ---------------------------------------------------------------------------
# Gibbs precision updates

def test_gibbs_gamma_moments_and_distribution():
    rng = np.random.default_rng(13)
    omega = rng.standard_normal(40) * 0.8
    resid = rng.standard_normal(60) * 0.5
    hyper = HyperPriorSpec()
    n = 100_000
    draws = np.array([gibbs_update_precisions(omega, resid, hyper, rng) for _ in range(n)])

    shape_p = hyper.a_prior + omega.size / 2
    rate_p = hyper.b_prior + 0.5 * np.sum(omega**2)
    mean_p, sd_p = shape_p / rate_p, np.sqrt(shape_p) / rate_p
    assert abs(draws[:, 0].mean() - mean_p) < 3 * sd_p / np.sqrt(n)
    ks_p = stats.kstest(draws[:, 0], stats.gamma(shape_p, scale=1 / rate_p).cdf).statistic
    assert ks_p < 0.01

    shape_n = hyper.a_noise + resid.size / 2
    rate_n = hyper.b_noise + 0.5 * np.sum(resid**2)
    mean_n, sd_n = shape_n / rate_n, np.sqrt(shape_n) / rate_n
    assert abs(draws[:, 1].mean() - mean_n) < 3 * sd_n / np.sqrt(n)
    ks_n = stats.kstest(draws[:, 1], stats.gamma(shape_n, scale=1 / rate_n).cdf).statistic
    assert ks_n < 0.01


def test_gibbs_without_residuals_keeps_noise_precision():
    rng = np.random.default_rng(14)
    tau_p, tau_n = gibbs_update_precisions(np.ones(5), None, HyperPriorSpec(), rng,
                                           fixed=(1.0, 7.5))
    assert tau_n == 7.5
    assert tau_p > 0


# ---------------------------------------------------------------------------
# full sampler over a network posterior

def test_hmc_sample_linear_model_posterior():
    # conjugate check: 1-param linear-Gaussian posterior mean/sd from chain
    rng = np.random.default_rng(15)
    X = rng.standard_normal((25, 1))
    w_true = 1.3
    y = X * w_true + 0.3 * rng.standard_normal((25, 1))
    spec = _linear_spec(1)
    prior = PriorSpec.gaussian(0.0, 1.0)
    lik = LikelihoodSpec.gaussian(0.3)
    tau_n = 1 / 0.3**2
    prec = 1.0 + tau_n * float(np.sum(X * X))
    post_mean = tau_n * float(np.sum(X * y)) / prec
    post_sd = prec**-0.5

    cfg = HMCConfig(step_size=0.05, n_leapfrog=10, n_samples=4000, burn_in=500, seed=3)
    omegas, gammas, diag = hmc_sample(spec, prior, lik, (X, y), None, cfg)
    assert omegas.shape == (4000, 1)
    assert np.allclose(gammas[:, 0], 1.0) and np.allclose(gammas[:, 1], tau_n)
    se = post_sd / np.sqrt(diag.ess[0])
    assert abs(omegas.mean() - post_mean) < 4 * se
    assert abs(omegas.std() - post_sd) < 0.15 * post_sd


def test_hmc_sample_gibbs_tracks_noise_scale():
    # residual precision posterior concentrates near the generating value
    rng = np.random.default_rng(16)
    X = rng.uniform(-1, 1, (60, 1))
    y = 0.8 * X + 0.2 * rng.standard_normal((60, 1))
    spec = _linear_spec(1)
    prior = PriorSpec.gaussian(0.0, 1.0)
    lik = LikelihoodSpec.gaussian(1.0)  # deliberately wrong; Gibbs should fix it
    cfg = HMCConfig(step_size=0.04, n_leapfrog=8, n_samples=1500, burn_in=300, seed=4)
    omegas, gammas, diag = hmc_sample(spec, prior, lik, (X, y), HyperPriorSpec(), cfg)
    tau_n_hat = gammas[:, 1].mean()
    assert 0.4 / 0.2**2 < tau_n_hat < 2.5 / 0.2**2
    assert np.all(gammas > 0)
    assert diag.acceptance_rate > 0.3


def test_hmc_sample_classification_runs():
    rng = np.random.default_rng(17)
    X = rng.standard_normal((30, 2))
    labels = (X[:, 0] + X[:, 1] > 0).astype(int)
    spec = NetworkSpec(
        layers=(LayerSpec.dense(2, 2), LayerSpec.activation("softmax")),
        input_shape=(2,),
        task="classification",
    )
    cfg = HMCConfig(step_size=0.05, n_leapfrog=5, n_samples=200, burn_in=50, seed=5)
    omegas, gammas, diag = hmc_sample(spec, PriorSpec.gaussian(0.0, 1.0),
                                      LikelihoodSpec.categorical(), (X, labels), None, cfg)
    assert omegas.shape[0] == 200
    assert np.all(gammas == gammas[0])     # no Gibbs with fixed precisions
    assert np.all(np.isfinite(omegas))


def test_hmc_sample_rejects_gibbs_with_spike_slab():
    spec = _linear_spec(1)
    data = (np.ones((3, 1)), np.ones((3, 1)))
    cfg = HMCConfig(step_size=0.1, n_leapfrog=2, n_samples=5, seed=0)
    with pytest.raises(ConfigError, match="gaussian prior"):
        hmc_sample(spec, PriorSpec.spike_slab(0.5, 1.0, 0.01),
                   LikelihoodSpec.gaussian(1.0), data, HyperPriorSpec(), cfg)


# ---------------------------------------------------------------------------
# effective sample size

def test_ess_iid_and_duplicated_chains():
    rng = np.random.default_rng(18)
    x = rng.standard_normal(4000)
    ess = effective_sample_size(x)
    assert 0.6 * 4000 < ess < 1.5 * 4000
    # duplicating every draw halves the information: tau = 1 + 2*rho1 = 2
    dup = np.repeat(x[:2000], 2)
    ess_dup = effective_sample_size(dup)
    assert 0.35 * 4000 < ess_dup < 0.65 * 4000


def test_ess_constant_chain_is_nan():
    assert np.isnan(effective_sample_size(np.ones(100)))


def test_hmc_more_efficient_than_random_walk():
    # matched evaluation budgets on a strongly correlated Gaussian; the
    # random walk gets its best proposal scale out of a small grid
    cov = np.array([[1.0, 0.95], [0.95, 1.0]])
    prec = np.linalg.inv(cov)

    def pot(x):
        return float(0.5 * x @ prec @ x), prec @ x

    logp = lambda x: -float(0.5 * x @ prec @ x)
    cfg = HMCConfig(step_size=0.2, n_leapfrog=15, n_samples=1500, burn_in=200, seed=6)
    _, hd = hmc_chain(pot, np.zeros(2), cfg)
    hmc_eff = np.min(hd.ess) / hd.n_grad_evals

    budget = cfg.n_samples * cfg.n_leapfrog
    rw_eff = 0.0
    for k, sigma in enumerate((0.15, 0.3, 0.6)):
        rng = np.random.default_rng(60 + k)
        _, rd = random_walk_mh(logp, sigma, budget, rng, np.zeros(2), burn_in=2000)
        rw_eff = max(rw_eff, np.min(rd.ess) / rd.n_grad_evals)
    assert hmc_eff > 3 * rw_eff


def test_config_validation():
    with pytest.raises(ConfigError):
        HMCConfig(step_size=0.0, n_leapfrog=1, n_samples=1)
    with pytest.raises(ConfigError):
        HMCConfig(step_size=0.1, n_leapfrog=0, n_samples=1)
    with pytest.raises(ConfigError):
        HMCConfig(step_size=0.1, n_leapfrog=1, n_samples=1, mass=np.array([0.0]))
    with pytest.raises(ConfigError):
        HyperPriorSpec(a_prior=0.0)
