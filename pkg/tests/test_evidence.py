"""Laplace evidence, Occam factors, model posteriors, and ADF updates."""

import numpy as np
import pytest
from scipy import stats

from bnnlab.errors import ConfigError, NumericalError
from bnnlab.evidence import (
    AdfState,
    LaplaceReport,
    MapOptions,
    adf_grads_quadrature,
    adf_update,
    laplace_evidence,
    laplace_report_text,
    log_marginal_quadrature,
    model_posterior,
    occam_factor,
)
from bnnlab.nets import LayerSpec, NetworkSpec
from bnnlab.prob import LikelihoodSpec, PriorSpec


def _linear_spec(d):
    return NetworkSpec(layers=(LayerSpec.dense(d, 1, bias=False),), input_shape=(d,),
                       task="regression")


def _exact_linear_evidence(X, y, sigma0, sigma_n):
    """ln p(y) for y = X w + eps, w ~ N(0, sigma0^2 I): marginal is Gaussian."""
    n = X.shape[0]
    cov = sigma_n**2 * np.eye(n) + sigma0**2 * (X @ X.T)
    return float(stats.multivariate_normal(mean=np.zeros(n), cov=cov).logpdf(y.ravel()))


# ---------------------------------------------------------------------------
# Laplace evidence

def test_laplace_exact_on_quadratic_posterior():
    # linear-Gaussian model: the second-order expansion is the whole story
    rng = np.random.default_rng(21)
    X = rng.standard_normal((15, 2))
    y = rng.standard_normal((15, 1))
    sigma0, sigma_n = 1.3, 0.6
    report = laplace_evidence(PriorSpec.gaussian(0.0, sigma0), LikelihoodSpec.gaussian(sigma_n),
                              _linear_spec(2), (X, y))
    exact = _exact_linear_evidence(X, y, sigma0, sigma_n)
    assert report.log_evidence == pytest.approx(exact, rel=1e-6, abs=1e-6)


def test_laplace_decomposition_and_symmetry():
    rng = np.random.default_rng(22)
    X = rng.standard_normal((10, 3))
    y = rng.standard_normal((10, 1))
    report = laplace_evidence(PriorSpec.gaussian(0.0, 1.0), LikelihoodSpec.gaussian(0.5),
                              _linear_spec(3), (X, y))
    assert report.log_evidence == pytest.approx(report.log_bestfit + report.log_occam,
                                                abs=1e-12)
    assert np.allclose(report.hessian, report.hessian.T)
    assert report.k == 3
    # curvature of the quadratic posterior is known in closed form
    expected = np.eye(3) + (X.T @ X) / 0.5**2
    assert np.allclose(report.hessian, expected, rtol=1e-4)


def test_laplace_hessian_matches_map_gradient_gate():
    # a hopeless gradient gate triggers the convergence error
    rng = np.random.default_rng(23)
    X = rng.standard_normal((8, 2))
    y = rng.standard_normal((8, 1))
    with pytest.raises(NumericalError, match="did not converge"):
        laplace_evidence(PriorSpec.gaussian(0.0, 1.0), LikelihoodSpec.gaussian(0.5),
                         _linear_spec(2), (X, y), MapOptions(grad_tol=1e-300))


def test_laplace_rejects_non_positive_curvature():
    # a likelihood that rewards large weights has a saddle, not a mode, at 0:
    # fabricate it by asking laplace to run on a concave direction via a prior
    # wider than the negative data curvature is impossible with real specs, so
    # drive the failure through init on a symmetric double well instead:
    # y = x * w with all x = 0 leaves the prior alone (PD) — use tiny prior
    # sigma and a degenerate direction by duplicating a feature column.
    rng = np.random.default_rng(24)
    col = rng.standard_normal((10, 1))
    X = np.hstack([col, col])            # exactly collinear features
    y = col * 0.7
    sigma0 = 1e8                          # prior too flat to regularise them
    with pytest.raises(NumericalError, match="Laplace invalid at this mode"):
        laplace_evidence(PriorSpec.gaussian(0.0, sigma0), LikelihoodSpec.gaussian(0.3),
                         _linear_spec(2), (X, y))


def test_polynomial_degree_selection():
    # evidence picks the generating degree: misfit kills 1-2, Occam kills 4-6
    rng = np.random.default_rng(25)
    x = np.linspace(-1.0, 1.0, 40)
    y_true = 0.4 - 1.2 * x + 0.3 * x**2 + 2.0 * x**3
    y = (y_true + 0.05 * rng.standard_normal(40))[:, None]
    loges = []
    for degree in range(1, 7):
        feats = np.vander(x, degree + 1, increasing=True)
        report = laplace_evidence(PriorSpec.gaussian(0.0, 2.0), LikelihoodSpec.gaussian(0.05),
                                  _linear_spec(degree + 1), (feats, y))
        loges.append(report.log_evidence)
    assert int(np.argmax(loges)) == 2  # index 2 = degree 3
    probs = model_posterior(loges)
    assert probs[2] > 0.5


def test_wider_prior_lowers_occam_factor():
    rng = np.random.default_rng(26)
    X = rng.standard_normal((20, 2))
    w_true = np.array([[0.8], [-0.4]])
    y = X @ w_true + 0.1 * rng.standard_normal((20, 1))
    lik = LikelihoodSpec.gaussian(0.1)
    narrow = laplace_evidence(PriorSpec.gaussian(0.0, 1.0), lik, _linear_spec(2), (X, y))
    wide = laplace_evidence(PriorSpec.gaussian(0.0, 10.0), lik, _linear_spec(2), (X, y))
    assert wide.log_occam < narrow.log_occam


# ---------------------------------------------------------------------------
# Occam factor

def test_occam_factor_flat_likelihood_is_one():
    # outputs that ignore the weights leave the posterior equal to the prior
    X = np.zeros((12, 1))
    y = np.ones((12, 1)) * 0.3
    report = laplace_evidence(PriorSpec.gaussian(0.0, 0.9), LikelihoodSpec.gaussian(1.0),
                              _linear_spec(1), (X, y))
    assert occam_factor(report) == pytest.approx(1.0, abs=1e-6)


def test_occam_factor_1d_closed_form():
    # for a 1-D conjugate problem: factor = (sd_post / sd_prior) * prior-density ratio
    rng = np.random.default_rng(27)
    X = rng.standard_normal((30, 1))
    y = 0.6 * X + 0.2 * rng.standard_normal((30, 1))
    sigma0, sigma_n = 1.5, 0.2
    report = laplace_evidence(PriorSpec.gaussian(0.0, sigma0), LikelihoodSpec.gaussian(sigma_n),
                              _linear_spec(1), (X, y))
    prec = 1 / sigma0**2 + float(np.sum(X * X)) / sigma_n**2
    sd_post = prec**-0.5
    w_map = report.omega_map[0]
    hand = (sd_post / sigma0) * np.exp(-0.5 * w_map**2 / sigma0**2)
    assert occam_factor(report) == pytest.approx(hand, rel=1e-5)


def test_occam_factor_bounded_property_sweep():
    # data-informed conjugate problems never inflate the evidence past the fit
    rng = np.random.default_rng(28)
    for _ in range(100):
        n = rng.integers(5, 40)
        X = rng.standard_normal((n, 1)) * rng.uniform(0.5, 2.0)
        w = rng.uniform(-2, 2)
        sigma_n = rng.uniform(0.1, 1.0)
        y = w * X + sigma_n * rng.standard_normal((n, 1))
        sigma0 = rng.uniform(0.3, 3.0)
        report = laplace_evidence(PriorSpec.gaussian(0.0, sigma0),
                                  LikelihoodSpec.gaussian(sigma_n),
                                  _linear_spec(1), (X, y),
                                  MapOptions(n_restarts=1))
        f = occam_factor(report)
        assert 0.0 < f <= 1.0 + 1e-12


def test_report_text_roundtrip_fields():
    report = LaplaceReport(omega_map=np.array([0.5, -1.0]), log_bestfit=-3.0,
                           log_occam=-1.25, log_evidence=-4.25,
                           hessian=np.eye(2), k=2)
    text = laplace_report_text(report)
    assert "log_evidence=-4.25" in text
    assert "k=2" in text
    assert "0.5" in text and "-1.0" in text


# ---------------------------------------------------------------------------
# model posterior

def test_model_posterior_singleton_and_symmetry():
    assert model_posterior([3.7]) == pytest.approx([1.0])
    four = model_posterior([-5.0] * 4, [0.25] * 4)
    assert np.allclose(four, 0.25)


def test_model_posterior_gap_two():
    probs = model_posterior([0.0, -2.0], [0.5, 0.5])
    e2 = np.exp(2.0)
    assert probs == pytest.approx([e2 / (1 + e2), 1 / (1 + e2)], abs=1e-12)
    assert probs[0] == pytest.approx(0.881, abs=5e-4)


def test_model_posterior_invariances_and_errors():
    le = [-10.0, -12.5, -11.0]
    base = model_posterior(le)
    shifted = model_posterior([v + 123.4 for v in le])
    assert np.allclose(base, shifted, atol=1e-12)
    assert base.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError, match="model priors"):
        model_posterior([0.0, 0.0], [0.7, 0.7])
    with pytest.raises(ConfigError, match="evidences"):
        model_posterior([0.0, 0.0], [1.0])


# ---------------------------------------------------------------------------
# ADF

def _gaussian_datum_loglik(y, noise_var=1.0):
    return lambda w: -0.5 * np.log(2 * np.pi * noise_var) - 0.5 * (y - w) ** 2 / noise_var


def test_adf_zero_gradients_keep_state():
    s = AdfState(mu=np.array([0.3]), var=np.array([0.7]))
    s2 = adf_update(s, (0.0, 0.0))
    assert np.allclose(s2.mu, s.mu) and np.allclose(s2.var, s.var)
    assert s2.t == 1


def test_adf_one_step_conjugate_oracle():
    # prior N(0,1), observe y=1 with unit noise: posterior is N(0.5, 0.5)
    s = AdfState(mu=0.0, var=1.0)
    grads = adf_grads_quadrature(_gaussian_datum_loglik(1.0), 0.0, 1.0)
    s2 = adf_update(s, grads)
    assert abs(s2.mu[0] - 0.5) < 1e-6
    assert abs(s2.var[0] - 0.5) < 1e-6


def test_adf_fifty_step_sequence_tracks_exact_posterior():
    rng = np.random.default_rng(29)
    w_true = 0.8
    ys = w_true + rng.standard_normal(50)
    s = AdfState(mu=0.0, var=1.0)
    exact_mu, exact_var = 0.0, 1.0
    for y in ys:
        grads = adf_grads_quadrature(_gaussian_datum_loglik(float(y)),
                                     float(s.mu[0]), float(s.var[0]))
        s = adf_update(s, grads)
        # exact sequential Bayes for the same datum
        prec = 1 / exact_var + 1.0
        exact_mu = (exact_mu / exact_var + y) / prec
        exact_var = 1 / prec
        assert abs(s.mu[0] - exact_mu) < 1e-6 * (1 + abs(exact_mu))
        assert abs(s.var[0] - exact_var) < 1e-6
    assert abs(s.mu[0] - exact_mu) / abs(exact_mu) < 0.05
    assert abs(s.var[0] - exact_var) / exact_var < 0.05


def test_adf_variance_collapse_raises():
    s = AdfState(mu=0.0, var=1.0)
    with pytest.raises(NumericalError, match="ADF variance collapse"):
        adf_update(s, (10.0, 0.0))   # g_mu^2 term wipes out the variance


def test_adf_state_validation():
    with pytest.raises(ConfigError):
        AdfState(mu=np.zeros(2), var=np.array([1.0, 0.0]))
    with pytest.raises(ConfigError):
        AdfState(mu=np.zeros(2), var=np.ones(3))


def test_quadrature_matches_closed_form_marginal():
    # ∫ N(y; w, s2) N(w; mu, v) dw = N(y; mu, v + s2)
    y, mu, v, s2 = 0.7, -0.2, 0.6, 1.3
    got = log_marginal_quadrature(_gaussian_datum_loglik(y, s2), mu, v)
    want = stats.norm(mu, np.sqrt(v + s2)).logpdf(y)
    assert got == pytest.approx(float(want), abs=1e-9)
    with pytest.raises(ConfigError):
        log_marginal_quadrature(_gaussian_datum_loglik(y), 0.0, -1.0)
