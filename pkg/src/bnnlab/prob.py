"""Priors, likelihoods, unnormalised posteriors, and density divergences.

Density formulas are written against the dispatching ops in `tape`, so a
single implementation serves both eager numpy evaluation and tape graphs;
that keeps the sampling-time energies and the training-time losses literally
the same expressions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .nets import NetworkSpec, ParameterSet, mlp_forward

__all__ = [
    "PriorSpec",
    "LikelihoodSpec",
    "DensityPair",
    "log_prior",
    "log_prior_terms",
    "log_likelihood",
    "log_posterior_unnorm",
    "kl_diag_gaussians",
    "alpha_divergence",
    "hellinger_distance",
]

_LN_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PriorSpec:
    """Factorised prior over every weight/bias scalar.

    kind "gaussian": N(mu0, sigma0^2).  kind "spike_slab": mixture
    pi*N(0, sigma_slab^2) + (1-pi)*N(0, sigma_spike^2).
    """

    kind: str
    mu0: float = 0.0
    sigma0: float = 1.0
    pi: float = 0.5
    sigma_slab: float = 1.0
    sigma_spike: float = 0.0625

    def __post_init__(self):
        if self.kind not in ("gaussian", "spike_slab"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma0 <= 0:
            raise ValueError("gaussian prior needs sigma0 > 0")
        if self.kind == "spike_slab":
            if not 0.0 <= self.pi <= 1.0:
                raise ValueError("mixture weight pi must lie in [0, 1]")
            if self.sigma_slab <= 0 or self.sigma_spike <= 0:
                raise ValueError("mixture component scales must be positive")

    @staticmethod
    def gaussian(mu0: float = 0.0, sigma0: float = 1.0) -> "PriorSpec":
        return PriorSpec("gaussian", mu0=mu0, sigma0=sigma0)

    @staticmethod
    def spike_slab(pi: float = 0.5, sigma_slab: float = 1.0, sigma_spike: float = 0.0625) -> "PriorSpec":
        return PriorSpec("spike_slab", pi=pi, sigma_slab=sigma_slab, sigma_spike=sigma_spike)


@dataclass(frozen=True)
class LikelihoodSpec:
    """Observation model: "gaussian" (fixed noise sd) or "categorical"."""

    kind: str
    sigma_noise: float = 0.1

    def __post_init__(self):
        if self.kind not in ("gaussian", "categorical"):
            raise ValueError(f"unknown likelihood kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma_noise <= 0:
            raise ValueError("gaussian likelihood needs sigma_noise > 0")

    @staticmethod
    def gaussian(sigma_noise: float) -> "LikelihoodSpec":
        return LikelihoodSpec("gaussian", sigma_noise=sigma_noise)

    @staticmethod
    def categorical() -> "LikelihoodSpec":
        return LikelihoodSpec("categorical")


def gaussian_logpdf(w, mu, sigma):
    """Elementwise log N(w; mu, sigma^2); any argument may be a tape ref."""
    if isinstance(sigma, tp.Ref):
        z = (w - mu) * tp.reciprocal(sigma)
        return (z * z) * -0.5 - tp.log(sigma) - 0.5 * _LN_2PI
    z = (w - mu) * (1.0 / sigma)
    return (z * z) * -0.5 - (np.log(sigma) + 0.5 * _LN_2PI)


def log_prior_terms(prior: PriorSpec, w):
    """Elementwise log prior density of w (array or tape ref)."""
    if prior.kind == "gaussian":
        return gaussian_logpdf(w, prior.mu0, prior.sigma0)
    # spike-and-slab via a stable two-term log-sum-exp
    la = _log_or_neginf(prior.pi) + gaussian_logpdf(w, 0.0, prior.sigma_slab)
    lb = _log_or_neginf(1.0 - prior.pi) + gaussian_logpdf(w, 0.0, prior.sigma_spike)
    if not isinstance(w, tp.Ref):
        m = np.maximum(la, lb)
        return m + np.log(np.exp(la - m) + np.exp(lb - m))
    if prior.pi == 1.0:
        return la
    if prior.pi == 0.0:
        return lb
    m = tp.maximum(la, lb)
    return m + tp.log(tp.exp(la - m) + tp.exp(lb - m))


def _log_or_neginf(p: float) -> float:
    return float(np.log(p)) if p > 0.0 else -np.inf


def log_prior(prior: PriorSpec, params: ParameterSet) -> float:
    """Sum of log prior densities over every scalar parameter."""
    total = 0.0
    for _, a in params.names():
        total += float(np.sum(log_prior_terms(prior, a)))
    return total


def log_likelihood(lik: LikelihoodSpec, net_out: np.ndarray, targets: np.ndarray) -> float:
    """Log p(targets | network output).

    Gaussian: net_out and targets are (n, k) real arrays; every scalar entry
    is an observation with sd sigma_noise.  Categorical: net_out is (n, K)
    class probabilities (softmax head output), targets are integer labels.
    """
    net_out = np.asarray(net_out, dtype=np.float64)
    if lik.kind == "gaussian":
        y = np.asarray(targets, dtype=np.float64)
        if y.shape != net_out.shape:
            raise ValueError(f"targets {y.shape} vs outputs {net_out.shape}")
        n = y.size
        s2 = lik.sigma_noise**2
        return float(-0.5 * n * np.log(2.0 * np.pi * s2) - np.sum((y - net_out) ** 2) / (2.0 * s2))
    labels = np.asarray(targets)
    if labels.ndim != 1 or labels.shape[0] != net_out.shape[0]:
        raise ValueError(f"labels {labels.shape} vs outputs {net_out.shape}")
    if np.any(labels < 0) or np.any(labels >= net_out.shape[1]):
        raise ValueError("label outside class range")
    p = net_out[np.arange(labels.shape[0]), labels.astype(int)]
    return float(np.sum(np.log(p)))


def log_posterior_unnorm(prior: PriorSpec, lik: LikelihoodSpec, spec: NetworkSpec,
                         params: ParameterSet, data) -> float:
    """log p(D|w) + log p(w) for data = (X, y); the posterior up to ln Z."""
    X, y = data
    return log_likelihood(lik, mlp_forward(spec, params, X), y) + log_prior(prior, params)


# ---------------------------------------------------------------------------
# divergences

@dataclass(frozen=True)
class DensityPair:
    """Two densities tabulated on a shared strictly-increasing 1-D grid."""

    grid: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        g, p, q = (np.asarray(a, dtype=np.float64) for a in (self.grid, self.p, self.q))
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if g.ndim != 1 or p.shape != g.shape or q.shape != g.shape:
            raise ValueError("grid, p, q must be 1-D arrays of one shape")
        if g.size < 100:
            raise ValueError(f"grid too coarse ({g.size} nodes); need at least 100")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(p < 0) or np.any(q < 0):
            raise ValueError("densities must be non-negative")

    @staticmethod
    def from_gaussians(p_moments, q_moments, lo=None, hi=None, n: int = 2001) -> "DensityPair":
        (mp, sp), (mq, sq) = p_moments, q_moments
        if lo is None:
            lo = min(mp - 10 * sp, mq - 10 * sq)
        if hi is None:
            hi = max(mp + 10 * sp, mq + 10 * sq)
        g = np.linspace(lo, hi, n)
        return DensityPair(g, np.exp(gaussian_logpdf(g, mp, sp)), np.exp(gaussian_logpdf(g, mq, sq)))


def kl_diag_gaussians(q_moments, p_moments) -> float:
    """KL( N(mu_q, diag sig_q^2) || N(mu_p, diag sig_p^2) ), closed form."""
    mu_q, sig_q = (np.asarray(a, dtype=np.float64) for a in q_moments)
    mu_p, sig_p = (np.asarray(a, dtype=np.float64) for a in p_moments)
    if np.any(sig_q <= 0) or np.any(sig_p <= 0):
        raise ValueError("scales must be positive")
    r = sig_q / sig_p
    return float(np.sum(np.log(sig_p) - np.log(sig_q) + 0.5 * (r**2 + ((mu_q - mu_p) / sig_p) ** 2 - 1.0)))


def alpha_divergence(pair: DensityPair, alpha: float) -> float:
    """D_alpha(p||q) = (1 - int p^a q^(1-a)) / (a(1-a)) by trapezoid quadrature.

    alpha must avoid {0, 1}; numerically the alpha -> 0 limit approaches
    KL(q||p) and alpha -> 1 approaches KL(p||q).
    """
    a = float(alpha)
    if a in (0.0, 1.0):
        raise ValueError("alpha = 0 and alpha = 1 are singular; take limits instead")
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(pair.p)
        logq = np.log(pair.q)
        integrand = np.exp(a * logp + (1.0 - a) * logq)
    integrand = np.where(np.isnan(integrand), 0.0, integrand)  # 0*inf at double zeros
    if np.any(np.isinf(integrand)):
        raise ValueError("integrand diverges (zero density with a negative exponent)")
    val = np.trapezoid(integrand, pair.grid)
    return float((1.0 - val) / (a * (1.0 - a)))


def hellinger_distance(pair: DensityPair) -> float:
    """sqrt( int (sqrt(p) - sqrt(q))^2 dx ); lies in [0, sqrt(2)]."""
    integ = np.trapezoid((np.sqrt(pair.p) - np.sqrt(pair.q)) ** 2, pair.grid)
    return float(np.sqrt(max(integ, 0.0)))
