"""Exact Gaussian-process regression and the wide-network prior experiment.

The GP side is the textbook conjugate computation: a Cholesky factor of
K + sigma_n^2 I, posterior mean K_*^T alpha, and a noise-inclusive predictive
variance, reported with +-1 and +-2 standard-deviation bands.  The other half
samples single-hidden-layer networks from their weight prior and records the
joint output at two probe inputs — as the layer widens, that scatter tends to
a bivariate Gaussian, which normality_statistic quantifies with moment
statistics instead of eyeballing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .predictive import PredictiveSummary

__all__ = [
    "KernelSpec",
    "GPModel",
    "NormalityStats",
    "kernel_eval",
    "kernel_matrix",
    "gp_fit",
    "gp_predict",
    "gp_bands",
    "nn_prior_sample_outputs",
    "normality_statistic",
]

TWO_SIGMA_MASS = 0.9544997361036416   # P(|Z| <= 2) for the outer band

_MAX_JITTER = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    kind: str                 # "matern52" | "rbf"
    lengthscale: float
    signal_var: float

    def __post_init__(self):
        if self.kind not in ("matern52", "rbf"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")
        if self.lengthscale <= 0 or self.signal_var <= 0:
            raise ConfigError("lengthscale and signal variance must be positive")

    @staticmethod
    def matern52(lengthscale: float, signal_var: float = 1.0) -> "KernelSpec":
        return KernelSpec("matern52", lengthscale, signal_var)

    @staticmethod
    def rbf(lengthscale: float, signal_var: float = 1.0) -> "KernelSpec":
        return KernelSpec("rbf", lengthscale, signal_var)


@dataclass
class GPModel:
    kernel: KernelSpec
    noise_var: float
    X: np.ndarray             # (n, d)
    y: np.ndarray             # (n,)
    chol: np.ndarray          # lower factor of K + noise_var I (+ jitter)
    alpha: np.ndarray         # (K + noise_var I)^-1 y
    jitter: float


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def _pairwise_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(d2, 0.0))


def kernel_matrix(k: KernelSpec, X, X2=None) -> np.ndarray:
    A = _as_2d(X)
    B = A if X2 is None else _as_2d(X2)
    r = _pairwise_dist(A, B)
    if k.kind == "rbf":
        return k.signal_var * np.exp(-0.5 * (r / k.lengthscale) ** 2)
    z = np.sqrt(5.0) * r / k.lengthscale
    return k.signal_var * (1.0 + z + z**2 / 3.0) * np.exp(-z)


def kernel_eval(k: KernelSpec, x, xp) -> float:
    a = np.atleast_1d(np.asarray(x, dtype=np.float64)).reshape(1, -1)
    b = np.atleast_1d(np.asarray(xp, dtype=np.float64)).reshape(1, -1)
    return float(kernel_matrix(k, a, b)[0, 0])


def gp_fit(kernel: KernelSpec, noise_var: float, X, y) -> GPModel:
    """Factor K + noise_var I, escalating a diagonal jitter up to 1e-6.

    Raises if even the maximum jitter leaves the matrix non-factorable.
    """
    if noise_var < 0:
        raise ConfigError("noise variance must be nonnegative")
    X2 = _as_2d(X)
    yv = np.asarray(y, dtype=np.float64).ravel()
    if yv.size != X2.shape[0]:
        raise ConfigError(f"{X2.shape[0]} inputs but {yv.size} targets")
    K = kernel_matrix(kernel, X2) + noise_var * np.eye(X2.shape[0])
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(X2.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-12 if jitter == 0.0 else jitter * 100.0
            if jitter > _MAX_JITTER:
                raise NumericalError(
                    f"kernel matrix not factorable even with jitter {_MAX_JITTER:g}")
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, yv))
    return GPModel(kernel=kernel, noise_var=float(noise_var), X=X2, y=yv,
                   chol=L, alpha=alpha, jitter=jitter)


def gp_predict(model: GPModel, Xs) -> PredictiveSummary:
    """Exact posterior mean and noise-inclusive variance at new inputs.

    lower/upper hold the outer +-2 sigma band; gp_bands() derives both bands.
    """
    Xs2 = _as_2d(Xs)
    Ks = kernel_matrix(model.kernel, model.X, Xs2)          # (n, m)
    mean = Ks.T @ model.alpha
    v = np.linalg.solve(model.chol, Ks)
    latent = model.kernel.signal_var - np.sum(v * v, axis=0)
    var = np.maximum(latent, 0.0) + model.noise_var
    sd = np.sqrt(var)
    return PredictiveSummary(
        mean=mean[:, None],
        variance=var[:, None],
        lower=(mean - 2.0 * sd)[:, None],
        upper=(mean + 2.0 * sd)[:, None],
        beta=TWO_SIGMA_MASS,
        n_samples=0,
        task="regression",
    )


def gp_bands(summary: PredictiveSummary):
    """(lo1, hi1, lo2, hi2): mean -+ 1 and 2 predictive std."""
    sd = summary.std
    return (summary.mean - sd, summary.mean + sd,
            summary.mean - 2.0 * sd, summary.mean + 2.0 * sd)


def nn_prior_sample_outputs(hidden_units: int, n_draws: int, rng: np.random.Generator,
                            probes=(0.2, -0.4), sigma_w: float = 5.0,
                            activation: str = "tanh") -> np.ndarray:
    """Joint prior draws of a 1-hidden-layer network's outputs at probe inputs.

    Input-to-hidden weights and biases are N(0, sigma_w^2); hidden-to-output
    weights and the output bias are N(0, (sigma_w/sqrt(H))^2), the scaling
    that keeps the output variance stable as the layer widens.  Returns an
    (n_draws, len(probes)) array.
    """
    if hidden_units < 1 or n_draws < 1:
        raise ConfigError("hidden_units and n_draws must be positive")
    act = np.tanh if activation == "tanh" else None
    if act is None:
        raise ConfigError(f"unsupported activation {activation!r}")
    h = hidden_units
    xs = np.asarray(probes, dtype=np.float64)
    w1 = rng.standard_normal((n_draws, h)) * sigma_w
    b1 = rng.standard_normal((n_draws, h)) * sigma_w
    w2 = rng.standard_normal((n_draws, h)) * (sigma_w / np.sqrt(h))
    b2 = rng.standard_normal((n_draws, 1)) * (sigma_w / np.sqrt(h))
    # hidden activations per probe: (n_draws, H, n_probes)
    pre = w1[:, :, None] * xs[None, None, :] + b1[:, :, None]
    return np.einsum("nh,nhp->np", w2, act(pre)) + b2


@dataclass(frozen=True)
class NormalityStats:
    skewness: np.ndarray         # per column
    excess_kurtosis: np.ndarray  # per column
    mardia: float                # multivariate kurtosis minus its normal value


def normality_statistic(samples: np.ndarray) -> NormalityStats:
    """Moment-based distance from Gaussianity; all entries ~0 under normality.

    samples is (n,) or (n, d) with n >= 1000.  The mardia entry is the
    multivariate kurtosis E[(x^T S^-1 x)^2] - d(d+2) on centred samples.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < 1000:
        raise ConfigError(f"need at least 1000 samples, got {n}")
    c = x - x.mean(axis=0)
    m2 = np.mean(c**2, axis=0)
    if np.any(m2 == 0.0):
        raise NumericalError("zero variance column: normality statistics undefined")
    skew = np.mean(c**3, axis=0) / m2**1.5
    kurt = np.mean(c**4, axis=0) / m2**2 - 3.0
    cov = (c.T @ c) / n
    sol = np.linalg.solve(cov, c.T)
    q = np.sum(c.T * sol, axis=0)
    mardia = float(np.mean(q**2) - d * (d + 2))
    return NormalityStats(skewness=skew, excess_kurtosis=kurt, mardia=mardia)
