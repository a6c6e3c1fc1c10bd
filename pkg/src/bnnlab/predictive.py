"""Monte Carlo predictive summaries.

Given stacked posterior draws of network outputs (shape (T, n, k)), this
module forms the predictive mean, the predictive variance (population
convention: divide by T), equal-tailed credible intervals, and, for
classification, an accuracy/interval report.  For regression the observation
noise variance is added on top of the model variance, so bands describe new
observations rather than the latent function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PredictiveSummary",
    "ClassificationReport",
    "predictive_moments",
    "credible_interval",
    "summarize",
    "classification_report",
]


@dataclass
class PredictiveSummary:
    mean: np.ndarray        # (n, k)
    variance: np.ndarray    # (n, k), includes sigma_noise^2 for regression
    lower: np.ndarray       # (n, k) equal-tailed interval bounds
    upper: np.ndarray
    beta: float             # interval mass
    n_samples: int
    task: str = "regression"

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


@dataclass
class ClassificationReport:
    accuracy: float
    predicted: np.ndarray       # (n,) argmax of the mean probabilities
    mean_probs: np.ndarray      # (n, K)
    lower: np.ndarray           # (n, K) interval bounds on class probabilities
    upper: np.ndarray
    beta: float


def predictive_moments(samples: np.ndarray, sigma_noise: float = 0.0,
                       task: str = "regression"):
    """Mean and variance over the draw axis.

    samples has shape (T, n, k).  Variance uses the population convention
    (divide by T).  For regression, sigma_noise^2 is added to every entry;
    classification ignores it (the draws are already probabilities).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise ValueError(f"samples must be (T, n, k), got {samples.shape}")
    mean = samples.mean(axis=0)
    var = samples.var(axis=0)  # ddof=0
    if task == "regression":
        var = var + float(sigma_noise) ** 2
    return mean, var


def credible_interval(samples: np.ndarray, beta: float = 0.95):
    """Equal-tailed empirical interval holding mass beta, along axis 0.

    Requires at least 2.5/(1-beta) draws (50 for beta=0.95) so the tail
    quantiles are not pure extrapolation.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    need = int(np.ceil(2.5 / (1.0 - beta)))
    if samples.shape[0] < need:
        raise ValueError(f"need at least {need} draws for beta={beta}, got {samples.shape[0]}")
    tail = (1.0 - beta) / 2.0
    lo = np.quantile(samples, tail, axis=0)
    hi = np.quantile(samples, 1.0 - tail, axis=0)
    return lo, hi


def summarize(samples: np.ndarray, beta: float = 0.95, task: str = "regression",
              sigma_noise: float = 0.0) -> PredictiveSummary:
    """Moments plus intervals in one PredictiveSummary.

    With enough draws the interval is the empirical quantile pair from
    credible_interval; with fewer draws than that contract allows, it falls
    back to the normal approximation mean +- z * std built from the moments.
    """
    from scipy.stats import norm

    mean, var = predictive_moments(samples, sigma_noise=sigma_noise, task=task)
    z = norm.ppf(1.0 - (1.0 - beta) / 2.0)
    if samples.shape[0] >= int(np.ceil(2.5 / (1.0 - beta))):
        lo, hi = credible_interval(samples, beta)
        if task == "regression" and sigma_noise > 0.0:
            # widen the sampled interval by the observation noise so the bands
            # and the variance describe the same predictive distribution
            centre, half = (hi + lo) / 2.0, (hi - lo) / 2.0
            half = np.sqrt(half**2 + (z * sigma_noise) ** 2)
            lo, hi = centre - half, centre + half
    else:
        sd = np.sqrt(var)
        lo, hi = mean - z * sd, mean + z * sd
        if task == "classification":
            lo, hi = np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)
    return PredictiveSummary(mean, var, lo, hi, beta, samples.shape[0], task)


def classification_report(summary: PredictiveSummary, labels: np.ndarray) -> ClassificationReport:
    """Accuracy of the posterior-mean classifier plus per-class intervals."""
    labels = np.asarray(labels, dtype=int)
    if summary.mean.shape[0] != labels.shape[0]:
        raise ValueError(f"{summary.mean.shape[0]} rows vs {labels.shape[0]} labels")
    pred = summary.mean.argmax(axis=1)
    return ClassificationReport(
        accuracy=float((pred == labels).mean()),
        predicted=pred,
        mean_probs=summary.mean,
        lower=summary.lower,
        upper=summary.upper,
        beta=summary.beta,
    )
