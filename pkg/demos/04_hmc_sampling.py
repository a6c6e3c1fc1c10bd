"""Posterior sampling with Hamiltonian dynamics.

Samples the exact (up to MCMC error) posterior of a 5-unit network with
Gibbs updates for the prior and noise precisions, then gives a random-walk
sampler the same evaluation budget to show why gradients matter: measured
in effective samples per density/gradient evaluation, HMC wins by a wide
margin on even this 16-parameter posterior.
"""

import numpy as np

from bnnlab.hmc import (HMCConfig, effective_sample_size, hmc_sample,
                        random_walk_mh, _flat_template)
from bnnlab.nets import mlp_forward, spec_from_text
from bnnlab.predictive import summarize
from bnnlab.prob import LikelihoodSpec, PriorSpec, log_posterior_unnorm


def min_ess(samples):
    return min(effective_sample_size(samples[:, j]) for j in range(samples.shape[1]))


def main():
    spec = spec_from_text("input = 1\ntask = regression\nlayers = dense:5 tanh dense:1")
    prior, lik = PriorSpec.gaussian(0.0, 1.0), LikelihoodSpec.gaussian(0.2)
    rng = np.random.default_rng(7)
    X = np.linspace(-2, 2, 24)[:, None]
    y = np.sin(1.5 * X.ravel()) + 0.2 * rng.standard_normal(24)

    cfg = HMCConfig(step_size=0.025, n_leapfrog=60, n_samples=600, burn_in=200, seed=0)
    omegas, gammas, diag = hmc_sample(spec, prior, lik, (X, y), None, cfg)
    print(f"HMC: {omegas.shape[0]} kept draws, acceptance "
          f"{diag.acceptance_rate:.2f}, {diag.n_grad_evals} gradient evaluations")
    print(f"  inferred noise sigma: "
          f"{np.mean(1.0 / np.sqrt(gammas[:, 1])):.3f} (true 0.2)")

    ess = min_ess(omegas)
    print(f"  worst-coordinate effective sample size: {ess:.0f} "
          f"({ess / diag.n_grad_evals:.2e} per evaluation)")

    # posterior predictive check: do 95% intervals cover held-out truth?
    grid = np.linspace(-2, 2, 50)[:, None]
    template = _flat_template(spec)
    keep = omegas[:: max(1, omegas.shape[0] // 100)]
    draws = np.stack([mlp_forward(spec, template.from_vector(w), grid) for w in keep])
    s = summarize(draws, sigma_noise=0.2)
    truth = np.sin(1.5 * grid.ravel())
    lo = s.mean.ravel() - 1.96 * s.std.ravel()
    hi = s.mean.ravel() + 1.96 * s.std.ravel()
    print(f"  95% interval coverage of the noiseless truth: "
          f"{np.mean((truth >= lo) & (truth <= hi)):.2f}")

    # same budget, no gradients
    y2 = y[:, None]
    target = lambda w: log_posterior_unnorm(prior, lik, spec,
                                            template.from_vector(w), (X, y2))
    best = 0.0
    for k, step in enumerate((0.02, 0.05, 0.1, 0.2)):
        rw, d = random_walk_mh(target, step, diag.n_grad_evals,
                               np.random.default_rng(900 + k),
                               x0=np.zeros(template.n_params), burn_in=8000)
        eff = min_ess(rw) / diag.n_grad_evals
        best = max(best, eff)
        print(f"random walk, step {step}: acceptance {d.acceptance_rate:.2f}, "
              f"{eff:.2e} effective samples per evaluation")
    print(f"\nHMC / best-random-walk efficiency ratio: "
          f"{ess / diag.n_grad_evals / best:.1f}x")


if __name__ == "__main__":
    main()
