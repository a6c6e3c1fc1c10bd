"""bnnlab: a desk-scale Bayesian neural network laboratory.

Modules
-------
tape        reverse-mode autodiff on an explicit operation graph
nets        network specs, parameter containers, forward passes
prob        priors, likelihoods, divergences
vi          Bayes by Backprop, MC dropout, gradient estimators
hmc         Hamiltonian Monte Carlo with Gibbs hyperparameter steps
evidence    Laplace model evidence and assumed density filtering
gp          exact Gaussian process regression baseline
datasets    toy generators, CSV and IDX loaders
predictive  Monte Carlo predictive summaries
experiments config-driven experiment harness (backs the CLI)
"""

__version__ = "0.1.0"
