"""Hamiltonian Monte Carlo over network posteriors.

The Hamiltonian is H(w, v) = U(w) + K(v) with potential energy
U(w) = -ln[p(w|tau_prior) p(D|w, tau_noise)] and kinetic energy
K(v) = 1/2 v^T M^-1 v, so resampled momenta are exactly N(0, M).  Proposals
come from L leapfrog steps of size eps and are corrected by a Metropolis
accept with probability min(1, exp(H_old - H_new)).  Between trajectories the
two precisions gamma = (tau_prior, tau_noise) are Gibbs-sampled from their
conditionally conjugate Gamma posteriors.  A Gaussian random-walk Metropolis
chain over the same target serves as the efficiency baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .errors import ConfigError, NumericalError
from .nets import NetworkSpec, ParameterSet, build_forward_graph, init_params
from .prob import LikelihoodSpec, PriorSpec, gaussian_logpdf, log_prior_terms

__all__ = [
    "HMCConfig",
    "ChainState",
    "HyperPriorSpec",
    "ChainDiagnostics",
    "potential_energy",
    "kinetic_energy",
    "sample_momentum",
    "leapfrog",
    "hmc_chain",
    "hmc_sample",
    "gibbs_update_precisions",
    "random_walk_mh",
    "effective_sample_size",
]


@dataclass(frozen=True)
class HMCConfig:
    step_size: float
    n_leapfrog: int
    n_samples: int
    burn_in: int = 0
    mass: np.ndarray | float = 1.0   # diagonal of M
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0 or self.n_leapfrog < 1 or self.n_samples < 1 or self.burn_in < 0:
            raise ConfigError("step_size > 0, n_leapfrog >= 1, n_samples >= 1, burn_in >= 0 required")
        if np.any(np.asarray(self.mass) <= 0):
            raise ConfigError("mass diagonal must be positive")


@dataclass(frozen=True)
class HyperPriorSpec:
    """Gamma(shape a, rate b) hyper-priors over the two precisions."""

    a_prior: float = 1.0
    b_prior: float = 0.1
    a_noise: float = 1.0
    b_noise: float = 0.1

    def __post_init__(self):
        if min(self.a_prior, self.b_prior, self.a_noise, self.b_noise) <= 0:
            raise ConfigError("Gamma hyper-prior parameters must be positive")


@dataclass
class ChainState:
    position: np.ndarray
    momentum: np.ndarray
    tau_prior: float
    tau_noise: float
    potential: float
    grad_potential: np.ndarray
    diverged: bool = False


@dataclass
class ChainDiagnostics:
    acceptance_rate: float
    ess: np.ndarray                 # per coordinate
    energy_errors: np.ndarray       # H_new - H_old per post-burn-in iteration
    n_grad_evals: int
    warnings: list = field(default_factory=list)
    # per recorded iteration, for chain persistence
    potentials: np.ndarray | None = None
    kinetics: np.ndarray | None = None
    accept_flags: np.ndarray | None = None


class _Potential:
    """Tape-backed U(w; gamma) = -[ln p(w|tau_p) + ln p(D|w, tau_n)].

    With a Gaussian prior/likelihood the scales come from the precisions
    (sigma = tau^-1/2), so the same graph serves every Gibbs update.  A
    spike-slab prior or categorical likelihood ignores the respective
    precision (fixed densities from the specs).
    """

    def __init__(self, spec: NetworkSpec, prior: PriorSpec, lik: LikelihoodSpec, data):
        from .vi import _prep_targets  # shared target shaping

        self.spec, self.prior, self.lik = spec, prior, lik
        X, y = _prep_targets(spec, lik, data)
        self.n_data = X.shape[0]
        self.template = _flat_template(spec)
        t = tp.Tape()
        x = t.leaf("x")
        yr = t.leaf("y")
        refs = {name: t.leaf(name) for name, _ in self.template.names()}
        tau_p = t.leaf("tau_prior")
        tau_n = t.leaf("tau_noise")
        logprior = t.constant(0.0)
        for name, _ in self.template.names():
            w = refs[name]
            if prior.kind == "gaussian":
                sigma0 = tp.exp(tp.log(tau_p) * -0.5)
                logprior = logprior + tp.reduce_sum(gaussian_logpdf(w, prior.mu0, sigma0))
            else:
                logprior = logprior + tp.reduce_sum(log_prior_terms(prior, w))
        head = build_forward_graph(t, spec, x, refs)
        if lik.kind == "gaussian":
            sigma_n = tp.exp(tp.log(tau_n) * -0.5)
            loglik = tp.reduce_sum(gaussian_logpdf(yr, head, sigma_n))
        else:
            lse = tp.logsumexp_rows(head)
            loglik = tp.reduce_sum(yr * (head - lse))
        t.output("U", (logprior + loglik) * -1.0)
        t.output("head", head)
        self.tape = t
        self._binds = {"x": X, "y": y}
        self.X, self.y = X, y
        self.grad_evals = 0

    def __call__(self, omega: np.ndarray, gamma: tuple[float, float]):
        """Returns (U, grad U, head values)."""
        params = self.template.from_vector(omega)
        binds = dict(self._binds)
        binds.update({name: a for name, a in params.names()})
        binds["tau_prior"] = np.asarray(float(gamma[0]))
        binds["tau_noise"] = np.asarray(float(gamma[1]))
        values, grads = tp.value_and_grad(self.tape, "U", binds)
        self.grad_evals += 1
        g = np.concatenate([grads[name].ravel() for name, _ in self.template.names()])
        return float(np.squeeze(values["U"])), g, values["head"]


def _flat_template(spec: NetworkSpec) -> ParameterSet:
    w, b = {}, {}
    for i, (ws, bs) in spec.param_shapes().items():
        w[i] = np.zeros(ws)
        if bs is not None:
            b[i] = np.zeros(bs)
    return ParameterSet(w, b)


def _default_gamma(prior: PriorSpec, lik: LikelihoodSpec) -> tuple[float, float]:
    tau_p = 1.0 / prior.sigma0**2 if prior.kind == "gaussian" else 1.0
    tau_n = 1.0 / lik.sigma_noise**2 if lik.kind == "gaussian" else 1.0
    return tau_p, tau_n


def potential_energy(prior: PriorSpec, lik: LikelihoodSpec, spec: NetworkSpec, data,
                     omega: np.ndarray, gamma: tuple[float, float] | None = None):
    """U = -ln[p(omega|tau_prior) p(D|omega, tau_noise)] and its gradient.

    gamma = None uses the precisions implied by the prior/likelihood specs.
    """
    pot = _Potential(spec, prior, lik, data)
    if gamma is None:
        gamma = _default_gamma(prior, lik)
    u, g, _ = pot(np.asarray(omega, dtype=np.float64), gamma)
    if not np.isfinite(u):
        raise NumericalError(f"non-finite potential at omega (first entries {np.ravel(omega)[:4]})")
    return u, g


def kinetic_energy(v: np.ndarray, mass) -> float:
    """K(v) = 1/2 v^T M^-1 v for a diagonal mass matrix."""
    v = np.asarray(v, dtype=np.float64)
    m = np.broadcast_to(np.asarray(mass, dtype=np.float64), v.shape)
    if np.any(m <= 0):
        raise ConfigError("mass diagonal must be positive")
    return float(0.5 * np.sum(v * v / m))


def sample_momentum(mass, size: int, rng: np.random.Generator) -> np.ndarray:
    """v ~ N(0, M) so the canonical marginal matches kinetic_energy."""
    m = np.broadcast_to(np.asarray(mass, dtype=np.float64), (size,))
    return rng.standard_normal(size) * np.sqrt(m)


def leapfrog(position: np.ndarray, momentum: np.ndarray, grad: np.ndarray,
             step_size: float, n_steps: int, potential, mass=1.0):
    """L leapfrog steps; potential(w) -> (U, grad U).

    Returns (position, momentum, U, grad, diverged).  The integrator is the
    standard half-kick / drift / half-kick scheme; a non-finite value at any
    point flags the trajectory as diverged (caller rejects).
    """
    m = np.broadcast_to(np.asarray(mass, dtype=np.float64), momentum.shape)
    w = np.array(position, dtype=np.float64)
    v = momentum - 0.5 * step_size * grad
    u = np.inf
    for l in range(n_steps):
        w = w + step_size * v / m
        u, grad = potential(w)
        if not (np.isfinite(u) and np.all(np.isfinite(grad))):
            return w, v, u, grad, True
        if l < n_steps - 1:
            v = v - step_size * grad
    v = v - 0.5 * step_size * grad
    return w, v, u, grad, False


def hmc_chain(potential, x0: np.ndarray, cfg: HMCConfig, rng: np.random.Generator | None = None):
    """HMC over a fixed potential; potential(w) -> (U, grad U).

    Returns (samples array (n_samples, d), ChainDiagnostics).  Used directly
    for known targets; hmc_sample wraps it for network posteriors with Gibbs
    precision updates in the loop.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    x = np.array(x0, dtype=np.float64)
    u, g = potential(x)
    evals = 1
    samples = np.empty((cfg.n_samples, x.size))
    denergies = np.empty(cfg.n_samples)
    accepts = 0
    total = cfg.n_samples + cfg.burn_in
    for it in range(total):
        v = sample_momentum(cfg.mass, x.size, rng)
        h_old = u + kinetic_energy(v, cfg.mass)
        w, vn, un, gn, diverged = leapfrog(x, v, g, cfg.step_size, cfg.n_leapfrog,
                                           potential, cfg.mass)
        evals += cfg.n_leapfrog
        dh = np.inf if diverged else (un + kinetic_energy(vn, cfg.mass)) - h_old
        if not diverged and np.log(rng.random()) < -dh:
            x, u, g = w, un, gn
            accepted = True
        else:
            accepted = False
        if it >= cfg.burn_in:
            k = it - cfg.burn_in
            samples[k] = x
            denergies[k] = dh
            accepts += accepted
    diag = ChainDiagnostics(
        acceptance_rate=accepts / cfg.n_samples,
        ess=np.array([effective_sample_size(samples[:, j]) for j in range(x.size)]),
        energy_errors=denergies,
        n_grad_evals=evals,
    )
    if diag.acceptance_rate < 0.01:
        diag.warnings.append(f"acceptance rate {diag.acceptance_rate:.4f} below 1%")
    return samples, diag


def hmc_sample(spec: NetworkSpec, prior: PriorSpec, lik: LikelihoodSpec, data,
               hyper: HyperPriorSpec | None, cfg: HMCConfig):
    """Posterior samples of network weights, with Gibbs steps for precisions.

    Returns (omega samples (n, P), gamma samples (n, 2), ChainDiagnostics).
    With hyper=None the precisions stay fixed at the spec-implied values; a
    HyperPriorSpec requires a Gaussian prior (and a Gaussian likelihood for
    the noise precision to be updated).
    """
    if hyper is not None and prior.kind != "gaussian":
        raise ConfigError("Gibbs precision updates need a gaussian prior")
    rng = np.random.default_rng(cfg.seed)
    pot = _Potential(spec, prior, lik, data)
    gamma = _default_gamma(prior, lik)
    omega = init_params(spec, rng).to_vector()
    u, g, head = pot(omega, gamma)
    n = cfg.n_samples
    omegas = np.empty((n, omega.size))
    gammas = np.empty((n, 2))
    denergies = np.empty(n)
    potentials = np.empty(n)
    kinetics = np.empty(n)
    accept_flags = np.zeros(n, dtype=bool)
    accepts = 0
    warn_burn_accepts = 0
    for it in range(n + cfg.burn_in):
        v = sample_momentum(cfg.mass, omega.size, rng)
        h_old = u + kinetic_energy(v, cfg.mass)

        def fixed_gamma_potential(w, _gamma=gamma):
            uu, gg, _ = pot(w, _gamma)
            return uu, gg

        w, vn, un, gn, diverged = leapfrog(omega, v, g, cfg.step_size, cfg.n_leapfrog,
                                           fixed_gamma_potential, cfg.mass)
        dh = np.inf if diverged else (un + kinetic_energy(vn, cfg.mass)) - h_old
        accepted = (not diverged) and np.log(rng.random()) < -dh
        if accepted:
            omega, u, g = w, un, gn
        if hyper is not None:
            _, _, head = pot(omega, gamma)
            if lik.kind == "gaussian":
                residuals = (pot.y - head).ravel()
            else:
                residuals = None
            gamma = gibbs_update_precisions(omega, residuals, hyper, rng, fixed=gamma)
            u, g, head = pot(omega, gamma)  # U depends on the new gamma
        if it < cfg.burn_in:
            warn_burn_accepts += accepted
        else:
            k = it - cfg.burn_in
            omegas[k] = omega
            gammas[k] = gamma
            denergies[k] = dh
            potentials[k] = u
            kinetics[k] = kinetic_energy(vn if accepted else v, cfg.mass)
            accept_flags[k] = accepted
            accepts += accepted
    diag = ChainDiagnostics(
        acceptance_rate=accepts / n,
        ess=np.array([effective_sample_size(omegas[:, j]) for j in range(omega.size)]),
        energy_errors=denergies,
        n_grad_evals=pot.grad_evals,
        potentials=potentials,
        kinetics=kinetics,
        accept_flags=accept_flags,
    )
    if cfg.burn_in > 0 and warn_burn_accepts / cfg.burn_in < 0.01:
        diag.warnings.append("acceptance rate below 1% during burn-in")
    return omegas, gammas, diag


def gibbs_update_precisions(omega: np.ndarray, residuals: np.ndarray | None,
                            hyper: HyperPriorSpec, rng: np.random.Generator,
                            fixed: tuple[float, float] = (1.0, 1.0)):
    """Conjugate Gamma draws for (tau_prior, tau_noise).

    tau_prior ~ Gamma(a + P/2, b + sum(omega^2)/2) and, when residuals are
    given, tau_noise ~ Gamma(a + N/2, b + sum(r^2)/2) (shape/rate form).
    residuals=None keeps the fixed noise precision (classification).
    """
    omega = np.asarray(omega, dtype=np.float64)
    shape_p = hyper.a_prior + omega.size / 2.0
    rate_p = hyper.b_prior + 0.5 * float(np.sum(omega**2))
    tau_p = rng.gamma(shape_p, 1.0 / rate_p)
    if residuals is None:
        return tau_p, fixed[1]
    residuals = np.asarray(residuals, dtype=np.float64)
    shape_n = hyper.a_noise + residuals.size / 2.0
    rate_n = hyper.b_noise + 0.5 * float(np.sum(residuals**2))
    return tau_p, rng.gamma(shape_n, 1.0 / rate_n)


def random_walk_mh(target, proposal_sigma: float, n: int, rng: np.random.Generator,
                   x0: np.ndarray, burn_in: int = 0):
    """Gaussian-proposal Metropolis chain over a log density `target`.

    Returns (samples (n, d), ChainDiagnostics); n_grad_evals counts density
    evaluations (the random-walk analogue of the HMC budget).
    """
    if proposal_sigma <= 0:
        raise ConfigError("proposal sigma must be positive")
    x = np.array(x0, dtype=np.float64)
    lp = float(target(x))
    d = x.size
    total = n + burn_in
    steps = rng.standard_normal((total, d)) * proposal_sigma
    logu = np.log(rng.random(total))
    samples = np.empty((n, d))
    accepts = 0
    for it in range(total):
        prop = x + steps[it]
        lp_prop = float(target(prop))
        if logu[it] < lp_prop - lp:
            x, lp = prop, lp_prop
            if it >= burn_in:
                accepts += 1
        if it >= burn_in:
            samples[it - burn_in] = x
    diag = ChainDiagnostics(
        acceptance_rate=accepts / n,
        ess=np.array([effective_sample_size(samples[:, j]) for j in range(d)]),
        energy_errors=np.zeros(0),
        n_grad_evals=total + 1,
    )
    return samples, diag


def effective_sample_size(x: np.ndarray) -> float:
    """ESS by Geyer's initial-positive-sequence truncation of autocorrelation.

    Returns NaN for a constant chain.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    x = x - x.mean()
    var = float(np.dot(x, x))
    if var == 0.0 or n < 4:
        return float("nan")
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real
    rho = acov / acov[0]
    # pair sums Gamma_k = rho_{2k} + rho_{2k+1}; keep while positive
    tau = -1.0
    k = 0
    while 2 * k + 1 < n:
        gamma_k = rho[2 * k] + rho[2 * k + 1]
        if gamma_k <= 0.0:
            break
        tau += 2.0 * gamma_k
        k += 1
    tau = max(tau, 1e-12)
    return float(n / tau)
