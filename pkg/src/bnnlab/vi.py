"""Variational inference for network weights.

Three families live here:

* a mean-field Gaussian posterior trained by stochastic gradients of the
  negative evidence lower bound, with the reparameterised weight draw
  w = mu + softplus(rho) * eps and the minibatch bound
  N/M * sum_batch ln p(y|x,w) + ln p(w) - ln q(w);
* Monte Carlo dropout: Bernoulli masks on dense-layer inputs, trained with
  scaled negative log likelihood plus weight decay, predicted by averaging
  stochastic passes;
* gradient estimators used to study the bound itself: the score-function
  (likelihood-ratio) estimator, the pathwise (reparameterised) estimator, a
  check of the Gaussian mean/variance gradient identities, and the local
  reparameterisation of dense pre-activations.

Training runs entirely on the tape graphs from `nets`/`prob`, so the losses
here are byte-for-byte the same densities the samplers integrate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tape as tp
from .errors import TrainingDiverged
from .nets import NetworkSpec, ParameterSet, build_forward_graph, init_params, softplus_inv
from .prob import LikelihoodSpec, PriorSpec, gaussian_logpdf, log_prior_terms

__all__ = [
    "VariationalPosterior",
    "DropoutPosterior",
    "TrainConfig",
    "sample_weights",
    "elbo_estimate",
    "bbb_train",
    "score_function_grad",
    "pathwise_grad",
    "gaussian_identity_check",
    "IdentityCheckReport",
    "dropout_forward",
    "mc_dropout_train",
    "mc_dropout_predict",
    "local_reparam_forward",
]

TRACE_COLUMNS = ("epoch", "elbo", "nll", "kl", "wall_ms")


@dataclass
class VariationalPosterior:
    """Mean-field Gaussian over all network parameters.

    sigma = softplus(rho) keeps scales positive under unconstrained updates.
    log_sigma_noise is the optional point-estimate observation noise
    (regression only; None means the likelihood's fixed value is used).
    """

    mu: ParameterSet
    rho: ParameterSet
    log_sigma_noise: float | None = None

    @property
    def n_params(self) -> int:
        return self.mu.n_params

    def sigma(self) -> ParameterSet:
        return self.rho.map(lambda r: np.log1p(np.exp(-np.abs(r))) + np.maximum(r, 0.0))

    @staticmethod
    def init(spec: NetworkSpec, rng: np.random.Generator, mu_scale: float = 0.1,
             sigma0: float = 0.05) -> "VariationalPosterior":
        mu = init_params(spec, rng).map(lambda a: rng.normal(0.0, mu_scale, size=a.shape))
        rho = mu.map(lambda a: np.full(a.shape, softplus_inv(sigma0)))
        return VariationalPosterior(mu, rho)


def sample_weights(vp: VariationalPosterior, rng: np.random.Generator) -> ParameterSet:
    """One reparameterised draw w = mu + softplus(rho) * eps."""
    sig = vp.sigma()
    w = {i: vp.mu.weights[i] + sig.weights[i] * rng.standard_normal(a.shape)
         for i, a in vp.mu.weights.items()}
    b = {i: vp.mu.biases[i] + sig.biases[i] * rng.standard_normal(a.shape)
         for i, a in vp.mu.biases.items()}
    return ParameterSet(w, b)


@dataclass
class DropoutPosterior:
    """Trained mean weights plus per-dense-layer dropout rates."""

    params: ParameterSet
    rates: dict[int, float]
    weight_decay: float = 0.0


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 200
    batch_size: int = 0          # 0 = full batch
    mc_samples: int = 1
    seed: int = 0
    optimizer: str = "sgd"       # "sgd" | "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.epochs < 0 or self.mc_samples < 1:
            raise ValueError("learning_rate and mc_samples must be positive, epochs >= 0")


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * grad


class _Adam:
    def __init__(self, lr, beta1, beta2, eps, dim):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_optimizer(cfg: TrainConfig, dim: int):
    if cfg.optimizer == "adam":
        return _Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, dim)
    return _Sgd(cfg.learning_rate)


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[np.asarray(labels, dtype=int)]


# ---------------------------------------------------------------------------
# the ELBO graph

class _ElboGraph:
    """Static cost graph for one (spec, prior, lik) triple.

    Leaves: x, y (targets; one-hot for classification), scale (likelihood
    multiplier N/M), and per parameter tensor the triplet mu_*, rho_*, eps_*.
    Output "cost" is ln q(w) - ln p(w) - scale * ln p(y|x,w); minimising it
    maximises the minibatch bound.
    """

    def __init__(self, spec: NetworkSpec, prior: PriorSpec, lik: LikelihoodSpec,
                 learn_noise: bool = False):
        self.spec, self.prior, self.lik = spec, prior, lik
        self.learn_noise = learn_noise and lik.kind == "gaussian"
        t = tp.Tape()
        x = t.leaf("x")
        y = t.leaf("y")
        scale = t.leaf("scale")
        self.param_names = [name for name, _ in _template_params(spec).names()]
        w_refs, logq, logprior = {}, t.constant(0.0), t.constant(0.0)
        for name in self.param_names:
            mu = t.leaf(f"mu_{name}")
            rho = t.leaf(f"rho_{name}")
            eps = t.leaf(f"eps_{name}")
            sig = tp.softplus(rho)
            w = mu + sig * eps
            w_refs[name] = w
            logq = logq + tp.reduce_sum(gaussian_logpdf(w, mu, sig))
            logprior = logprior + tp.reduce_sum(log_prior_terms(prior, w))
        head = build_forward_graph(t, spec, x, w_refs)
        if lik.kind == "gaussian":
            sn = tp.exp(t.leaf("log_sigma_noise")) if self.learn_noise else lik.sigma_noise
            loglik = tp.reduce_sum(gaussian_logpdf(y, head, sn))
        else:
            lse = tp.logsumexp_rows(head)
            loglik = tp.reduce_sum(y * (head - lse))
        cost = logq - logprior - scale * loglik
        t.output("cost", cost)
        t.output("logq", logq)
        t.output("logprior", logprior)
        t.output("loglik", loglik)
        self.tape = t

    def estimate(self, vp: VariationalPosterior, X, y, scale, rng, n_samples):
        """Average cost components and flat theta-gradient over MC draws.

        Returns (components dict, grad vector ordered [mu | rho | noise?]).
        """
        binds = {"x": X, "y": y, "scale": np.asarray(float(scale))}
        for name, a in vp.mu.names():
            binds[f"mu_{name}"] = a
        for name, a in vp.rho.names():
            binds[f"rho_{name}"] = a
        if self.learn_noise:
            binds["log_sigma_noise"] = np.asarray(float(vp.log_sigma_noise))
        comps = {"cost": 0.0, "logq": 0.0, "logprior": 0.0, "loglik": 0.0}
        gsum = None
        for _ in range(n_samples):
            for name, a in vp.mu.names():
                binds[f"eps_{name}"] = rng.standard_normal(a.shape)
            values, grads = tp.value_and_grad(self.tape, "cost", binds)
            for k in comps:
                comps[k] += float(np.squeeze(values[k]))
            flat = [grads[f"mu_{n}"].ravel() for n in self.param_names]
            flat += [grads[f"rho_{n}"].ravel() for n in self.param_names]
            if self.learn_noise:
                flat.append(np.atleast_1d(grads["log_sigma_noise"]).ravel())
            g = np.concatenate(flat)
            gsum = g if gsum is None else gsum + g
        for k in comps:
            comps[k] /= n_samples
        return comps, gsum / n_samples


def _template_params(spec: NetworkSpec) -> ParameterSet:
    w, b = {}, {}
    for i, (ws, bs) in spec.param_shapes().items():
        w[i] = np.zeros(ws)
        if bs is not None:
            b[i] = np.zeros(bs)
    return ParameterSet(w, b)


def _theta_split(vp: VariationalPosterior, theta: np.ndarray) -> VariationalPosterior:
    n = vp.n_params
    mu = vp.mu.from_vector(theta[:n])
    rho = vp.rho.from_vector(theta[n : 2 * n])
    noise = float(theta[2 * n]) if vp.log_sigma_noise is not None else None
    return VariationalPosterior(mu, rho, noise)


def _theta_join(vp: VariationalPosterior) -> np.ndarray:
    parts = [vp.mu.to_vector(), vp.rho.to_vector()]
    if vp.log_sigma_noise is not None:
        parts.append(np.array([vp.log_sigma_noise]))
    return np.concatenate(parts)


def elbo_estimate(vp: VariationalPosterior, prior: PriorSpec, lik: LikelihoodSpec,
                  spec: NetworkSpec, batch, N_data: int, n_samples: int,
                  rng: np.random.Generator):
    """Monte Carlo estimate of the minibatch evidence lower bound.

    Estimates (N_data/M) * sum_batch E_q[ln p(y|x,w)] + E_q[ln p(w) - ln q(w)]
    with n_samples reparameterised draws.  Returns (value, gradients) where
    gradients is {"mu": ParameterSet, "rho": ParameterSet} of the bound's
    gradient (ascent direction), plus key "log_sigma_noise" when that is
    being learned.
    """
    X, y = _prep_targets(spec, lik, batch)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    scale = float(N_data) / X.shape[0]
    graph = _ElboGraph(spec, prior, lik, learn_noise=vp.log_sigma_noise is not None)
    comps, grad = graph.estimate(vp, X, y, scale, rng, n_samples)
    n = vp.n_params
    grads = {"mu": vp.mu.from_vector(-grad[:n]), "rho": vp.rho.from_vector(-grad[n : 2 * n])}
    if vp.log_sigma_noise is not None:
        grads["log_sigma_noise"] = float(-grad[2 * n])
    return -comps["cost"], grads


def _prep_targets(spec: NetworkSpec, lik: LikelihoodSpec, data):
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    if lik.kind == "categorical":
        y = _one_hot(y, spec.output_shape[0])
    else:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
    return X, y


def bbb_train(spec: NetworkSpec, prior: PriorSpec, lik: LikelihoodSpec, data,
              cfg: TrainConfig, learn_noise: bool = False,
              init: VariationalPosterior | None = None):
    """Train a mean-field Gaussian posterior by stochastic gradient descent.

    Returns (posterior, trace); trace rows follow TRACE_COLUMNS.  Raises
    TrainingDiverged (partial trace attached) on a non-finite objective.
    """
    rng = np.random.default_rng(cfg.seed)
    X, y = _prep_targets(spec, lik, data)
    n = X.shape[0]
    batch = cfg.batch_size if 0 < cfg.batch_size < n else n
    vp = init if init is not None else VariationalPosterior.init(spec, rng)
    if learn_noise and lik.kind == "gaussian" and vp.log_sigma_noise is None:
        vp = replace(vp, log_sigma_noise=float(np.log(lik.sigma_noise)))
    graph = _ElboGraph(spec, prior, lik, learn_noise=vp.log_sigma_noise is not None)
    theta = _theta_join(vp)
    opt = _make_optimizer(cfg, theta.size)
    trace = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        acc = np.zeros(3)  # elbo, nll, kl sums over batches
        nb = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            scale = n / idx.size
            comps, grad = graph.estimate(_theta_split(vp, theta), X[idx], y[idx],
                                         scale, rng, cfg.mc_samples)
            if not np.isfinite(comps["cost"]) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(
                    f"non-finite objective at epoch {epoch}", trace=np.array(trace))
            theta = opt.step(theta, grad)
            acc += (-comps["cost"],
                    -scale * comps["loglik"],
                    comps["logq"] - comps["logprior"])
            nb += 1
        wall_ms = (time.perf_counter() - t0) * 1e3
        trace.append((epoch, acc[0] / nb, acc[1] / nb, acc[2] / nb, wall_ms))
    return _theta_split(vp, theta), np.array(trace)


# ---------------------------------------------------------------------------
# gradient estimators

def score_function_grad(f, q_params, n_samples: int, rng: np.random.Generator):
    """Likelihood-ratio estimate of (d/dmu, d/dsigma) E_{N(mu, diag sigma^2)}[f].

    Uses only evaluations of f: grad = mean_l f(w_l) * d ln q(w_l) / d theta.
    """
    mu, sigma = (np.asarray(a, dtype=np.float64) for a in q_params)
    gmu = np.zeros_like(mu)
    gsig = np.zeros_like(sigma)
    for _ in range(n_samples):
        w = mu + sigma * rng.standard_normal(mu.shape)
        fw = float(f(w))
        z = (w - mu) / sigma
        gmu += fw * z / sigma
        gsig += fw * (z * z - 1.0) / sigma
    return gmu / n_samples, gsig / n_samples


def pathwise_grad(f_grad, q_params, n_samples: int, rng: np.random.Generator):
    """Reparameterised estimate of the same gradients, using df/dw.

    w = mu + sigma * eps gives d/dmu = E[f'(w)] and d/dsigma = E[f'(w) * eps].
    """
    mu, sigma = (np.asarray(a, dtype=np.float64) for a in q_params)
    gmu = np.zeros_like(mu)
    gsig = np.zeros_like(sigma)
    for _ in range(n_samples):
        eps = rng.standard_normal(mu.shape)
        g = np.asarray(f_grad(mu + sigma * eps), dtype=np.float64)
        gmu += g
        gsig += g * eps
    return gmu / n_samples, gsig / n_samples


@dataclass
class IdentityCheckReport:
    """Standardised discrepancies for the Gaussian gradient identities."""

    mean_identity_z: float       # max_i |FD(dE[f]/dmu_i) - E[df/dw_i]| / SE
    var_identity_z: float        # max_i |FD(dE[f]/dSigma_ii) - E[d2f/dw_i2]/2| / SE
    n_samples: int


def gaussian_identity_check(f, q_params, n_samples: int, rng: np.random.Generator,
                            fd_step: float = 1e-4) -> IdentityCheckReport:
    """Two-sided Monte Carlo check of the Gaussian gradient identities.

    Identity 1: d/dmu E[f] = E[grad f];  identity 2: d/dSigma_ii E[f] =
    (1/2) E[d^2 f/dw_i^2].  Each side is estimated with its own draws (the
    left by common-random-number finite differences in the distribution
    parameters, the right by derivatives of f along sampled paths), and the
    report holds the largest |difference| / (combined standard error).
    """
    mu, sigma = (np.asarray(a, dtype=np.float64) for a in q_params)
    d = mu.size
    r1, r2 = rng.spawn(2)
    eps_a = r1.standard_normal((n_samples, d))
    eps_b = r2.standard_normal((n_samples, d))

    # side A, identity 1: CRN finite difference in mu_i
    a1 = np.empty((n_samples, d))
    for i in range(d):
        h = fd_step * (1.0 + abs(mu[i]))
        e = np.zeros(d)
        e[i] = h
        for l in range(n_samples):
            w = mu + sigma * eps_a[l]
            a1[l, i] = (f(w + e) - f(w - e)) / (2 * h)

    # side B, identity 1: pathwise gradient by central differences of f
    b1 = np.empty((n_samples, d))
    for l in range(n_samples):
        w = mu + sigma * eps_b[l]
        for i in range(d):
            h = 1e-5 * (1.0 + abs(w[i]))
            e = np.zeros(d)
            e[i] = h
            b1[l, i] = (f(w + e) - f(w - e)) / (2 * h)

    z1 = _max_z(a1, b1)

    # side A, identity 2: CRN finite difference in the variance Sigma_ii
    a2 = np.empty((n_samples, d))
    for i in range(d):
        v = sigma[i] ** 2
        h = fd_step * (1.0 + v)
        sp = sigma.copy()
        sm = sigma.copy()
        sp[i] = np.sqrt(v + h)
        sm[i] = np.sqrt(max(v - h, 1e-12))
        dv = sp[i] ** 2 - sm[i] ** 2
        for l in range(n_samples):
            a2[l, i] = (f(mu + sp * eps_a[l]) - f(mu + sm * eps_a[l])) / dv

    # side B, identity 2: half the diagonal Hessian along independent paths
    b2 = np.empty((n_samples, d))
    for l in range(n_samples):
        w = mu + sigma * eps_b[l]
        fw = f(w)
        for i in range(d):
            h = 1e-4 * (1.0 + abs(w[i]))
            e = np.zeros(d)
            e[i] = h
            b2[l, i] = 0.5 * (f(w + e) - 2 * fw + f(w - e)) / h**2

    z2 = _max_z(a2, b2)
    return IdentityCheckReport(z1, z2, n_samples)


def _max_z(a: np.ndarray, b: np.ndarray) -> float:
    n = a.shape[0]
    se = np.sqrt(a.var(axis=0, ddof=1) / n + b.var(axis=0, ddof=1) / n)
    diff = np.abs(a.mean(axis=0) - b.mean(axis=0))
    # floor keeps the ratio sane when both sides are numerically exact
    se = np.maximum(se, 1e-12 * (1.0 + diff))
    return float(np.max(diff / se))


def local_reparam_forward(x: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                          rng: np.random.Generator):
    """Sample dense pre-activations directly: phi ~ N(x mu, (x*x)(sigma^2)).

    Equivalent in law to phi = x (mu + sigma*eps) but with per-activation
    noise, which decorrelates examples in a minibatch and lowers gradient
    variance.  Returns (phi, gamma, delta).
    """
    x = np.asarray(x, dtype=np.float64)
    gamma = x @ mu
    delta = np.sqrt((x * x) @ (sigma**2))
    phi = gamma + delta * rng.standard_normal(gamma.shape)
    return phi, gamma, delta


# ---------------------------------------------------------------------------
# Monte Carlo dropout

def resolve_dropout_rates(spec: NetworkSpec, default_rate: float) -> dict[int, float]:
    """Dropout rate per dense layer.

    Explicit dropout layers in the spec set the rate of the next dense layer.
    If the spec has none, hidden dense layers (all but the first parametric
    layer) get default_rate.
    """
    rates: dict[int, float] = {}
    explicit = any(l.kind == "dropout" for l in spec.layers)
    pending = None
    first_param = min(spec.param_layers) if spec.param_layers else None
    for i, l in enumerate(spec.layers):
        if l.kind == "dropout":
            pending = l.rate
        elif l.kind == "dense":
            if explicit:
                rates[i] = pending if pending is not None else 0.0
            else:
                rates[i] = 0.0 if i == first_param else default_rate
            pending = None
        elif l.kind == "conv2d":
            pending = None
    return rates


def _sample_masks(spec: NetworkSpec, rates: dict[int, float], rng: np.random.Generator):
    """One Bernoulli keep-mask per dropped dense layer, shared across the batch."""
    masks = {}
    for i, p in rates.items():
        if p > 0.0:
            fan_in = spec.layers[i].fan_in
            masks[i] = (rng.random((1, fan_in)) >= p).astype(np.float64)
    return masks


def dropout_forward(spec: NetworkSpec, dp: DropoutPosterior, X: np.ndarray,
                    rng: np.random.Generator | None = None, stochastic: bool = True,
                    masks: dict[int, np.ndarray] | None = None) -> np.ndarray:
    """Forward pass with dropout on dense-layer inputs.

    Stochastic mode multiplies each dropped layer's input by a fresh 0/1 mask
    (one mask per call, shared across the batch).  Deterministic mode scales
    those inputs by (1 - p) instead.
    """
    from .nets import activation as act_fn

    X = np.asarray(X, dtype=np.float64)
    if stochastic and masks is None:
        if rng is None:
            raise ValueError("stochastic dropout_forward needs rng or masks")
        masks = _sample_masks(spec, dp.rates, rng)
    h = X
    for i, l in enumerate(spec.layers):
        if l.kind == "dense":
            p = dp.rates.get(i, 0.0)
            if p > 0.0:
                h = h * masks[i] if stochastic else h * (1.0 - p)
            h = h @ dp.params.weights[i]
            if l.bias:
                h = h + dp.params.biases[i]
        elif l.kind == "conv2d":
            h = tp.conv2d(h, dp.params.weights[i], stride=l.stride)
            if l.bias:
                h = h + dp.params.biases[i][None, :, None, None]
        elif l.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        elif l.kind == "activation":
            h = act_fn(l.act, h, l.alpha)
    return h


class _DropoutLossGraph:
    """scale * NLL(batch) + weight_decay * sum ||W||^2, masks as leaves."""

    def __init__(self, spec: NetworkSpec, lik: LikelihoodSpec, rates: dict[int, float],
                 weight_decay: float):
        self.spec, self.lik, self.rates = spec, lik, rates
        self.mask_layers = sorted(i for i, p in rates.items() if p > 0.0)
        t = tp.Tape()
        x = t.leaf("x")
        y = t.leaf("y")
        scale = t.leaf("scale")
        self.param_names = [name for name, _ in _template_params(spec).names()]
        refs = {name: t.leaf(name) for name in self.param_names}
        mask_refs = {i: t.leaf(f"mask{i}") for i in self.mask_layers}
        head = build_forward_graph(t, spec, x, refs, mask_refs=mask_refs)
        if lik.kind == "gaussian":
            nll = -tp.reduce_sum(gaussian_logpdf(y, head, lik.sigma_noise))
        else:
            lse = tp.logsumexp_rows(head)
            nll = -tp.reduce_sum(y * (head - lse))
        reg = t.constant(0.0)
        for name in self.param_names:
            if name.startswith("W"):
                reg = reg + tp.reduce_sum(refs[name] * refs[name])
        loss = scale * nll + weight_decay * reg
        t.output("loss", loss)
        t.output("nll", nll)
        self.tape = t

    def step_grad(self, params: ParameterSet, X, y, scale, rng):
        binds = {"x": X, "y": y, "scale": np.asarray(float(scale))}
        binds.update({name: a for name, a in params.names()})
        for i, m in _sample_masks(self.spec, self.rates, rng).items():
            binds[f"mask{i}"] = m
        values, grads = tp.value_and_grad(self.tape, "loss", binds)
        flat = np.concatenate([grads[n].ravel() for n in self.param_names])
        return float(np.squeeze(values["loss"])), float(np.squeeze(values["nll"])), flat


def mc_dropout_train(spec: NetworkSpec, data, cfg: TrainConfig, rate: float = 0.1,
                     weight_decay: float = 1e-4, lik: LikelihoodSpec | None = None):
    """Point-estimate training with dropout noise.

    Minimises (N/M) * batch NLL + weight_decay * sum ||W||^2 with a fresh
    mask per step.  The observation model defaults to the task: categorical
    for classification, unit-variance Gaussian (i.e. half squared error) for
    regression.  Returns (DropoutPosterior, trace); trace rows are
    (step, loss, nll, wall_ms).
    """
    if lik is None:
        lik = LikelihoodSpec.categorical() if spec.task == "classification" else LikelihoodSpec.gaussian(1.0)
    rng = np.random.default_rng(cfg.seed)
    X, y = _prep_targets(spec, lik, data)
    n = X.shape[0]
    batch = cfg.batch_size if 0 < cfg.batch_size < n else n
    rates = resolve_dropout_rates(spec, rate)
    params = init_params(spec, rng)
    graph = _DropoutLossGraph(spec, lik, rates, weight_decay)
    theta = params.to_vector()
    opt = _make_optimizer(cfg, theta.size)
    trace = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            t0 = time.perf_counter()
            idx = order[start : start + batch]
            loss, nll, grad = graph.step_grad(params.from_vector(theta), X[idx], y[idx],
                                              n / idx.size, rng)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite loss at step {step}", trace=np.array(trace))
            theta = opt.step(theta, grad)
            trace.append((step, loss, nll, (time.perf_counter() - t0) * 1e3))
            step += 1
    dp = DropoutPosterior(params.from_vector(theta), rates, weight_decay)
    return dp, np.array(trace)


def mc_dropout_predict(spec: NetworkSpec, dp: DropoutPosterior, X: np.ndarray,
                       n_samples: int, sigma_noise: float, rng: np.random.Generator,
                       beta: float = 0.95):
    """Average n_samples stochastic passes into a predictive summary.

    sigma_noise enters the regression variance only (classification draws are
    already probabilities).
    """
    from .predictive import summarize

    if n_samples < 2:
        raise ValueError("need at least 2 stochastic passes for a variance")
    draws = np.stack([dropout_forward(spec, dp, X, rng, stochastic=True)
                      for _ in range(n_samples)])
    if spec.task == "classification":
        # dropout_forward already applied the softmax head
        return summarize(draws, beta=beta, task="classification")
    return summarize(draws, beta=beta, task="regression", sigma_noise=sigma_noise)
