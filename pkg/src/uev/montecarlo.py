"""Sampling engines for the continuous uncertain-evidence updates.

Seeding: every public entry point takes one master seed and derives child
streams with :class:`numpy.random.SeedSequence` spawning, so runs are
bit-reproducible and components can be executed in any order.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.special import logsumexp

from uev.errors import (
    AllWeightsZero,
    BudgetTooSmall,
    ConfigError,
    InferenceError,
    InitOffSupport,
    NormalizerUnavailable,
    UnsupportedCombination,
)
from uev.model import BaseModel, Density

log = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]

ENGINES = ("snis", "mh", "analytic-gaussian", "discrete-exact")
SAMPLING_ENGINES = ("snis", "mh")
LOW_ESS_FRACTION = 0.01
_CHUNK_CELLS = 4_000_000


def _seq(seed: Seed) -> np.random.SeedSequence:
    # Fresh copy: SeedSequence.spawn mutates its parent.
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    return np.random.SeedSequence(int(seed))


def spawn_seeds(seed: Seed, n: int) -> list[np.random.SeedSequence]:
    """``n`` independent child seeds of ``seed`` (same children on every call)."""
    return _seq(seed).spawn(n)


def _seed_label(seed: Seed) -> int:
    return int(seed.entropy) if isinstance(seed, np.random.SeedSequence) else int(seed)


@dataclass(frozen=True)
class EngineConfig:
    engine: str = "snis"
    n: int = 10_000
    n_e: int = 256
    mh_steps: int = 20_000
    mh_step_scale: float | tuple = 0.5
    mh_burn_in: int = 2_000
    seed: int = 0
    mh_init: float | tuple | None = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.n < 1:
            raise BudgetTooSmall(f"n must be >= 1, got {self.n}")
        if self.n_e < 1:
            raise BudgetTooSmall(f"n_e must be >= 1, got {self.n_e}")
        if self.mh_steps < 1 or self.mh_burn_in < 0:
            raise BudgetTooSmall("mh_steps must be >= 1 and mh_burn_in >= 0")
        if np.any(np.asarray(self.mh_step_scale, dtype=float) <= 0):
            raise ConfigError("mh_step_scale must be > 0")

    def replace(self, **changes) -> "EngineConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class WeightedSamples:
    """Draws with (unnormalised) log importance weights.

    ``groups`` labels draws that are not independent of each other (one label
    per Jeffrey mixture component, or per batch of an MCMC chain); standard
    errors are then computed cluster-robustly.  ``inner_mean_var`` is an
    extra variance of the mean estimate contributed by an inner Monte Carlo
    expectation (distributional evidence).
    """

    points: np.ndarray
    log_weights: np.ndarray
    seed: int
    groups: np.ndarray | None = None
    inner_mean_var: float = 0.0

    def __post_init__(self):
        if len(self.points) != len(self.log_weights):
            raise ValueError("points and log_weights differ in length")
        if self.groups is not None and len(self.groups) != len(self.points):
            raise ValueError("groups and points differ in length")
        lw = np.asarray(self.log_weights, dtype=float)
        if not np.any(np.isfinite(lw)):
            raise AllWeightsZero("every log-weight is -inf (proposal misses the target)")
        object.__setattr__(self, "log_weights", np.where(np.isnan(lw), -np.inf, lw))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))

    @property
    def n(self) -> int:
        return len(self.points)

    @cached_property
    def normalized_log_weights(self) -> np.ndarray:
        return self.log_weights - logsumexp(self.log_weights)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.exp(self.normalized_log_weights)

    @cached_property
    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))

    @property
    def low_ess(self) -> bool:
        return self.ess < LOW_ESS_FRACTION * self.n

    def mean(self):
        return np.average(self.points, axis=0, weights=self.weights)

    def var(self):
        resid = self.points - self.mean()
        return np.average(resid * resid, axis=0, weights=self.weights)

    def sd(self):
        return np.sqrt(self.var())

    def standard_error(self):
        """Standard error of :meth:`mean`.

        Delta-method estimator for self-normalised importance sampling,
        ``sqrt(sum_c (sum_{i in c} w_i (x_i - mean))^2)``, summed over clusters
        ``c`` (each draw is its own cluster when ``groups`` is None), plus
        ``inner_mean_var``.
        """
        w = self.weights
        resid = (self.points - self.mean()) * (w if self.points.ndim == 1 else w[:, None])
        if self.groups is not None:
            _, inverse = np.unique(self.groups, return_inverse=True)
            resid = np.stack([np.bincount(inverse, weights=col) for col in
                              np.atleast_2d(resid.T)], axis=-1)
            if self.points.ndim == 1:
                resid = resid[:, 0]
        var = np.sum(resid * resid, axis=0) + self.inner_mean_var
        if self.low_ess:
            log.warning("ESS %.1f is below %.0f%% of n=%d; standard error unreliable",
                        self.ess, 100 * LOW_ESS_FRACTION, self.n)
        return np.sqrt(var)


def snis(target_log_pdf: Callable, proposal: Density, n: int, seed: Seed) -> WeightedSamples:
    """Self-normalised importance sampling of an unnormalised target.

    ``target_log_pdf`` is called once with the whole array of ``n`` draws.
    """
    if n < 1:
        raise BudgetTooSmall("n must be >= 1")
    rng = np.random.default_rng(_seq(seed))
    x = np.asarray(proposal.sample(rng, n), dtype=float)
    with np.errstate(invalid="ignore"):
        lw = np.asarray(target_log_pdf(x), dtype=float) - proposal.log_pdf(x)
    return WeightedSamples(x, lw, _seed_label(seed))


@dataclass(frozen=True, eq=False)
class MHChain:
    draws: np.ndarray
    acceptance_rate: float
    seed: int

    def as_samples(self) -> WeightedSamples:
        """Equal-weight samples grouped into ~sqrt(n) contiguous batches (batch means)."""
        n = len(self.draws)
        n_batches = max(1, int(math.sqrt(n)))
        groups = np.arange(n) * n_batches // n
        return WeightedSamples(self.draws, np.zeros(n), self.seed, groups)


def mh(target_log_pdf: Callable, init, config: EngineConfig,
       seed: Seed | None = None) -> MHChain:
    """Random-walk Metropolis-Hastings with a Gaussian proposal.

    ``target_log_pdf`` is called with one point at a time.  ``mh_step_scale``
    may be a scalar or one scale per coordinate.  Returns the ``mh_steps``
    draws after ``mh_burn_in`` discarded steps.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(_seq(seed))
    x = np.array(init, dtype=float)
    lp = float(target_log_pdf(x))
    if not np.isfinite(lp):
        raise InitOffSupport(f"target log density at init {init!r} is {lp}")
    total = config.mh_burn_in + config.mh_steps
    scale = np.asarray(config.mh_step_scale, dtype=float)
    steps = rng.standard_normal((total,) + x.shape) * scale
    log_u = np.log(rng.random(total))
    draws = np.empty((config.mh_steps,) + x.shape)
    accepted = 0
    for i in range(total):
        proposal = x + steps[i]
        lp_new = float(target_log_pdf(proposal))
        if log_u[i] < lp_new - lp:
            x, lp = proposal, lp_new
            if i >= config.mh_burn_in:
                accepted += 1
        if i >= config.mh_burn_in:
            draws[i - config.mh_burn_in] = x
    rate = accepted / config.mh_steps
    if rate < 0.01:
        log.warning("MH acceptance rate %.4f is below 1%%; step scale %s is too large",
                    rate, config.mh_step_scale)
    return MHChain(draws, rate, _seed_label(seed))


def _require_sampling(config: EngineConfig) -> None:
    if config.engine not in SAMPLING_ENGINES:
        raise UnsupportedCombination(
            f"engine {config.engine!r} is not a sampling engine {SAMPLING_ENGINES}")


def _init_point(model: BaseModel, config: EngineConfig, rng) -> np.ndarray:
    if config.mh_init is not None:
        return np.asarray(config.mh_init, dtype=float)
    return np.asarray(model.prior.sample(rng), dtype=float)


def condition_on(model: BaseModel, y, config: EngineConfig, seed: Seed) -> WeightedSamples:
    """Posterior ``p(x|y)`` for an exact observation ``y`` with the configured engine.

    SNIS proposes from the prior, so the log-weight is ``log p(y|x)``.
    """
    _require_sampling(config)
    y = np.asarray(y, dtype=float)
    if config.engine == "snis":
        rng = np.random.default_rng(_seq(seed))
        x = np.asarray(model.prior.sample(rng, config.n), dtype=float)
        lw = model.likelihood(x).log_pdf(y)
        return WeightedSamples(x, lw, _seed_label(seed))

    init_seed, chain_seed = spawn_seeds(seed, 2)

    def target(x):
        lp = model.prior.log_pdf(x)
        return lp if lp == -np.inf else lp + model.likelihood(x).log_pdf(y)

    init = _init_point(model, config, np.random.default_rng(init_seed))
    return mh(target, init, config, chain_seed).as_samples()


def jeffrey_mixture_infer(model: BaseModel, q_sampler: Density,
                          config: EngineConfig) -> WeightedSamples:
    """Jeffrey's rule ``p(x|zeta) = E_q(y|zeta)[p(x|y)]`` by nested sampling.

    Draws ``y_1..y_{n_e}`` from ``q`` (first child seed), runs one
    exact-conditioning engine per draw with budget ``n`` (child seed
    ``j + 1``), and pools the draws giving each component total mass
    ``1 / n_e``.  Cost is ``n_e`` engine runs.
    """
    _require_sampling(config)
    seeds = spawn_seeds(config.seed, config.n_e + 1)
    ys = np.asarray(q_sampler.sample(np.random.default_rng(seeds[0]), config.n_e), dtype=float)
    points, log_weights, groups = [], [], []
    for j, y in enumerate(ys):
        try:
            part = condition_on(model, y, config, seeds[j + 1])
        except InferenceError as exc:
            raise type(exc)(f"mixture component {j} (y={y!r}): {exc}") from exc
        points.append(part.points)
        log_weights.append(part.normalized_log_weights - math.log(config.n_e))
        groups.append(np.full(part.n, j))
    return WeightedSamples(np.concatenate(points), np.concatenate(log_weights),
                           config.seed, np.concatenate(groups))


def virtual_infer(model: BaseModel, zeta_log_lik: Callable,
                  config: EngineConfig) -> WeightedSamples:
    """Virtual evidence: sample the extended joint ``q(zeta|y) p(y|x) p(x)``.

    SNIS proposes ``(x, y)`` ancestrally from the model and weights by
    ``q(zeta|y)``; MH walks on the concatenated ``(x, y)`` state.  Only the
    ``x`` coordinates are returned.
    """
    _require_sampling(config)
    if config.engine == "snis":
        rng = np.random.default_rng(_seq(config.seed))
        x = np.asarray(model.prior.sample(rng, config.n), dtype=float)
        y = np.asarray(model.likelihood(x).sample(rng), dtype=float)
        with np.errstate(invalid="ignore"):
            lw = np.asarray(zeta_log_lik(y), dtype=float)
        try:
            return WeightedSamples(x, lw, config.seed)
        except AllWeightsZero:
            raise AllWeightsZero("virtual likelihood is zero on every predictive draw; "
                                 "evidence is incompatible with the model") from None

    dx = model.dimension_x
    init_seed, chain_seed = spawn_seeds(config.seed, 2)
    rng = np.random.default_rng(init_seed)
    x0 = _init_point(model, config, rng)
    y0 = np.asarray(model.likelihood(x0).sample(rng), dtype=float)

    def target(state):
        x, y = (state[0], state[1:]) if dx == 1 else (state[:dx], state[dx:])
        if model.dimension_y == 1:
            y = y[0]
        lp = model.prior.log_pdf(x)
        if lp == -np.inf:
            return lp
        return lp + model.likelihood(x).log_pdf(y) + zeta_log_lik(y)

    chain = mh(target, np.concatenate([np.ravel(x0), np.ravel(y0)]), config, chain_seed)
    draws = chain.draws[:, 0] if dx == 1 else chain.draws[:, :dx]
    return MHChain(draws, chain.acceptance_rate, chain.seed).as_samples()


def _loglik_block(model: BaseModel, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Matrix ``L[i, j] = log p(y_j | x_i)``."""
    if model.dimension_x == 1 and model.dimension_y == 1:
        return model.likelihood(xs[:, None]).log_pdf(ys[None, :])
    lik = model.likelihood(xs)
    return np.stack([lik.log_pdf(y) for y in ys], axis=1)


def _inner_draws(q_sampler: Density, n_e: int, seed: Seed) -> np.ndarray:
    if n_e < 1:
        raise BudgetTooSmall(f"n_e must be >= 1, got {n_e}")
    return np.asarray(q_sampler.sample(np.random.default_rng(_seq(seed)), n_e), dtype=float)


def distributional_pseudo_loglik(model: BaseModel, q_sampler: Density, x, n_e: int,
                                 seed: Seed):
    """Monte Carlo ``E_q[ln p(y|x)]`` with ``n_e`` draws fixed by ``seed``.

    The same ``y`` draws are used for every ``x``, so for a fixed seed the
    estimate is a deterministic function of ``x``.  ``x`` may be a single
    point or an array of points (first axis).  A ``y`` draw outside the
    likelihood's support yields ``-inf`` for that ``x``.
    """
    ys = _inner_draws(q_sampler, n_e, seed)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (model.dimension_x > 1 and x.ndim == 1)
    xs = x.reshape(1, *x.shape) if single else x
    out = np.concatenate([_loglik_block(model, xs[s], ys).mean(axis=1)
                          for s in _chunks(len(xs), len(ys))])
    if np.any(np.isneginf(out)):
        log.warning("pseudo-likelihood is -inf: some q draws fall off the likelihood support")
    return float(out[0]) if single else out


def _chunks(n: int, n_e: int):
    step = max(1, _CHUNK_CELLS // max(n_e, 1))
    return [slice(i, min(i + step, n)) for i in range(0, n, step)]


def _pseudo_posterior_stream(model, xs, ys, log_adjust, weight_by_pseudo=True):
    """One pass over ``xs`` computing pseudo-likelihood log-weights and the
    inner-expectation variance of the weighted mean.

    With ``weight_by_pseudo=False`` the draws are weighted by
    ``exp(log_adjust)`` only (already distributed as the target, e.g. MCMC).

    The weighted mean depends on the ``y`` draws through
    ``l_i = mean_j L_ij``; linearising, draw ``j`` shifts the mean by
    ``c_j / n_e`` with ``c_j = sum_i w_i (x_i - mean) L_ij``, giving variance
    ``Var_j(c_j) / n_e``.  The sums are streamed with a running log-sum-exp
    reference so ``L`` is never held in full.
    """
    n_e = len(ys)
    ref = None
    s0 = 0.0
    s1 = 0.0
    a = np.zeros(n_e)
    b = np.zeros(n_e)
    x_center = float(np.mean(xs)) if xs.ndim == 1 else 0.0
    lw_all = np.empty(len(xs))
    for s in _chunks(len(xs), n_e):
        block = _loglik_block(model, xs[s], ys)
        lw_all[s] = block.mean(axis=1) + log_adjust[s]
        lw = lw_all[s] if weight_by_pseudo else log_adjust[s]
        top = np.max(lw)
        if not np.isfinite(top):
            continue
        if ref is None or top > ref:
            if ref is not None:
                shrink = math.exp(ref - top)
                s0, s1, a, b = s0 * shrink, s1 * shrink, a * shrink, b * shrink
            ref = top
        e = np.exp(lw - ref)
        live = e > 0
        e, xc, block = e[live], xs[s][live] - x_center, block[live]
        s0 += e.sum()
        if xs.ndim == 1:
            s1 += e @ xc
            a += (e * xc) @ block
            b += e @ block
    if ref is None or xs.ndim != 1 or n_e < 2:
        return lw_all, 0.0
    mean_c = s1 / s0
    c = (a - mean_c * b) / s0
    return lw_all, float(np.var(c, ddof=1) / n_e)


def distributional_infer(model: BaseModel, q_sampler: Density, config: EngineConfig,
                         mode: str = "pseudo",
                         log_normalizer: Callable | None = None) -> WeightedSamples:
    """Distributional evidence ``p(x | y ~ D_q)``.

    ``mode="pseudo"`` targets ``exp(E_q[ln p(y|x)]) p(x)``, the implied
    joint with adjusted prior ``p(x) Z(x)``.  ``mode="normalized"`` divides
    by ``Z(x)`` and needs ``log_normalizer(x) = log Z(x)``.  The inner
    expectation uses ``n_e`` common draws from the first child seed; the
    engine uses the second.
    """
    _require_sampling(config)
    if mode not in ("pseudo", "normalized"):
        raise ConfigError(f"mode must be 'pseudo' or 'normalized', got {mode!r}")
    if mode == "normalized" and log_normalizer is None:
        raise NormalizerUnavailable("mode='normalized' needs a log Z(x) evaluator")
    y_seed, engine_seed = spawn_seeds(config.seed, 2)
    ys = _inner_draws(q_sampler, config.n_e, y_seed)

    def adjust(x):
        if mode == "pseudo":
            return np.zeros(len(x))
        return -np.broadcast_to(np.asarray(log_normalizer(x), dtype=float), (len(x),))

    if config.engine == "snis":
        rng = np.random.default_rng(engine_seed)
        xs = np.asarray(model.prior.sample(rng, config.n), dtype=float)
        lw, inner = _pseudo_posterior_stream(model, xs, ys, adjust(xs))
        if np.any(np.isneginf(lw) & np.isfinite(model.prior.log_pdf(xs))):
            log.warning("pseudo-likelihood is -inf for some prior draws")
        return WeightedSamples(xs, lw, config.seed, inner_mean_var=inner)

    init_seed, chain_seed = spawn_seeds(engine_seed, 2)

    def target(x):
        lp = model.prior.log_pdf(x)
        if lp == -np.inf:
            return lp
        xb = np.asarray(x, dtype=float).reshape(1, *np.shape(x))
        return lp + _loglik_block(model, xb, ys).mean() + adjust(xb)[0]

    init = _init_point(model, config, np.random.default_rng(init_seed))
    chain = mh(target, init, config, chain_seed)
    samples = chain.as_samples()
    _, inner = _pseudo_posterior_stream(model, samples.points, ys, np.zeros(samples.n),
                                        weight_by_pseudo=False)
    return WeightedSamples(samples.points, samples.log_weights, config.seed,
                           samples.groups, inner)
