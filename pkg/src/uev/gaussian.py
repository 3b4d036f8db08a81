"""Closed-form posteriors for the scalar conjugate Gaussian chain.

The chain is ``x ~ N(mu_x, sigma_x^2)``, ``y | x ~ N(x, sigma_yx^2)``.
Every update below returns a Gaussian over ``x``:

* exact conditioning on ``y``;
* Jeffrey's rule with ``q(y|zeta) = N(zeta, sigma_q^2)``;
* virtual evidence with ``q(zeta|y) = N(y, sigma_qzeta^2)``;
* distributional evidence with ``q(y) = N(mu_q, sigma_q^2)``, which reduces
  to exact conditioning on ``y = mu_q``.

The module also holds the ball-drop forward model ``t = sqrt(2 d / g)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from uev.errors import DomainError, InconsistentEvidence
from uev.model import BaseModel, normal, point_mass, truncated_normal

STANDARD_GRAVITY = 9.81


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"variance must be > 0, got {self.variance}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (x - self.mean) ** 2 / self.variance - 0.5 * math.log(
            2.0 * math.pi * self.variance)


@dataclass(frozen=True)
class GaussianChain:
    prior: GaussianParams
    obs_noise_sd: float

    def __post_init__(self):
        if not self.obs_noise_sd > 0:
            raise DomainError("obs_noise_sd must be > 0")

    @classmethod
    def from_sds(cls, mu_x: float, sigma_x: float, sigma_yx: float) -> "GaussianChain":
        return cls(GaussianParams(mu_x, sigma_x ** 2), sigma_yx)

    @property
    def obs_var(self) -> float:
        return self.obs_noise_sd ** 2

    @property
    def marginal_y_var(self) -> float:
        return self.prior.variance + self.obs_var


def chain_model(chain: GaussianChain) -> BaseModel:
    """The chain as a :class:`BaseModel`, tagged for the analytic engine."""
    sd = chain.obs_noise_sd
    return BaseModel(
        prior=normal(chain.prior.mean, chain.prior.sd),
        likelihood=lambda x: normal(x, sd),
        family=chain,
    )


def _posterior_var(chain: GaussianChain) -> float:
    return 1.0 / (1.0 / chain.prior.variance + 1.0 / chain.obs_var)


def exact_posterior(chain: GaussianChain, y: float) -> GaussianParams:
    s2 = _posterior_var(chain)
    mean = s2 * (chain.prior.mean / chain.prior.variance + y / chain.obs_var)
    return GaussianParams(mean, s2)


def jeffrey_posterior_gaussian(chain: GaussianChain, zeta_mean: float,
                               sigma_q: float) -> GaussianParams:
    """Mixture of exact posteriors ``p(x|y)`` over ``y ~ N(zeta_mean, sigma_q^2)``.

    ``E[x|y] = a + b y`` is linear in ``y`` with ``Var[x|y] = s^2`` constant,
    so the mixture is Gaussian with mean ``a + b zeta`` and variance
    ``s^2 + b^2 sigma_q^2``.
    """
    if not sigma_q > 0:
        raise DomainError("sigma_q must be > 0")
    s2 = _posterior_var(chain)
    a = s2 * chain.prior.mean / chain.prior.variance
    b = s2 / chain.obs_var
    return GaussianParams(a + b * zeta_mean, s2 + b * b * sigma_q ** 2)


def virtual_posterior_gaussian(chain: GaussianChain, zeta: float,
                               sigma_qzeta: float) -> GaussianParams:
    """Virtual evidence ``zeta ~ N(y, sigma_qzeta^2)``.

    Integrating out ``y`` leaves ``zeta | x ~ N(x, sigma_yx^2 + sigma_qzeta^2)``.
    """
    if not sigma_qzeta > 0:
        raise DomainError("sigma_qzeta must be > 0")
    noise = chain.obs_var + sigma_qzeta ** 2
    v = 1.0 / (1.0 / chain.prior.variance + 1.0 / noise)
    return GaussianParams(v * (chain.prior.mean / chain.prior.variance + zeta / noise), v)


def distributional_posterior_gaussian(chain: GaussianChain, mu_q: float,
                                      sigma_q: float) -> GaussianParams:
    # E_q[ln p(y|x)] differs from ln p(mu_q|x) by -sigma_q^2 / (2 sigma_yx^2),
    # a constant in x, and Z(x) = 1, so sigma_q drops out.
    if not sigma_q > 0:
        raise DomainError("sigma_q must be > 0")
    return exact_posterior(chain, mu_q)


@dataclass(frozen=True)
class ConsistencyWitness:
    """Explicit ``p(zeta|y) = N(mu_zeta_given_y, sigma_zeta_given_y_sq)``.

    ``mu_zeta_given_y`` is evaluated at the ``y`` passed to
    :func:`consistency_construction`; use :meth:`mean_given` for other ``y``.
    ``zeta`` is marginally ``N(mu_x, sigma_zeta_sq)``.
    """

    sigma_zeta_sq: float
    mu_zeta_given_y: float
    sigma_zeta_given_y_sq: float
    mu_x: float
    sigma_q: float

    def mean_given(self, y):
        s2z, sq2 = self.sigma_zeta_sq, self.sigma_q ** 2
        return (np.asarray(y) * s2z + self.mu_x * sq2) / (s2z + sq2)

    def log_pdf(self, zeta, y):
        """``log p(zeta|y)``."""
        z = np.asarray(zeta) - self.mean_given(y)
        v = self.sigma_zeta_given_y_sq
        return -0.5 * z * z / v - 0.5 * math.log(2.0 * math.pi * v)

    def as_tuple(self) -> tuple[float, float, float]:
        return self.sigma_zeta_sq, self.mu_zeta_given_y, self.sigma_zeta_given_y_sq


def consistency_construction(chain: GaussianChain, sigma_q: float,
                             y: float) -> ConsistencyWitness:
    """Build the Gaussian ``p(zeta|y)`` making Jeffrey's rule consistent.

    Raises :class:`InconsistentEvidence` when ``Var[y] < sigma_q^2``.  At
    ``sigma_zeta_sq == 0`` the witness is degenerate (``zeta`` is the constant
    ``mu_x``) and is also rejected because no density exists.
    """
    if not sigma_q > 0:
        raise DomainError("sigma_q must be > 0")
    s2z = chain.marginal_y_var - sigma_q ** 2
    if s2z < 0:
        raise InconsistentEvidence(
            f"Var[y] = {chain.marginal_y_var:.6g} < sigma_q^2 = {sigma_q ** 2:.6g} "
            f"(sigma_zeta^2 = {s2z:.6g}); Jeffrey's rule cannot be consistent")
    if s2z == 0:
        raise InconsistentEvidence("sigma_zeta^2 = 0: witness p(zeta|y) is degenerate")
    sq2 = sigma_q ** 2
    mu = (y * s2z + chain.prior.mean * sq2) / (s2z + sq2)
    return ConsistencyWitness(s2z, mu, s2z * sq2 / (s2z + sq2), chain.prior.mean, sigma_q)


def gaussian_kl(p: GaussianParams, q: GaussianParams) -> float:
    """KL(p || q) between two univariate Gaussians."""
    return (0.5 * math.log(q.variance / p.variance)
            + (p.variance + (p.mean - q.mean) ** 2) / (2.0 * q.variance) - 0.5)


@dataclass(frozen=True)
class VirtualGaussianLikelihood:
    """Callable ``y -> log N(zeta; y, sd^2)``, recognised by the analytic engine."""

    zeta: float
    sd: float

    def __call__(self, y):
        z = (self.zeta - np.asarray(y, dtype=float)) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2.0 * math.pi)


# -- ball drop ---------------------------------------------------------------

def ball_drop_mean_time(g, distance: float):
    """Fall time ``sqrt(2 d / g)`` from ``d = g t^2 / 2``."""
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0) or distance <= 0:
        raise DomainError("g and distance must be positive")
    t = np.sqrt(2.0 * distance / g)
    return float(t) if t.ndim == 0 else t


def ball_drop_model(prior_mean: float = STANDARD_GRAVITY, prior_sd: float = 2.0,
                    sigma_model: float = 0.005, distance: float = 1.0) -> BaseModel:
    """``g ~ N(prior_mean, prior_sd^2)`` truncated to ``g > 0``;
    ``t | g ~ N(sqrt(2 d / g), sigma_model^2)``.

    ``prior_sd == 0`` gives a point-mass prior at ``prior_mean``.
    """
    if distance <= 0 or sigma_model <= 0 or prior_sd < 0 or prior_mean <= 0:
        raise DomainError("distance, sigma_model, prior_mean must be > 0 and prior_sd >= 0")
    prior = point_mass(prior_mean) if prior_sd == 0 else truncated_normal(prior_mean, prior_sd)

    def likelihood(g):
        g = np.asarray(g, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.sqrt(2.0 * distance / np.where(g > 0, g, np.nan))
        # g <= 0 gives a NaN mean, which the density masks to -inf.
        return normal(mean, sigma_model)

    return BaseModel(prior, likelihood)
