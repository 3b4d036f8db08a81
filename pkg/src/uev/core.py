"""Evidence values, posterior representations and the inference dispatcher.

:func:`dispatch_infer` is the single routing point: it looks at the type of
evidence and the configured engine and calls the matching update.

=========  ========================================  ===========================
evidence   update                                    sampling engine
=========  ========================================  ===========================
Exact      ``p(x | y)``                              :func:`condition_on`
TypeI      Jeffrey's rule ``E_q(y|zeta)[p(x|y)]``    :func:`jeffrey_mixture_infer`
TypeII     distributional ``p(x | y ~ D_q)``         :func:`distributional_infer`
TypeIII    virtual evidence ``p(x | zeta)``          :func:`virtual_infer`
=========  ========================================  ===========================
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Union

import numpy as np

from uev import discrete, gaussian
from uev.errors import DimensionMismatch, InvalidTable, UnsupportedCombination
from uev.model import BaseModel, Density, check_point, log_joint
from uev.montecarlo import (
    EngineConfig,
    WeightedSamples,
    condition_on,
    distributional_infer,
    jeffrey_mixture_infer,
    virtual_infer,
)

__all__ = [
    "Exact", "TypeI", "TypeII", "TypeIII", "Evidence",
    "AnalyticPosterior", "TablePosterior", "SamplePosterior", "Posterior",
    "dispatch_infer", "log_joint",
]


@dataclass(frozen=True)
class Exact:
    """An exactly observed value ``y``."""

    value: Any
    tag = "Exact"


@dataclass(frozen=True)
class TypeI:
    """``q(y|zeta)``: a distribution over ``y`` given external evidence.

    ``zeta`` is a label for reporting only; it is never evaluated.
    """

    q: Density
    zeta: Any = None
    tag = "TypeI"


@dataclass(frozen=True)
class TypeII:
    """``q(y)`` asserted as the distribution of ``y`` under the true latent.

    ``log_normalizer(x) = log Z(x)`` is optional; without it, sampling
    engines use the pseudo-likelihood (adjusted-prior) target.
    """

    q: Density
    log_normalizer: Callable | None = None
    tag = "TypeII"


@dataclass(frozen=True)
class TypeIII:
    """Virtual evidence: ``log_lik(y) = log q(zeta|y)`` for an observed ``zeta``."""

    log_lik: Callable
    zeta: Any = None
    tag = "TypeIII"


Evidence = Union[Exact, TypeI, TypeII, TypeIII]


@dataclass(frozen=True)
class AnalyticPosterior:
    params: gaussian.GaussianParams
    kind = "analytic"

    def mean(self) -> float:
        return self.params.mean

    def sd(self) -> float:
        return self.params.sd


@dataclass(frozen=True, eq=False)
class TablePosterior:
    x_values: tuple
    probs: np.ndarray
    kind = "table"

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (len(self.x_values),):
            raise InvalidTable("posterior table and x_values differ in length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidTable(f"posterior table must be a distribution, sums to {probs.sum()!r}")
        object.__setattr__(self, "x_values", tuple(self.x_values))
        object.__setattr__(self, "probs", probs)

    def mean(self) -> float:
        return float(self.probs @ np.asarray(self.x_values, dtype=float))

    def sd(self) -> float:
        xs = np.asarray(self.x_values, dtype=float)
        return float(np.sqrt(self.probs @ (xs - self.mean()) ** 2))


@dataclass(frozen=True, eq=False)
class SamplePosterior:
    samples: WeightedSamples
    kind = "samples"

    def mean(self):
        return self.samples.mean()

    def sd(self):
        return self.samples.sd()

    def standard_error(self):
        return self.samples.standard_error()

    @property
    def ess(self) -> float:
        return self.samples.ess


Posterior = Union[AnalyticPosterior, TablePosterior, SamplePosterior]


def _check_dims(model: BaseModel, evidence) -> None:
    if isinstance(evidence, Exact):
        check_point(evidence.value, model.dimension_y, "observed y")
    elif isinstance(evidence, (TypeI, TypeII)):
        if evidence.q.dim != model.dimension_y:
            raise DimensionMismatch(
                f"q is over {evidence.q.dim}-dimensional y, model has {model.dimension_y}")
    elif not isinstance(evidence, TypeIII):
        raise TypeError(f"not an evidence value: {evidence!r}")


def _analytic(model: BaseModel, evidence) -> AnalyticPosterior:
    chain = model.family
    if not isinstance(chain, gaussian.GaussianChain):
        raise UnsupportedCombination(
            "engine 'analytic-gaussian' needs a model built by gaussian.chain_model")
    if isinstance(evidence, Exact):
        return AnalyticPosterior(gaussian.exact_posterior(chain, float(evidence.value)))
    if isinstance(evidence, TypeIII):
        lik = evidence.log_lik
        if not isinstance(lik, gaussian.VirtualGaussianLikelihood):
            raise UnsupportedCombination(
                "analytic virtual evidence needs a gaussian.VirtualGaussianLikelihood")
        return AnalyticPosterior(gaussian.virtual_posterior_gaussian(chain, lik.zeta, lik.sd))
    q = evidence.q
    if q.family == "point":
        return AnalyticPosterior(gaussian.exact_posterior(chain, q.params["value"]))
    if q.family != "normal":
        raise UnsupportedCombination(
            f"analytic engine handles normal or point-mass q, got {q.family!r}")
    mean, sd = q.params["mean"], q.params["sd"]
    if isinstance(evidence, TypeI):
        return AnalyticPosterior(gaussian.jeffrey_posterior_gaussian(chain, mean, sd))
    return AnalyticPosterior(gaussian.distributional_posterior_gaussian(chain, mean, sd))


def _discrete(model: BaseModel, evidence) -> TablePosterior:
    table = model.family
    if not isinstance(table, discrete.JointTable):
        raise UnsupportedCombination(
            "engine 'discrete-exact' needs a model built by discrete.table_model")
    ys = np.asarray(table.y_values, dtype=float)
    if isinstance(evidence, Exact):
        probs = discrete.exact_update_table(table, evidence.value)
    elif isinstance(evidence, TypeIII):
        with np.errstate(over="ignore"):
            lam = np.exp(np.asarray(evidence.log_lik(ys), dtype=float))
        probs = discrete.virtual_update_table(table, lam)
    else:
        q_y = np.exp(evidence.q.log_pdf(ys))
        if isinstance(evidence, TypeI):
            probs = discrete.jeffrey_update_table(table, q_y)
        else:
            probs = discrete.distributional_update_table(table, q_y)
    return TablePosterior(table.x_values, probs / probs.sum())


def dispatch_infer(model: BaseModel, evidence: Evidence, engine: EngineConfig) -> Posterior:
    """Posterior over ``x`` given ``evidence`` using ``engine``.

    Deterministic given ``engine.seed``.  Raises
    :class:`~uev.errors.UnsupportedCombination` when an exact engine is
    asked for a model or evidence outside its family.
    """
    _check_dims(model, evidence)
    if engine.engine == "analytic-gaussian":
        return _analytic(model, evidence)
    if engine.engine == "discrete-exact":
        return _discrete(model, evidence)
    if isinstance(evidence, Exact):
        return SamplePosterior(condition_on(model, evidence.value, engine, engine.seed))
    if isinstance(evidence, TypeI):
        return SamplePosterior(jeffrey_mixture_infer(model, evidence.q, engine))
    if isinstance(evidence, TypeII):
        mode = "pseudo" if evidence.log_normalizer is None else "normalized"
        return SamplePosterior(distributional_infer(model, evidence.q, engine, mode,
                                                    evidence.log_normalizer))
    return SamplePosterior(virtual_infer(model, evidence.log_lik, engine))
