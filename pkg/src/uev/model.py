"""Densities and the prior x likelihood base model.

Densities are vectorised: ``log_pdf`` accepts an array of points and
returns one log-density per point, and ``sample(rng, size)`` follows numpy's
``size`` convention.  Densities with array-valued parameters are *batched*:
``normal(mean=xs, sd=0.3)`` is one density per entry of ``xs``, and
``sample(rng)`` returns one draw for each.  This is how a likelihood
``p(y|x)`` is evaluated for many ``x`` at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy import special, stats

from uev.errors import DimensionMismatch, DomainError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Support:
    """Where a density may put mass: ``real``, ``positive`` or ``finite``."""

    kind: str = "real"
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("real", "positive", "finite"):
            raise DomainError(f"unknown support kind {self.kind!r}")

    def contains(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.kind == "real":
            return np.isfinite(points)
        if self.kind == "positive":
            return np.isfinite(points) & (points > 0)
        return np.isin(points, np.asarray(self.values, dtype=float))


REAL_LINE = Support("real")
POSITIVE_REALS = Support("positive")


def finite_set(values) -> Support:
    return Support("finite", tuple(float(v) for v in values))


@dataclass(frozen=True)
class Density:
    """A log-density paired with a sampler.

    The stored ``log_pdf`` is wrapped at construction so that it returns
    ``-inf`` for any point outside ``support`` (and for NaN results there).
    ``params`` optionally describes a recognised parametric family, which the
    analytic engines use to pick a closed form.
    """

    log_pdf: Callable[[np.ndarray], np.ndarray]
    sample: Callable[..., np.ndarray]
    support: Support = REAL_LINE
    dim: int = 1
    params: Mapping[str, Any] | None = None

    def __post_init__(self):
        raw = self.log_pdf
        support = self.support

        def masked(points):
            points = np.asarray(points, dtype=float)
            inside = support.contains(points)
            if self.dim > 1 and inside.ndim:
                inside = inside.all(axis=-1)
            with np.errstate(all="ignore"):
                out = np.asarray(raw(points), dtype=float)
            bad = np.isnan(out)
            if not inside.all():
                bad = bad | ~inside
            if bad.any():
                out = np.where(bad, -np.inf, out)
            return out

        object.__setattr__(self, "log_pdf", masked)

    @property
    def family(self) -> str | None:
        return None if self.params is None else self.params.get("family")


def normal(mean, sd) -> Density:
    """Normal density; ``mean`` and ``sd`` may be arrays (batched)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0):
        raise DomainError("normal sd must be strictly positive")

    log_norm = np.log(sd) + _LOG_SQRT_2PI
    inv_sd = 1.0 / sd

    def log_pdf(y):
        z = (y - mean) * inv_sd
        z *= z
        z *= -0.5
        z -= log_norm
        return z

    def sample(rng, size=None):
        return rng.normal(mean, sd, size=size)

    params = None
    if mean.ndim == 0 and sd.ndim == 0:
        params = {"family": "normal", "mean": float(mean), "sd": float(sd)}
    return Density(log_pdf, sample, REAL_LINE, 1, params)


def truncated_normal(mean: float, sd: float, lower: float = 0.0) -> Density:
    """Normal(mean, sd^2) restricted to ``(lower, inf)``.

    Only ``lower == 0`` maps onto a declared support; other bounds are
    allowed but declare the real line and mask below ``lower`` explicitly.
    """
    if sd <= 0:
        raise DomainError("truncated normal sd must be strictly positive")
    a = (lower - mean) / sd
    log_mass = special.log_ndtr(-a)
    dist = stats.truncnorm(a, np.inf, loc=mean, scale=sd)

    def log_pdf(x):
        z = (x - mean) / sd
        out = -0.5 * z * z - math.log(sd) - _LOG_SQRT_2PI - log_mass
        return np.where(x > lower, out, -np.inf)

    def sample(rng, size=None):
        return dist.rvs(size=size, random_state=rng)

    support = POSITIVE_REALS if lower == 0.0 else REAL_LINE
    params = {"family": "truncated-normal", "mean": mean, "sd": sd, "lower": lower}
    return Density(log_pdf, sample, support, 1, params)


def point_mass(value: float) -> Density:
    """Degenerate density (w.r.t. counting measure) at ``value``."""
    value = float(value)

    def log_pdf(y):
        return np.where(y == value, 0.0, -np.inf)

    def sample(rng, size=None):
        return np.full(() if size is None else size, value)

    return Density(log_pdf, sample, finite_set([value]), 1,
                   {"family": "point", "value": value})


def categorical(values, probs) -> Density:
    """Finite distribution over ``values``.

    ``probs`` may be 2-D, one row per batched density (shape ``(n, K)``);
    a batched density is evaluated and sampled row-wise.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != values.size:
        raise DimensionMismatch("probs and values differ in length")
    with np.errstate(divide="ignore"):
        logp = np.log(probs)

    def log_pdf(y):
        y = np.asarray(y, dtype=float)
        idx = value_index(values, y)
        hit = values[idx] == y
        if logp.ndim == 1:
            out = logp[idx]
        else:
            shape = np.broadcast_shapes(idx.shape, logp.shape[:-1])
            table = np.broadcast_to(logp, shape + logp.shape[-1:])
            out = np.take_along_axis(table, np.broadcast_to(idx, shape)[..., None], axis=-1)[..., 0]
        return np.where(hit, out, -np.inf)

    def sample(rng, size=None):
        if probs.ndim == 1:
            return values[rng.choice(values.size, size=size, p=probs)]
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(probs.shape[:-1] + (1,))
        idx = np.minimum((u > cdf).sum(axis=-1), values.size - 1)
        return values[idx]

    params = None
    if probs.ndim == 1:
        params = {"family": "categorical", "values": tuple(values), "probs": tuple(probs)}
    return Density(log_pdf, sample, finite_set(values), 1, params)


def value_index(values: np.ndarray, y) -> np.ndarray:
    """Position of each ``y`` in ``values`` (nearest slot when absent)."""
    order = np.argsort(values)
    pos = np.clip(np.searchsorted(values[order], y), 0, values.size - 1)
    return order[pos]


@dataclass(frozen=True)
class BaseModel:
    """Known joint ``p(y, x) = p(y|x) p(x)``.

    ``likelihood(x)`` returns the density of ``y`` given ``x``; it is called
    with arrays of ``x`` and must return a batched density in that case.
    ``family`` optionally tags a recognised closed-form family (a
    ``GaussianChain`` or a ``JointTable``) for the analytic engines.
    """

    prior: Density
    likelihood: Callable[[np.ndarray], Density]
    dimension_x: int = 1
    dimension_y: int = 1
    family: Any = field(default=None, compare=False)

    def __post_init__(self):
        if self.dimension_x < 1 or self.dimension_y < 1:
            raise DimensionMismatch("model dimensions must be positive")


def check_point(point, dim: int, what: str) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    if point.size != dim:
        raise DimensionMismatch(f"{what} has {point.size} entries, model expects {dim}")
    return point.reshape(()) if dim == 1 else point.reshape(dim)


def log_joint(model: BaseModel, x, y) -> float:
    """``log p(x) + log p(y|x)``, ``-inf`` off the support of either factor."""
    x = check_point(x, model.dimension_x, "x")
    y = check_point(y, model.dimension_y, "y")
    lp = float(model.prior.log_pdf(x))
    if lp == -np.inf:
        return -np.inf
    return lp + float(model.likelihood(x).log_pdf(y))


def sample_predictive(model: BaseModel, rng: np.random.Generator, n: int):
    """Ancestral draws ``x ~ p(x)``, ``y ~ p(y|x)``; returns ``(x, y)``."""
    x = model.prior.sample(rng, n)
    y = model.likelihood(x).sample(rng)
    return x, y
