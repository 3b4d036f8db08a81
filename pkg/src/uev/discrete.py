"""Exact uncertain-evidence updates on finite joint tables.

A :class:`JointTable` stores ``p(y_k, x_j)`` with rows indexed by ``y`` and
columns by ``x``.  All updates return a probability vector over
``x_values``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from uev.errors import DegenerateEvidence, DimensionMismatch, InvalidTable, ZeroMarginal
from uev.model import BaseModel, categorical, value_index

MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class JointTable:
    x_values: tuple
    y_values: tuple
    probs: np.ndarray  # probs[k, j] = p(y_k, x_j)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        object.__setattr__(self, "x_values", tuple(self.x_values))
        object.__setattr__(self, "y_values", tuple(self.y_values))
        if probs.shape != (len(self.y_values), len(self.x_values)):
            raise InvalidTable(
                f"probs has shape {probs.shape}, expected "
                f"({len(self.y_values)}, {len(self.x_values)})")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidTable("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > MASS_TOL:
            raise InvalidTable(f"total mass is {probs.sum()!r}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_conditionals(cls, x_values, prior, y_values, likelihood) -> "JointTable":
        """Build from ``p(x)`` and ``likelihood[j, k] = p(y_k | x_j)``."""
        joint = np.asarray(likelihood, dtype=float).T * np.asarray(prior, dtype=float)
        return cls(x_values, y_values, joint / joint.sum())

    @property
    def p_y(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    @property
    def p_x(self) -> np.ndarray:
        return self.probs.sum(axis=0)

    def conditional_x_given_y(self) -> np.ndarray:
        """Rows ``p(x|y_k)``; rows with ``p(y_k) = 0`` are NaN."""
        p_y = self.p_y
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.probs / p_y[:, None]

    def to_dict(self) -> dict:
        return {"x_values": list(self.x_values), "y_values": list(self.y_values),
                "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "JointTable":
        try:
            return cls(doc["x_values"], doc["y_values"], doc["probs"])
        except KeyError as exc:
            raise InvalidTable(f"missing key {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "JointTable":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def running_example() -> JointTable:
    """Binary x and y: ``p(x=1) = 0.5``, ``p(y=1|x=1) = 0.8``, ``p(y=1|x=0) = 0.2``."""
    return JointTable.from_conditionals([0, 1], [0.5, 0.5], [0, 1],
                                        [[0.8, 0.2], [0.2, 0.8]])


def table_model(table: JointTable) -> BaseModel:
    """The table as a prior x likelihood model over its numeric values."""
    p_x = table.p_x
    with np.errstate(invalid="ignore", divide="ignore"):
        lik = (table.probs / p_x).T  # lik[j, k] = p(y_k | x_j)
    xs = np.asarray(table.x_values, dtype=float)

    def likelihood(x):
        x = np.asarray(x, dtype=float)
        return categorical(table.y_values, lik[value_index(xs, x)])

    return BaseModel(categorical(table.x_values, p_x), likelihood, family=table)


def _as_vector(v, size: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (size,):
        raise DimensionMismatch(f"{what} has shape {v.shape}, expected ({size},)")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise DegenerateEvidence(f"{what} must be finite and non-negative")
    return v


def _mix_conditionals(cond: np.ndarray, p_y: np.ndarray, q_y: np.ndarray) -> np.ndarray:
    if np.any((q_y > 0) & (p_y <= 0)):
        bad = np.flatnonzero((q_y > 0) & (p_y <= 0)).tolist()
        raise ZeroMarginal(f"q puts mass on y indices {bad} where p(y) = 0")
    used = q_y > 0
    return q_y[used] @ cond[used]


def jeffrey_update_table(joint: JointTable, q_y) -> np.ndarray:
    """``p(x|zeta) = sum_k q(y_k) p(x|y_k)``."""
    q_y = _as_vector(q_y, len(joint.y_values), "q_y")
    if abs(q_y.sum() - 1.0) > 1e-9:
        raise DegenerateEvidence(f"q_y sums to {q_y.sum()!r}, expected 1")
    return _mix_conditionals(joint.conditional_x_given_y(), joint.p_y, q_y)


def virtual_update_table(joint: JointTable, ratios) -> np.ndarray:
    """``p(x|zeta) = sum_k l_k p(y_k, x) / sum_j l_j p(y_j)``.

    Only ratios between the ``l_k`` matter.
    """
    lam = _as_vector(ratios, len(joint.y_values), "ratios")
    num = lam @ joint.probs
    den = lam @ joint.p_y
    if not den > 0:
        raise DegenerateEvidence("likelihood ratios annihilate all predictive mass")
    return num / den


def enumerate_extended_posterior(joint: JointTable, zeta_lik) -> np.ndarray:
    """Brute-force posterior over ``x`` in the extended model ``p(zeta|y) p(y, x)``.

    Enumerates every ``(x_j, y_k)`` cell with scalar arithmetic, marginalises
    ``y`` for the numerator and both variables for ``p(zeta)``.
    """
    zeta_lik = _as_vector(zeta_lik, len(joint.y_values), "zeta_lik")
    n_x, n_y = len(joint.x_values), len(joint.y_values)
    numer = [0.0] * n_x
    p_zeta = 0.0
    for j, k in product(range(n_x), range(n_y)):
        cell = float(zeta_lik[k]) * float(joint.probs[k, j])
        numer[j] += cell
        p_zeta += cell
    if not p_zeta > 0:
        raise DegenerateEvidence("p(zeta) = 0 under the extended model")
    return np.array([v / p_zeta for v in numer])


def distributional_update_table(joint: JointTable, q_y) -> np.ndarray:
    """Distributional evidence ``p(x) exp(sum_k q_k ln p(y_k|x))``, normalised over ``x``.

    ``x`` values where ``q`` covers a ``y_k`` with ``p(y_k|x) = 0`` get zero mass.
    """
    q_y = _as_vector(q_y, len(joint.y_values), "q_y")
    p_x = joint.p_x
    with np.errstate(divide="ignore", invalid="ignore"):
        log_lik = np.log(joint.probs / p_x)  # [k, j]
    used = q_y > 0
    pseudo = q_y[used] @ log_lik[used]
    with np.errstate(divide="ignore"):
        log_post = np.log(p_x) + pseudo
    log_post = np.where(np.isnan(log_post), -np.inf, log_post)
    if np.all(np.isneginf(log_post)):
        raise DegenerateEvidence("no x is compatible with the distributional evidence")
    w = np.exp(log_post - log_post.max())
    return w / w.sum()


def exact_update_table(joint: JointTable, y) -> np.ndarray:
    """``p(x | y)`` for an observed value ``y``."""
    try:
        k = joint.y_values.index(y)
    except ValueError:
        raise DimensionMismatch(f"{y!r} is not one of {joint.y_values}") from None
    if not joint.p_y[k] > 0:
        raise ZeroMarginal(f"p(y={y!r}) = 0")
    return joint.probs[k] / joint.p_y[k]


def sequential_jeffrey(joint: JointTable, qs: Sequence) -> np.ndarray:
    """Apply Jeffrey's rule repeatedly.

    Each update keeps ``p(x|y)`` fixed and replaces the ``y``-marginal
    wholesale, so earlier evidence is overwritten by later evidence.
    """
    if not qs:
        raise DegenerateEvidence("need at least one q")
    cond = joint.conditional_x_given_y()
    p_y = joint.p_y
    for q in qs:
        q = _as_vector(q, len(joint.y_values), "q")
        if abs(q.sum() - 1.0) > 1e-9:
            raise DegenerateEvidence(f"q sums to {q.sum()!r}, expected 1")
        # p(x|y, zeta_prev) = p(x|y): only the y-marginal changes.
        p_x = _mix_conditionals(cond, p_y, q)
    return p_x


def sequential_virtual(joint: JointTable, ratio_list: Sequence) -> np.ndarray:
    """Condition on several virtual observations ``zeta_1, zeta_2, ...`` in turn.

    Each step reweights the current joint over ``(y, x)`` by ``l_k`` and
    renormalises, which amounts to multiplying all ratio vectors together.
    """
    if not ratio_list:
        raise DegenerateEvidence("need at least one ratio vector")
    current = joint.probs
    for i, ratios in enumerate(ratio_list):
        lam = _as_vector(ratios, len(joint.y_values), "ratios")
        current = lam[:, None] * current
        total = current.sum()
        if not total > 0:
            raise DegenerateEvidence(
                f"evidence {i} leaves zero joint probability; the pieces of evidence "
                "are incompatible, which may indicate a misspecified model")
        current = current / total
    return current.sum(axis=0)


def ratios_from_q(joint: JointTable, q_y) -> np.ndarray:
    """Likelihood ratios ``l_k = q_k / p(y_k)`` reproducing Jeffrey's rule."""
    q_y = _as_vector(q_y, len(joint.y_values), "q_y")
    p_y = joint.p_y
    if np.any((q_y > 0) & (p_y <= 0)):
        raise ZeroMarginal("q puts mass where p(y) = 0")
    return np.divide(q_y, p_y, out=np.zeros_like(q_y), where=p_y > 0)
