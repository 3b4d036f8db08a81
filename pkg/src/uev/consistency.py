"""Necessary-condition diagnostics for the consistency of Jeffrey's rule.

For Jeffrey's rule to be consistent with a base model ``p(y, x)`` there must
be an extended joint whose conditional ``p(y|zeta)`` equals the supplied
``q(y|zeta)``.  The sufficient-and-necessary condition (existence of a
suitable ``p(zeta|y)``) is generally intractable and is not checked here.
What can be checked from samples:

* variances: ``Var[y_i] >= E[Var[y_i|zeta]]`` per coordinate, with equality
  iff ``E[y_i|zeta]`` is constant;
* determinants: ``det Cov[y] >= det E[Cov[y|zeta]]``;
* structure: a componentwise-factorised ``q`` needs each ``y_i`` tied to its
  own ``zeta_i`` and its own single ``x_i``.

``Var[y]`` is taken from the *base model's* predictive draws; ``E[Var[y|zeta]]``
from the draws of ``q(y|zeta)``.  Verdicts use a 3-standard-error band:
``pass`` above it, ``fail`` below it, ``inconclusive`` inside it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from uev.errors import TooFewDraws
from uev.model import BaseModel, Density, sample_predictive

Z_THRESHOLD = 3.0
BOOTSTRAP_REPLICATES = 200
SINGULAR_DET = 1e-12

CONDITION1_NOTE = (
    "not checked: the existence of p(zeta|y) with q(y|zeta) = p(zeta|y) p(y) / "
    "E_p(y)[p(zeta|y)] is intractable to assess in general; only the necessary "
    "variance, determinant and structure conditions are tested")


@dataclass(frozen=True, eq=False)
class PairedDraws:
    """``zeta`` draws, ``k`` draws of ``q(y|zeta)`` per ``zeta``, and base-model ``y`` draws.

    ``y_draws`` has shape ``(m, k)`` or ``(m, k, d)``.  ``model_y_draws`` has
    shape ``(N,)`` or ``(N, d)``; when omitted, ``Var[y]`` is estimated from
    the pooled ``q`` draws, which checks the law of total variance of the
    draws themselves rather than consistency with a model.
    """

    zeta_draws: np.ndarray
    y_draws: np.ndarray
    model_y_draws: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y_draws, dtype=float)
        if y.ndim == 2:
            y = y[..., None]
        if y.ndim != 3:
            raise TooFewDraws(f"y_draws must be (m, k) or (m, k, d), got shape {y.shape}")
        m, k, d = y.shape
        if m < 2 or k < 2:
            raise TooFewDraws(f"need m >= 2 outer and k >= 2 inner draws, got m={m}, k={k}")
        if len(self.zeta_draws) != m:
            raise TooFewDraws("zeta_draws and y_draws disagree on m")
        object.__setattr__(self, "y_draws", y)
        if self.model_y_draws is not None:
            my = np.asarray(self.model_y_draws, dtype=float).reshape(-1, d)
            if len(my) < 2:
                raise TooFewDraws("need at least 2 model draws")
            object.__setattr__(self, "model_y_draws", my)

    @property
    def m(self) -> int:
        return self.y_draws.shape[0]

    @property
    def k(self) -> int:
        return self.y_draws.shape[1]

    @property
    def dim(self) -> int:
        return self.y_draws.shape[2]


def paired_draws_given(zetas, q_given_zeta: Callable[[np.ndarray], Density], k: int,
                       seed, model_y_draws=None) -> PairedDraws:
    """Draw ``k`` values of ``y`` from ``q(y|zeta)`` for each given ``zeta``.

    ``q_given_zeta`` receives the array of zetas and returns a batched density.
    """
    zetas = np.asarray(zetas, dtype=float)
    if len(zetas) < 2 or k < 2:
        raise TooFewDraws(f"need m >= 2 and k >= 2, got m={len(zetas)}, k={k}")
    rng = np.random.default_rng(seed)
    ys = np.asarray(q_given_zeta(zetas).sample(rng, (k, len(zetas))), dtype=float).T
    return PairedDraws(zetas, ys, model_y_draws)


def sample_paired_draws(zeta_sampler: Density, q_given_zeta: Callable[[np.ndarray], Density],
                        m: int, k: int, seed: int,
                        model: BaseModel | None = None, n_model: int | None = None) -> PairedDraws:
    """Draw ``m`` zetas, ``k`` y's from ``q(y|zeta)`` for each, and optionally
    ``n_model`` (default ``m * k``) predictive draws from ``model``.
    """
    if m < 2 or k < 2:
        raise TooFewDraws(f"need m >= 2 and k >= 2, got m={m}, k={k}")
    zeta_seed, y_seed, model_seed = np.random.SeedSequence(seed).spawn(3)
    zetas = zeta_sampler.sample(np.random.default_rng(zeta_seed), m)
    model_ys = None
    if model is not None:
        _, model_ys = sample_predictive(model, np.random.default_rng(model_seed),
                                        n_model or m * k)
    return paired_draws_given(zetas, q_given_zeta, k, y_seed, model_ys)


@dataclass(frozen=True)
class ScalarCheck:
    dim: int
    var_y: float
    expected_cond_var: float
    var_cond_mean: float
    se_var_y: float
    se_expected_cond_var: float
    se_gap: float
    verdict: str
    equality: bool
    var_y_source: str


@dataclass(frozen=True)
class DetCheck:
    det_cov_y: float
    det_expected_cond_cov: float
    se_gap: float
    verdict: str
    singular: bool


@dataclass(frozen=True)
class StructureCheck:
    applicable: bool
    verdict: str
    note: str


def _verdict(gap: float, se: float) -> str:
    if gap > Z_THRESHOLD * se:
        return "pass"
    if gap < -Z_THRESHOLD * se:
        return "fail"
    return "inconclusive"


def total_variance_decomposition(draws: PairedDraws, dim: int = 0) -> dict:
    """Pooled ``Var[y]``, ``E[Var[y|zeta]]`` and ``Var[E[y|zeta]]`` of the ``q`` draws.

    All three use divisor ``m k`` (inner) / ``m`` (outer) so that the first
    equals the sum of the other two exactly.
    """
    y = draws.y_draws[:, :, dim]
    means = y.mean(axis=1)
    within = y.var(axis=1).mean()
    between = means.var()
    return {"var_y": float(y.var()), "expected_cond_var": float(within),
            "var_cond_mean": float(between)}


def check_total_variance_scalar(draws: PairedDraws, dim: int = 0) -> ScalarCheck:
    """Test ``Var[y_dim] >= E[Var[y_dim|zeta]]``.

    ``equality`` is set when the two sides agree within 3 standard errors,
    the case ``E[y|zeta]`` constant.
    """
    if not 0 <= dim < draws.dim:
        raise IndexError(f"dim {dim} out of range for {draws.dim}-dimensional draws")
    y = draws.y_draws[:, :, dim]
    m = draws.m
    cond_var = y.var(axis=1, ddof=1)
    e_cond_var = float(cond_var.mean())
    se_e = float(cond_var.std(ddof=1) / np.sqrt(m))
    # The spread of group means includes within-group noise E[var[y|zeta]] / k.
    var_cond_mean = float(y.mean(axis=1).var(ddof=1) - e_cond_var / draws.k)

    if draws.model_y_draws is not None:
        my = draws.model_y_draws[:, dim]
        sq = (my - my.mean()) ** 2
        var_y = float(my.var(ddof=1))
        se_v = float(sq.std(ddof=1) / np.sqrt(len(my)))
        se_gap = float(np.hypot(se_v, se_e))
        source = "model"
    else:
        # Pooled estimate; draws within a zeta group are dependent, so the
        # gap's standard error comes from per-group influence values.
        grand = y.mean()
        group_sq = ((y - grand) ** 2).mean(axis=1)
        var_y = float(((y - grand) ** 2).mean())
        se_v = float(group_sq.std(ddof=1) / np.sqrt(m))
        se_gap = float((group_sq - cond_var).std(ddof=1) / np.sqrt(m))
        source = "pooled"
    gap = var_y - e_cond_var
    verdict = _verdict(gap, se_gap)
    return ScalarCheck(dim, var_y, e_cond_var, var_cond_mean, se_v, se_e, se_gap,
                       verdict, abs(gap) <= Z_THRESHOLD * se_gap, source)


def analytic_variance_check(var_y: float, expected_cond_var: float,
                            rtol: float = 1e-12) -> tuple[str, bool]:
    """Exact version of the variance condition for known moments.

    Returns ``(verdict, equality)`` with verdict ``pass`` or ``fail``.
    """
    equality = abs(var_y - expected_cond_var) <= rtol * max(abs(var_y), 1.0)
    return ("pass" if equality or var_y > expected_cond_var else "fail"), equality


def _det(a: np.ndarray) -> np.ndarray:
    return np.linalg.det(a)


def check_total_covariance_det(draws: PairedDraws, seed: int = 0) -> DetCheck:
    """Test ``det Cov[y] >= det E[Cov[y|zeta]]`` with a bootstrap standard error.

    The bootstrap resamples outer ``zeta`` groups (and blocks of model draws)
    ``BOOTSTRAP_REPLICATES`` times.  In one dimension this is exactly
    :func:`check_total_variance_scalar`.
    """
    if draws.dim == 1:
        s = check_total_variance_scalar(draws, 0)
        singular = min(s.var_y, s.expected_cond_var) < SINGULAR_DET
        return DetCheck(s.var_y, s.expected_cond_var, s.se_gap, s.verdict, singular)

    y = draws.y_draws
    m, k, d = y.shape
    centered = y - y.mean(axis=1, keepdims=True)
    cond_cov = np.einsum("mki,mkj->mij", centered, centered) / (k - 1)  # (m, d, d)

    if draws.model_y_draws is not None:
        blocks_src = draws.model_y_draws
    else:
        blocks_src = y.reshape(m * k, d)
    n_blocks = min(m, len(blocks_src))
    usable = len(blocks_src) // n_blocks * n_blocks
    blocks = blocks_src[:usable].reshape(n_blocks, -1, d)
    block_sum = blocks.sum(axis=1)  # (B, d)
    block_outer = np.einsum("bni,bnj->bij", blocks, blocks)  # (B, d, d)
    per_block = blocks.shape[1]

    def cov_from(sums, outers, count):
        mean = sums / count
        return (outers - count * np.einsum("...i,...j->...ij", mean, mean)) / (count - 1)

    total = usable
    cov_y = cov_from(block_sum.sum(0), block_outer.sum(0), total)
    e_cond = cond_cov.mean(axis=0)
    det_y, det_c = float(_det(cov_y)), float(_det(e_cond))

    rng = np.random.default_rng(seed)
    gaps = np.empty(BOOTSTRAP_REPLICATES)
    for b in range(BOOTSTRAP_REPLICATES):
        wb = np.bincount(rng.integers(0, n_blocks, n_blocks), minlength=n_blocks)
        wm = np.bincount(rng.integers(0, m, m), minlength=m)
        cov_b = cov_from(wb @ block_sum, np.einsum("b,bij->ij", wb, block_outer), total)
        cond_b = np.einsum("m,mij->ij", wm, cond_cov) / m
        gaps[b] = _det(cov_b) - _det(cond_b)
    se = float(gaps.std(ddof=1))
    singular = min(det_y, det_c) < SINGULAR_DET
    return DetCheck(det_y, det_c, se, _verdict(det_y - det_c, se), singular)


def check_factorization_structure(model_links: Mapping[str, set],
                                  evidence_links: Mapping[str, set],
                                  evidence_factorized: bool = True) -> StructureCheck:
    """Check the graph structure required by a factorised ``q(y|zeta)``.

    ``model_links`` maps each observable component to the latent components
    it depends on; ``evidence_links`` maps it to the ``zeta`` components its
    factor of ``q`` depends on.  Each ``y_i`` must have exactly one latent
    parent and one ``zeta`` component, neither shared with another ``y_j``.
    """
    names = sorted(set(model_links) | set(evidence_links))
    if len(names) <= 1:
        return StructureCheck(False, "satisfied",
                              "one-dimensional y: the structural condition holds trivially")
    if not evidence_factorized:
        return StructureCheck(False, "not-applicable",
                              "q(y|zeta) does not factorise over the components of y")
    problems = []
    for what, links in (("latent", model_links), ("zeta", evidence_links)):
        owner: dict = {}
        for name in names:
            parents = set(links.get(name, ()))
            if len(parents) != 1:
                problems.append(f"{name} has {len(parents)} {what} parents {sorted(parents)}; "
                                "exactly one is required")
            for p in parents:
                if p in owner:
                    problems.append(f"{name} and {owner[p]} share {what} parent {p!r}")
                owner.setdefault(p, name)
    if problems:
        return StructureCheck(True, "fail", "; ".join(problems))
    return StructureCheck(True, "pass", "each y_i links to a unique zeta_i and a unique x_i")


@dataclass(frozen=True)
class ConsistencyReport:
    scalar_checks: list
    det_check: DetCheck
    structure_check: StructureCheck
    condition1_note: str = CONDITION1_NOTE
    extras: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        """``fail`` if any check fails, ``pass`` if all applicable checks pass."""
        verdicts = [c.verdict for c in self.scalar_checks] + [self.det_check.verdict]
        if self.structure_check.applicable:
            verdicts.append(self.structure_check.verdict)
        if "fail" in verdicts:
            return "fail"
        return "pass" if all(v == "pass" for v in verdicts) else "inconclusive"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "scalar_checks": [asdict(c) for c in self.scalar_checks],
            "det_check": asdict(self.det_check),
            "structure_check": asdict(self.structure_check),
            "condition1_note": self.condition1_note,
            **self.extras,
        }


def consistency_report(draws: PairedDraws, model_links=None, evidence_links=None,
                       evidence_factorized: bool = True, seed: int = 0,
                       extras: dict | None = None) -> ConsistencyReport:
    scalar = [check_total_variance_scalar(draws, i) for i in range(draws.dim)]
    if model_links is None:
        model_links = {f"y{i}": {f"x{i}"} for i in range(draws.dim)}
    if evidence_links is None:
        evidence_links = {f"y{i}": {f"zeta{i}"} for i in range(draws.dim)}
    return ConsistencyReport(
        scalar, check_total_covariance_det(draws, seed),
        check_factorization_structure(model_links, evidence_links, evidence_factorized),
        extras=dict(extras or {}))
