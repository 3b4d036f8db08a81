import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from uev.errors import DomainError, InconsistentEvidence
from uev.gaussian import (
    ConsistencyWitness,
    GaussianChain,
    GaussianParams,
    VirtualGaussianLikelihood,
    ball_drop_mean_time,
    ball_drop_model,
    chain_model,
    consistency_construction,
    distributional_posterior_gaussian,
    exact_posterior,
    gaussian_kl,
    jeffrey_posterior_gaussian,
    virtual_posterior_gaussian,
)
from uev.model import log_joint

LEFT = dict(mu_x=1.0, sigma_x=1.0, sigma_yx=0.3, sigma_q=1.0, zeta=2.0)
RIGHT = dict(mu_x=0.0, sigma_x=5.0, sigma_yx=0.5, sigma_q=0.5, zeta=2.0)
COARSE = 2e-2


def _chain(cfg):
    return GaussianChain.from_sds(cfg["mu_x"], cfg["sigma_x"], cfg["sigma_yx"])


def _y_box(cfg):
    """Posterior of y given zeta in the virtual-evidence extension (integration box only)."""
    vy = cfg["sigma_x"] ** 2 + cfg["sigma_yx"] ** 2
    post = 1.0 / (1.0 / vy + 1.0 / cfg["sigma_q"] ** 2)
    return post * (cfg["mu_x"] / vy + cfg["zeta"] / cfg["sigma_q"] ** 2), math.sqrt(post)


class TestClosedFormsAgainstQuadrature:
    """Coarse-grid versions of the oracle comparison; the acceptance suite uses the fine grid."""

    @pytest.mark.parametrize("cfg", [LEFT, RIGHT], ids=["left", "right"])
    def test_jeffrey(self, cfg):
        g = jeffrey_posterior_gaussian(_chain(cfg), cfg["zeta"], cfg["sigma_q"])
        mean, sd = oracles.jeffrey_oracle(cfg["mu_x"], cfg["sigma_x"], cfg["sigma_yx"],
                                          cfg["zeta"], cfg["sigma_q"], (g.mean, g.sd), COARSE)
        assert (g.mean, g.sd) == pytest.approx((mean, sd), abs=1e-7)

    @pytest.mark.parametrize("cfg", [LEFT, RIGHT], ids=["left", "right"])
    def test_virtual(self, cfg):
        g = virtual_posterior_gaussian(_chain(cfg), cfg["zeta"], cfg["sigma_q"])
        mean, sd = oracles.virtual_oracle(cfg["mu_x"], cfg["sigma_x"], cfg["sigma_yx"],
                                          cfg["zeta"], cfg["sigma_q"], (g.mean, g.sd),
                                          _y_box(cfg), COARSE)
        assert (g.mean, g.sd) == pytest.approx((mean, sd), abs=1e-7)

    @pytest.mark.parametrize("cfg", [LEFT, RIGHT], ids=["left", "right"])
    def test_distributional(self, cfg):
        g = distributional_posterior_gaussian(_chain(cfg), cfg["zeta"], cfg["sigma_q"])
        mean, sd = oracles.distributional_oracle(cfg["mu_x"], cfg["sigma_x"], cfg["sigma_yx"],
                                                 cfg["zeta"], cfg["sigma_q"], (g.mean, g.sd),
                                                 COARSE)
        assert (g.mean, g.sd) == pytest.approx((mean, sd), abs=1e-7)


class TestFrozenValues:
    def test_left_panel(self):
        chain = _chain(LEFT)
        e = exact_posterior(chain, 2.0)
        assert (e.mean, e.variance) == pytest.approx((1.91743, 0.08257), abs=1e-5)
        j = jeffrey_posterior_gaussian(chain, 2.0, 1.0)
        assert (j.mean, j.sd) == pytest.approx((1.9174, 0.9614), abs=1e-4)
        assert j.variance == pytest.approx(0.92425, abs=1e-5)
        v = virtual_posterior_gaussian(chain, 2.0, 1.0)
        assert (v.mean, v.variance) == pytest.approx((1.47847, 0.52153), abs=1e-5)
        d = distributional_posterior_gaussian(chain, 2.0, 1.0)
        assert (d.mean, d.sd) == pytest.approx((1.9174, 0.2873), abs=1e-4)

    def test_right_panel(self):
        chain = _chain(RIGHT)
        j = jeffrey_posterior_gaussian(chain, 2.0, 0.5)
        v = virtual_posterior_gaussian(chain, 2.0, 0.5)
        d = distributional_posterior_gaussian(chain, 2.0, 0.5)
        assert (j.mean, j.variance) == pytest.approx((1.98020, 0.49260), abs=1e-5)
        assert (v.mean, v.variance) == pytest.approx((1.96078, 0.49020), abs=1e-5)
        assert (d.mean, d.variance) == pytest.approx((1.98020, 0.24752), abs=1e-5)


class TestProperties:
    @settings(max_examples=100, deadline=None)
    @given(mu=st.floats(-5, 5), sx=st.floats(0.1, 5), syx=st.floats(0.1, 5),
           mu_q=st.floats(-5, 5), sq=st.floats(0.01, 10))
    def test_distributional_ignores_sigma_q(self, mu, sx, syx, mu_q, sq):
        chain = GaussianChain.from_sds(mu, sx, syx)
        assert distributional_posterior_gaussian(chain, mu_q, sq) == exact_posterior(chain, mu_q)

    @settings(max_examples=100, deadline=None)
    @given(mu=st.floats(-5, 5), sx=st.floats(0.1, 5), syx=st.floats(0.1, 5),
           zeta=st.floats(-5, 5), sq=st.floats(0.01, 10))
    def test_jeffrey_wider_than_exact(self, mu, sx, syx, zeta, sq):
        chain = GaussianChain.from_sds(mu, sx, syx)
        j = jeffrey_posterior_gaussian(chain, zeta, sq)
        e = exact_posterior(chain, zeta)
        assert j.mean == pytest.approx(e.mean, rel=1e-9, abs=1e-9)
        assert j.variance > e.variance

    def test_virtual_tends_to_exact_as_noise_vanishes(self):
        chain = _chain(LEFT)
        v = virtual_posterior_gaussian(chain, 2.0, 1e-6)
        e = exact_posterior(chain, 2.0)
        assert v.mean == pytest.approx(e.mean, abs=1e-9)
        assert v.variance == pytest.approx(e.variance, rel=1e-9)

    def test_kl_zero_for_identical_and_positive_otherwise(self):
        p = GaussianParams(0.3, 2.0)
        assert gaussian_kl(p, p) == 0.0
        assert gaussian_kl(p, GaussianParams(0.0, 1.0)) > 0

    def test_nonpositive_widths_rejected(self):
        with pytest.raises(DomainError):
            jeffrey_posterior_gaussian(_chain(LEFT), 2.0, 0.0)
        with pytest.raises(DomainError):
            GaussianParams(0.0, -1.0)

    def test_virtual_likelihood_callable(self):
        lik = VirtualGaussianLikelihood(2.0, 1.0)
        assert lik(2.0) == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_chain_model_matches_closed_forms(self):
        model = chain_model(_chain(LEFT))
        expected = GaussianParams(1.0, 1.0).log_pdf(1.0) + GaussianParams(1.0, 0.09).log_pdf(2.0)
        assert log_joint(model, 1.0, 2.0) == pytest.approx(expected)


class TestConsistencyConstruction:
    def test_left_panel_witness(self):
        w = consistency_construction(_chain(LEFT), 1.0, 2.0)
        assert w.sigma_zeta_sq == pytest.approx(0.09)
        assert w.mu_zeta_given_y == pytest.approx((2.0 * 0.09 + 1.0) / 1.09)
        assert w.sigma_zeta_given_y_sq == pytest.approx(0.09 / 1.09)
        assert isinstance(w, ConsistencyWitness)

    def test_impossible_when_q_too_wide(self):
        with pytest.raises(InconsistentEvidence, match="cannot be consistent"):
            consistency_construction(_chain(LEFT), 2.0, 2.0)

    def test_degenerate_boundary(self):
        with pytest.raises(InconsistentEvidence, match="degenerate"):
            consistency_construction(GaussianChain.from_sds(0.0, 0.6, 0.8), 1.0, 0.0)

    def test_bayes_rule_recovers_q(self):
        """Integrating the witness against p(y) and inverting gives back q(y|zeta)."""
        chain = _chain(LEFT)
        w = consistency_construction(chain, 1.0, 2.0)
        ys = np.linspace(-8, 10, 20_001)
        p_y = oracles.npdf(ys, 1.0, math.sqrt(chain.marginal_y_var))
        zeta = 1.7
        joint = np.exp(w.log_pdf(zeta, ys)) * p_y
        q = joint / np.trapezoid(joint, ys)
        np.testing.assert_allclose(q, oracles.npdf(ys, zeta, 1.0), atol=1e-10)


class TestBallDrop:
    def test_predictive_time_for_point_mass_prior(self):
        assert ball_drop_mean_time(9.81, 1.0) == pytest.approx(0.4515, abs=5e-5)
        model = ball_drop_model(prior_sd=0.0)
        assert model.prior.family == "point"

    def test_nonpositive_g_masked(self):
        model = ball_drop_model()
        assert model.likelihood(np.array([-1.0, 9.81])).log_pdf(0.45)[0] == -np.inf
        with pytest.raises(DomainError):
            ball_drop_mean_time(-1.0, 1.0)

    def test_invalid_parameters(self):
        with pytest.raises(DomainError):
            ball_drop_model(distance=0.0)
        with pytest.raises(DomainError):
            ball_drop_model(prior_sd=-1.0)
