# tests/test_estimate.py
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fofiv.config import HacConfig, Kernel, ModelParams
from fofiv.dgp import build_instruments, solve_outcomes
from fofiv.errors import CollinearityError, DegenerateInstrumentError, ParameterError
from fofiv.estimate import (
    Design,
    HacKernel,
    corr_endog_instrument,
    first_stage_F,
    fit_iv,
    fwl_first_stage,
    homoskedastic_vcov,
    kernel_weights,
    network_hac_vcov,
    ols,
    t_interval,
    tsls,
)
from fofiv.graph import Network, NetworkOperator, neighbors_at_distance


def synthetic_design(n=300, beta=0.6, noise=1.0, seed=0, d=1):
    """GY linear in Z plus noise, Y structural in GY with optional noise."""
    rng = np.random.default_rng(seed)
    shape = (n,) if d == 1 else (n, d)
    x, gx, g2x = rng.standard_normal(shape), rng.standard_normal(shape), rng.standard_normal(shape)
    slope = 1.5 if d == 1 else np.array([1.5, -0.8])
    gy = 0.3 + 0.5 * (x if d == 1 else x.sum(1)) + (g2x @ slope if d > 1 else slope * g2x) + rng.standard_normal(n)
    y = 0.2 + beta * gy + 0.1 * (x if d == 1 else x.sum(1)) + noise * rng.standard_normal(n)
    return Design(y=y, gy=gy, x=x, gx=gx, g2x=g2x)


class TestOls:
    def test_exact_fit(self):
        rng = np.random.default_rng(1)
        x = np.column_stack([np.ones(40), rng.standard_normal(40)])
        res = ols(x, x @ np.array([2.0, -3.0]))
        assert_allclose(res.coef, [2.0, -3.0], atol=1e-12)
        assert_allclose(res.resid, 0.0, atol=1e-12)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(2)
        x = np.column_stack([np.ones(50), rng.standard_normal((50, 2)) * [1.0, 100.0]])
        y = rng.standard_normal(50)
        res = ols(x, y)
        assert_allclose(res.coef, np.linalg.lstsq(x, y, rcond=None)[0], rtol=1e-9)
        assert_allclose(res.xtx_inv, np.linalg.inv(x.T @ x), rtol=1e-8)

    def test_names_the_dependent_column(self):
        rng = np.random.default_rng(3)
        v = rng.standard_normal(30)
        with pytest.raises(CollinearityError) as info:
            ols(np.column_stack([np.ones(30), v, 2 * v]), v, ["const", "x", "gx"])
        assert info.value.column == "gx"

    def test_zero_column(self):
        with pytest.raises(CollinearityError) as info:
            ols(np.column_stack([np.ones(10), np.zeros(10)]), np.ones(10), ["const", "g2x"])
        assert info.value.column == "g2x"

    def test_too_few_rows(self):
        with pytest.raises(ParameterError):
            ols(np.eye(2), np.ones(2))


class TestIvFit:
    def test_noiseless_structural_equation_recovers_beta(self):
        fit = fit_iv(synthetic_design(noise=0.0))
        assert fit.beta_hat == pytest.approx(0.6, abs=1e-9)

    def test_ratio_equals_two_stage_least_squares(self):
        design = synthetic_design(seed=5)
        assert fit_iv(design).beta_hat == pytest.approx(tsls(design)[-1], rel=1e-9)

    def test_partialled_out_slope_equals_pi(self):
        design = synthetic_design(seed=6)
        fwl = fwl_first_stage(design)
        assert fwl.slope == pytest.approx(fit_iv(design).pi_hat, rel=1e-9)
        assert fwl.partial_var > 0

    def test_homoskedastic_block(self):
        design = synthetic_design(seed=7)
        fit = fit_iv(design)
        z = design.z
        n = z.shape[0]
        zz = np.linalg.inv(z.T @ z)[-1, -1]
        s_eta = fit.resid_first @ fit.resid_first / n
        s_eps = fit.resid_reduced @ fit.resid_reduced / n
        s_x = fit.resid_reduced @ fit.resid_first / n
        b = fit.vcov_homo
        assert b.v_pi == pytest.approx(s_eta * zz, rel=1e-8)
        assert b.v_xi == pytest.approx(s_eps * zz, rel=1e-8)
        assert b.cov == pytest.approx(s_x * zz, rel=1e-8)

    def test_joint_block_layout(self):
        design = synthetic_design(seed=7, d=2)
        res = ols(design.z, np.column_stack([design.y, design.gy]), design.z_names)
        cols = design.excluded
        joint = homoskedastic_vcov(res, cols)
        s = res.resid.T @ res.resid / res.n
        zz = res.xtx_inv[np.ix_(cols, cols)]
        assert_allclose(joint[:2, :2], s[0, 0] * zz, rtol=1e-12)
        assert_allclose(joint[:2, 2:], s[0, 1] * zz, rtol=1e-12)
        assert_allclose(joint, joint.T, atol=1e-15)

    def test_first_stage_F(self):
        fit = fit_iv(synthetic_design(seed=8))
        assert first_stage_F(fit) == pytest.approx(fit.pi_hat ** 2 / fit.vcov_homo.v_pi)
        assert fit.f_first_stage > 100

    @pytest.mark.parametrize("n", [3, 4, 6])
    @pytest.mark.parametrize("scaled", [False, True])
    def test_complete_graph_is_collinear(self, n, scaled):
        g = Network.complete(n)
        op = NetworkOperator.scaled(g) if scaled else NetworkOperator.unscaled(g)
        rng = np.random.default_rng(n)
        sample = solve_outcomes(op, ModelParams(beta=0.1), rng.lognormal(size=n), rng.standard_normal(n))
        with pytest.raises(CollinearityError) as info:
            fit_iv(Design.from_sample(build_instruments(op, sample)))
        assert info.value.column in ("gx", "g2x")

    def test_degenerate_instrument(self):
        d = synthetic_design()
        with pytest.raises(DegenerateInstrumentError):
            fit_iv(Design(y=d.y, gy=d.gy, x=d.x, gx=d.gx, g2x=np.zeros(d.n)))

    def test_length_mismatch(self):
        d = synthetic_design()
        with pytest.raises(ParameterError):
            Design(y=d.y, gy=d.gy[:-1], x=d.x, gx=d.gx, g2x=d.g2x)

    def test_hac_requested_without_kernel(self):
        fit = fit_iv(synthetic_design())
        assert fit.vcov_hac is None
        with pytest.raises(ParameterError):
            fit.joint("hac")

    def test_two_covariates(self):
        design = synthetic_design(n=400, seed=9, d=2)
        fit = fit_iv(design)
        assert fit.q == 2
        assert fit.joint_homo.shape == (4, 4)
        assert fit.beta_hat == pytest.approx(0.6, abs=0.15)
        assert first_stage_F(fit) > 10
        with pytest.raises(ParameterError):
            fit.pi_hat


class TestCorrelation:
    def test_constant_vector(self):
        assert math.isnan(corr_endog_instrument(np.ones(5), np.arange(5.0)))

    def test_perfect(self):
        v = np.arange(6.0)
        assert corr_endog_instrument(v, 3 * v + 1) == pytest.approx(1.0)


class TestNetworkHac:
    def test_kernel_weights(self):
        assert_allclose(kernel_weights(HacConfig(kernel=Kernel.BARTLETT, bandwidth=2)), [1.0, 0.5, 0.0])
        assert_allclose(kernel_weights(HacConfig(kernel=Kernel.RECTANGULAR, bandwidth=2)), [1.0, 1.0, 1.0])
        assert_allclose(kernel_weights(HacConfig(bandwidth=0)), [1.0])

    def test_zero_bandwidth_is_heteroskedasticity_robust(self, small_er):
        design = synthetic_design(n=small_er.n, seed=10)
        fit = fit_iv(design, HacKernel.build(small_er, HacConfig(bandwidth=0)))
        z = design.z
        bread = np.linalg.inv(z.T @ z)
        e = fit.resid_first
        meat = (z * e[:, None] ** 2).T @ z
        assert fit.vcov_hac.v_pi == pytest.approx((bread @ meat @ bread)[-1, -1], rel=1e-8)

    @pytest.mark.parametrize("kernel", [Kernel.BARTLETT, Kernel.RECTANGULAR])
    def test_matches_pairwise_sum(self, small_er, kernel):
        cfg = HacConfig(kernel=kernel, bandwidth=3)
        design = synthetic_design(n=small_er.n, seed=11)
        fit = fit_iv(design, HacKernel.build(small_er, cfg))

        weights = kernel_weights(cfg)
        k = np.zeros((small_er.n, small_er.n))
        for i in range(small_er.n):
            for s, shell in enumerate(neighbors_at_distance(small_er, i, cfg.bandwidth)):
                k[i, shell] = weights[s]
        z = design.z
        bread = np.linalg.inv(z.T @ z)
        e = np.column_stack([fit.resid_reduced, fit.resid_first])
        col = design.excluded[0]
        for a, b, got in [(0, 0, fit.vcov_hac.v_xi), (1, 1, fit.vcov_hac.v_pi), (0, 1, fit.vcov_hac.cov)]:
            meat = (z * e[:, [a]]).T @ k @ (z * e[:, [b]])
            assert got == pytest.approx((bread @ meat @ bread)[col, col], rel=1e-8)

    def test_rectangular_kernel_ignores_node_labels(self, small_er):
        cfg = HacConfig(kernel=Kernel.RECTANGULAR, bandwidth=2)
        design = synthetic_design(n=small_er.n, seed=14)
        fit = fit_iv(design)
        e = np.column_stack([fit.resid_reduced, fit.resid_first])
        perm = np.random.default_rng(15).permutation(small_er.n)
        label = np.argsort(perm)
        relabeled = Network.from_pairs(small_er.n, [(label[i], label[j]) for i, j in small_er.edges])
        cols = design.excluded
        before = network_hac_vcov(design.z, e, HacKernel.build(small_er, cfg), cols)
        after = network_hac_vcov(design.z[perm], e[perm], HacKernel.build(relabeled, cfg), cols)
        assert_allclose(after, before, rtol=1e-10)

    def test_accepts_a_bare_network(self, small_er):
        design = synthetic_design(n=small_er.n, seed=12)
        fit = fit_iv(design)
        cols = design.excluded
        e = np.column_stack([fit.resid_reduced, fit.resid_first])
        built = network_hac_vcov(design.z, e, HacKernel.build(small_er, HacConfig()), cols)
        bare = network_hac_vcov(design.z, e, small_er, cols)
        assert_allclose(bare, built)


class TestWaldInterval:
    def test_symmetric_around_estimate(self):
        fit = fit_iv(synthetic_design(seed=13))
        ci = t_interval(fit, "homo", 0.05)
        assert ci.contains(fit.beta_hat)
        assert (fit.beta_hat - ci.lo) == pytest.approx(ci.hi - fit.beta_hat)
        assert ci.length == pytest.approx(2 * 1.959963984540054 * ci.se)

    def test_noiseless_interval_is_unbounded(self):
        fit = fit_iv(synthetic_design(noise=0.0))
        ci = t_interval(fit)
        assert math.isinf(ci.length)
        assert ci.contains(0.6)
