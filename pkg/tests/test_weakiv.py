# tests/test_weakiv.py
import math

import numpy as np
import pytest

from fofiv.estimate import IvFit, fit_iv
from fofiv.weakiv import (
    ConfidenceSet,
    SetKind,
    _sublevel,
    ar_confidence_set_closed_form,
    ar_null_ks,
    ar_statistics,
    ar_test,
    beta_grid,
    chi2_critical,
    ci_summary,
    grid_confidence_set,
    omega_at,
)
from tests.test_estimate import synthetic_design

CRIT = 3.841458820694124


def make_fit(xi, pi, v_xi=1.0, v_pi=1.0, cov=0.0, n=100):
    """IvFit with an asymptotic-scale block (v_xi, v_pi, cov)."""
    joint = np.array([[v_xi, cov], [cov, v_pi]]) / n
    return IvFit(
        n=n, xi=np.array([xi]), pi=np.array([pi]),
        beta_hat=xi / pi if pi else math.nan,
        coef_reduced=np.zeros(4), coef_first=np.zeros(4),
        resid_reduced=np.zeros(n), resid_first=np.zeros(n), fitted_first=np.zeros(n),
        joint_homo=joint, joint_hac=joint, corr_endog_instr=math.nan,
        names=["const", "x", "gx", "g2x"],
    )


class TestSublevel:
    @pytest.mark.parametrize("a,b,c,spans", [
        (1.0, -3.0, 2.0, [(1.0, 2.0)]),
        (1.0, 0.0, 1.0, []),
        (-1.0, 0.0, -1.0, [(-math.inf, math.inf)]),
        (-1.0, 3.0, -2.0, [(-math.inf, 1.0), (2.0, math.inf)]),
        (0.0, 2.0, -4.0, [(-math.inf, 2.0)]),
        (0.0, -2.0, 4.0, [(2.0, math.inf)]),
        (0.0, 0.0, 1.0, []),
        (0.0, 0.0, 0.0, [(-math.inf, math.inf)]),
    ])
    def test_cases(self, a, b, c, spans):
        assert _sublevel(a, b, c) == spans

    def test_stable_roots_with_cancellation(self):
        lo, hi = _sublevel(1.0, -1e8, 1.0)[0]
        assert lo == pytest.approx(1e-8, rel=1e-12)
        assert hi == pytest.approx(1e8, rel=1e-12)


class TestConfidenceSetShape:
    def test_kinds(self):
        inf = math.inf
        assert ConfidenceSet((), 0.95).kind == SetKind.EMPTY
        assert ConfidenceSet(((0.0, 1.0),), 0.95).kind == SetKind.BOUNDED
        assert ConfidenceSet(((-inf, inf),), 0.95).kind == SetKind.WHOLE_LINE
        assert ConfidenceSet(((-inf, 1.0),), 0.95).kind == SetKind.LEFT_RAY
        assert ConfidenceSet(((1.0, inf),), 0.95).kind == SetKind.RIGHT_RAY
        assert ConfidenceSet(((-inf, 0.0), (1.0, inf)), 0.95).kind == SetKind.TWO_RAYS
        assert ConfidenceSet(((0.0, 1.0), (2.0, 3.0)), 0.95).kind == SetKind.UNION

    def test_lengths(self):
        assert ci_summary(ConfidenceSet((), 0.95)) == (0.0, False)
        assert ci_summary(ConfidenceSet(((0.0, 1.0), (2.0, 4.0)), 0.95)) == (3.0, False)
        assert ci_summary(ConfidenceSet(((-math.inf, 0.0), (1.0, math.inf)), 0.95)) == (math.inf, True)


class TestArTest:
    def test_omega_quadratic(self):
        assert omega_at(0.0, 2.0, 3.0, 0.5) == 2.0
        assert omega_at(2.0, 2.0, 3.0, 0.5) == pytest.approx(2.0 - 2.0 + 12.0)

    def test_statistic(self):
        fit = make_fit(xi=1.0, pi=0.5)
        res = ar_test(0.0, fit)
        assert res.statistic == pytest.approx(100.0)
        assert res.reject
        assert res.p_value < 1e-10

    def test_zero_at_the_point_estimate(self):
        fit = make_fit(xi=1.0, pi=0.5, cov=0.3)
        res = ar_test(2.0, fit)
        assert res.statistic == pytest.approx(0.0, abs=1e-12)
        assert not res.reject
        assert res.p_value == pytest.approx(1.0)

    def test_untestable_is_never_rejected(self):
        fit = make_fit(xi=1.0, pi=0.5, v_xi=0.0, v_pi=0.0)
        res = ar_test(0.3, fit)
        assert not res.valid
        assert not res.reject
        assert math.isnan(res.statistic)

    def test_vectorized_matches_scalar(self):
        fit = make_fit(xi=0.4, pi=0.3, cov=0.2)
        betas = np.array([-2.0, 0.0, 1.0, 5.0])
        got = ar_statistics(fit, "homo", betas)
        assert got == pytest.approx([ar_test(b, fit).statistic for b in betas])


class TestClosedFormSet:
    def test_strong_instrument_is_bounded(self):
        cs = ar_confidence_set_closed_form(make_fit(xi=1.0, pi=0.5))
        assert cs.kind == SetKind.BOUNDED
        assert cs.contains(2.0)
        lo, hi = cs.spans[0]
        for b in (lo, hi):
            assert ar_test(b, make_fit(xi=1.0, pi=0.5)).statistic == pytest.approx(CRIT, rel=1e-8)

    def test_weak_instrument_far_from_zero_gives_two_rays(self):
        assert ar_confidence_set_closed_form(make_fit(xi=1.0, pi=0.1)).kind == SetKind.TWO_RAYS

    def test_weak_instrument_near_zero_gives_whole_line(self):
        assert ar_confidence_set_closed_form(make_fit(xi=0.1, pi=0.1)).kind == SetKind.WHOLE_LINE

    def test_zero_variance_gives_whole_line(self):
        cs = ar_confidence_set_closed_form(make_fit(xi=1.0, pi=0.5, v_xi=0.0, v_pi=0.0))
        assert cs.kind == SetKind.WHOLE_LINE

    def test_level(self):
        assert ar_confidence_set_closed_form(make_fit(1.0, 0.5), alpha=0.1).level == pytest.approx(0.9)
        assert chi2_critical(0.05) == pytest.approx(CRIT)

    @pytest.mark.parametrize("xi,pi,cov", [(1.0, 0.5, 0.0), (1.0, 0.1, 0.4), (0.1, 0.1, -0.2), (0.3, 0.25, 0.5)])
    def test_agrees_with_grid_inversion(self, xi, pi, cov):
        fit = make_fit(xi=xi, pi=pi, cov=cov)
        cs = ar_confidence_set_closed_form(fit)
        grid = beta_grid()
        accepted = set(grid_confidence_set(fit, grid=grid).tolist())
        ends = [e for span in cs.spans for e in span if math.isfinite(e)]
        step = grid[1] - grid[0]
        for b in grid:
            if any(abs(b - e) < step for e in ends):
                continue
            assert cs.contains(b) == (b in accepted)

    def test_estimated_fit(self):
        fit = fit_iv(synthetic_design(seed=21))
        cs = ar_confidence_set_closed_form(fit)
        assert cs.kind == SetKind.BOUNDED
        assert cs.contains(fit.beta_hat)


class TestNullDistribution:
    def test_chi2_draws(self):
        draws = np.random.default_rng(5).chisquare(1, size=2000)
        res = ar_null_ks(draws)
        assert res.draws == 2000
        assert res.statistic < 0.06

    def test_shifted_draws_fail(self):
        draws = np.random.default_rng(5).chisquare(1, size=2000) + 1.0
        assert not ar_null_ks(draws).passes()

    def test_invalid_draws_are_dropped(self):
        draws = np.concatenate([np.random.default_rng(6).chisquare(1, size=500), [np.nan, np.nan]])
        assert ar_null_ks(draws).draws == 500
