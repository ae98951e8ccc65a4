"""Rate map, regime classification, schedule planning, bias diagnostics."""
import math

import numpy as np
import pytest

from ergolevy import (
    AtomicMeasure,
    InfeasibleScheduleError,
    IsotropicPowerLawMeasure,
    Schedule,
    beta_ratio_diagnostics,
    classify_regime,
    fit_deterministic_exponent,
    h_of_zeta,
    min_zeta_for_low_moment_clt,
    optimal_exponent,
    recommended_schedule,
)

FINITE_ATOMS = AtomicMeasure(
    [(0.4, (1.0, 0.0)), (0.4, (-1.0, 0.0)), (0.3, (0.0, 1.5)), (0.3, (0.0, -1.5))]
)


class TestRateMap:
    """h(zeta) is a tent with peak 1/3 at zeta = 1/3."""

    @pytest.mark.parametrize(
        "zeta,expected",
        [(0.1, 0.1), (0.3, 0.3), (1.0 / 3.0, 1.0 / 3.0), (0.5, 0.25), (0.9, 0.05)],
    )
    def test_values(self, zeta, expected):
        assert h_of_zeta(zeta).exponent == pytest.approx(expected, rel=1e-12)

    def test_peak_location(self):
        grid = np.arange(1e-3, 1.0, 1e-3)
        values = [h_of_zeta(z).exponent for z in grid]
        best = grid[int(np.argmax(values))]
        assert best == pytest.approx(1.0 / 3.0, abs=1e-3)
        assert max(values) <= 1.0 / 3.0 + 1e-12

    def test_boundary_note(self):
        rate = h_of_zeta(1.0)
        assert rate.exponent == 0.0
        assert "sqrt(gamma1 log n)" in rate.note

    @pytest.mark.parametrize("zeta", [0.0, -0.2, 1.2, math.nan])
    def test_domain(self, zeta):
        with pytest.raises(ValueError, match="zeta"):
            h_of_zeta(zeta)


class TestRegime:
    """Gamma2_n / sqrt(Gamma_n) limit sorts schedules into three regimes."""

    def test_clean_clt(self):
        label, limit = classify_regime(0.5)
        assert label == "clt"
        assert limit == 0.0

    def test_biased_clt_constant(self):
        label, limit = classify_regime(1.0 / 3.0, gamma1=0.5)
        assert label == "biased-clt"
        assert limit == pytest.approx(math.sqrt(6.0 * 0.125), rel=1e-12)

    def test_probability_limit(self):
        label, limit = classify_regime(0.2)
        assert label == "probability-limit"
        assert limit == math.inf

    def test_domain(self):
        with pytest.raises(ValueError, match="zeta"):
            classify_regime(0.0)


class TestOptimalExponent:
    """Scheme-dependent ceilings for stable-like small-jump activity."""

    def test_truncation_exponent(self):
        assert optimal_exponent("P", 5.0 / 3.0) == pytest.approx(1.0 / 7.0, rel=1e-12)
        assert optimal_exponent("P", 1.5) == pytest.approx(0.2, rel=1e-12)
        assert optimal_exponent("P", 0.5) == pytest.approx(1.0 / 3.0, rel=1e-12)

    def test_wienerized_exponent(self):
        assert optimal_exponent("W", 1.0, quasi_symmetric=True) == pytest.approx(1.0 / 3.0)
        # with s = 4 the raw exponent (4 - alpha)/(8 - alpha) > 1/3 for all
        # alpha < 2, so the scheme-free ceiling always binds
        assert optimal_exponent("W", 1.9, quasi_symmetric=True) == pytest.approx(1.0 / 3.0)
        assert optimal_exponent("W", 1.9, quasi_symmetric=False) == pytest.approx(
            1.1 / 4.1, rel=1e-12
        )

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 1.9])
    def test_wienerization_never_loses(self, alpha):
        for qs in (False, True):
            assert optimal_exponent("W", alpha, qs) >= optimal_exponent("P", alpha) - 1e-12

    def test_domain(self):
        with pytest.raises(ValueError, match="alpha"):
            optimal_exponent("P", 2.0)
        with pytest.raises(ValueError, match="schemes P and W"):
            optimal_exponent("E", 1.0)


class TestPlanner:
    """recommended_schedule resolves (s, zeta, r, gamma1) per scheme."""

    def test_truncation_heavy_tail_plan(self):
        plan = recommended_schedule("P", alpha=5.0 / 3.0)
        assert plan.s == 2
        assert plan.zeta == pytest.approx(5.0 / 7.0, rel=1e-12)
        assert plan.r_threshold == pytest.approx(0.6, rel=1e-12)
        assert plan.exponent == pytest.approx(1.0 / 7.0, rel=1e-12)
        assert plan.regime == "clt"
        assert plan.complexity_ok

    def test_wienerized_symmetric_plan(self):
        plan = recommended_schedule("W", alpha=1.0, quasi_symmetric=True)
        assert plan.s == 4
        assert plan.zeta == pytest.approx(1.0 / 3.0)
        assert plan.r_threshold == pytest.approx(1.0)
        assert plan.exponent == pytest.approx(1.0 / 3.0)
        assert plan.regime == "biased-clt"

    def test_low_moment_plan(self):
        plan = recommended_schedule("P", q=1.0)
        assert plan.zeta == pytest.approx(1.0 / 3.0)
        assert plan.r_threshold == pytest.approx(1.0)
        assert plan.exponent == pytest.approx(1.0 / 3.0)

    def test_finite_activity_defaults_to_order_r(self):
        plan = recommended_schedule("W", q=0.0, quasi_symmetric=True)
        assert plan.r_threshold == pytest.approx(0.25)

    def test_truncation_infeasible_above_order_one(self):
        with pytest.raises(InfeasibleScheduleError, match="feasible band"):
            recommended_schedule("P", q=1.5)

    def test_requires_some_trait(self):
        with pytest.raises(ValueError, match="alpha"):
            recommended_schedule("P")

    def test_exact_scheme_not_planned(self):
        with pytest.raises(ValueError, match="schemes P and W"):
            recommended_schedule("E", alpha=1.0)

    def test_budget_search_fixes_gamma1(self):
        """The halving search lands on measure-specific powers of two."""
        plan_w = recommended_schedule("W", IsotropicPowerLawMeasure(1.0))
        assert plan_w.gamma1 == pytest.approx(1.0 / 32.0)
        assert plan_w.complexity_ok
        plan_p = recommended_schedule("P", IsotropicPowerLawMeasure(5.0 / 3.0))
        assert plan_p.gamma1 == pytest.approx(1.0 / 16.0)
        assert plan_p.complexity_ok

    def test_explicit_gamma1_skips_search(self):
        """A user-pinned gamma1 is kept verbatim but still guard-checked;
        with r = 1/alpha the product lambda gamma stays within 10x of its
        first value, so the verdict here is a pass."""
        plan = recommended_schedule(
            "W", IsotropicPowerLawMeasure(1.0), gamma1=1.0, horizon=10_000
        )
        assert plan.gamma1 == 1.0
        assert plan.complexity_ok

    def test_schedule_roundtrip(self):
        plan = recommended_schedule("W", alpha=1.0, quasi_symmetric=True)
        sched = plan.schedule(u_cap=0.7)
        assert isinstance(sched, Schedule)
        assert sched.gamma1 == plan.gamma1
        assert sched.zeta == plan.zeta
        assert sched.r_threshold == plan.r_threshold
        assert sched.u_cap == 0.7


class TestLowMomentZeta:
    """Weak reversion narrows the admissible step band."""

    def test_strong_reversion_keeps_optimum(self):
        assert min_zeta_for_low_moment_clt(1.0, 0.0, 2.0) == pytest.approx(1.0 / 3.0)
        assert min_zeta_for_low_moment_clt(1.0, 0.25, 1.5) == pytest.approx(1.0 / 3.0)

    def test_soft_reversion_raises_floor(self):
        assert min_zeta_for_low_moment_clt(0.75, 0.25, 2.0) == pytest.approx(7.0 / 15.0)
        assert min_zeta_for_low_moment_clt(0.5, 0.5, 2.0) == pytest.approx(0.5)
        assert min_zeta_for_low_moment_clt(0.75, 0.25, 2.0) > 1.0 / 3.0

    def test_domain(self):
        with pytest.raises(ValueError, match="reversion"):
            min_zeta_for_low_moment_clt(0.0, 0.0, 2.0)
        with pytest.raises(ValueError, match="growth"):
            min_zeta_for_low_moment_clt(1.0, -0.1, 2.0)
        with pytest.raises(ValueError, match="moment order"):
            min_zeta_for_low_moment_clt(1.0, 0.0, 1.0)
        with pytest.raises(ValueError, match="moment order"):
            min_zeta_for_low_moment_clt(1.0, 0.0, 2.5)


class TestBiasDiagnostics:
    """beta_n^(s) trajectories against the two CLT normalizers."""

    def test_finite_activity_has_no_bias(self):
        traj = beta_ratio_diagnostics(
            Schedule(0.5, 1.0 / 3.0, 0.5), FINITE_ATOMS, s=2, horizon=2000
        )
        np.testing.assert_array_equal(traj.beta_over_gamma2, 0.0)
        np.testing.assert_array_equal(traj.beta_over_sqrt_gamma, 0.0)

    def test_planned_threshold_keeps_ratio_bounded(self):
        """At alpha = 1, r = 1 the below-u second moment is 2 pi u, so
        beta = 2 pi Gamma2 exactly while u stays in the inner band."""
        traj = beta_ratio_diagnostics(
            Schedule(1.0 / 32.0, 1.0 / 3.0, 1.0),
            IsotropicPowerLawMeasure(1.0),
            s=2,
            horizon=100_000,
        )
        np.testing.assert_allclose(traj.beta_over_gamma2, 2.0 * math.pi, rtol=1e-12)
        # beta/sqrt(Gamma) climbs to the finite limit 6 pi gamma1^2/sqrt(1.5 gamma1)
        limit = 6.0 * math.pi * (1.0 / 32.0) ** 2 / math.sqrt(1.5 / 32.0)
        assert np.all(traj.beta_over_sqrt_gamma < limit)
        assert traj.beta_over_sqrt_gamma[-1] == pytest.approx(limit, rel=0.02)

    def test_lazy_threshold_lets_bias_dominate(self):
        traj = beta_ratio_diagnostics(
            Schedule(1.0 / 32.0, 1.0 / 3.0, 0.1),
            IsotropicPowerLawMeasure(1.0),
            s=2,
            horizon=100_000,
        )
        assert traj.beta_over_sqrt_gamma[-1] > 10.0 * traj.beta_over_sqrt_gamma[0]


class TestDeterministicExponentFit:
    """The normalizer ratio must reproduce the planned rate."""

    def test_wienerized_plan_hits_one_third(self):
        plan = recommended_schedule("W", IsotropicPowerLawMeasure(1.0))
        fitted = fit_deterministic_exponent(
            plan.schedule(), IsotropicPowerLawMeasure(1.0), "W", s_order=plan.s
        )
        assert abs(fitted - plan.exponent) < 0.005

    def test_truncation_plan_hits_degraded_rate(self):
        measure = IsotropicPowerLawMeasure(1.5)
        plan = recommended_schedule("P", measure)
        fitted = fit_deterministic_exponent(plan.schedule(), measure, "P", s_order=plan.s)
        assert plan.exponent == pytest.approx(0.2, rel=1e-12)
        assert abs(fitted - plan.exponent) < 0.02

    def test_window_validation(self):
        with pytest.raises(ValueError, match="fit window"):
            fit_deterministic_exponent(
                Schedule(0.5, 0.5, 1.0), IsotropicPowerLawMeasure(1.0), "P",
                n_lo=100, n_hi=100,
            )
