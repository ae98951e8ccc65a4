"""Euler recursion: schedules, scheme coupling, divergence, guard, telemetry."""
import math

import numpy as np
import pytest

from ergolevy import (
    AtomicMeasure,
    DivergenceError,
    InnovationLaw,
    IsotropicPowerLawMeasure,
    PowerTailMeasure,
    Schedule,
    ScheduleTables,
    SdeModel,
    TestFunction,
    UnsupportedSchemeError,
    build_model,
    build_test_functions,
    complexity_guard,
    derive_stream,
    init_chain,
    run_chain,
    sample_wiener_correction,
    step,
)
from ergolevy.increments import StreamRole


def ou_model(measure):
    return build_model("ou2d", measure)


def phi_functions(measure):
    return build_test_functions("ou2d", measure, ("phi",))


SYM_ATOMS = AtomicMeasure(
    [(0.4, (1.0, 0.0)), (0.4, (-1.0, 0.0)), (0.3, (0.0, 1.5)), (0.3, (0.0, -1.5))]
)


class TestSchedule:
    """Step and threshold sequences and their running sums."""

    def test_big_gamma_3(self):
        schedule = Schedule(1.0, 1.0 / 3.0, 1.0)
        tab = schedule.tables(3, IsotropicPowerLawMeasure(1.0), "P")
        expected = 1.0 + 2.0 ** (-1.0 / 3.0) + 3.0 ** (-1.0 / 3.0)
        np.testing.assert_allclose(tab.big_gamma[-1], expected, rtol=1e-12)

    def test_gamma_and_threshold_formulas(self):
        schedule = Schedule(0.5, 0.4, 0.7, u_cap=0.6)
        k = np.arange(1, 20)
        np.testing.assert_allclose(schedule.gamma(k), 0.5 * k ** (-0.4), rtol=1e-14)
        np.testing.assert_allclose(
            schedule.threshold(k), np.minimum((0.5 * k ** (-0.4)) ** 0.7, 0.6), rtol=1e-14
        )

    def test_uncapped_threshold(self):
        schedule = Schedule(2.0, 0.5, 1.0, u_cap=None)
        assert schedule.threshold(1) == 2.0

    def test_running_sums_match_direct_recompute(self):
        measure = IsotropicPowerLawMeasure(1.3)
        schedule = Schedule(0.25, 0.5, 0.8)
        tab = schedule.tables(500, measure, "P", s_order=2)
        gamma = 0.25 * np.arange(1, 501, dtype=float) ** -0.5
        u = np.minimum(gamma**0.8, 1.0)
        np.testing.assert_allclose(tab.gamma, gamma, rtol=1e-14)
        np.testing.assert_allclose(tab.u, u, rtol=1e-14)
        np.testing.assert_allclose(tab.lam, measure.tail_mass(u), rtol=1e-14)
        np.testing.assert_allclose(tab.big_gamma, np.cumsum(gamma), rtol=1e-13)
        np.testing.assert_allclose(tab.big_gamma2, np.cumsum(gamma**2), rtol=1e-13)
        np.testing.assert_allclose(
            tab.beta_s, np.cumsum(gamma * measure.truncated_abs_moment(2, u)), rtol=1e-13
        )
        np.testing.assert_allclose(
            tab.sup_lam_gamma, np.maximum.accumulate(gamma * measure.tail_mass(u)), rtol=1e-14
        )

    def test_parameter_validation(self):
        with pytest.raises(ValueError, match="gamma1"):
            Schedule(0.0, 0.5, 1.0)
        with pytest.raises(ValueError, match="zeta"):
            Schedule(1.0, 0.0, 1.0)
        with pytest.raises(ValueError, match="zeta"):
            Schedule(1.0, 1.5, 1.0)
        with pytest.raises(ValueError, match="r_threshold"):
            Schedule(1.0, 0.5, 0.0)
        with pytest.raises(ValueError, match="u_cap"):
            Schedule(1.0, 0.5, 1.0, u_cap=0.0)

    def test_default_bias_orders(self):
        measure = IsotropicPowerLawMeasure(1.0)
        assert Schedule(0.5, 0.5, 1.0).tables(5, measure, "P").s_order == 2
        assert Schedule(0.5, 0.5, 1.0).tables(5, measure, "W").s_order == 4
        assert Schedule(0.5, 0.5, 1.0).tables(5, SYM_ATOMS, "E").s_order is None

    def test_w_tables_require_measure(self):
        with pytest.raises(ValueError, match="measure"):
            ScheduleTables.build(Schedule(0.5, 0.5, 1.0), 10, None, "W")

    def test_exact_tables_park_threshold(self):
        tab = Schedule(0.5, 0.5, 1.0).tables(8, SYM_ATOMS, "E")
        np.testing.assert_array_equal(tab.u, np.full(8, 0.5))
        np.testing.assert_array_equal(tab.beta_s, np.zeros(8))

    def test_q_epochs_share_factorizations(self):
        """Q is refactored only when u moves more than 0.1% relative."""
        measure = IsotropicPowerLawMeasure(1.0)
        tab = Schedule(0.5, 0.5, 1.0).tables(2000, measure, "W")
        assert tab.q_epoch is not None
        n_epochs = int(tab.q_epoch.max()) + 1
        assert n_epochs < 2000
        for k in (1, 700, 2000):
            e = int(tab.q_epoch[k - 1])
            head_u = float(tab.epoch_u[e])
            assert abs(head_u - tab.u[k - 1]) <= 1.1e-3 * head_u
            expected = measure.small_jump_cov_factor(head_u)
            np.testing.assert_array_equal(tab.q_factor(k), expected)

    def test_q_factor_only_for_w(self):
        tab = Schedule(0.5, 0.5, 1.0).tables(5, IsotropicPowerLawMeasure(1.0), "P")
        with pytest.raises(ValueError, match="scheme W"):
            tab.q_factor(1)


class TestStepEquivalence:
    """The blocked driver must reproduce the reference step exactly."""

    @pytest.mark.parametrize(
        "scheme,measure",
        [
            ("E", SYM_ATOMS),
            ("P", IsotropicPowerLawMeasure(1.0)),
            ("W", IsotropicPowerLawMeasure(1.0)),
        ],
    )
    def test_run_chain_matches_step_loop(self, scheme, measure):
        model = ou_model(measure)
        schedule = Schedule(0.25, 0.5, 1.0)
        n = 257
        record = run_chain(
            model,
            measure,
            schedule,
            scheme,
            n,
            checkpoints=[n],
            test_functions=phi_functions(measure),
            master_seed=11,
            replica=2,
            block_size=64,
        )
        chain = init_chain(
            model,
            measure,
            schedule,
            scheme,
            n,
            test_functions=phi_functions(measure),
            master_seed=11,
            replica=2,
        )
        for _ in range(n):
            chain = step(chain, model, measure)
        np.testing.assert_array_equal(record.final_x, chain.x)
        np.testing.assert_allclose(
            record.nu_hat["phi"][-1], chain.empirical.integrate("phi"), rtol=1e-12
        )
        assert record.jumps_per_step[-1] * n == pytest.approx(chain.cum_jumps)

    def test_exact_equals_truncated_on_parked_threshold(self):
        """Finite-activity E and P share every bit of the path."""
        schedule = Schedule(0.5, 1.0 / 3.0, 0.01, u_cap=0.5)
        runs = {}
        for scheme in ("E", "P"):
            runs[scheme] = run_chain(
                ou_model(SYM_ATOMS),
                SYM_ATOMS,
                schedule,
                scheme,
                500,
                checkpoints=[100, 500],
                test_functions=phi_functions(SYM_ATOMS),
                master_seed=33,
            )
        np.testing.assert_array_equal(runs["E"].final_x, runs["P"].final_x)
        np.testing.assert_array_equal(runs["E"].nu_hat["phi"], runs["P"].nu_hat["phi"])

    def test_wiener_minus_truncated_one_step(self):
        """One W step differs from the P step by exactly kappa sqrt(gamma) Q Lambda."""
        measure = IsotropicPowerLawMeasure(1.0)
        model = ou_model(measure)
        schedule = Schedule(0.25, 0.5, 1.0)
        chains = {
            kind: step(
                init_chain(model, measure, schedule, kind, 4, master_seed=5, replica=1),
                model,
                measure,
            )
            for kind in ("P", "W")
        }
        q = Schedule(0.25, 0.5, 1.0).tables(4, measure, "W").q_factor(1)
        correction = sample_wiener_correction(
            q, 0.25, InnovationLaw("gaussian"), derive_stream(5, 1, StreamRole.WIENER)
        )
        np.testing.assert_allclose(
            chains["W"].x - chains["P"].x, correction, rtol=0, atol=1e-15
        )

    def test_zero_jump_coefficient_collapses_schemes(self):
        """With kappa = 0 the jump stream is inert and all schemes coincide."""
        measure = SYM_ATOMS
        model = SdeModel(
            dim_d=2,
            dim_l=2,
            drift_b=lambda x: -x,
            diffusion_sigma=lambda x: np.eye(2),
            jump_coeff_scale=lambda x: 0.0,
        )
        finals = {}
        for scheme in ("E", "P", "W"):
            finals[scheme] = run_chain(
                model, measure, Schedule(0.25, 0.5, 1.0), scheme, 300, master_seed=9
            ).final_x
        np.testing.assert_array_equal(finals["E"], finals["P"])
        np.testing.assert_array_equal(finals["E"], finals["W"])

    def test_rademacher_innovations_run(self):
        measure = IsotropicPowerLawMeasure(1.0)
        record = run_chain(
            ou_model(measure),
            measure,
            Schedule(0.25, 0.5, 1.0),
            "W",
            200,
            master_seed=3,
            innovation_law="rademacher-product",
        )
        assert np.all(np.isfinite(record.final_x))

    def test_determinism_across_block_sizes(self):
        measure = IsotropicPowerLawMeasure(1.3)
        args = (ou_model(measure), measure, Schedule(0.25, 0.5, 1.0), "W", 300)
        a = run_chain(*args, master_seed=7, block_size=17)
        b = run_chain(*args, master_seed=7, block_size=4096)
        np.testing.assert_array_equal(a.final_x, b.final_x)


class TestDivergence:
    """Explosions must be reported with the step index and norm."""

    def test_divergence_error_carries_step(self):
        measure = SYM_ATOMS
        model = SdeModel(dim_d=2, dim_l=2, drift_b=lambda x: 4.0 * x + np.ones(2))
        with pytest.raises(DivergenceError, match=r"chain diverged at step n = \d+"):
            run_chain(model, measure, Schedule(2.0, 0.01, 1.0), "P", 2000, master_seed=0)
        try:
            run_chain(model, measure, Schedule(2.0, 0.01, 1.0), "P", 2000, master_seed=0)
        except DivergenceError as exc:
            assert exc.n >= 1
            assert exc.norm > 1e12

    def test_step_loop_raises_at_same_index(self):
        measure = SYM_ATOMS
        model = SdeModel(dim_d=2, dim_l=2, drift_b=lambda x: 4.0 * x + np.ones(2))
        schedule = Schedule(2.0, 0.01, 1.0)
        try:
            run_chain(model, measure, schedule, "P", 2000, master_seed=0, block_size=64)
        except DivergenceError as exc:
            blocked_n = exc.n
        chain = init_chain(model, measure, schedule, "P", 2000, master_seed=0)
        with pytest.raises(DivergenceError) as info:
            for _ in range(2000):
                chain = step(chain, model, measure)
        assert info.value.n == blocked_n


class TestComplexityGuard:
    """Jump-budget scan over the planning horizon."""

    def test_aggressive_threshold_violates(self):
        report = complexity_guard(
            Schedule(0.5, 1.0 / 3.0, 2.0), IsotropicPowerLawMeasure(1.0), horizon=10_000
        )
        assert report.violated
        assert report.sup_lam_gamma > report.bound
        assert report.argmax_k > 1

    def test_planned_threshold_passes(self):
        report = complexity_guard(
            Schedule(0.5, 1.0 / 3.0, 1.0), IsotropicPowerLawMeasure(1.0), horizon=10_000
        )
        assert not report.violated
        assert report.bound == pytest.approx(10.0 * report.lam1_gamma1)

    def test_finite_activity_peaks_at_step_one(self):
        report = complexity_guard(Schedule(0.5, 0.5, 1.0), SYM_ATOMS, horizon=1000)
        assert not report.violated
        assert report.argmax_k == 1
        assert report.sup_lam_gamma == pytest.approx(0.5 * SYM_ATOMS.total_mass)


class TestTelemetry:
    """Checkpoint records must be self-consistent."""

    def test_weight_mass_equals_big_gamma(self):
        measure = IsotropicPowerLawMeasure(1.0)
        record = run_chain(
            ou_model(measure),
            measure,
            Schedule(0.25, 0.5, 1.0),
            "P",
            400,
            checkpoints=[50, 400],
            test_functions=phi_functions(measure),
            master_seed=2,
        )
        np.testing.assert_allclose(
            record.empirical.weight_mass, record.big_gamma[-1], rtol=1e-12
        )
        assert record.empirical.point_count == 400

    def test_constant_function_integrates_to_one(self):
        measure = IsotropicPowerLawMeasure(1.0)
        one = TestFunction("one", lambda x: 1.0, vectorized=lambda xs: np.ones(len(xs)))
        record = run_chain(
            ou_model(measure),
            measure,
            Schedule(0.25, 0.5, 1.0),
            "P",
            200,
            checkpoints=[10, 200],
            test_functions=[one],
            master_seed=2,
        )
        np.testing.assert_allclose(record.nu_hat["one"], np.ones(2), rtol=1e-12)

    def test_first_step_charges_initial_point(self):
        """The estimator weights pre-step iterates: one step holds only x0."""
        measure = SYM_ATOMS
        model = ou_model(measure)
        x0 = np.array([1.5, -0.5])
        chain = init_chain(
            model,
            measure,
            Schedule(0.25, 0.5, 1.0),
            "P",
            4,
            test_functions=phi_functions(measure),
            master_seed=0,
            x0=x0,
        )
        chain = step(chain, model, measure)
        np.testing.assert_allclose(
            chain.empirical.integrate("phi"), float(x0 @ x0), rtol=1e-15
        )

    def test_checkpoint_arrays_match_schedule(self):
        measure = IsotropicPowerLawMeasure(1.3)
        schedule = Schedule(0.5, 0.4, 0.9)
        cps = [7, 40, 160]
        record = run_chain(
            ou_model(measure), measure, schedule, "P", 160, checkpoints=cps, master_seed=1
        )
        tab = schedule.tables(160, measure, "P")
        idx = np.array(cps) - 1
        np.testing.assert_array_equal(record.ns, cps)
        np.testing.assert_array_equal(record.gamma_n, tab.gamma[idx])
        np.testing.assert_array_equal(record.big_gamma, tab.big_gamma[idx])
        np.testing.assert_array_equal(record.beta_s, tab.beta_s[idx])

    def test_reservoir_capacity_respected(self):
        measure = IsotropicPowerLawMeasure(1.0)
        record = run_chain(
            ou_model(measure),
            measure,
            Schedule(0.25, 0.5, 1.0),
            "P",
            300,
            master_seed=4,
            reservoir_capacity=32,
        )
        assert record.empirical.reservoir.shape == (32, 2)


class TestValidation:
    """Interface misuse must fail before any simulation runs."""

    def test_checkpoints_outside_horizon(self):
        measure = IsotropicPowerLawMeasure(1.0)
        with pytest.raises(ValueError, match="checkpoint"):
            run_chain(
                ou_model(measure), measure, Schedule(0.25, 0.5, 1.0), "P", 10,
                checkpoints=[5, 11],
            )

    def test_unknown_scheme(self):
        measure = IsotropicPowerLawMeasure(1.0)
        with pytest.raises(ValueError, match="scheme kind"):
            run_chain(ou_model(measure), measure, Schedule(0.25, 0.5, 1.0), "X", 10)

    def test_exact_scheme_needs_exact_sampler(self):
        measure = IsotropicPowerLawMeasure(1.0)
        with pytest.raises(UnsupportedSchemeError, match="scheme P"):
            run_chain(ou_model(measure), measure, Schedule(0.25, 0.5, 1.0), "E", 10)

    def test_kappa_forms_exclusive(self):
        with pytest.raises(ValueError, match="not both"):
            SdeModel(
                dim_d=2,
                dim_l=2,
                drift_b=lambda x: -x,
                jump_coeff_kappa=lambda x: np.eye(2),
                jump_coeff_scale=lambda x: 1.0,
            )

    def test_identity_kappa_needs_matching_dims(self):
        with pytest.raises(ValueError, match="dim_d == dim_l"):
            SdeModel(dim_d=2, dim_l=3, drift_b=lambda x: -x)

    def test_measure_dimension_checked(self):
        model = SdeModel(dim_d=2, dim_l=2, drift_b=lambda x: -x)
        bad = AtomicMeasure([(1.0, (1.0, 0.0, 0.0))], dim=3)
        with pytest.raises(ValueError, match="dim"):
            init_chain(model, bad, Schedule(0.25, 0.5, 1.0), "P", 10)

    def test_supplied_tables_must_match(self):
        measure = IsotropicPowerLawMeasure(1.0)
        model = ou_model(measure)
        schedule = Schedule(0.25, 0.5, 1.0)
        p_tables = schedule.tables(20, measure, "P")
        with pytest.raises(ValueError, match="scheme"):
            init_chain(model, measure, schedule, "W", 20, tables=p_tables)
        short = schedule.tables(5, measure, "P")
        with pytest.raises(ValueError, match="cover"):
            init_chain(model, measure, schedule, "P", 20, tables=short)

    def test_stepping_past_horizon(self):
        measure = SYM_ATOMS
        model = ou_model(measure)
        chain = init_chain(model, measure, Schedule(0.25, 0.5, 1.0), "P", 2)
        chain = step(chain, model, measure)
        chain = step(chain, model, measure)
        with pytest.raises(ValueError, match="horizon"):
            step(chain, model, measure)

    def test_x0_shape_checked(self):
        measure = SYM_ATOMS
        with pytest.raises(ValueError, match="x0"):
            init_chain(
                ou_model(measure), measure, Schedule(0.25, 0.5, 1.0), "P", 5,
                x0=np.zeros(3),
            )
