import math
from functools import partial

import numpy as np
import pytest

from cost_functional import CostSpec, concave_transform, running_cost
from feedback_controls import FeedbackControl, control_sequence
from snse_integrator import SimConfig, simulate_coupled
from spectral_core import SpectralField
from stochastic_forcing import NoiseModel
from verification_harness import (
    GronwallInstance,
    InstanceError,
    continuity_experiment,
    crn_replay_check,
    gronwall_check,
    gronwall_constant,
    gronwall_experiment,
    gronwall_partition,
    local_inequality_violation,
    log_moment_experiment,
    make_gronwall_instance,
    nonincreasing,
    ou_variance_experiment,
    proportion_ci,
    solution_convergence_experiment,
    strong_order_experiment,
    subadditivity_check,
    tail_checks,
    tail_experiment,
    two_block_instance,
)


@pytest.fixture
def forced_problem():
    """One real mode driven by f = 1 and damped by a gain; no noise, no advection."""
    cfg = SimConfig(1, 0.5, 0.05, 1.0)
    phi = FeedbackControl.build(1, 1.0, gains={(1, 0): -0.5}, base={(1, 0): 1.0}, cap_k=100.0)
    return cfg, phi, NoiseModel.off(1)


class TestHelpers:
    def test_nonincreasing(self):
        assert nonincreasing([3.0, 2.0, 2.0, 1.0])
        assert not nonincreasing([1.0, 2.0])
        assert nonincreasing([1.0, 1.5], [0.3, 0.3])
        assert not nonincreasing([1.0, 1.7], [0.3, 0.3])

    def test_proportion_ci(self):
        assert proportion_ci(0, 10) == (0.0, 0.0)
        p, half = proportion_ci(5, 100)
        assert p == 0.05
        assert half == pytest.approx(1.96 * math.sqrt(0.05 * 0.95 / 100))


class TestSubadditivity:
    @pytest.mark.slow
    def test_sweep_has_no_violations(self):
        table = subadditivity_check(0.5, 1_000_000, 3)
        assert table.passed
        n, violations, max_slack = table.rows[0]
        assert n == 1_000_000
        assert violations == 0
        assert max_slack <= 1e-12

    @pytest.mark.parametrize("eps", [0.05, 0.5, 0.95])
    def test_other_exponents(self, eps):
        assert subadditivity_check(eps, 50_000, 8).passed

    def test_eps_checked(self):
        with pytest.raises(InstanceError):
            subadditivity_check(1.0, 10, 0)


class TestGronwall:
    """Stochastic Gronwall conclusion on discrete instances."""

    def test_two_block_constant(self):
        inst = two_block_instance()
        blocks = gronwall_partition(inst)
        assert [(a, b) for a, b, _ in blocks] == [(0, 32), (32, 64)]
        assert [m for _, _, m in blocks] == [0.5, 0.5]
        result = gronwall_check(inst)
        assert result["c_effective"] == pytest.approx(6.0, abs=1e-12)
        assert result["holds"]
        assert result["lhs"] == pytest.approx((1 + 1 / 64) ** 64)

    def test_zero_rate_gives_c0(self):
        inst = two_block_instance()
        inst.r = np.zeros_like(inst.r)
        inst.x = np.ones_like(inst.x)
        inst.c0 = 1.5
        result = gronwall_check(inst)
        assert result["blocks"] == 1
        assert result["c_effective"] == 1.5

    def test_constant_formula(self):
        assert gronwall_constant(2.0, [0.25]) == pytest.approx(4.0)
        assert gronwall_constant(2.0, [0.25, 0.0]) == pytest.approx(4.0 * 3.0)

    def test_random_instances_hold(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            inst = make_gronwall_instance(rng)
            assert local_inequality_violation(inst) is None
            assert gronwall_check(inst)["holds"]

    def test_local_inequality_detected(self):
        inst = two_block_instance()
        inst.r = np.zeros_like(inst.r)
        inst.x[5] = 10.0
        assert local_inequality_violation(inst) == (0, 5)
        with pytest.raises(InstanceError, match="local inequality"):
            gronwall_check(inst)

    def test_mass_above_kappa(self):
        inst = two_block_instance()
        inst.kappa = 0.5
        with pytest.raises(InstanceError, match="kappa"):
            inst.validate()

    def test_negative_input(self):
        inst = two_block_instance()
        inst.z[3] = -1.0
        with pytest.raises(InstanceError, match="nonnegative"):
            inst.validate()

    def test_coarse_step(self):
        inst = GronwallInstance(np.array([0.0, 1.0, 2.0]), np.ones(3), np.zeros(3), np.zeros(3),
                                np.full(3, 2.0), 1.0, 10.0)
        with pytest.raises(InstanceError, match="refine"):
            gronwall_partition(inst)

    def test_experiment_table(self):
        table = gronwall_experiment(20, 4)
        assert table.passed
        assert len(table.rows) == 21
        assert table.rows[0][0] == "two-block"


class TestContinuity:
    def test_truncation_beyond_support_changes_nothing(self, small_cfg, damping_control, additive_noise):
        table = continuity_experiment(small_cfg, damping_control, additive_noise, CostSpec(),
                                      "mode-truncate", [1, 2], 6, 5)
        assert np.all(table.column("lv_distance") == 0.0)
        assert np.all(table.column("abs_diff") == 0.0)
        assert np.all(table.column("pathwise_diff") == 0.0)
        assert table.passed

    def test_gain_scale_converges(self, forced_problem):
        cfg, phi, g = forced_problem
        n_list = [1, 2, 4, 8]
        table = continuity_experiment(cfg, phi, g, CostSpec(), "gain-scale", n_list, 2, 0)
        diffs = table.column("abs_diff")
        assert np.all(np.diff(diffs) < 0)
        assert np.all(table.column("j_n") > table.column("j_phi"))
        assert np.all(table.column("ci_half") == 0.0)
        assert table.column("lv_distance") == pytest.approx([0.5 / n for n in n_list])
        assert table.column("base_distance") == pytest.approx([math.sqrt(2.0) / n for n in n_list])
        # noise-free: ci_half = 0, so a nonzero gap at the last n fails without a tolerance
        assert not table.checks["last_within_ci"]
        assert table.failed_checks == ["last_within_ci"]
        relaxed = continuity_experiment(cfg, phi, g, CostSpec(), "gain-scale", n_list, 2, 0,
                                        abs_tol=float(diffs[-1]))
        assert relaxed.passed

    def test_pathwise_gap_sees_shared_sup(self, small_cfg):
        # both costs peak at t = 0 and decay at different rates afterwards
        cfg = small_cfg
        phi = FeedbackControl.build(2, cfg.t_final, gains={(1, 0): -2.0}, cap_k=10.0)
        g = NoiseModel.off(2)
        spec = CostSpec()
        table = continuity_experiment(cfg, phi, g, spec, "gain-scale", [1], 2, 0)
        assert table.column("abs_diff")[0] == pytest.approx(0.0, abs=1e-12)

        a, b = simulate_coupled(cfg, [phi, control_sequence(phi, 1, "gain-scale")], g, 0, 0,
                                cost=partial(running_cost, spec))
        expected = np.max(np.abs(concave_transform(a.cost_raw, spec.eps)
                                 - concave_transform(b.cost_raw, spec.eps)))
        assert table.column("pathwise_diff")[0] == pytest.approx(expected, rel=1e-12)
        assert table.column("pathwise_diff")[0] > 0.05
        assert table.column("pathwise_ci")[0] == 0.0

    def test_unsorted_sequence(self, forced_problem):
        cfg, phi, g = forced_problem
        with pytest.raises(InstanceError):
            continuity_experiment(cfg, phi, g, CostSpec(), "gain-scale", [4, 2], 2, 0)


class TestSolutionConvergence:
    def test_identical_controls(self, small_cfg, damping_control, additive_noise):
        table = solution_convergence_experiment(small_cfg, damping_control, additive_noise,
                                                "mode-truncate", [1, 3], 6, 0.01, 2)
        assert np.all(table.column("int_diff_v2") == 0.0)
        assert np.all(table.column("prob_exceed") == 0.0)
        assert np.all(table.column("stopped_fraction") == 1.0)
        assert table.passed

    def test_linear_difference_shrinks_quadratically(self, small_cfg, damping_control):
        cfg = small_cfg.with_(nonlinear=False)
        n_list = [1, 2, 4, 8]
        table = solution_convergence_experiment(cfg, damping_control, NoiseModel.off(2),
                                                "gain-scale", n_list, 2, 1e-3, 0)
        ints = table.column("int_diff_v2")
        assert np.all(np.diff(ints) < 0)
        assert ints[-1] <= 0.05 * ints[0]
        assert table.column("lh_integrated") == pytest.approx([(0.5 / n) ** 2 * 0.4 for n in n_list])
        assert table.column("lv_distance") == pytest.approx([0.5 / n for n in n_list])
        assert np.all(table.column("base_distance") == 0.0)
        assert table.column("prob_exceed")[0] == 1.0
        assert table.column("prob_exceed")[-1] == 0.0
        assert table.passed

    def test_small_checks_fail_when_not_converged(self, small_cfg, damping_control):
        cfg = small_cfg.with_(nonlinear=False)
        g = NoiseModel.off(2)
        short = solution_convergence_experiment(cfg, damping_control, g, "gain-scale", [1, 2], 2, 1e-3, 0)
        assert not short.checks["final_ratio_small"]
        assert not short.checks["prob_zero_at_last"]
        assert short.checks["int_diff_nonincreasing"]
        tight = solution_convergence_experiment(cfg, damping_control, g, "gain-scale", [1, 2, 4, 8], 2, 1e-6, 0)
        assert tight.checks["final_ratio_small"]
        assert not tight.checks["prob_zero_at_last"]
        assert not tight.passed

    def test_initial_state_outside_ball(self, small_cfg, damping_control, additive_noise):
        with pytest.raises(InstanceError, match="stop_mtilde"):
            solution_convergence_experiment(small_cfg.with_(stop_mtilde=0.5), damping_control,
                                            additive_noise, "gain-scale", [1], 2, 0.01, 0)


class TestTail:
    def test_quiet_problem_never_exceeds(self, small_cfg, damping_control):
        table = tail_experiment(small_cfg, damping_control, NoiseModel.off(2), [0.4, 0.2, 0.1], 2, 0)
        assert np.all(table.column("prob") == 0.0)
        assert table.checks["prob_nonincreasing_as_s_shrinks"]
        assert table.checks["tail_halved"]
        # a sweep that starts at P = 0 says nothing about the decay
        assert table.failed_checks == ["initial_prob_in_range"]

    def test_huge_radius_never_exceeds(self, small_cfg, damping_control, additive_noise):
        cfg = small_cfg.with_(stop_m=1e3)
        table = tail_experiment(cfg, damping_control, additive_noise, [0.4, 0.2, 0.1], 32, 4)
        assert table.params["threshold"] == pytest.approx(1.0 + 999.0 ** 2)
        assert np.all(table.column("prob") == 0.0)
        assert np.all(table.column("prob_ci") == 0.0)

    def test_checks_accept_decaying_tail(self):
        checks = tail_checks([0.3, 0.2, 0.1], [0.05, 0.05, 0.03])
        assert all(checks.values())
        assert tail_checks([0.3, 0.18, 0.16], [0.02, 0.02, 0.02])["tail_halved"]

    def test_checks_reject_slow_or_uninformative_tail(self):
        slow = tail_checks([0.3, 0.28, 0.25], [0.01, 0.01, 0.01])
        assert slow["prob_nonincreasing_as_s_shrinks"]
        assert not slow["tail_halved"]
        assert not tail_checks([0.7, 0.3, 0.1], [0.02, 0.02, 0.02])["initial_prob_in_range"]
        assert not tail_checks([0.02, 0.01, 0.0], [0.01, 0.01, 0.0])["initial_prob_in_range"]
        assert not tail_checks([0.2, 0.4, 0.1], [0.01, 0.01, 0.01])["prob_nonincreasing_as_s_shrinks"]

    def test_initial_state_outside_ball(self, small_cfg, damping_control, additive_noise):
        with pytest.raises(InstanceError, match="stop_mtilde"):
            tail_experiment(small_cfg.with_(stop_mtilde=0.5), damping_control, additive_noise,
                            [0.4, 0.2], 2, 0)

    def test_levels_must_shrink(self, small_cfg, damping_control, additive_noise):
        with pytest.raises(InstanceError, match="decreasing"):
            tail_experiment(small_cfg, damping_control, additive_noise, [0.1, 0.2], 2, 0)

    def test_level_beyond_horizon(self, small_cfg, damping_control, additive_noise):
        with pytest.raises(InstanceError, match="horizon"):
            tail_experiment(small_cfg, damping_control, additive_noise, [1.0, 0.2], 2, 0)


class TestLogMoment:
    def test_decaying_state(self):
        cfg = SimConfig(1, 1.0, 0.1, 1.0, u0=SpectralField.real_from_modes(1, {(1, 0): 0.5}), nonlinear=False)
        phi = FeedbackControl.null(1, 1.0)
        table = log_moment_experiment(cfg, phi, NoiseModel.off(1), [0.1, 0.05], [0.5, 1.0], 2, 0)
        assert table.column("value") == pytest.approx([math.log(1.5)] * 4)
        assert table.passed

    def test_horizon_monotone_with_noise(self, small_cfg, additive_noise):
        phi = FeedbackControl.null(2, 0.4)
        table = log_moment_experiment(small_cfg, phi, additive_noise, [0.02, 0.01], [0.2, 0.4], 32, 9)
        assert table.params["shared_fine_path"]
        assert table.checks["finite"]
        assert table.checks["nondecreasing_in_t"]
        for dt in (0.02, 0.01):
            rows = {t: v for d, t, v, _ in table.rows if d == dt}
            assert rows[0.4] >= rows[0.2]

    def test_control_horizon_too_short(self, small_cfg, additive_noise):
        with pytest.raises(InstanceError, match="horizon"):
            log_moment_experiment(small_cfg, FeedbackControl.null(2, 0.2), additive_noise, [0.02], [0.4], 2, 0)


class TestSchemeChecks:
    def test_strong_order_additive(self, small_cfg, damping_control, additive_noise):
        table = strong_order_experiment(small_cfg, damping_control, additive_noise, 16, 1)
        errors = table.column("rms_error")
        assert np.all(np.diff(errors) < 0)
        assert table.summary["order"] >= 0.8
        assert table.passed

    def test_strong_order_multiplicative(self, small_cfg, damping_control, multiplicative_noise):
        table = strong_order_experiment(small_cfg, damping_control, multiplicative_noise, 32, 6)
        assert table.params["min_order"] == 0.4
        assert table.summary["order"] >= 0.4
        assert table.checks["order_at_least_min"]

    def test_strong_order_levels_checked(self, small_cfg, damping_control, additive_noise):
        with pytest.raises(InstanceError, match="divisible"):
            strong_order_experiment(small_cfg, damping_control, additive_noise, 2, 1, levels=(1, 3))

    @pytest.mark.slow
    def test_ou_variance(self, small_cfg, additive_noise):
        table = ou_variance_experiment(small_cfg, additive_noise, 400, 12)
        assert table.passed
        assert table.column("discrete_form") == pytest.approx(table.column("closed_form"), rel=0.05)
        assert list(table.column("kx")) == [1.0, 0.0]

    def test_ou_needs_additive_noise(self, small_cfg, multiplicative_noise):
        with pytest.raises(InstanceError, match="additive"):
            ou_variance_experiment(small_cfg, multiplicative_noise, 10, 0)

    def test_shared_noise_replay(self, small_cfg, damping_control, multiplicative_noise):
        phis = [damping_control, FeedbackControl.null(2, small_cfg.t_final)]
        table = crn_replay_check(small_cfg, phis, multiplicative_noise, 4, 2)
        assert table.passed
        assert [row[1] for row in table.rows] == [1, 1]
