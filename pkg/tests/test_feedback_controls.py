import numpy as np
import pytest

from feedback_controls import (
    FeedbackControl,
    HorizonError,
    SequenceScheme,
    control_sequence,
    eval_control,
    integrated_lh_distance,
    lipschitz_constants,
    lv_operator_distance,
    set_mode_value,
)
from spectral_core import SpectralField, TruncationMismatch, random_real_field, sobolev_norms


def unit_state():
    return SpectralField.real_from_modes(2, {(1, 0): 1.0})


class TestEvaluation:
    def test_null_control_is_zero(self):
        phi = FeedbackControl.null(2, 1.0)
        value = eval_control(phi, 0.3, unit_state())
        assert np.all(value.field.amps == 0)
        assert not value.capped

    def test_constant_gain_keeps_reality(self):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): -0.5}, cap_k=10.0)
        out = eval_control(phi, 0.5, unit_state()).field
        assert out.amp((1, 0)) == pytest.approx(-0.5)
        assert out.amp((-1, 0)) == pytest.approx(0.5)
        assert out.is_real()

    def test_base_forcing_partner(self):
        phi = FeedbackControl.build(2, 1.0, base={(0, 1): 0.2 + 0.1j}, cap_k=10.0)
        out = eval_control(phi, 0.0, SpectralField.zeros(2)).field
        assert out.amp((0, 1)) == pytest.approx(0.2 + 0.1j)
        assert out.amp((0, -1)) == pytest.approx(-(0.2 - 0.1j))

    def test_piecewise_linear_profile(self):
        phi = FeedbackControl.build(2, 2.0, gains={(1, 0): [(0.0, -1.0), (2.0, 0.0)]}, cap_k=10.0)
        out = eval_control(phi, 0.5, unit_state()).field
        assert out.amp((1, 0)) == pytest.approx(-0.75)
        assert list(phi.knots) == [0.0, 2.0]

    def test_cap_rescales_to_k(self):
        phi = FeedbackControl.build(2, 1.0, base={(1, 0): 5.0}, cap_k=1.0)
        value = eval_control(phi, 0.0, SpectralField.zeros(2))
        assert value.capped
        assert sobolev_norms(value.field).v == pytest.approx(1.0)

    def test_affine_below_cap(self, rng):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): [(0.0, -1.0), (1.0, 0.5)], (1, 1): -0.3},
                                    base={(0, 1): 0.2 + 0.1j}, cap_k=1e6)
        for _ in range(100):
            u, v = random_real_field(2, rng), random_real_field(2, rng)
            a = rng.uniform(-2.0, 2.0)
            t = rng.uniform(0.0, 1.0)
            mixed = eval_control(phi, t, u * a + v * (1.0 - a))
            split = eval_control(phi, t, u).field * a + eval_control(phi, t, v).field * (1.0 - a)
            assert not mixed.capped
            assert np.allclose(mixed.field.amps, split.amps, rtol=1e-12, atol=1e-14)
            # the linear part alone is homogeneous
            f = eval_control(phi, t, SpectralField.zeros(2)).field
            scaled = eval_control(phi, t, u * a).field - f
            assert np.allclose(scaled.amps, ((eval_control(phi, t, u).field - f) * a).amps,
                               rtol=1e-12, atol=1e-14)

    def test_outside_horizon(self):
        phi = FeedbackControl.null(2, 1.0)
        with pytest.raises(HorizonError):
            eval_control(phi, 1.5, unit_state())

    def test_truncation_checked(self):
        with pytest.raises(TruncationMismatch):
            eval_control(FeedbackControl.null(2, 1.0), 0.0, SpectralField.zeros(3))

    def test_breakpoint_outside_horizon(self):
        with pytest.raises(HorizonError):
            FeedbackControl.build(2, 1.0, gains={(1, 0): [(0.0, 1.0), (2.0, 0.0)]})

    def test_support_radius(self):
        phi = FeedbackControl.build(3, 1.0, gains={(1, 0): -0.1, (2, -1): -0.2})
        assert phi.support_radius == 2
        assert FeedbackControl.null(3, 1.0).support_radius == 0


class TestLipschitz:
    def test_constant_profiles(self):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): -0.5, (0, 1): 0.25}, cap_k=10.0)
        consts = lipschitz_constants(phi)
        assert consts.c1 == 0.0
        assert consts.c2 == pytest.approx(0.25)

    def test_time_varying_profiles(self):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): [(0.0, -1.0), (1.0, 0.0)]}, cap_k=10.0,
                                    state_radius=2.0)
        consts = phi.lipschitz
        assert consts.c1 == pytest.approx(2.0 * (1.0 * 2.0) ** 2)
        assert consts.c2 == pytest.approx(2.0)

    def test_state_bound_on_random_pairs(self, rng):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): -0.7, (1, 1): 0.4}, cap_k=100.0)
        c2 = phi.lipschitz.c2
        for _ in range(200):
            x, y = random_real_field(2, rng), random_real_field(2, rng)
            fx = eval_control(phi, 0.4, x).field
            fy = eval_control(phi, 0.4, y).field
            assert sobolev_norms(fx - fy).v ** 2 <= c2 * sobolev_norms(x - y).v ** 2 + 1e-12

    def test_time_bound_on_ball(self, rng):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): [(0.0, -1.0), (1.0, 0.5)]},
                                    base={(0, 1): [(0.0, 0.0), (1.0, 0.3)]}, cap_k=100.0, state_radius=1.0)
        c1 = phi.lipschitz.c1
        for _ in range(100):
            x = random_real_field(2, rng)
            x = x * (rng.uniform(0.0, 1.0) / sobolev_norms(x).v)
            t, s = rng.uniform(0.0, 1.0, 2)
            diff = eval_control(phi, t, x).field - eval_control(phi, s, x).field
            assert sobolev_norms(diff).v ** 2 <= c1 * (t - s) ** 2 + 1e-12


class TestSequences:
    """phi_n -> phi in sup_t ||.||_{L(V)} for every scheme."""

    def test_gain_scale_distance(self):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): -0.5}, cap_k=10.0)
        for n in (1, 2, 4, 8):
            dist = lv_operator_distance(phi, control_sequence(phi, n, "gain-scale"))
            assert dist.operator == pytest.approx(0.5 / n)
            assert dist.base == 0.0

    def test_mode_truncate_beyond_support_is_identity(self):
        phi = FeedbackControl.build(3, 1.0, gains={(1, 0): -0.5, (2, 1): -0.1}, cap_k=10.0)
        same = control_sequence(phi, 2, SequenceScheme.MODE_TRUNCATE)
        assert np.array_equal(same.gains, phi.gains)
        cut = control_sequence(phi, 1, SequenceScheme.MODE_TRUNCATE)
        assert lv_operator_distance(phi, cut).operator == pytest.approx(0.1)

    def test_time_mollify_converges(self):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): [(0.0, -1.0), (0.5, 0.0), (1.0, -1.0)]},
                                    cap_k=10.0)
        dists = [lv_operator_distance(phi, control_sequence(phi, n, "time-mollify")).operator
                 for n in (2, 4, 8, 16)]
        assert all(b < a for a, b in zip(dists, dists[1:]))
        assert dists[-1] < 0.2

    def test_time_mollify_keeps_constants(self):
        phi = FeedbackControl.build(2, 1.0, gains={(1, 0): -0.3}, base={(0, 1): 0.2}, cap_k=10.0)
        smooth = control_sequence(phi, 5, "time-mollify")
        dist = lv_operator_distance(phi, smooth)
        assert dist.operator == pytest.approx(0.0, abs=1e-14)
        assert dist.base == pytest.approx(0.0, abs=1e-14)

    def test_integrated_distance(self):
        phi = FeedbackControl.build(2, 2.0, gains={(1, 0): -0.5}, cap_k=10.0)
        phi_4 = control_sequence(phi, 4, "gain-scale")
        assert integrated_lh_distance(phi, phi_4) == pytest.approx((0.5 / 4) ** 2 * 2.0)

    def test_bad_index(self):
        phi = FeedbackControl.null(2, 1.0)
        with pytest.raises(ValueError):
            control_sequence(phi, 0, "gain-scale")

    def test_horizon_mismatch(self):
        with pytest.raises(HorizonError):
            lv_operator_distance(FeedbackControl.null(2, 1.0), FeedbackControl.null(2, 2.0))


class TestSetModeValue:
    def test_gain_sets_partner(self):
        phi = set_mode_value(FeedbackControl.null(2, 1.0, cap_k=10.0), "gain", (1, 0), -0.8)
        out = eval_control(phi, 0.0, unit_state()).field
        assert out.amp((1, 0)) == pytest.approx(-0.8)
        assert out.amp((-1, 0)) == pytest.approx(0.8)

    def test_base(self):
        phi = set_mode_value(FeedbackControl.null(2, 1.0, cap_k=10.0), "base", (0, 1), 0.3)
        out = eval_control(phi, 0.0, SpectralField.zeros(2)).field
        assert out.is_real()
        assert out.amp((0, 1)) == pytest.approx(0.3)

    def test_unknown_role(self):
        with pytest.raises(ValueError, match="role"):
            set_mode_value(FeedbackControl.null(2, 1.0), "damping", (1, 0), 1.0)
