import math

import numpy as np
import pytest

from gridforge.numerics import (
    DegenerateLoop,
    DiscreteTF,
    ImproperTF,
    NoCrossover,
    NonFinite,
    PoleEvaluation,
    RationalTF,
    StateSpace,
    TFMatrix2,
    apply_channel_integrator,
    bilinear_discretize,
    delay_phase,
    mimo_eval,
    phase_margin,
    rk4_step,
    s,
    simulate_lti,
    singular_values,
    tf_eval,
    tf_feedback,
    tf_sensitivity,
    tf_series,
    tf_to_ss,
)

RNG = np.random.default_rng(20260809)


def rand_stable_tf(rng, max_order=3):
    n = rng.integers(1, max_order + 1)
    poles = -rng.uniform(0.5, 200.0, n)
    zeros = -rng.uniform(0.5, 200.0, rng.integers(0, n + 1))
    num = np.atleast_1d(np.poly(zeros))[::-1] * rng.uniform(0.2, 5.0)
    den = np.atleast_1d(np.poly(poles))[::-1]
    return RationalTF(num, den)


class TestRationalTF:
    def test_dc_gain_of_unity_pole_lag(self):
        tf = RationalTF([1.0], [1.0, 1.0])
        assert tf_eval(tf, 0.0) == pytest.approx(1.0)

    def test_corner_frequency_magnitude(self):
        tau = 1e-3
        tf = RationalTF([1.0], [1.0, tau])
        assert abs(tf_eval(tf, 1j * 1000.0)) == pytest.approx(1 / math.sqrt(2))

    def test_inner_loop_cancellation_eval(self):
        # (0.0033 s + 0.2)/(0.001 s) in series with 1/(0.0033 s + 0.2) is
        # 1/(tau s) with tau = 1e-3 once the common factor is removed
        kc = (3.3e-3 * s + 0.2) / (1e-3 * s)
        gc = 1.0 / (3.3e-3 * s + 0.2)
        composed = tf_series(kc, gc)
        expected = 1.0 / (1j * 0.05)  # independent oracle: 1/(tau s) at s = 50j
        assert tf_eval(composed, 50j) == pytest.approx(expected, rel=1e-12)
        cancelled = composed.cancel()
        assert cancelled.num == pytest.approx((1000.0,))
        assert cancelled.den == pytest.approx((0.0, 1.0))

    def test_pole_evaluation_raises(self):
        tf = RationalTF([1.0], [1.0, 1.0])
        with pytest.raises(PoleEvaluation):
            tf_eval(tf, -1.0)

    def test_series_keeps_common_roots(self):
        a = RationalTF([1.0], [1.0, 1.0])
        b = RationalTF([1.0, 1.0], [1.0])
        prod = tf_series(a, b)
        assert prod.num == pytest.approx((1.0, 1.0))
        assert prod.den == pytest.approx((1.0, 1.0))

    def test_series_identity(self):
        tf = RationalTF([2.0, 1.0], [1.0, 3.0, 1.0])
        one = RationalTF([1.0], [1.0])
        prod = tf_series(one, tf)
        assert prod.num == pytest.approx(tf.num)
        assert prod.den == pytest.approx(tf.den)

    def test_monic_den_normalization(self):
        tf = RationalTF([2.0], [4.0, 2.0])
        assert tf.den[-1] == 1.0
        assert tf_eval(tf, 0.0) == pytest.approx(0.5)

    def test_improper_by_two_rejected(self):
        with pytest.raises(ImproperTF):
            RationalTF([1.0, 0.0, 1.0], [1.0])

    def test_scalar_arithmetic(self):
        tf = 1.0 / (s + 1.0)
        combo = 2.0 * tf + 1.0
        assert tf_eval(combo, 0.0) == pytest.approx(3.0)


class TestFeedback:
    def test_integrator_closes_to_first_order(self):
        tau = 1e-3
        loop = 1.0 / (tau * s)
        closed = tf_feedback(loop)
        assert closed.num == pytest.approx((1000.0,))
        assert closed.den == pytest.approx((1000.0, 1.0))

    def test_integrator_dc_tracking(self):
        closed = tf_feedback(5.0 / s)
        assert tf_eval(closed, 0.0) == pytest.approx(1.0)

    def test_constant_loop(self):
        lq = 2.5  # k_q vbar2 / X as a constant loop
        closed = tf_feedback(RationalTF([lq], [1.0]))
        assert tf_eval(closed, 0.0) == pytest.approx(lq / (1 + lq))

    def test_degenerate_loop(self):
        with pytest.raises(DegenerateLoop):
            tf_feedback(RationalTF([-1.0], [1.0]))

    def test_complementarity_at_random_points(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            tf = rand_stable_tf(rng)
            sv = complex(rng.uniform(0.1, 100.0), rng.uniform(-100.0, 100.0))
            t = tf_feedback(tf).eval_unchecked(sv)
            sens = tf_sensitivity(tf).eval_unchecked(sv)
            assert abs(t + sens - 1.0) < 1e-10


class TestPhaseMargin:
    def test_pure_integrator(self):
        pm = phase_margin(1.0 / (1e-3 * s))
        assert pm.crossover_rad_s == pytest.approx(1000.0, rel=1e-5)
        assert pm.margin_deg == pytest.approx(90.0, abs=1e-3)

    def test_double_integrator_zero_margin(self):
        pm = phase_margin(RationalTF([1.0], [0.0, 0.0, 1.0]))
        assert pm.margin_deg == pytest.approx(0.0, abs=1e-3)
        assert pm.crossover_rad_s == pytest.approx(1.0, rel=1e-5)

    def test_no_crossover(self):
        with pytest.raises(NoCrossover):
            phase_margin(RationalTF([0.5], [1.0]))

    def test_delay_phase_pure_gain(self):
        ph = delay_phase(RationalTF([1.0], [1.0]), 1e-3, 1000.0)
        assert ph == pytest.approx(-math.degrees(1.0))

    def test_delay_phase_zero_delay(self):
        tf = 1.0 / (s + 1.0)
        assert delay_phase(tf, 0.0, 10.0) == pytest.approx(
            math.degrees(np.angle(tf.eval_unchecked(10j)))
        )

    def test_delay_reduces_margin_by_wc_t0(self):
        loop = 1.0 / (1e-3 * s)
        t0 = 5e-5
        pm0 = phase_margin(loop)
        pm1 = phase_margin(loop, delay=t0)
        assert pm1.crossover_rad_s == pytest.approx(pm0.crossover_rad_s, rel=1e-6)
        assert pm0.margin_deg - pm1.margin_deg == pytest.approx(
            math.degrees(pm0.crossover_rad_s * t0), abs=1e-3
        )


class TestMatrix2:
    def test_identity_eval(self):
        ident = TFMatrix2.identity()
        np.testing.assert_allclose(mimo_eval(ident, 3.0 + 2.0j), np.eye(2))

    def test_matmul_matches_numeric(self):
        rng = np.random.default_rng(3)
        a = TFMatrix2([[rand_stable_tf(rng) for _ in range(2)] for _ in range(2)])
        b = TFMatrix2([[rand_stable_tf(rng) for _ in range(2)] for _ in range(2)])
        sv = 2.0 + 5.0j
        np.testing.assert_allclose(
            (a @ b).eval_unchecked(sv), a.eval_unchecked(sv) @ b.eval_unchecked(sv),
            rtol=1e-9,
        )

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(11)
        m = TFMatrix2([[rand_stable_tf(rng, 2) for _ in range(2)] for _ in range(2)])
        minv = m.inverse()
        sv = 1.5 + 0.7j
        np.testing.assert_allclose(
            (m @ minv).eval_unchecked(sv), np.eye(2), atol=1e-8
        )

    def test_channel_integrator(self):
        m = TFMatrix2.from_constant([[1.0, 2.0], [3.0, 4.0]])
        lam_m = apply_channel_integrator(m)
        v = lam_m.eval_unchecked(2.0)
        np.testing.assert_allclose(v, [[1.0, 2.0], [1.5, 2.0]])


class TestSingularValues:
    def test_identity(self):
        assert singular_values(np.eye(2)) == pytest.approx((1.0, 1.0))

    def test_scaled_rotation_equal_sigmas(self):
        r, x = 0.1, 0.7
        zbar2 = r * r + x * x
        m = np.array([[r, x], [-x, r]]) / zbar2
        smax, smin = singular_values(m)
        assert smax == pytest.approx(1.4142135623730951, rel=1e-9)
        assert smin == pytest.approx(smax, rel=1e-9)

    def test_diagonal(self):
        assert singular_values(np.diag([0.5, 0.0])) == pytest.approx((0.5, 0.0))

    def test_product_is_abs_det(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            smax, smin = singular_values(m)
            assert smax * smin == pytest.approx(abs(np.linalg.det(m)), rel=1e-9)

    def test_unitary_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            m = rng.normal(size=(2, 2))
            th = rng.uniform(0, 2 * np.pi)
            q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            assert singular_values(q @ m) == pytest.approx(singular_values(m), rel=1e-9)


class TestStateSpace:
    def test_first_order_realization(self):
        ss = tf_to_ss(RationalTF([1.0], [1.0, 1.0]))
        np.testing.assert_allclose(ss.A, [[-1.0]])
        np.testing.assert_allclose(ss.B, [[1.0]])
        np.testing.assert_allclose(ss.C, [[1.0]])
        np.testing.assert_allclose(ss.D, [[0.0]])

    def test_pi_has_feedthrough(self):
        zc = 40.0
        ss = tf_to_ss((s + zc) / s)
        assert ss.n_states == 1
        assert ss.D[0, 0] == pytest.approx(1.0)
        # (s+z)/s at s = jz is (1+j)/j = 1 - j, magnitude sqrt(2)
        assert ss.freq_response(1j * zc)[0, 0] == pytest.approx(1.0 - 1.0j, rel=1e-12)

    def test_realization_matches_tf_on_sweep(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            tf = rand_stable_tf(rng)
            ss = tf_to_ss(tf)
            for w in np.logspace(-1, 4, 50):
                ref = tf.eval_unchecked(1j * w)
                got = ss.freq_response(1j * w)[0, 0]
                assert abs(got - ref) <= 1e-9 * max(abs(ref), 1e-12)

    def test_improper_raises(self):
        with pytest.raises(ImproperTF):
            tf_to_ss(s + 1.0)


class TestRK4:
    def test_exponential_decay(self):
        model = StateSpace([[-1.0]], [[0.0]], [[1.0]], [[0.0]])
        x = rk4_step(model, [1.0], [0.0], 0.1)
        assert x[0] == pytest.approx(math.exp(-0.1), abs=1e-6)
        assert x[0] == pytest.approx(0.9048375, abs=1e-7)

    def test_zero_derivative(self):
        x = rk4_step(lambda x, u: np.zeros_like(x), [3.0, -2.0], [0.0], 0.5)
        np.testing.assert_allclose(x, [3.0, -2.0])

    def test_nonfinite_raises(self):
        model = StateSpace([[1e300]], [[0.0]], [[1.0]], [[0.0]])
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NonFinite):
                rk4_step(model, [1e300], [0.0], 10.0)

    def test_stable_lti_converges_to_dc(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            w = rng.uniform(1.0, 50.0, 2)
            A = np.diag(-w) + rng.normal(scale=0.1, size=(2, 2))
            if np.linalg.eigvals(A).real.max() >= -0.1:
                continue
            B = rng.normal(size=(2, 1))
            u = np.array([rng.uniform(0.5, 2.0)])
            tau_min = 1.0 / abs(np.linalg.eigvals(A).real).max()
            dt = tau_min / 20.0
            tau_max = 1.0 / abs(np.linalg.eigvals(A).real).min()
            x = np.zeros(2)
            model = StateSpace(A, B, np.eye(2), np.zeros((2, 1)))
            n = int(20.0 * tau_max / dt)
            for _ in range(n):
                x = rk4_step(model, x, u, dt)
            xs = -np.linalg.solve(A, B @ u)
            assert np.linalg.norm(x - xs) <= 1e-3 * np.linalg.norm(xs)


class TestDiscretization:
    def test_dc_gain_preserved(self):
        tf = RationalTF([2.0, 1.0], [4.0, 3.0, 1.0])
        b, a = bilinear_discretize(tf, 1e-3)
        assert b.sum() / a.sum() == pytest.approx(tf.dc_gain(), rel=1e-9)

    def test_integrator_pole_at_one(self):
        b, a = bilinear_discretize((s + 40.0) / s, 1e-4)
        # denominator root of a0 + a1 z^-1 at z^-1 = 1
        assert a.sum() == pytest.approx(0.0, abs=1e-12)

    def test_filter_tracks_continuous_step(self):
        tau = 2e-3
        tf = RationalTF([1.0], [1.0, tau])
        dt = 5e-5
        filt = DiscreteTF.from_tf(tf, dt)
        y = 0.0
        for _ in range(int(20 * tau / dt)):
            y = filt.step(1.0)
        assert y == pytest.approx(1.0, abs=1e-6)

    def test_frequency_response_match_in_band(self):
        tf = RationalTF([1.0, 2.0], [1.0, 3.0, 1.0])
        dt = 1e-4
        b, a = bilinear_discretize(tf, dt)
        w = 20.0
        z = np.exp(-1j * w * dt)  # z^-1
        resp_d = np.polyval(b[::-1], z) / np.polyval(a[::-1], z)
        resp_c = tf.eval_unchecked(1j * w)
        assert abs(resp_d - resp_c) < 1e-4 * abs(resp_c)


class TestSimulateLTI:
    def test_line_step_matches_dc_gain(self):
        # two-state line: L di/dt = A i + u, checked against the DC map
        R, X, w0 = 0.1, 0.7, 2 * math.pi * 60
        L = X / w0
        A = np.array([[-R, X], [-X, -R]]) / L
        B = np.eye(2) / L
        ss = StateSpace(A, B, np.eye(2), np.zeros((2, 2)))
        u = np.array([2.0, -1.0])
        t, y = simulate_lti(ss, lambda t: u, t_end=1.0, dt=1e-4)
        dc = -np.linalg.solve(A, B @ u)
        assert np.linalg.norm(y[-1] - dc) <= 1e-3 * np.linalg.norm(dc)


class TestFrequencyResponse:
    def test_sweep_records(self):
        from gridforge.numerics import ComplexResponse, frequency_response

        tf = 1.0 / (s + 1.0)
        sweep = frequency_response(tf, np.array([0.5, 1.0, 2.0]))
        assert [r.frequency for r in sweep] == [0.5, 1.0, 2.0]
        assert sweep[1].value == pytest.approx((1 / (1 + 1j)))
        with pytest.raises(ValueError):
            ComplexResponse(0.0, 1.0)
