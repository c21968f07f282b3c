import numpy as np
import pytest

from adaptreg.signals import (
    SignalModel,
    build_complex_exosystem,
    build_exosystem,
    coefficients_from_frequencies,
    eval_disturbance,
    eval_reference,
    eval_reference_derivative,
    exosystem_spectrum_ok,
    frequencies_from_coefficients,
)


def two_tone_model():
    """The desk-scale drug-delivery reference: amplitudes 0.005 at w=(20,60)."""
    return SignalModel(
        frequencies=[20.0, 60.0],
        y_const=[0.0, 0.0],
        y_cos=[[0.0, 0.005], [0.0, 0.005]],
        y_sin=[[0.005, 0.0], [0.005, 0.0]],
    )


def single_tone_model(amp=1.0, omega=1.0):
    return SignalModel(
        frequencies=[omega], y_const=[0.0], y_cos=[[0.0]], y_sin=[[amp]]
    )


class TestEvalReference:
    def test_two_tone_at_zero(self):
        y = eval_reference(two_tone_model(), 0.0)
        np.testing.assert_allclose(y, [0.0, 0.01])

    def test_zero_coefficients(self):
        model = SignalModel(
            frequencies=[1.0], y_const=[0.0], y_cos=[[1e-30]], y_sin=[[0.0]]
        )
        for t in (0.0, 0.7, 13.0):
            assert eval_reference(model, t)[0] == pytest.approx(0.0, abs=1e-29)

    def test_single_tone_peak(self):
        y = eval_reference(single_tone_model(), np.pi / 2.0)
        assert y[0] == pytest.approx(1.0)

    def test_vectorized_times(self):
        model = two_tone_model()
        ts = np.linspace(0.0, 1.0, 7)
        batch = eval_reference(model, ts)
        assert batch.shape == (7, 2)
        for i, t in enumerate(ts):
            np.testing.assert_allclose(batch[i], eval_reference(model, t))


class TestDerivatives:
    def test_two_tone_first_derivative(self):
        d = eval_reference_derivative(two_tone_model(), 0.0, 1)
        assert d[0] == pytest.approx(0.005 * 20.0 + 0.005 * 60.0)
        assert d[1] == pytest.approx(0.0, abs=1e-15)

    def test_constant_signal(self):
        model = SignalModel(
            frequencies=[2.0], y_const=[3.0], y_cos=[[1.0]], y_sin=[[0.0]]
        )
        flat = SignalModel(frequencies=[], y_const=[3.0], y_cos=np.zeros((0, 1)),
                           y_sin=np.zeros((0, 1)))
        assert eval_reference_derivative(flat, 1.3, 0)[0] == pytest.approx(3.0)
        del model

    def test_second_derivative_of_sin(self):
        # d^2/dt^2 sin(2t) = -4 sin(2t); at t = pi/4 this is -4
        model = single_tone_model(amp=1.0, omega=2.0)
        d2 = eval_reference_derivative(model, np.pi / 4.0, 2)
        assert d2[0] == pytest.approx(-4.0)

    def test_order_zero_matches_reference(self):
        model = two_tone_model()
        for t in (0.0, 0.3, 2.2):
            np.testing.assert_allclose(
                eval_reference_derivative(model, t, 0), eval_reference(model, t)
            )

    def test_order_out_of_range(self):
        with pytest.raises(ValueError):
            eval_reference_derivative(two_tone_model(), 0.0, 5)
        with pytest.raises(ValueError):
            eval_reference_derivative(two_tone_model(), 0.0, -1)

    @pytest.mark.parametrize("order", [1, 2])
    def test_matches_finite_differences(self, order):
        model = two_tone_model()
        h = 1e-4
        rng = np.random.default_rng(3)
        for t in rng.uniform(0.0, 1.0, size=5):
            if order == 1:
                fd = (eval_reference(model, t + h) - eval_reference(model, t - h)) / (
                    2.0 * h
                )
            else:
                fd = (
                    eval_reference(model, t + h)
                    - 2.0 * eval_reference(model, t)
                    + eval_reference(model, t - h)
                ) / h**2
            exact = eval_reference_derivative(model, t, order)
            # central differences are O(h^2); scale by signal stiffness
            np.testing.assert_allclose(fd, exact, atol=60.0**order * h**2 * 50.0)


class TestDisturbance:
    def test_default_zero(self):
        assert eval_disturbance(two_tone_model(), 1.0).shape == (0,)

    def test_constant_only(self):
        model = SignalModel(
            frequencies=[1.0],
            y_const=[0.0],
            y_cos=[[1.0]],
            y_sin=[[0.0]],
            w_const=[2.5],
        )
        for t in (0.0, 1.0, 9.9):
            assert eval_disturbance(model, t)[0] == pytest.approx(2.5)

    def test_single_tone_at_zero_gives_cosine_coefficient(self):
        model = SignalModel(
            frequencies=[3.0],
            y_const=[0.0],
            y_cos=[[1.0]],
            y_sin=[[0.0]],
            w_const=[0.0, 0.0],
            w_cos=[[0.7, -0.2]],
            w_sin=[[0.1, 0.4]],
        )
        np.testing.assert_allclose(eval_disturbance(model, 0.0), [0.7, -0.2])


class TestFrequencyCoefficients:
    def test_single_unit_frequency(self):
        np.testing.assert_allclose(coefficients_from_frequencies([1.0]), [-1.0])

    def test_drug_delivery_pair(self):
        # expand (lambda^2 + 400)(lambda^2 + 3600)
        a = coefficients_from_frequencies([20.0, 60.0])
        np.testing.assert_allclose(a, [-1_440_000.0, -4000.0])

    def test_one_two_pair(self):
        np.testing.assert_allclose(
            coefficients_from_frequencies([1.0, 2.0]), [-4.0, -5.0]
        )

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError):
            coefficients_from_frequencies([2.0, 2.0])

    def test_inverse_single(self):
        freqs, ok = frequencies_from_coefficients([-1.0])
        assert ok
        np.testing.assert_allclose(freqs, [1.0])

    def test_inverse_drug_delivery(self):
        freqs, ok = frequencies_from_coefficients([-1_440_000.0, -4000.0])
        assert ok
        np.testing.assert_allclose(freqs, [20.0, 60.0], rtol=1e-12)

    def test_non_oscillatory_flagged(self):
        # lambda^2 - 1 has roots +-1 on the real axis
        freqs, ok = frequencies_from_coefficients([1.0])
        assert not ok
        assert freqs.shape == (1,)

    def test_round_trip_random(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            q0 = int(rng.integers(1, 4))
            freqs = np.sort(rng.uniform(0.1, 50.0, size=q0))
            while np.any(np.diff(freqs) < 1e-3):
                freqs = np.sort(rng.uniform(0.1, 50.0, size=q0))
            back, ok = frequencies_from_coefficients(
                coefficients_from_frequencies(freqs)
            )
            assert ok
            np.testing.assert_allclose(back, freqs, rtol=1e-9, atol=1e-9)


class TestExosystem:
    def test_spectrum_matches_frequencies(self):
        assert exosystem_spectrum_ok(two_tone_model())
        assert exosystem_spectrum_ok(single_tone_model(omega=0.37))

    def test_dimensions(self):
        exo = build_exosystem(two_tone_model())
        assert exo.q == 5
        assert exo.S.shape == (5, 5)
        assert exo.F.shape == (2, 5)

    def test_state_reproduces_reference(self):
        from adaptreg.linalg import rk4_step

        model = two_tone_model()
        exo = build_exosystem(model)
        v = exo.v0.copy()
        dt = 2e-4
        t = 0.0
        for _ in range(1000):
            v = rk4_step(lambda s, x: exo.S @ x, v, t, dt)
            t += dt
        # global RK4 error ~ T * (w dt)^4 * w * amp is well below 1e-9 here
        np.testing.assert_allclose(-exo.F @ v, eval_reference(model, t), atol=1e-9)

    def test_complex_exosystem_reproduces_reference(self):
        import scipy.linalg

        model = two_tone_model()
        S, E, F, v0 = build_complex_exosystem(model)
        for t in (0.0, 0.21, 1.7):
            v = scipy.linalg.expm(S * t) @ v0
            y = -(F @ v)
            np.testing.assert_allclose(y.imag, 0.0, atol=1e-12)
            np.testing.assert_allclose(y.real, eval_reference(model, t), atol=1e-10)


class TestSignalModelValidation:
    def test_rejects_unsorted_frequencies(self):
        with pytest.raises(ValueError):
            SignalModel(
                frequencies=[2.0, 1.0],
                y_const=[0.0],
                y_cos=[[1.0], [1.0]],
                y_sin=[[0.0], [0.0]],
            )

    def test_rejects_silent_frequency(self):
        with pytest.raises(ValueError, match="appear"):
            SignalModel(
                frequencies=[1.0, 2.0],
                y_const=[0.0],
                y_cos=[[1.0], [0.0]],
                y_sin=[[0.0], [0.0]],
            )
