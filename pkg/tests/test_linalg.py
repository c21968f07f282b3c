import numpy as np
import pytest

from adaptreg.linalg import (
    DesignError,
    DivergenceError,
    NumericalError,
    abscissa,
    are_solve,
    ctrb,
    lqr_gain,
    lyapunov_solve,
    rk4_step,
    spectrum,
    sylvester_solve,
)


def random_hurwitz(rng, n, shift=1.0):
    A = rng.standard_normal((n, n))
    return A - (abscissa(A) + shift) * np.eye(n)


def random_spd(rng, n):
    M = rng.standard_normal((n, n))
    return M @ M.T + n * np.eye(n)


class TestSpectrum:
    def test_diagonal(self):
        rep = spectrum(np.diag([-1.0, -2.0]))
        assert rep.spectral_abscissa == pytest.approx(-1.0)

    def test_rotation_generator(self):
        rep = spectrum(np.array([[0.0, 2.0], [-2.0, 0.0]]))
        assert sorted(np.round(rep.eigenvalues.imag, 9)) == [-2.0, 2.0]
        assert rep.spectral_abscissa == pytest.approx(0.0, abs=1e-12)

    def test_companion_double_root(self):
        # companion of lambda^2 + 2 lambda + 1 = (lambda + 1)^2
        A = np.array([[0.0, 1.0], [-1.0, -2.0]])
        rep = spectrum(A)
        np.testing.assert_allclose(rep.eigenvalues, [-1.0, -1.0], atol=1e-7)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            spectrum(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestLyapunov:
    def test_scalar(self):
        P = lyapunov_solve(np.array([[-1.0]]), np.array([[1.0]]))
        assert P[0, 0] == pytest.approx(0.5)

    def test_hand_derived_2x2(self):
        # solving the 3-unknown symmetric system by hand for
        # A = [[0,1],[-1,-2]], Q = I gives P = [[1.5, 0.5], [0.5, 0.5]]
        A = np.array([[0.0, 1.0], [-1.0, -2.0]])
        P = lyapunov_solve(A, np.eye(2))
        np.testing.assert_allclose(P, [[1.5, 0.5], [0.5, 0.5]], atol=1e-12)

    def test_decoupled_diagonal(self):
        P = lyapunov_solve(np.diag([-1.0, -3.0]), np.diag([2.0, 6.0]))
        np.testing.assert_allclose(P, np.eye(2), atol=1e-12)

    def test_non_hurwitz_rejected(self):
        with pytest.raises(DesignError, match="not Hurwitz"):
            lyapunov_solve(np.array([[1.0]]), np.array([[1.0]]))

    def test_positive_definite_output(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            P = lyapunov_solve(random_hurwitz(rng, n), random_spd(rng, n))
            assert np.linalg.eigvalsh(P).min() > 0.0

    def test_random_residuals_both_paths(self):
        rng = np.random.default_rng(11)
        for n in (3, 8, 20, 21, 35, 50):
            A = random_hurwitz(rng, n)
            Q = random_spd(rng, n)
            P = lyapunov_solve(A, Q)
            res = np.linalg.norm(P @ A + A.T @ P + Q)
            assert res <= 1e-8 * (1.0 + np.linalg.norm(P))


class TestSylvester:
    def test_scalar(self):
        H = sylvester_solve(np.array([[2.0]]), np.array([[1.0]]), np.array([[3.0]]))
        assert H[0, 0] == pytest.approx(3.0)

    def test_identity_case(self):
        H = sylvester_solve(np.zeros((2, 2)), -np.eye(2), np.eye(2))
        np.testing.assert_allclose(H, np.eye(2), atol=1e-12)

    def test_hand_derived_rectangular(self):
        # (A1 + I) H = C with A1 a rotation generator
        A1 = np.array([[0.0, 1.0], [-1.0, 0.0]])
        H = sylvester_solve(A1, np.array([[-1.0]]), np.array([[1.0], [0.0]]))
        np.testing.assert_allclose(H, [[0.5], [0.5]], atol=1e-12)

    def test_spectral_overlap_rejected(self):
        with pytest.raises(NumericalError, match="overlap"):
            sylvester_solve(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))

    def test_random_residuals(self):
        rng = np.random.default_rng(13)
        for n1, n2 in ((4, 3), (12, 20), (30, 7), (25, 25)):
            A1 = random_hurwitz(rng, n1) + 3.0 * np.eye(n1)
            A2 = random_hurwitz(rng, n2) - 1.0 * np.eye(n2)
            C = rng.standard_normal((n1, n2))
            H = sylvester_solve(A1, A2, C)
            res = np.linalg.norm(A1 @ H - H @ A2 - C)
            assert res <= 1e-8 * (1.0 + np.linalg.norm(H))


class TestRiccati:
    def test_scalar_integrator(self):
        P = are_solve(np.array([[0.0]]), np.array([[1.0]]), np.eye(1), np.eye(1))
        assert P[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_scalar_unstable(self):
        # positive root of 2 p - p^2 + 1 = 0
        P = are_solve(np.array([[1.0]]), np.array([[1.0]]), np.eye(1), np.eye(1))
        assert P[0, 0] == pytest.approx(1.0 + np.sqrt(2.0), abs=1e-10)

    def test_decoupled(self):
        P = are_solve(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2))
        np.testing.assert_allclose(P, np.eye(2), atol=1e-9)

    def test_random_instances_stabilized(self):
        rng = np.random.default_rng(17)
        for _ in range(15):
            n = int(rng.integers(2, 12))
            m = int(rng.integers(1, 4))
            A = rng.standard_normal((n, n))
            B = rng.standard_normal((n, m))
            Q = random_spd(rng, n)
            R = random_spd(rng, m)
            P = are_solve(A, B, Q, R)
            K = np.linalg.solve(R, B.T @ P)
            assert abscissa(A - B @ K) < 0.0
            res = np.linalg.norm(A.T @ P + P @ A - P @ B @ K + Q)
            assert res <= 1e-8 * (1.0 + np.linalg.norm(P) ** 2)
            assert np.linalg.eigvalsh(P).min() > -1e-9

    def test_stabilizable_not_controllable(self):
        # uncontrollable but stable second mode; marginal first mode must
        # still be pushed into the left half plane
        A = np.diag([0.0, -2.0])
        B = np.array([[1.0], [0.0]])
        P = are_solve(A, B, np.eye(2), np.eye(1))
        K = B.T @ P
        assert abscissa(A - B @ K) < 0.0

    def test_unstabilizable_rejected(self):
        A = np.diag([1.0, -1.0])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(DesignError):
            are_solve(A, B, np.eye(2), np.eye(1))

    def test_lqr_gain_contract(self):
        rng = np.random.default_rng(23)
        A = rng.standard_normal((4, 4))
        B = rng.standard_normal((4, 2))
        K = lqr_gain(A, B, np.eye(4), np.eye(2))
        assert K.shape == (2, 4)
        assert abscissa(A - B @ K) < 0.0


class TestRk4:
    def test_fixed_point(self):
        x0 = np.array([1.0, -2.0])
        x1 = rk4_step(lambda t, x: np.zeros_like(x), x0, 0.0, 0.37)
        np.testing.assert_array_equal(x1, x0)

    def test_exponential_decay(self):
        x1 = rk4_step(lambda t, x: -x, np.array([1.0]), 0.0, 0.1)
        assert x1[0] == pytest.approx(np.exp(-0.1), abs=1e-7)

    def test_rotation_norm_preserved(self):
        W = np.array([[0.0, 1.0], [-1.0, 0.0]])
        x = np.array([1.0, 0.0])
        dt = 0.01
        for k in range(100):
            x = rk4_step(lambda t, y: W @ y, x, k * dt, dt)
        assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-9)

    def test_fourth_order_convergence(self):
        lam = -1.0

        def global_error(dt):
            x = np.array([1.0])
            t = 0.0
            while t < 1.0 - 1e-12:
                x = rk4_step(lambda s, y: lam * y, x, t, dt)
                t += dt
            return abs(x[0] - np.exp(lam))

        ratio = global_error(0.05) / global_error(0.025)
        assert 12.0 < ratio < 20.0

    def test_divergence_carries_time(self):
        def blow_up(t, x):
            return np.array([np.inf])

        with pytest.raises(DivergenceError) as exc_info:
            rk4_step(blow_up, np.array([1.0]), 3.5, 0.1)
        assert exc_info.value.t == 3.5

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            rk4_step(lambda t, x: x, np.array([1.0]), 0.0, 0.0)


def test_ctrb_shape_and_rank():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    C = ctrb(A, B)
    assert C.shape == (2, 2)
    assert np.linalg.matrix_rank(C) == 2
