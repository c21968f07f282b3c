"""Dense linear algebra kernels: matrix-equation solvers, spectra, and a
fixed-step RK4 integrator.

Everything in this module is a pure function of its arguments.  Matrices are
plain ``numpy`` arrays (real, dense, row-major); no wrapper types.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "SpectrumReport",
    "NumericalError",
    "DesignError",
    "DivergenceError",
    "spectrum",
    "abscissa",
    "is_hurwitz",
    "lyapunov_solve",
    "sylvester_solve",
    "are_solve",
    "lqr_gain",
    "rk4_step",
    "ctrb",
]

# Kronecker-vectorized direct solves are exact but O(n^6); above this order
# the Schur-based path takes over.
_KRON_MAX_DIM = 20


class NumericalError(RuntimeError):
    """A solve that should have succeeded did not (singularity, residual
    blow-up, non-convergence)."""


class DesignError(RuntimeError):
    """A design precondition fails (non-Hurwitz, unstabilizable pair, ...)."""


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state.  Carries the time ``t`` at
    which divergence was detected."""

    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalues of a square matrix and their maximal real part."""

    eigenvalues: np.ndarray
    spectral_abscissa: float


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def spectrum(A) -> SpectrumReport:
    """Eigenvalues of ``A`` together with the spectral abscissa.

    Backed by LAPACK's Hessenberg-reduction + shifted-QR eigensolver.
    """
    A = _as_square(A)
    if A.size == 0:
        return SpectrumReport(np.zeros(0, dtype=complex), -np.inf)
    eig = np.linalg.eigvals(A)
    return SpectrumReport(eig, float(np.max(eig.real)))


def abscissa(A) -> float:
    """Maximum real part of the eigenvalues of ``A``."""
    return spectrum(A).spectral_abscissa


def is_hurwitz(A, margin: float = 0.0) -> bool:
    """True iff every eigenvalue of ``A`` has real part < ``-margin``."""
    return abscissa(A) < -margin


def _vec(M):
    # column-stacking vectorization, matching vec(AXB) = (B^T kron A) vec(X)
    return np.asarray(M).flatten(order="F")


def _unvec(v, rows, cols):
    return np.asarray(v).reshape((rows, cols), order="F")


def _lyapunov_core(A, Q):
    """Solve ``P A + A^T P = -Q`` without the public-contract residual gate.

    Intermediate Newton iterates can be extremely ill-scaled while still
    backward stable, so the internal check is relative to the forcing.
    """
    n = A.shape[0]
    if n <= _KRON_MAX_DIM:
        # vec(PA) + vec(A^T P) = -vec(Q)
        L = np.kron(A.T, np.eye(n)) + np.kron(np.eye(n), A.T)
        try:
            p = np.linalg.solve(L, -_vec(Q))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular vectorized Lyapunov system: {exc}") from exc
        P = _unvec(p, n, n)
    else:
        P = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)

    P = 0.5 * (P + P.T)
    res = np.linalg.norm(P @ A + A.T @ P + Q)
    scale = np.linalg.norm(Q) + 2.0 * np.linalg.norm(A) * np.linalg.norm(P) + 1.0
    if not np.isfinite(res) or res > 1e-8 * scale:
        raise NumericalError(f"Lyapunov residual too large: {res:.3e}")
    return P


def lyapunov_solve(A, Q):
    """Solve ``P A + A^T P = -Q`` for symmetric ``P``.

    Parameters
    ----------
    A : (n, n) array_like
        Hurwitz matrix.
    Q : (n, n) array_like
        Symmetric right-hand side; positive definite ``Q`` yields ``P > 0``.

    Returns
    -------
    P : (n, n) ndarray
        Symmetric solution with residual below ``1e-10 * (1 + ||P||)``.

    Raises
    ------
    DesignError
        If ``A`` is not Hurwitz (the offending eigenvalue is reported).
    NumericalError
        If the vectorized system is singular or the residual check fails.
    """
    A = _as_square(A)
    Q = _as_square(Q, "Q")
    if A.shape != Q.shape:
        raise ValueError("A and Q must have matching shapes")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(Q).max())):
        raise ValueError("Q must be symmetric")

    rep = spectrum(A)
    if rep.spectral_abscissa >= 0.0:
        bad = rep.eigenvalues[np.argmax(rep.eigenvalues.real)]
        raise DesignError(f"A is not Hurwitz: eigenvalue {bad} has Re >= 0")

    P = _lyapunov_core(A, Q)
    res = np.linalg.norm(P @ A + A.T @ P + Q)
    if res > 1e-10 * (1.0 + np.linalg.norm(P)):
        raise NumericalError(f"Lyapunov residual too large: {res:.3e}")
    return P


def sylvester_solve(A1, A2, C):
    """Solve ``A1 H - H A2 = C``.

    Requires the spectra of ``A1`` and ``A2`` to be disjoint.
    """
    A1 = _as_square(A1, "A1")
    A2 = _as_square(A2, "A2")
    C = np.asarray(C, dtype=float)
    n1, n2 = A1.shape[0], A2.shape[0]
    if C.shape != (n1, n2):
        raise ValueError(f"C must have shape ({n1}, {n2}), got {C.shape}")

    eig1 = np.linalg.eigvals(A1)
    eig2 = np.linalg.eigvals(A2)
    scale = 1.0 + max(np.abs(eig1).max(initial=0.0), np.abs(eig2).max(initial=0.0))
    sep = np.abs(eig1[:, None] - eig2[None, :]).min()
    if sep <= 1e-9 * scale:
        raise NumericalError(
            f"spectral overlap: eigenvalue separation {sep:.3e} below tolerance"
        )

    if n1 * n2 <= _KRON_MAX_DIM**2:
        L = np.kron(np.eye(n2), A1) - np.kron(A2.T, np.eye(n1))
        try:
            h = np.linalg.solve(L, _vec(C))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular vectorized Sylvester system: {exc}") from exc
        H = _unvec(h, n1, n2)
    else:
        H = scipy.linalg.solve_sylvester(A1, -A2, C)

    res = np.linalg.norm(A1 @ H - H @ A2 - C)
    if not np.isfinite(res) or res > 1e-10 * (1.0 + np.linalg.norm(H)):
        raise NumericalError(f"Sylvester residual too large: {res:.3e}")
    return H


def _bass_gain(A, B, beta, reg):
    """Candidate stabilizing gain via the shifted-Gramian (Bass) construction.

    Solves ``(A + beta I) P + P (A + beta I)^T = 2 B B^T + reg*I`` and returns
    ``K = B^T P^{-1}``; caller must verify that ``A - B K`` is Hurwitz.
    """
    n = A.shape[0]
    M = A + beta * np.eye(n)
    Qb = 2.0 * B @ B.T + reg * np.eye(n)
    # M is anti-stable by choice of beta, so -M^T is Hurwitz.
    P = lyapunov_solve(-M.T, Qb)
    return np.linalg.solve(P, B).T


def _riccati_flow_gain(A, B, Q, Rchol, margin, max_time=None):
    """Integrate the Riccati ODE from zero until the induced gain stabilizes.

    Fallback seed for Newton-Kleinman when the Bass construction fails
    (e.g. stabilizable but uncontrollable pairs).
    """
    n = A.shape[0]
    G = B @ scipy.linalg.cho_solve(Rchol, B.T)
    scale = np.linalg.norm(A) + np.sqrt(np.linalg.norm(Q)) + np.linalg.norm(G)
    dt = 0.4 / max(scale, 1.0)
    if max_time is None:
        max_time = 2000.0 * dt

    def flow(P):
        return A.T @ P + P @ A - P @ G @ P + Q

    P = np.zeros((n, n))
    t = 0.0
    check_every = 25
    step = 0
    while t < max_time:
        k1 = flow(P)
        k2 = flow(P + 0.5 * dt * k1)
        k3 = flow(P + 0.5 * dt * k2)
        k4 = flow(P + dt * k3)
        P = P + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        P = 0.5 * (P + P.T)
        t += dt
        step += 1
        if not np.all(np.isfinite(P)):
            raise NumericalError("Riccati flow diverged while seeding the solver")
        if step % check_every == 0:
            K = scipy.linalg.cho_solve(Rchol, B.T @ P)
            if abscissa(A - B @ K) < -margin:
                return K
    raise DesignError(
        "could not find a stabilizing initial gain: pair (A, B) appears "
        "unstabilizable"
    )


def _initial_stabilizing_gain(A, B, Rchol):
    """A gain K with ``A - B K`` Hurwitz, found cheaply when possible."""
    n, m = B.shape
    if abscissa(A) < 0.0:
        return np.zeros((m, n))
    # A + beta*I must be anti-stable for the shifted Gramian to exist.
    beta0 = max(0.0, -np.linalg.eigvals(np.asarray(A)).real.min()) + 0.5
    norm_a = np.linalg.norm(A)
    for beta in (beta0, norm_a + 0.5, 2.0 * norm_a + 1.0):
        for reg in (0.0, 1e-8 * (1.0 + np.linalg.norm(B) ** 2)):
            try:
                K = _bass_gain(A, B, beta, reg)
            except (NumericalError, DesignError, np.linalg.LinAlgError):
                continue
            if np.all(np.isfinite(K)) and abscissa(A - B @ K) < 0.0:
                return K
    # Stabilizable-but-uncontrollable pairs land here.
    return None


def are_solve(A, B, Q, R, max_iter: int = 60):
    """Stabilizing solution of ``A^T P + P A - P B R^{-1} B^T P + Q = 0``.

    Newton-Kleinman iteration: each sweep solves one Lyapunov equation for the
    current closed loop and updates the gain, starting from a stabilizing seed
    (shifted-Gramian construction, with a Riccati-flow fallback for pairs that
    are stabilizable but not controllable).

    Parameters
    ----------
    A, B : array_like
        Stabilizable pair; ``A`` is (n, n), ``B`` is (n, m).
    Q : (n, n) array_like
        Symmetric nonnegative state weight.
    R : (m, m) array_like
        Symmetric positive-definite input weight.

    Returns
    -------
    P : (n, n) ndarray
        Symmetric nonnegative solution; ``A - B R^{-1} B^T P`` is Hurwitz.

    Raises
    ------
    DesignError
        If no stabilizing initial gain can be found (unstabilizable pair).
    NumericalError
        If the iteration stalls or the final residual/stability check fails.
    """
    A = _as_square(A)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q = _as_square(Q, "Q")
    R = _as_square(R, "R")
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError("B row count must match A")

    try:
        Rchol = scipy.linalg.cho_factor(R)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("R must be symmetric positive definite") from exc

    K = _initial_stabilizing_gain(A, B, Rchol)
    if K is None:
        K = _riccati_flow_gain(A, B, Q, Rchol, margin=0.0)

    G = B @ scipy.linalg.cho_solve(Rchol, B.T)
    P = None
    for it in range(max_iter):
        P_new = _lyapunov_core(A - B @ K, Q + K.T @ R @ K)
        K_newton = scipy.linalg.cho_solve(Rchol, B.T @ P_new)
        # Damped update: back off toward the previous stabilizing gain until
        # the closed loop stays Hurwitz (full steps once near the solution).
        step = 1.0
        while True:
            K_next = K + step * (K_newton - K)
            if np.all(np.isfinite(K_next)) and abscissa(A - B @ K_next) < 0.0:
                break
            step *= 0.5
            if step < 1e-8:
                raise NumericalError(
                    "Newton-Kleinman line search failed to retain stability"
                )
        K = K_next
        if P is not None:
            delta = np.linalg.norm(P_new - P) / (1.0 + np.linalg.norm(P_new))
            P = P_new
            if step == 1.0 and delta < 1e-13:
                break
            if it >= 3 and delta < 1e-9:
                res = np.linalg.norm(A.T @ P + P @ A - P @ G @ P + Q)
                if res <= 1e-10 * (1.0 + np.linalg.norm(P) ** 2):
                    break
        else:
            P = P_new
    else:
        res = np.linalg.norm(A.T @ P + P @ A - P @ G @ P + Q)
        raise NumericalError(
            f"Newton-Kleinman did not converge in {max_iter} iterations "
            f"(residual {res:.3e})"
        )

    P = 0.5 * (P + P.T)
    res = np.linalg.norm(A.T @ P + P @ A - P @ G @ P + Q)
    if not np.isfinite(res) or res > 1e-8 * (1.0 + np.linalg.norm(P) ** 2):
        raise NumericalError(f"Riccati residual too large: {res:.3e}")
    cl = abscissa(A - G @ P)
    if cl >= 0.0:
        raise NumericalError(f"Riccati closed loop not Hurwitz (abscissa {cl:.3e})")
    return P


def lqr_gain(A, B, Q, R):
    """LQR feedback ``K = R^{-1} B^T P`` such that ``A - B K`` is Hurwitz."""
    P = are_solve(A, B, Q, R)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    return np.linalg.solve(np.asarray(R, dtype=float), B.T @ P)


def rk4_step(f, x, t, dt):
    """One classical 4-stage Runge-Kutta step of ``x' = f(t, x)``.

    Raises
    ------
    DivergenceError
        If the new state contains non-finite entries (carries ``t``).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"non-finite state after step at t={t!r}", t=t)
    return x_new


def ctrb(A, B):
    """Controllability matrix ``[B, AB, ..., A^{n-1}B]``."""
    A = _as_square(A)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)
