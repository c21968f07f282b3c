"""Time-varying internal model and observer-based controller assembly.

The internal model is a block-diagonal marginal oscillator bank: one p x p
zero block for the constant mode plus one rotation block per estimated
frequency, each repeated over all p error channels.  Around it sits an
observer-based stabilizer (output injection L, feedback split K = [K1, K2]).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DesignError, abscissa, are_solve, ctrb, spectrum
from .plants import PlantRealization

__all__ = [
    "InternalModelBlock",
    "ControllerRealization",
    "build_internal_model",
    "internal_model_dimension",
    "im_pair_controllable",
    "design_L",
    "assemble_controller",
    "controller_operators",
]


@dataclass(frozen=True)
class InternalModelBlock:
    """Marginal oscillator bank carrying the current frequency estimates.

    ``degenerate`` is set when estimates coincide or sit at zero within
    1e-9: the pair (G1, G2) is then not controllable and gain design must
    hold the previous gain instead of re-solving.
    """

    p: int
    q0: int
    omega_hat: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    degenerate: bool

    @property
    def dim(self) -> int:
        return self.p * (2 * self.q0 + 1)


def build_internal_model(omega_hat, p: int) -> InternalModelBlock:
    """Internal model block for the given frequency estimates.

    G1 = blockdiag(0_p, w_1 Omega_p, ..., w_q0 Omega_p) with
    Omega_p = [[0, I_p], [-I_p, 0]]; G2 stacks I_p into the constant block
    and into the first half of every rotation block.
    """
    omega_hat = np.atleast_1d(np.asarray(omega_hat, dtype=float))
    if p < 1:
        raise ValueError("p must be at least 1")
    q0 = len(omega_hat)
    dim = p * (2 * q0 + 1)
    G1 = np.zeros((dim, dim))
    G2 = np.zeros((dim, p))
    G2[:p] = np.eye(p)
    Ip = np.eye(p)
    for k, w in enumerate(omega_hat):
        at = p * (1 + 2 * k)
        G1[at:at + p, at + p:at + 2 * p] = w * Ip
        G1[at + p:at + 2 * p, at:at + p] = -w * Ip
        G2[at:at + p] = Ip
    tol = 1e-9
    degenerate = bool(np.any(omega_hat < tol)) or (
        q0 > 1 and bool(np.any(np.diff(np.sort(omega_hat)) < tol))
    )
    return InternalModelBlock(p=p, q0=q0, omega_hat=omega_hat, G1=G1, G2=G2,
                              degenerate=degenerate)


def internal_model_dimension(block: InternalModelBlock, omega: float) -> int:
    """Numerical dimension of ker(i*omega - G1).

    Counts singular values below ``1e-8 * ||G1||``; the defining property of
    an internal model is that this is at least p at every signal frequency
    (including zero).
    """
    if omega < 0.0:
        raise ValueError("omega must be nonnegative")
    dim = block.G1.shape[0]
    M = 1j * omega * np.eye(dim) - block.G1
    sv = np.linalg.svd(M, compute_uv=False)
    scale = max(np.linalg.norm(block.G1, 2), 1.0)
    return int(np.sum(sv < 1e-8 * scale))


def im_pair_controllable(block: InternalModelBlock, rel_tol: float = 1e-8) -> bool:
    """Full-rank test of the (G1, G2) controllability matrix via SVD."""
    sv = np.linalg.svd(ctrb(block.G1, block.G2), compute_uv=False)
    return bool(sv[block.dim - 1] > rel_tol * sv[0])


def design_L(plant: PlantRealization, state_weight=None, output_weight=None) -> np.ndarray:
    """Output-injection gain with ``A + L C`` Hurwitz via the dual Riccati
    equation on (A^T, C^T).

    Raises
    ------
    DesignError
        If the pair is undetectable (the dual solve cannot stabilize).
    """
    n, p = plant.n, plant.p
    V = np.eye(n) if state_weight is None else np.asarray(state_weight, dtype=float)
    W = np.eye(p) if output_weight is None else np.asarray(output_weight, dtype=float)
    # the design is invariant under (C, W) -> (C/s, W/s^2); normalizing C
    # keeps the default weights meaningful for FEM plants whose output
    # functionals are O(domain-area)
    scale = np.linalg.norm(plant.C) / np.sqrt(p)
    if scale <= 0.0:
        raise DesignError("C is zero; (A, C) undetectable")
    Csc = plant.C / scale
    try:
        Sigma = are_solve(plant.A.T, Csc.T, V, W)
    except DesignError as exc:
        raise DesignError(f"(A, C) appears undetectable: {exc}") from exc
    L = -Sigma @ Csc.T @ np.linalg.inv(W) / scale
    margin = abscissa(plant.A + L @ plant.C)
    if margin >= 0.0:
        raise DesignError(f"A + LC not Hurwitz after design (abscissa {margin:.3e})")
    return L


@dataclass(frozen=True)
class ControllerRealization:
    """Snapshot of the full error-feedback controller.

    The controller state is (internal model, plant observer); its operators
    for the current frequency estimates and gain are stored assembled.  The
    closed-loop assembler rebuilds them for time-varying estimates/gains.
    """

    im: InternalModelBlock
    L: np.ndarray
    K1: np.ndarray
    K2: np.ndarray
    G1_full: np.ndarray
    G2_full: np.ndarray
    K_full: np.ndarray

    @property
    def dim(self) -> int:
        return self.G1_full.shape[0]


def controller_operators(block: InternalModelBlock, plant: PlantRealization,
                         L, K1, K2):
    """Assembled controller operators for one (estimate, gain) snapshot.

    Returns (cG1, cG2, K) with the observer-based structure: the internal
    model feeds the plant observer through (B + L D) K1, the observer runs
    A + (B + L D) K2 + L C, and the error enters as [G2; -L].
    """
    L = np.asarray(L, dtype=float)
    K1 = np.asarray(K1, dtype=float)
    K2 = np.asarray(K2, dtype=float)
    n, dim_z0 = plant.n, block.dim
    BLD = plant.B + L @ plant.D
    cG1 = np.zeros((dim_z0 + n, dim_z0 + n))
    cG1[:dim_z0, :dim_z0] = block.G1
    cG1[dim_z0:, :dim_z0] = BLD @ K1
    cG1[dim_z0:, dim_z0:] = plant.A + BLD @ K2 + L @ plant.C
    cG2 = np.vstack([block.G2, -L])
    K = np.hstack([K1, K2])
    return cG1, cG2, K


def assemble_controller(block: InternalModelBlock, plant: PlantRealization,
                        L, K1, K2) -> ControllerRealization:
    """Build and validate a controller snapshot.

    Raises
    ------
    DesignError
        If ``A + L C`` is not Hurwitz (reports the spectral abscissa).
    """
    L = np.asarray(L, dtype=float).reshape(plant.n, plant.p)
    K1 = np.asarray(K1, dtype=float).reshape(plant.m, block.dim)
    K2 = np.asarray(K2, dtype=float).reshape(plant.m, plant.n)
    margin = abscissa(plant.A + L @ plant.C)
    if margin >= 0.0:
        raise DesignError(f"A + LC must be Hurwitz, abscissa {margin:.3e}")
    cG1, cG2, K = controller_operators(block, plant, L, K1, K2)
    return ControllerRealization(im=block, L=L, K1=K1, K2=K2,
                                 G1_full=cG1, G2_full=cG2, K_full=K)


def im_spectrum_imaginary(block: InternalModelBlock, tol: float = 1e-10) -> bool:
    """The oscillator bank's spectrum must sit on the imaginary axis."""
    eig = spectrum(block.G1).eigenvalues
    return bool(np.all(np.abs(eig.real) <= tol * (1.0 + np.abs(eig))))
