"""Online selection of the stabilizing gain K(t).

The scheduler holds a piecewise-constant gain, re-checks closed-loop
stability of the design pair at a fixed period, and re-solves only when the
current gain has gone stale (frequency estimates moved too far).  Two gain
designs are available: a Riccati solve on the stacked pair, and the cheaper
block-diagonalizing similarity design (one Sylvester solve plus a small
Riccati problem on the internal model).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace

import numpy as np

from .internal_model import InternalModelBlock
from .linalg import (
    DesignError,
    NumericalError,
    abscissa,
    are_solve,
    lqr_gain,
    sylvester_solve,
)
from .plants import PlantRealization

__all__ = [
    "SchedulerConfig",
    "GainSchedule",
    "default_scheduler_config",
    "stacked_pair",
    "riccati_gain",
    "sylvester_gain",
    "design_gain",
    "initial_schedule",
    "schedule_step",
    "gain_at",
    "finalize_schedule",
]


@dataclass(frozen=True)
class SchedulerConfig:
    """Gain-design weights and re-check policy.

    ``stability_floor`` is the strict margin demanded of the re-check: a
    zero threshold would chatter on axis-grazing spectra.  ``mode`` selects
    the design ('riccati' or 'sylvester'); the sylvester mode needs a plant
    stabilizer ``K21`` (with ``A + B K21`` Hurwitz), built once offline by
    :func:`default_scheduler_config`.
    """

    h: float
    mode: str = "riccati"
    beta0: float = 0.0
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    shift: float = 10.0
    Q0_scale: float = 100.0
    R0_scale: float = 1.0
    K21: np.ndarray | None = None
    stability_floor: float = 1e-4

    def __post_init__(self):
        if self.h <= 0.0:
            raise ValueError("re-check period h must be positive")
        if self.mode not in ("riccati", "sylvester"):
            raise ValueError(f"unknown scheduler mode {self.mode!r}")
        if self.beta0 < 0.0:
            raise ValueError("beta0 must be nonnegative")


def default_scheduler_config(
    plant: PlantRealization,
    mode: str = "riccati",
    h: float = 0.1,
    beta0: float = 0.0,
    shift: float = 10.0,
    Q0_scale: float = 100.0,
    R0_scale: float = 1.0,
    K21_weights=None,
    stability_floor: float = 1e-4,
) -> SchedulerConfig:
    """Identity weights; for the sylvester mode, design K21 by LQR once.

    The default plant-stage input weight is ``||B||^2 I`` (cheap control):
    the surrogate input columns are response-normalized and can be huge in
    state units, and a unit weight would push plant poles orders of
    magnitude past the diffusion scale.
    """
    K21 = None
    if mode == "sylvester":
        if K21_weights is None:
            Q21 = np.eye(plant.n)
            R21 = max(np.linalg.norm(plant.B, 2) ** 2, 1.0) * np.eye(plant.m)
        else:
            Q21, R21 = K21_weights
        K21 = -lqr_gain(plant.A, plant.B, Q21, R21)
    return SchedulerConfig(h=h, mode=mode, beta0=beta0, shift=shift,
                           Q0_scale=Q0_scale, R0_scale=R0_scale, K21=K21,
                           stability_floor=stability_floor)


@dataclass(frozen=True)
class GainSchedule:
    """Piecewise-constant, right-continuous gain history.

    ``breakpoints`` holds (t_j, K^j) with strictly increasing t_j;
    ``incidents`` collects one plain-text line per scheduler event
    (timestamp, cause, abscissa).  ``frozen_after`` is stamped by
    :func:`finalize_schedule` once a run is over.
    """

    breakpoints: tuple = ()
    incidents: tuple = ()
    frozen_after: float | None = None

    @property
    def times(self):
        return [t for t, _ in self.breakpoints]

    def last_gain(self) -> np.ndarray:
        return self.breakpoints[-1][1]


def gain_at(schedule: GainSchedule, t: float) -> np.ndarray:
    """Gain in force at time ``t`` (right-continuous lookup)."""
    if not schedule.breakpoints:
        raise ValueError("schedule has no gains yet")
    idx = bisect.bisect_right(schedule.times, t) - 1
    return schedule.breakpoints[max(idx, 0)][1]


def stacked_pair(block: InternalModelBlock, plant: PlantRealization):
    """Design pair: internal model driven by the plant output, plant below.

    A_e0 = [[G1, G2 C], [0, A]], B_e0 = [G2 D; B].
    """
    dz, n = block.dim, plant.n
    A_e0 = np.zeros((dz + n, dz + n))
    A_e0[:dz, :dz] = block.G1
    A_e0[:dz, dz:] = block.G2 @ plant.C
    A_e0[dz:, dz:] = plant.A
    B_e0 = np.vstack([block.G2 @ plant.D, plant.B])
    return A_e0, B_e0


def riccati_gain(A_e0, B_e0, config: SchedulerConfig) -> np.ndarray:
    """Stabilizing gain from the shifted algebraic Riccati equation.

    Solves for the nonnegative Pi of the beta0-shifted pair and returns
    ``K = -R^{-1} B_e0^T Pi``; the closed loop then has abscissa below
    ``-beta0`` (up to solver tolerance).
    """
    N = A_e0.shape[0]
    Q = np.eye(N) if config.Q is None else config.Q
    R = np.eye(B_e0.shape[1]) if config.R is None else config.R
    Pi = are_solve(A_e0 + config.beta0 * np.eye(N), B_e0, Q, R)
    return -np.linalg.solve(R, B_e0.T @ Pi)


def sylvester_gain(block: InternalModelBlock, plant: PlantRealization,
                   config: SchedulerConfig) -> np.ndarray:
    """Gain via the block-diagonalizing similarity transformation.

    With K21 stabilizing the plant, H solves
    ``G1 H = H (A + B K21) + G2 (C + D K21)`` and the transformed system is
    block-triangular with diagonal (G1 + B1 K1, A + B K21), where
    ``B1 = H B + G2 D``.  K1 is an LQR gain for the shifted small pair
    (G1 + shift*I, B1), leaving that block with abscissa below -shift.
    The assembled gain is ``[K1, K21 + K1 H]``.
    """
    if config.K21 is None:
        raise DesignError("sylvester mode requires a plant stabilizer K21")
    K21 = config.K21
    Acl = plant.A + plant.B @ K21
    margin = abscissa(Acl)
    if margin >= 0.0:
        raise DesignError(f"K21 does not stabilize the plant (abscissa {margin:.3e})")
    H = sylvester_solve(block.G1, Acl, block.G2 @ (plant.C + plant.D @ K21))
    B1 = H @ plant.B + block.G2 @ plant.D
    dz = block.dim
    Q0 = config.Q0_scale * np.eye(dz)
    R0 = config.R0_scale * np.eye(plant.m)
    K1 = -lqr_gain(block.G1 + config.shift * np.eye(dz), B1, Q0, R0)
    return np.hstack([K1, K21 + K1 @ H])


def design_gain(block: InternalModelBlock, plant: PlantRealization,
                config: SchedulerConfig) -> np.ndarray:
    """Dispatch on the configured mode and certify the result."""
    A_e0, B_e0 = stacked_pair(block, plant)
    if config.mode == "riccati":
        K = riccati_gain(A_e0, B_e0, config)
    else:
        K = sylvester_gain(block, plant, config)
    margin = abscissa(A_e0 + B_e0 @ K)
    if margin >= 0.0:
        raise NumericalError(f"designed gain is not stabilizing (abscissa {margin:.3e})")
    return K


def initial_schedule(block: InternalModelBlock, plant: PlantRealization,
                     config: SchedulerConfig, t0: float = 0.0) -> GainSchedule:
    """First gain; the initial estimates must be non-degenerate."""
    if block.degenerate:
        raise DesignError(
            "initial frequency estimates are degenerate (coinciding or zero); "
            "cannot design the first gain"
        )
    K = design_gain(block, plant, config)
    return GainSchedule(breakpoints=((t0, K),))


def schedule_step(schedule: GainSchedule, block_now: InternalModelBlock,
                  plant: PlantRealization, config: SchedulerConfig,
                  t_now: float) -> GainSchedule:
    """One re-check: keep the gain while the design pair stays exponentially
    stable at the current estimates, otherwise append a freshly designed
    breakpoint.

    Never emits an unstable gain silently: degenerate estimates and design
    failures hold the previous gain and append an incident line.
    """
    K = schedule.last_gain()
    A_e0, B_e0 = stacked_pair(block_now, plant)
    margin = abscissa(A_e0 + B_e0 @ K)
    if margin < -config.stability_floor:
        return schedule
    if block_now.degenerate:
        inc = (f"t={t_now:.6g} cause=degenerate-estimates-hold "
               f"abscissa={margin:.6g}")
        return replace(schedule, incidents=schedule.incidents + (inc,))
    try:
        K_new = design_gain(block_now, plant, config)
    except (DesignError, NumericalError) as exc:
        inc = f"t={t_now:.6g} cause=design-failure-hold abscissa={margin:.6g} ({exc})"
        return replace(schedule, incidents=schedule.incidents + (inc,))
    return replace(
        schedule, breakpoints=schedule.breakpoints + ((t_now, K_new),)
    )


def finalize_schedule(schedule: GainSchedule) -> GainSchedule:
    """Stamp the freezing time: after the final breakpoint the stored gain
    is literally constant."""
    if not schedule.breakpoints:
        return schedule
    return replace(schedule, frozen_after=schedule.breakpoints[-1][0])
