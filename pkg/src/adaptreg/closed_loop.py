"""Non-autonomous closed-loop assembly, simulation, and the structural
diagnostics used by the acceptance suite.

The simulated state stacks (plant, internal model, plant observer); the
frequency estimator runs alongside, driven only by the reference signal, and
the gain scheduler intervenes at multiples of its re-check period.  Within
one integrator step the controller operators are frozen (the estimates move
continuously and their rate vanishes as the estimator converges), while the
reference, disturbance, and measurement signals are evaluated at the RK4
stage times.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .estimator import (
    EstimatorConfig,
    EstimatorState,
    _theta_batch,
    estimate_frequencies,
    observer_step,
)
from .internal_model import InternalModelBlock, build_internal_model, controller_operators
from .linalg import DivergenceError, SpectrumReport, abscissa, rk4_step, spectrum
from .plants import PlantRealization
from .scheduler import (
    GainSchedule,
    SchedulerConfig,
    finalize_schedule,
    initial_schedule,
    schedule_step,
)
from .signals import SignalModel, build_complex_exosystem, build_exosystem, exo_state_batch

__all__ = [
    "ClosedLoopOperators",
    "SimulationTrace",
    "assemble_closed_loop",
    "assemble_A_e",
    "simulate",
    "limit_closed_loop_check",
    "qe_similarity_residual",
    "regulation_identity_residual",
    "asymptotic_error_bound_check",
    "fit_log_decay",
    "perturbation_smoke",
    "write_trace_csv",
]


def assemble_A_e(plant: PlantRealization, L, block: InternalModelBlock, K):
    """Closed-loop state matrix on (x, z0, w) for one controller snapshot.

    Equals [[A, B K], [cG2 C, cG1 + cG2 D K]] with the observer-based
    controller blocks substituted.
    """
    n, dz = plant.n, block.dim
    K = np.asarray(K, dtype=float)
    K1, K2 = K[:, :dz], K[:, dz:]
    cG1, cG2, _ = controller_operators(block, plant, L, K1, K2)
    N = n + dz + n
    A_e = np.zeros((N, N))
    A_e[:n, :n] = plant.A
    A_e[:n, n:] = plant.B @ K
    A_e[n:, :n] = cG2 @ plant.C
    A_e[n:, n:] = cG1 + cG2 @ (plant.D @ K)
    return A_e


@dataclass(frozen=True)
class ClosedLoopOperators:
    """Time-indexed assemblers of the closed-loop system matrices.

    ``block_provider`` and ``gain_provider`` map time to the internal-model
    block and the full gain; the assemblers evaluate them on demand, so a
    frozen analysis just uses constant providers.
    """

    plant: PlantRealization
    L: np.ndarray
    block_provider: object
    gain_provider: object

    def block(self, t: float) -> InternalModelBlock:
        return self.block_provider(t)

    def K(self, t: float) -> np.ndarray:
        return np.asarray(self.gain_provider(t), dtype=float)

    def A_e(self, t: float) -> np.ndarray:
        return assemble_A_e(self.plant, self.L, self.block(t), self.K(t))

    def B_e(self, t: float) -> np.ndarray:
        """Input matrix from the exosystem state: [Bd E; cG2 F]."""
        raise NotImplementedError("use B_e_from for explicit exosystem data")

    def B_e_from(self, t: float, E, F) -> np.ndarray:
        block = self.block(t)
        K = self.K(t)
        _, cG2, _ = controller_operators(
            block, self.plant, self.L, K[:, :block.dim], K[:, block.dim:]
        )
        return np.vstack([self.plant.Bd @ E, cG2 @ F])

    def C_e(self, t: float) -> np.ndarray:
        K = self.K(t)
        return np.hstack([self.plant.C, self.plant.D @ K])


def assemble_closed_loop(plant: PlantRealization, L, block_provider,
                         gain_provider) -> ClosedLoopOperators:
    """Bundle the closed-loop assemblers; providers may be constants."""
    if isinstance(block_provider, InternalModelBlock):
        blk = block_provider
        block_provider = lambda t: blk
    gain = gain_provider
    if isinstance(gain, np.ndarray):
        gain_provider = lambda t: gain
    elif isinstance(gain, GainSchedule):
        from .scheduler import gain_at

        sched = gain
        gain_provider = lambda t: gain_at(sched, t)
    return ClosedLoopOperators(plant=plant, L=np.asarray(L, dtype=float),
                               block_provider=block_provider,
                               gain_provider=gain_provider)


@dataclass(frozen=True)
class SimulationTrace:
    """Uniformly sampled closed-loop run.

    ``gain_epoch`` indexes the active breakpoint; ``cref_dist`` carries
    ||c - c_ref|| when the reference optimizer participates.  An aborted
    trace (state blow-up) is a first-class result with ``aborted`` set and
    data up to the abort time.
    """

    times: np.ndarray
    omega_hat: np.ndarray
    errors: np.ndarray
    xnorm: np.ndarray
    gain_epoch: np.ndarray
    cref_dist: np.ndarray | None = None
    snapshots: tuple = ()
    schedule: GainSchedule | None = None
    estimator_state: EstimatorState | None = None
    aborted: bool = False
    abort_reason: str = ""

    def final_window(self, fraction: float):
        """Mask of samples in the trailing ``fraction`` of the horizon."""
        t_end = self.times[-1]
        t_from = t_end - fraction * (t_end - self.times[0])
        return self.times >= t_from


def simulate(
    ops: ClosedLoopOperators,
    model: SignalModel,
    horizon: float,
    dt: float,
    x_e0=None,
    v0=None,
    estimator: tuple | None = None,
    scheduler: tuple | None = None,
    reference_extra=None,
    record_stride: int = 1,
    snapshot_stride: int | None = None,
    blow_up_factor: float = 1e6,
) -> SimulationTrace:
    """Co-advance plant+controller, frequency estimator, and gain scheduler.

    Parameters
    ----------
    ops : ClosedLoopOperators
        Supplies the plant, injection L, and the initial block/gain when no
        estimator/scheduler is given (frozen-parameter run).
    model : SignalModel
        Generates the reference and disturbance (exactly, per RK4 stage).
    estimator : (SignalModel, EstimatorConfig, EstimatorState), optional
        Reference-driven frequency estimator; its model may be a
        sub-channel view of ``model``.
    scheduler : (SchedulerConfig, GainSchedule), optional
        Re-checked every ``config.h`` (must be a multiple of dt).
    reference_extra : callable, optional
        ``t -> (p,)`` additional reference components (e.g. from the
        per-step optimizer), added to the exosystem reference.
    v0 : array_like, optional
        Exosystem initial state (default: unit cosine phases).

    Returns
    -------
    SimulationTrace
    """
    plant = ops.plant
    exo = build_exosystem(model)
    n = plant.n
    block0 = ops.block(0.0)
    dz = block0.dim
    N = n + dz + n
    x_e = np.zeros(N) if x_e0 is None else np.asarray(x_e0, dtype=float).copy()
    if x_e.shape != (N,):
        raise ValueError(f"x_e0 must have shape ({N},)")

    est_model = est_cfg = est_state = None
    if estimator is not None:
        est_model, est_cfg, est_state = estimator
    sched_cfg = schedule = None
    steps_per_h = 0
    if scheduler is not None:
        sched_cfg, schedule = scheduler
        steps_per_h = int(round(sched_cfg.h / dt))
        if abs(steps_per_h * dt - sched_cfg.h) > 1e-9 * sched_cfg.h or steps_per_h < 1:
            raise ValueError("dt must divide the scheduler period h")

    n_steps = int(round(horizon / dt))
    grid = dt * np.arange(n_steps + 1)
    v_full = exo_state_batch(model, grid, v0)
    v_mid = exo_state_batch(model, grid[:-1] + 0.5 * dt, v0)
    if est_model is not None:
        th_full = _theta_batch(est_model, est_cfg, grid)
        th_mid = _theta_batch(est_model, est_cfg, grid[:-1] + 0.5 * dt)

    # controller snapshot, refreshed when estimates or gains move
    block = block0
    K = ops.K(0.0) if schedule is None else schedule.last_gain()
    A_e = assemble_A_e(plant, ops.L, block, K)
    _, cG2, _ = controller_operators(block, plant, ops.L, K[:, :dz], K[:, dz:])
    BdE = plant.Bd @ exo.E
    B_e = np.vstack([BdE, cG2 @ exo.F])
    C_e = np.hstack([plant.C, plant.D @ K])
    D_e = exo.F

    def refresh_operators():
        nonlocal A_e, B_e, C_e, cG2
        A_e = assemble_A_e(plant, ops.L, block, K)
        _, cG2, _ = controller_operators(block, plant, ops.L, K[:, :dz], K[:, dz:])
        B_e = np.vstack([BdE, cG2 @ exo.F])
        C_e = np.hstack([plant.C, plant.D @ K])

    def extra_at(t):
        if reference_extra is None:
            return None
        return np.asarray(reference_extra(t), dtype=float)

    times, freq_rows, err_rows, xn_rows, ep_rows, snaps = [], [], [], [], [], []
    q0 = model.q0
    blow_up = blow_up_factor * max(np.linalg.norm(x_e), np.linalg.norm(v_full[0]), 1.0)
    aborted = False
    reason = ""

    def current_freqs():
        if est_state is not None:
            freqs, _ = estimate_frequencies(est_state, est_cfg)
            return freqs
        return np.asarray(block.omega_hat, dtype=float)

    def record(i, t):
        times.append(t)
        freq_rows.append(current_freqs())
        e = C_e @ x_e + D_e @ v_full[i]
        extra = extra_at(t)
        if extra is not None:
            e = e - extra
        err_rows.append(e)
        xn_rows.append(np.linalg.norm(x_e))
        ep_rows.append(len(schedule.breakpoints) - 1 if schedule is not None else 0)
        if snapshot_stride and (i % snapshot_stride == 0):
            snaps.append((t, x_e.copy()))

    record(0, 0.0)
    for i in range(n_steps):
        t = grid[i]
        if est_state is not None and i > 0:
            # the internal model follows the estimate continuously (frozen
            # within one step); the scheduler only acts at multiples of h
            block = build_internal_model(current_freqs(), plant.p)
            if schedule is not None and i % steps_per_h == 0:
                new_schedule = schedule_step(schedule, block, plant, sched_cfg, t)
                if len(new_schedule.breakpoints) != len(schedule.breakpoints):
                    K = new_schedule.last_gain()
                schedule = new_schedule
            refresh_operators()

        v0s, vms, v1s = v_full[i], v_mid[i], v_full[i + 1]
        if reference_extra is None:
            ex0 = exm = ex1 = None
        else:
            ex0, exm, ex1 = extra_at(t), extra_at(t + 0.5 * dt), extra_at(t + dt)

        def field(s, x):
            if s < 0.25 * dt:
                v, ex = v0s, ex0
            elif s < 0.75 * dt:
                v, ex = vms, exm
            else:
                v, ex = v1s, ex1
            dx = A_e @ x + B_e @ v
            if ex is not None:
                dx[n:] -= cG2 @ ex
            return dx

        try:
            x_e = rk4_step(field, x_e, 0.0, dt)
            if est_state is not None:
                th0, thm, th1 = th_full[i], th_mid[i], th_full[i + 1]
                theta_fn = lambda s: (
                    th0 if s < 0.25 * dt else (thm if s < 0.75 * dt else th1)
                )
                est_state = observer_step(est_state, theta_fn, est_cfg, dt)
        except DivergenceError:
            aborted = True
            reason = f"non-finite state during step at t={t:.6g}"
            record(i + 1, grid[i + 1])
            break

        if np.linalg.norm(x_e) > blow_up:
            aborted = True
            reason = f"state blow-up at t={t + dt:.6g} (norm {np.linalg.norm(x_e):.3e})"
            record(i + 1, grid[i + 1])
            break
        if (i + 1) % record_stride == 0 or i == n_steps - 1:
            record(i + 1, grid[i + 1])

    if schedule is not None:
        schedule = finalize_schedule(schedule)
    return SimulationTrace(
        times=np.asarray(times),
        omega_hat=np.asarray(freq_rows).reshape(len(times), q0),
        errors=np.asarray(err_rows),
        xnorm=np.asarray(xn_rows),
        gain_epoch=np.asarray(ep_rows, dtype=int),
        snapshots=tuple(snaps),
        schedule=schedule,
        estimator_state=est_state,
        aborted=aborted,
        abort_reason=reason,
    )


def limit_closed_loop_check(plant: PlantRealization, L,
                            block: InternalModelBlock, K) -> SpectrumReport:
    """Spectrum of the frozen-parameter closed loop; stable iff the
    abscissa is negative."""
    return spectrum(assemble_A_e(plant, L, block, K))


def qe_similarity_residual(plant: PlantRealization, L,
                           block: InternalModelBlock, K) -> float:
    """Frobenius defect of the triangularizing similarity of the closed loop.

    Transforms A_e with Q_e = [[0, I, 0], [I, 0, 0], [-I, 0, I]] on the
    (x, z0, w) ordering and compares against the block-triangular target
    with diagonal (G1 + G2 D K1, A + B K2, A + LC); the match is an
    algebraic identity, so the residual is rounding noise.
    """
    n, dz = plant.n, block.dim
    K = np.asarray(K, dtype=float)
    K1, K2 = K[:, :dz], K[:, dz:]
    L = np.asarray(L, dtype=float)
    A_e = assemble_A_e(plant, L, block, K)
    In, Iz = np.eye(n), np.eye(dz)
    Z_nz, Z_zn = np.zeros((n, dz)), np.zeros((dz, n))
    Q_e = np.block([
        [Z_zn, Iz, np.zeros((dz, n))],
        [In, Z_nz, np.zeros((n, n))],
        [-In, Z_nz, In],
    ])
    Q_e_inv = np.block([
        [np.zeros((n, dz)), In, np.zeros((n, n))],
        [Iz, Z_zn, Z_zn],
        [np.zeros((n, dz)), In, In],
    ])
    G2DK2 = block.G2 @ plant.D @ K2
    BK2 = plant.B @ K2
    target = np.block([
        [block.G1 + block.G2 @ plant.D @ K1,
         block.G2 @ (plant.C + plant.D @ K2), G2DK2],
        [plant.B @ K1, plant.A + BK2, BK2],
        [np.zeros((n, dz)), np.zeros((n, n)), plant.A + L @ plant.C],
    ])
    return float(np.linalg.norm(Q_e @ A_e @ Q_e_inv - target))


def regulation_identity_residual(plant: PlantRealization, L,
                                 block: InternalModelBlock, K,
                                 model: SignalModel) -> float:
    """Zero-error identity of the frozen loop: ||C_e Sigma + D_e||.

    Sigma stacks the resolvent directions (i w_k - A_e)^{-1} B_e e_k over
    the diagonalized exosystem; with an internal model of the signal
    frequencies and a stable A_e the result vanishes.
    """
    S_c, E_c, F_c, _ = build_complex_exosystem(model)
    K = np.asarray(K, dtype=float)
    dz = block.dim
    A_e = assemble_A_e(plant, L, block, K)
    _, cG2, _ = controller_operators(block, plant, L, K[:, :dz], K[:, dz:])
    B_e = np.vstack([plant.Bd @ E_c, cG2 @ F_c])
    C_e = np.hstack([plant.C, plant.D @ K]).astype(complex)
    N = A_e.shape[0]
    lambdas = np.diag(S_c)
    Sigma = np.empty((N, len(lambdas)), dtype=complex)
    for k, lam in enumerate(lambdas):
        Sigma[:, k] = np.linalg.solve(lam * np.eye(N) - A_e, B_e[:, k])
    return float(np.linalg.norm(C_e @ Sigma + F_c))


def fit_log_decay(times, values, skip_fraction: float = 0.05,
                  floor_factor: float = 3.0):
    """Log-linear fit over the decaying segment of a positive signal.

    Skips the initial transient and stops once the signal first reaches
    ``floor_factor`` times its eventual minimum (the numerical floor).

    Returns
    -------
    slope, r_squared : float
        NaN slope when no usable segment exists (e.g. identically zero).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.all(values <= 0.0):
        return float("nan"), float("nan")
    floor = max(values.min() * floor_factor, values.max() * 1e-15)
    stop = int(np.argmax(values <= floor))
    if stop == 0:
        stop = len(values)
    start = int(skip_fraction * stop)
    seg = slice(start, max(stop, start + 3))
    t_fit = times[seg]
    log_e = np.log(np.maximum(values[seg], 1e-300))
    if len(t_fit) < 3 or t_fit[-1] <= t_fit[0]:
        return float("nan"), float("nan")
    A = np.vstack([t_fit, np.ones_like(t_fit)]).T
    coef, *_ = np.linalg.lstsq(A, log_e, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((log_e - pred) ** 2))
    ss_tot = float(np.sum((log_e - log_e.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else float("nan")
    return float(coef[0]), r2


def asymptotic_error_bound_check(trace: SimulationTrace,
                                 window_fraction: float = 0.1):
    """Sup of ||e|| over the final window plus a decay fit of ||e(t)||.

    Returns
    -------
    sup_error : float
    slope, r_squared : float
        Log-linear fit over the decay segment (NaN for an all-zero error).
    """
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError("window_fraction must lie in (0, 1]")
    mask = trace.final_window(window_fraction)
    if not np.any(mask):
        raise ValueError("final window contains no samples")
    norms = np.linalg.norm(trace.errors, axis=1)
    sup_err = float(norms[mask].max())
    slope, r2 = fit_log_decay(trace.times, norms)
    return sup_err, slope, r2


def perturbation_smoke(plant: PlantRealization, L, block: InternalModelBlock,
                       K, model: SignalModel, delta: float, seed: int,
                       horizon: float = 6.0, dt: float = 2.5e-4,
                       error_threshold: float | None = None,
                       baseline_sup: float | None = None):
    """Robustness test: relative entrywise perturbation of (A, B, C) under
    the unchanged controller.

    Returns a dict report: stability of the perturbed frozen loop, the
    final-window error of a short tracking run, and the overall verdict.
    ``delta = 0`` reproduces the baseline exactly.
    """
    rng = np.random.default_rng(seed)

    def perturb(M):
        return M * (1.0 + delta * rng.uniform(-1.0, 1.0, size=M.shape))

    pert = PlantRealization(
        A=perturb(plant.A), B=perturb(plant.B), Bd=plant.Bd,
        C=perturb(plant.C), D=plant.D,
        mass=plant.mass, stiffness=plant.stiffness, grid=plant.grid,
    )
    rep = limit_closed_loop_check(pert, L, block, K)
    stable = rep.spectral_abscissa < 0.0
    report = {
        "delta": delta,
        "abscissa": rep.spectral_abscissa,
        "stable": stable,
        "sup_error": float("inf"),
        "passed": False,
    }
    if not stable:
        return report
    ops = assemble_closed_loop(pert, L, block, K)
    trace = simulate(ops, model, horizon=horizon, dt=dt, record_stride=8)
    if trace.aborted:
        report["sup_error"] = float("inf")
        return report
    sup_err, _, _ = asymptotic_error_bound_check(trace, 0.1)
    report["sup_error"] = sup_err
    if error_threshold is None and baseline_sup is not None:
        error_threshold = 2.0 * baseline_sup
    report["passed"] = bool(
        stable and (error_threshold is None or sup_err <= error_threshold)
    )
    return report


def write_trace_csv(trace: SimulationTrace, path):
    """CSV with deterministic column order and 17-significant-digit floats:
    t, omega_hat_1..q0, e_1..p, xnorm, gain_epoch."""
    q0 = trace.omega_hat.shape[1]
    p = trace.errors.shape[1]
    header = (
        ["t"]
        + [f"omega_hat_{k + 1}" for k in range(q0)]
        + [f"e_{k + 1}" for k in range(p)]
        + ["xnorm", "gain_epoch"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i, t in enumerate(trace.times):
            row = [f"{t:.17g}"]
            row += [f"{v:.17g}" for v in trace.omega_hat[i]]
            row += [f"{v:.17g}" for v in trace.errors[i]]
            row.append(f"{trace.xnorm[i]:.17g}")
            row.append(str(int(trace.gain_epoch[i])))
            fh.write(",".join(row) + "\n")
