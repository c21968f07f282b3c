"""Reference/disturbance signal models and their exosystem realizations.

A :class:`SignalModel` is a trigonometric polynomial

    y(t) = y0 + sum_k (yc_k cos(w_k t) + ys_k sin(w_k t)),

with a disturbance channel of the same form.  Because the signal class is
known in closed form, derivatives of any order are available analytically;
they drive the frequency estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import spectrum

__all__ = [
    "SignalModel",
    "ExoRealization",
    "eval_reference",
    "eval_reference_derivative",
    "eval_disturbance",
    "coefficients_from_frequencies",
    "frequencies_from_coefficients",
    "build_exosystem",
    "build_complex_exosystem",
]


@dataclass(frozen=True)
class SignalModel:
    """Frequencies and coefficient vectors of the reference and disturbance.

    Attributes
    ----------
    frequencies : (q0,) ndarray
        Strictly increasing positive frequencies (rad per scaled time unit).
    y_const, y_cos, y_sin : ndarray
        Constant term (p,) and per-frequency coefficients (q0, p) of the
        reference.  Every frequency must actually appear in the reference:
        ``|yc_k| + |ys_k| > 0`` for each k.
    w_const, w_cos, w_sin : ndarray
        Same layout for the disturbance, dimension ``n_d``.
    """

    frequencies: np.ndarray
    y_const: np.ndarray
    y_cos: np.ndarray
    y_sin: np.ndarray
    w_const: np.ndarray = field(default=None)
    w_cos: np.ndarray = field(default=None)
    w_sin: np.ndarray = field(default=None)

    def __post_init__(self):
        freqs = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        y0 = np.atleast_1d(np.asarray(self.y_const, dtype=float))
        yc = np.atleast_2d(np.asarray(self.y_cos, dtype=float))
        ys = np.atleast_2d(np.asarray(self.y_sin, dtype=float))
        q0, p = len(freqs), len(y0)
        if np.any(freqs <= 0.0) or np.any(np.diff(freqs) <= 0.0):
            raise ValueError("frequencies must be positive and strictly increasing")
        if yc.shape != (q0, p) or ys.shape != (q0, p):
            raise ValueError(f"y coefficient arrays must have shape ({q0}, {p})")
        row_mass = np.abs(yc).sum(axis=1) + np.abs(ys).sum(axis=1)
        if q0 and np.any(row_mass == 0.0):
            raise ValueError("every frequency must appear in the reference signal")
        w0 = self.w_const if self.w_const is not None else np.zeros(0)
        w0 = np.atleast_1d(np.asarray(w0, dtype=float))
        nd = len(w0)
        wc = self.w_cos if self.w_cos is not None else np.zeros((q0, nd))
        ws = self.w_sin if self.w_sin is not None else np.zeros((q0, nd))
        wc = np.atleast_2d(np.asarray(wc, dtype=float)).reshape(q0, nd)
        ws = np.atleast_2d(np.asarray(ws, dtype=float)).reshape(q0, nd)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "y_const", y0)
        object.__setattr__(self, "y_cos", yc)
        object.__setattr__(self, "y_sin", ys)
        object.__setattr__(self, "w_const", w0)
        object.__setattr__(self, "w_cos", wc)
        object.__setattr__(self, "w_sin", ws)

    @property
    def q0(self) -> int:
        return len(self.frequencies)

    @property
    def p(self) -> int:
        return len(self.y_const)

    @property
    def n_d(self) -> int:
        return len(self.w_const)


@dataclass(frozen=True)
class ExoRealization:
    """Marginally-stable realization v' = S v, w = E v, y_ref = -F v.

    ``S`` is block diagonal (one 1x1 zero block plus a 2x2 rotation block per
    frequency), so its spectrum is {0} u {+-i w_k} and the dimension is
    ``q = 2 q0 + 1``.
    """

    S: np.ndarray
    E: np.ndarray
    F: np.ndarray
    v0: np.ndarray

    @property
    def q(self) -> int:
        return self.S.shape[0]


def eval_reference(model: SignalModel, t) -> np.ndarray:
    """Reference signal value(s) at time ``t`` (scalar or array)."""
    return eval_reference_derivative(model, t, 0)


def eval_reference_derivative(model: SignalModel, t, order: int) -> np.ndarray:
    """Exact ``order``-th derivative of the reference at time ``t``.

    Differentiation acts termwise: each derivative maps the coefficient pair
    (c, s) of ``c cos + s sin`` to (w s, -w c).  Order 0 reproduces the
    signal itself.  ``order`` must lie in [0, 2 q0]; a purely constant model
    (q0 = 0) admits any order, all higher derivatives being zero.
    """
    if order < 0 or (model.q0 > 0 and order > 2 * model.q0):
        raise ValueError(f"order must be in [0, {2 * model.q0}], got {order}")
    return _eval_trig(
        model.frequencies, model.y_const, model.y_cos, model.y_sin, t, order
    )


def eval_disturbance(model: SignalModel, t) -> np.ndarray:
    """Disturbance signal value(s) at time ``t``."""
    return _eval_trig(
        model.frequencies, model.w_const, model.w_cos, model.w_sin, t, 0
    )


def _eval_trig(freqs, const, cos_c, sin_c, t, order):
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tv = np.atleast_1d(t)
    out = np.zeros((len(tv), len(const)))
    if order == 0:
        out += const
    for k, w in enumerate(freqs):
        c, s = cos_c[k], sin_c[k]
        for _ in range(order):
            c, s = w * s, -w * c
        out += np.outer(np.cos(w * tv), c) + np.outer(np.sin(w * tv), s)
    return out[0] if scalar else out


def coefficients_from_frequencies(frequencies) -> np.ndarray:
    """Characteristic-polynomial parameters ``a`` encoding the frequencies.

    Returns the vector ``a`` with
    ``lambda^{2 q0} - a_{q0} lambda^{2 q0 - 2} - ... - a_1
    = prod_k (lambda^2 + w_k^2)``, so ``a_1 != 0`` for nonzero frequencies.
    """
    freqs = np.atleast_1d(np.asarray(frequencies, dtype=float))
    if len(np.unique(freqs)) != len(freqs):
        raise ValueError("frequencies must be distinct")
    if np.any(freqs <= 0.0):
        raise ValueError("frequencies must be positive")
    # polynomial in mu = lambda^2: prod_k (mu + w_k^2)
    poly = np.array([1.0])
    for w in freqs:
        poly = np.convolve(poly, [1.0, w**2])
    # poly = [1, c_{q0-1}, ..., c_0] against mu^{q0}..mu^0; a_j = -c_{j-1}
    return -poly[1:][::-1]


def frequencies_from_coefficients(a):
    """Recover frequencies from the parameter vector ``a``.

    Left inverse of :func:`coefficients_from_frequencies` on its range.

    Returns
    -------
    freqs : (q0,) ndarray
        Positive imaginary parts of the roots, sorted ascending.
    oscillatory : bool
        False when some root strays from the imaginary axis beyond
        ``1e-6 * (1 + |Im|)``; the magnitudes are still returned.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    # Substitute mu = lambda^2: roots of mu^{q0} - a_{q0} mu^{q0-1} - ... - a_1
    # come one per conjugate root pair, which keeps the estimate count at q0
    # even for degenerate inputs.  np.roots is companion-matrix eigenvalues.
    poly = np.concatenate(([1.0], -a[::-1]))
    mu = np.roots(poly)
    lam = np.sqrt(mu.astype(complex))
    freqs = np.abs(lam.imag)
    oscillatory = bool(np.all(np.abs(lam.real) <= 1e-6 * (1.0 + np.abs(lam.imag))))
    order = np.argsort(freqs)
    return freqs[order], oscillatory


def build_exosystem(model: SignalModel) -> ExoRealization:
    """Real block realization of the exosystem generating the model signals.

    The state starts at ``v0 = (1, 1, 0, 1, 0, ...)`` so that the k-th
    rotation block carries ``(cos(w_k t), sin(w_k t))``; E and -F read the
    coefficient vectors off that state.
    """
    q0, p, nd = model.q0, model.p, model.n_d
    q = 2 * q0 + 1
    S = np.zeros((q, q))
    v0 = np.zeros(q)
    v0[0] = 1.0
    E = np.zeros((nd, q))
    F = np.zeros((p, q))
    E[:, 0] = model.w_const
    F[:, 0] = -model.y_const
    for k, w in enumerate(model.frequencies):
        i = 1 + 2 * k
        # (cos, sin) pair: d/dt (cos, sin) = (-w sin, w cos)
        S[i, i + 1] = -w
        S[i + 1, i] = w
        v0[i] = 1.0
        E[:, i] = model.w_cos[k]
        E[:, i + 1] = model.w_sin[k]
        F[:, i] = -model.y_cos[k]
        F[:, i + 1] = -model.y_sin[k]
    return ExoRealization(S=S, E=E, F=F, v0=v0)


def build_complex_exosystem(model: SignalModel):
    """Diagonalized exosystem over C: S = diag(0, i w_1, -i w_1, ...).

    Returns ``(S, E, F, v0)`` with ``v0`` the all-ones vector; used by the
    resolvent-based regulation identity check, which needs one eigendirection
    per exosystem frequency.
    """
    q0, p, nd = model.q0, model.p, model.n_d
    q = 2 * q0 + 1
    S = np.zeros((q, q), dtype=complex)
    E = np.zeros((nd, q), dtype=complex)
    F = np.zeros((p, q), dtype=complex)
    E[:, 0] = model.w_const
    F[:, 0] = -model.y_const
    for k, w in enumerate(model.frequencies):
        i = 1 + 2 * k
        S[i, i] = 1j * w
        S[i + 1, i + 1] = -1j * w
        # c cos + s sin = (c - i s)/2 e^{iwt} + (c + i s)/2 e^{-iwt}
        E[:, i] = (model.w_cos[k] - 1j * model.w_sin[k]) / 2.0
        E[:, i + 1] = (model.w_cos[k] + 1j * model.w_sin[k]) / 2.0
        F[:, i] = -(model.y_cos[k] - 1j * model.y_sin[k]) / 2.0
        F[:, i + 1] = -(model.y_cos[k] + 1j * model.y_sin[k]) / 2.0
    v0 = np.ones(q, dtype=complex)
    return S, E, F, v0


def exo_state_batch(model: SignalModel, times, v0=None) -> np.ndarray:
    """Exact exosystem states at the given times, shape (N, q).

    The flow is a family of rotations, so no integration is involved: block k
    of ``v0`` is rotated by angle ``w_k t``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    q = 2 * model.q0 + 1
    if v0 is None:
        v0 = np.zeros(q)
        v0[0] = 1.0
        v0[1::2] = 1.0
    v0 = np.asarray(v0, dtype=float)
    out = np.empty((len(times), q))
    out[:, 0] = v0[0]
    for k, w in enumerate(model.frequencies):
        i = 1 + 2 * k
        c, s = np.cos(w * times), np.sin(w * times)
        out[:, i] = c * v0[i] - s * v0[i + 1]
        out[:, i + 1] = s * v0[i] + c * v0[i + 1]
    return out


def exosystem_spectrum_ok(model: SignalModel, tol: float = 1e-10) -> bool:
    """Check sigma(S) = {0} u {+-i w_k} for the real block realization."""
    exo = build_exosystem(model)
    eig = spectrum(exo.S).eigenvalues
    target = np.concatenate(
        [[0.0 + 0.0j]] + [[1j * w, -1j * w] for w in model.frequencies]
    )
    # all real parts are ~0, so pair the two sets by imaginary part
    eig = eig[np.lexsort((eig.real, eig.imag))]
    target = target[np.lexsort((target.real, target.imag))]
    return bool(np.all(np.abs(eig - target) <= tol * (1.0 + np.abs(target))))
