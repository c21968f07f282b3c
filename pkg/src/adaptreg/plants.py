"""Plant realizations: a generic dense LTI container, the FEM-discretized
diffusion model of the magnetic drug-delivery testbed, and seeded random
fixtures for solver/controller tests.

The diffusion plant lives on the square [-L0, L0]^2 with homogeneous Neumann
boundary, discretized with piecewise-bilinear square elements and 2x2 Gauss
quadrature.  Spatial actuation profiles stand in for the magnetic-field
intensity shapes of the hardware (the cited actuator model is not part of
this code base); they are configurable, and the defaults are squared-affine
intensity bumps centered on the four coil positions, which give the input
matrix full column rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import abscissa, ctrb, spectrum

__all__ = [
    "PlantRealization",
    "FemGrid",
    "make_grid",
    "default_actuation_profiles",
    "assemble_diffusion_plant",
    "output_operator",
    "random_stable_plant",
    "rosenbrock_rank",
    "has_imaginary_axis_rank",
    "export_plant",
    "import_plant",
]

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class PlantRealization:
    """Dense state-space realization x' = Ax + Bu + Bd w, y = Cx + Du.

    FEM-built plants also carry their mass/stiffness matrices and grid for
    diagnostics (L2 norms, constraint operators); generic plants leave those
    as None.
    """

    A: np.ndarray
    B: np.ndarray
    Bd: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_labels: tuple = ()
    input_labels: tuple = ()
    output_labels: tuple = ()
    mass: np.ndarray | None = None
    stiffness: np.ndarray | None = None
    grid: "FemGrid | None" = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        Bd = np.asarray(self.Bd, dtype=float).reshape(n, -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, n)
        D = np.asarray(self.D, dtype=float).reshape(C.shape[0], B.shape[1])
        for name, M in (("A", A), ("B", B), ("Bd", Bd), ("C", C), ("D", D)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Bd", Bd)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def n_d(self) -> int:
        return self.Bd.shape[1]

    def l2_norm(self, x) -> float:
        """Continuous L2 norm for FEM states, Euclidean otherwise."""
        x = np.asarray(x, dtype=float)
        if self.mass is None:
            return float(np.linalg.norm(x))
        return float(np.sqrt(x @ self.mass @ x))


@dataclass(frozen=True)
class FemGrid:
    """Uniform square grid on [-L0, L0]^2 with bilinear quad elements."""

    half_width: float
    elements_per_side: int
    nodes: np.ndarray = field(repr=False, default=None)
    quads: np.ndarray = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return (self.elements_per_side + 1) ** 2

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.elements_per_side


def make_grid(half_width: float, elements_per_side: int) -> FemGrid:
    """Build node coordinates and connectivity for the uniform square mesh."""
    if half_width <= 0.0 or elements_per_side < 1:
        raise ValueError("half_width must be positive, elements_per_side >= 1")
    ne = elements_per_side
    coords = np.linspace(-half_width, half_width, ne + 1)
    rr, ss = np.meshgrid(coords, coords, indexing="xy")
    nodes = np.column_stack([rr.ravel(), ss.ravel()])
    quads = np.empty((ne * ne, 4), dtype=int)
    k = 0
    for iy in range(ne):
        for ix in range(ne):
            i0 = iy * (ne + 1) + ix
            quads[k] = (i0, i0 + 1, i0 + ne + 2, i0 + ne + 1)
            k += 1
    return FemGrid(half_width=half_width, elements_per_side=ne,
                   nodes=nodes, quads=quads)


def _shape(xi, eta):
    return 0.25 * np.array([
        (1 - xi) * (1 - eta),
        (1 + xi) * (1 - eta),
        (1 + xi) * (1 + eta),
        (1 - xi) * (1 + eta),
    ])


def _shape_grad(xi, eta):
    # derivatives w.r.t. (xi, eta)
    return 0.25 * np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)],
        [-(1 + eta), (1 - xi)],
    ])


def _element_matrices(h):
    """Exact bilinear mass/stiffness on an h x h square via 2x2 Gauss."""
    Me = np.zeros((4, 4))
    Ke = np.zeros((4, 4))
    detJ = (h / 2.0) ** 2
    for xi in _GAUSS:
        for eta in _GAUSS:
            N = _shape(xi, eta)
            G = _shape_grad(xi, eta) * (2.0 / h)
            Me += np.outer(N, N) * detJ
            Ke += G @ G.T * detJ
    return Me, Ke


def mass_and_stiffness(grid: FemGrid):
    """Assembled Galerkin mass and stiffness matrices (dense)."""
    n = grid.n_nodes
    Me, Ke = _element_matrices(grid.h)
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    for quad in grid.quads:
        idx = np.ix_(quad, quad)
        M[idx] += Me
        K[idx] += Ke
    return M, K


def _integrate_basis(grid: FemGrid, fn) -> np.ndarray:
    """Load vector l[i] = integral of fn(r, s) * phi_i over the domain."""
    n = grid.n_nodes
    out = np.zeros(n)
    detJ = (grid.h / 2.0) ** 2
    for quad in grid.quads:
        xy = grid.nodes[quad]
        for xi in _GAUSS:
            for eta in _GAUSS:
                N = _shape(xi, eta)
                r, s = N @ xy
                out[quad] += fn(r, s) * N * detJ
    return out


def _integrate_basis_halfplane(grid: FemGrid, sign: float) -> np.ndarray:
    """Load vector of the indicator of {sign * r > 0} against the basis.

    Elements cut by r = 0 are integrated on the matching sub-rectangle with
    its own 2x2 Gauss rule, which is exact for bilinear integrands.
    """
    n = grid.n_nodes
    out = np.zeros(n)
    for quad in grid.quads:
        xy = grid.nodes[quad]
        x0, x1 = xy[0, 0], xy[1, 0]
        y0, y1 = xy[0, 1], xy[3, 1]
        lo, hi = (0.0, x1) if sign > 0 else (x0, 0.0)
        lo, hi = max(lo, x0), min(hi, x1)
        if hi <= lo:
            continue
        jac = (hi - lo) * (y1 - y0) / 4.0
        for u in _GAUSS:
            for v in _GAUSS:
                r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * u
                s = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * v
                xi = 2.0 * (r - x0) / (x1 - x0) - 1.0
                eta = 2.0 * (s - y0) / (y1 - y0) - 1.0
                out[quad] += _shape(xi, eta) * jac
    return out


def output_operator(grid: FemGrid) -> np.ndarray:
    """Tracking outputs: distribution center and the two half-domain
    integrals.

    Rows integrate (r c, s c, 1_{r>0} c, 1_{r<0} c) against the FEM basis;
    the first two rows are divided by the (conserved) initial mass 4 L0^2,
    so they read off the distribution center in meters and are directly
    comparable to position references.  Rows 3 and 4 stay raw integrals.
    """
    mass0 = 4.0 * grid.half_width**2
    rows = [
        _integrate_basis(grid, lambda r, s: r) / mass0,
        _integrate_basis(grid, lambda r, s: s) / mass0,
        _integrate_basis_halfplane(grid, +1.0),
        _integrate_basis_halfplane(grid, -1.0),
    ]
    return np.vstack(rows)


def default_actuation_profiles(half_width: float):
    """Polynomial source shapes, one per retained current product.

    The four tracking outputs resolve at most two odd-in-r directions, one
    odd-in-s direction, and (through total mass) one even direction, so the
    shipped shapes supply exactly that: affine and cubic pull along r
    (near/far-field surrogates for the two r-axis coils), affine pull along
    s, and a uniform pumping term.  Mirror-symmetric coil pairs would leave
    one output combination structurally unreachable (their second even
    component excites only a quadrupole state that every output integral
    annihilates), which would put transmission zeros on the whole imaginary
    axis.
    """
    L0 = half_width
    return (
        lambda r, s: 1.0 + r / L0,
        lambda r, s: 1.0 - (r / L0) ** 3,
        lambda r, s: 1.0 + s / L0,
        lambda r, s: 1.0 + 0.0 * r,
    )


def assemble_diffusion_plant(
    grid: FemGrid,
    diffusion: float,
    kappa: float = 1.0,
    c0: float = 1.0,
    profiles=None,
    n_dist: int = 0,
    normalize_inputs: bool = True,
    response_freq: float = 30.0,
) -> PlantRealization:
    """Galerkin realization of the actuated diffusion model.

    Parameters
    ----------
    grid : FemGrid
    diffusion : float
        Diffusion coefficient in scaled-time units (physical D times the
        time scaling).
    kappa, c0 : float
        Actuation coefficient (scaled) and linearization level; the input
        matrix columns are ``kappa * c0 * M^{-1} <phi, f_j>`` for the
        configured intensity profiles ``f_j``.
    profiles : sequence of callables, optional
        Spatial actuation shapes ``f_j(r, s)``; defaults to
        :func:`default_actuation_profiles`.
    n_dist : int
        Number of disturbance channels; disturbance enters through the same
        first ``n_dist`` actuation profiles.
    normalize_inputs : bool
        Rescale each input column so its output response at
        ``response_freq`` has unit norm.  The surrogate input units are
        arbitrary, and commensurate channels keep the scheduled gains and
        the closed-loop stiffness O(1).

    Raises
    ------
    ValueError
        If the mass matrix is numerically singular.
    """
    if diffusion <= 0.0:
        raise ValueError("diffusion must be positive")
    M, K = mass_and_stiffness(grid)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError(f"singular mass matrix (cond {cond:.3e})")
    if profiles is None:
        profiles = default_actuation_profiles(grid.half_width)
    loads = np.column_stack([_integrate_basis(grid, f) for f in profiles])
    A = -diffusion * np.linalg.solve(M, K)
    B = kappa * c0 * np.linalg.solve(M, loads)
    C = output_operator(grid)
    if normalize_inputs:
        resp = C @ np.linalg.solve(
            1j * response_freq * np.eye(grid.n_nodes) - A, B
        )
        gains = np.linalg.norm(resp, axis=0)
        if np.any(gains <= 0.0):
            raise ValueError("an actuation profile produces no output response")
        B = B / gains
    D = np.zeros((C.shape[0], B.shape[1]))
    Bd = B[:, :n_dist] if n_dist else np.zeros((grid.n_nodes, 0))
    return PlantRealization(
        A=A, B=B, Bd=Bd, C=C, D=D,
        state_labels=tuple(f"c_node{i}" for i in range(grid.n_nodes)),
        input_labels=("I5I1", "I5I3", "I6I2", "I6I4")[: B.shape[1]],
        output_labels=("moment_r", "moment_s", "half_pos_r", "half_neg_r"),
        mass=M, stiffness=K, grid=grid,
    )


def rosenbrock_rank(plant: PlantRealization, omega: float) -> int:
    """Numerical rank of [[iw - A, B], [C, D]] (relative SVD threshold).

    Rows and columns are equilibrated first (rank-preserving): FEM plants mix
    O(1e3) dynamics with O(1e-4) output functionals, which would otherwise
    swamp the threshold.
    """
    n = plant.n
    pencil = np.block([
        [1j * omega * np.eye(n) - plant.A, plant.B],
        [plant.C.astype(complex), plant.D.astype(complex)],
    ])
    rnorm = np.linalg.norm(pencil, axis=1)
    pencil /= np.maximum(rnorm, 1e-300)[:, None]
    cnorm = np.linalg.norm(pencil, axis=0)
    pencil /= np.maximum(cnorm, 1e-300)[None, :]
    sv = np.linalg.svd(pencil, compute_uv=False)
    return int(np.sum(sv > 1e-8 * sv[0]))


def has_imaginary_axis_rank(plant: PlantRealization, omegas) -> bool:
    """True iff the system pencil has full rank n + min(m, p) at each
    frequency, i.e. no transmission zeros there."""
    target = plant.n + min(plant.m, plant.p)
    return all(rosenbrock_rank(plant, w) >= target for w in np.atleast_1d(omegas))


def random_stable_plant(
    n: int, m: int, p: int, seed: int, test_frequencies=(0.0, 1.0, 2.0),
    max_tries: int = 60,
) -> PlantRealization:
    """Seeded controllable/observable stable fixture without transmission
    zeros at the given test frequencies.  Identical seeds give bit-identical
    plants."""
    if min(n, m, p) < 1:
        raise ValueError("n, m, p must all be at least 1")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        G = rng.standard_normal((n, n))
        margin = rng.uniform(0.5, 1.5)
        A = G - (abscissa(G) + margin) * np.eye(n)
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        plant = PlantRealization(A=A, B=B, Bd=np.zeros((n, 0)), C=C,
                                 D=np.zeros((p, m)))
        sv_c = np.linalg.svd(ctrb(A, B), compute_uv=False)
        sv_o = np.linalg.svd(ctrb(A.T, C.T), compute_uv=False)
        if sv_c[n - 1] < 1e-8 * sv_c[0] or sv_o[n - 1] < 1e-8 * sv_o[0]:
            continue
        if not has_imaginary_axis_rank(plant, test_frequencies):
            continue
        return plant
    raise RuntimeError(
        f"could not draw an acceptable fixture in {max_tries} tries "
        f"(n={n}, m={m}, p={p}, seed={seed})"
    )


def export_plant(plant: PlantRealization, path):
    """Write the realization as a plain-text bundle: a dimension header line
    'n m n_d p' followed by the row-major entries of A, B, Bd, C, D."""
    with open(path, "w") as fh:
        fh.write(f"{plant.n} {plant.m} {plant.n_d} {plant.p}\n")
        for M in (plant.A, plant.B, plant.Bd, plant.C, plant.D):
            for row in np.atleast_2d(M):
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def import_plant(path) -> PlantRealization:
    """Read a bundle produced by :func:`export_plant`."""
    with open(path) as fh:
        tokens = fh.read().split()
    n, m, n_d, p = (int(t) for t in tokens[:4])
    vals = np.array([float(t) for t in tokens[4:]])
    sizes = [(n, n), (n, m), (n, n_d), (p, n), (p, m)]
    expected = sum(r * c for r, c in sizes)
    if len(vals) != expected:
        raise ValueError(f"bundle has {len(vals)} values, expected {expected}")
    mats = []
    at = 0
    for r, c in sizes:
        mats.append(vals[at:at + r * c].reshape(r, c))
        at += r * c
    A, B, Bd, C, D = mats
    return PlantRealization(A=A, B=B, Bd=Bd, C=C, D=D)


def heat_decay_rate(plant: PlantRealization) -> float:
    """Slowest nonzero decay rate of the unforced diffusion plant (the
    magnitude of the second-smallest eigenvalue of -A)."""
    eig = np.sort(spectrum(plant.A).eigenvalues.real)[::-1]
    return float(-eig[1])


def evolve_free(plant: PlantRealization, x0, t: float) -> np.ndarray:
    """Unforced evolution x(t) = expm(A t) x0."""
    return scipy.linalg.expm(plant.A * t) @ np.asarray(x0, dtype=float)
