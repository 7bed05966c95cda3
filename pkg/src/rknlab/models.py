"""Linear second-order semidiscrete test systems ``M y'' + C y' + K y = f(t)``.

Meshes are uniform. The 1D wave and telegraph models use P1 hat functions,
the 2D wave uses tensor-product Q1 on the unit square, and the beam uses
C1 Hermite cubics (value and slope per node) as a one-dimensional stand-in
for a clamped plate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import Polynomial

from .linalg import DimensionError, csr_from_triplets, lump_mass

__all__ = [
    "ExactSolution",
    "BoundarySpec",
    "EnergyReport",
    "SecondOrderSystem",
    "assemble_wave_1d",
    "assemble_wave_2d",
    "assemble_telegraph_1d",
    "assemble_beam_1d",
    "oscillator",
    "energy",
    "manufactured_problem",
    "reference_solution",
    "bump_initial",
    "build_model",
    "MODEL_NAMES",
]

Vector = np.ndarray
TimeFunction = Callable[[float], Vector]


class ExactSolution:
    """Space-time function ``u(t, x, nt, nx)`` with analytic derivatives.

    ``nt`` is the time-derivative order, ``nx`` the spatial one (only used
    for slope DOFs of 1D Hermite elements). ``x`` has shape ``(k, d)``.
    """

    def __init__(self, func: Callable[[float, np.ndarray, int, int], np.ndarray], label: str = ""):
        self._func = func
        self.label = label

    def __call__(self, t: float, x: np.ndarray, nt: int = 0, nx: int = 0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(np.asarray(self._func(t, x, nt, nx), dtype=float), (x.shape[0],)).copy()

    @classmethod
    def separable(cls, space, time, label: str = "") -> "ExactSolution":
        """``u = space(x) * time(t)``; each factor takes ``(arg, derivative_order)``."""
        return cls(lambda t, x, nt, nx: space(x, nx) * time(t, nt), label)

    @classmethod
    def zero(cls) -> "ExactSolution":
        return cls(lambda t, x, nt, nx: np.zeros(x.shape[0]), "0")


def sine_space(k: int = 1):
    """``prod_d sin(k pi x_d)``; x-derivatives are 1D only."""
    w = k * math.pi

    def f(x, nx):
        if nx and x.shape[1] != 1:
            raise ValueError("spatial derivatives are only available in 1D")
        if x.shape[1] == 1:
            return w**nx * np.sin(w * x[:, 0] + nx * math.pi / 2)
        return np.prod(np.sin(w * x), axis=1)

    return f


def polynomial_space(coeffs):
    """1D polynomial in x with ascending ``coeffs``."""
    p = Polynomial(coeffs)

    def f(x, nx):
        return p.deriv(nx)(x[:, 0]) if nx else p(x[:, 0])

    return f


def cos_time(omega: float):
    return lambda t, nt: omega**nt * math.cos(omega * t + nt * math.pi / 2)


def polynomial_time(coeffs):
    p = Polynomial(coeffs)
    return lambda t, nt: float(p.deriv(nt)(t) if nt else p(t))


def damped_mode_time(omega0: float):
    """Solution of ``T'' + T' + omega0**2 T = 0`` with ``T(0) = 1``, ``T'(0) = 0``."""
    w = math.sqrt(omega0**2 - 0.25)

    def T(t, nt):
        e = math.exp(-t / 2)
        val = e * (math.cos(w * t) + math.sin(w * t) / (2 * w))
        der = -(omega0**2 / w) * e * math.sin(w * t)
        if nt == 0:
            return val
        if nt == 1:
            return der
        if nt == 2:
            return -der - omega0**2 * val
        raise ValueError("only derivatives up to order 2 are implemented")

    return T


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet data on constrained DOFs with its first two time derivatives."""

    indices: np.ndarray
    h: TimeFunction
    h_t: TimeFunction
    h_tt: TimeFunction

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "indices", idx)

    @classmethod
    def homogeneous(cls, indices) -> "BoundarySpec":
        k = len(np.unique(indices))
        zero = lambda t: np.zeros(k)  # noqa: E731
        return cls(indices, zero, zero, zero)

    @classmethod
    def none(cls) -> "BoundarySpec":
        return cls.homogeneous([])

    def __len__(self):
        return self.indices.size

    def check_consistent(self, y0: Vector, yt0: Vector, tol: float = 1e-10) -> None:
        idx = self.indices
        if not idx.size:
            return
        bad = max(np.max(np.abs(y0[idx] - self.h(0.0)), initial=0.0),
                  np.max(np.abs(yt0[idx] - self.h_t(0.0)), initial=0.0))
        if bad > tol:
            raise ValueError(f"initial data disagrees with boundary data by {bad:.3e}")


@dataclass(frozen=True)
class EnergyReport:
    t: float
    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


@dataclass(frozen=True)
class SecondOrderSystem:
    M: sp.csr_matrix
    C: sp.csr_matrix
    K: sp.csr_matrix
    dirichlet: BoundarySpec
    dof_points: np.ndarray
    dof_deriv: np.ndarray
    label: str
    dim: int = 1
    n: int = 1
    h: float = 1.0
    forcing: Callable[[float], Vector] | None = None
    exact: ExactSolution | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.M.shape[0]

    @property
    def damped(self) -> bool:
        return self.C.count_nonzero() > 0

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.m, dtype=bool)
        mask[self.dirichlet.indices] = False
        return np.flatnonzero(mask)

    def load(self, t: float) -> Vector:
        return np.zeros(self.m) if self.forcing is None else np.asarray(self.forcing(t), dtype=float)

    def interpolate(self, u: ExactSolution, t: float, nt: int = 0) -> Vector:
        """DOF vector of ``d^nt u / dt^nt`` at time ``t`` (values and slopes)."""
        if not self.dof_deriv.any():
            return u(t, self.dof_points, nt, 0)
        y = np.empty(self.m)
        for k in np.unique(self.dof_deriv):
            sel = self.dof_deriv == k
            y[sel] = u(t, self.dof_points[sel], nt, int(k))
        return y

    def lumped(self) -> "SecondOrderSystem":
        """Copy with ``M`` replaced by its row-sum lumped diagonal."""
        return replace(self, M=lump_mass(self.M), label=self.label + "-lumped")

    def l2_error(self, y: Vector, t: float, u: ExactSolution | None = None) -> float:
        u = self.exact if u is None else u
        e = y - self.interpolate(u, t)
        return float(math.sqrt(max(e @ (self.M @ e), 0.0)))


def _p1_matrices(n: int, L: float = 1.0):
    h = L / n
    Me = h / 6 * np.array([[2.0, 1.0], [1.0, 2.0]])
    Ke = 1 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    mt, kt = [], []
    for e in range(n):
        dofs = (e, e + 1)
        for a in range(2):
            for b in range(2):
                mt.append((dofs[a], dofs[b], Me[a, b]))
                kt.append((dofs[a], dofs[b], Ke[a, b]))
    return csr_from_triplets(n + 1, n + 1, mt), csr_from_triplets(n + 1, n + 1, kt), h


def _check_n(n: int) -> None:
    if int(n) != n or n < 2:
        raise ValueError(f"need at least 2 elements, got {n}")


def assemble_wave_1d(n: int, L: float = 1.0) -> SecondOrderSystem:
    _check_n(n)
    M, K, h = _p1_matrices(n, L)
    x = np.linspace(0.0, L, n + 1)
    return SecondOrderSystem(
        M=M, C=sp.csr_matrix((n + 1, n + 1)), K=K,
        dirichlet=BoundarySpec.homogeneous([0, n]),
        dof_points=x[:, None], dof_deriv=np.zeros(n + 1, dtype=int),
        label="wave1d", dim=1, n=n, h=h,
    )


def assemble_telegraph_1d(n: int, L: float = 1.0) -> SecondOrderSystem:
    sys = assemble_wave_1d(n, L)
    return replace(sys, C=sys.M.copy(), label="telegraph1d")


def assemble_wave_2d(n: int) -> SecondOrderSystem:
    """Q1 on an ``n x n`` grid of the unit square; node ``(i, j)`` is DOF ``i*(n+1) + j``."""
    _check_n(n)
    M1, K1, h = _p1_matrices(n)
    M = sp.csr_matrix(sp.kron(M1, M1))
    K = sp.csr_matrix(sp.kron(K1, M1) + sp.kron(M1, K1))
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.divmod(np.arange((n + 1) ** 2), n + 1)
    boundary = np.flatnonzero((i == 0) | (i == n) | (j == 0) | (j == n))
    m = (n + 1) ** 2
    return SecondOrderSystem(
        M=M, C=sp.csr_matrix((m, m)), K=K,
        dirichlet=BoundarySpec.homogeneous(boundary),
        dof_points=pts, dof_deriv=np.zeros(m, dtype=int),
        label="wave2d", dim=2, n=n, h=h,
    )


def hermite_element_matrices(h: float) -> tuple[np.ndarray, np.ndarray]:
    """Consistent mass and bending matrices for one Hermite cubic element (EI = 1)."""
    Me = h / 420 * np.array([
        [156, 22 * h, 54, -13 * h],
        [22 * h, 4 * h**2, 13 * h, -3 * h**2],
        [54, 13 * h, 156, -22 * h],
        [-13 * h, -3 * h**2, -22 * h, 4 * h**2],
    ])
    Ke = 1 / h**3 * np.array([
        [12, 6 * h, -12, 6 * h],
        [6 * h, 4 * h**2, -6 * h, 2 * h**2],
        [-12, -6 * h, 12, -6 * h],
        [6 * h, 2 * h**2, -6 * h, 4 * h**2],
    ])
    return Me, Ke


def assemble_beam_1d(n: int) -> SecondOrderSystem:
    """Clamped Hermite-cubic beam on [0, 1]; DOFs ``2i`` (value) and ``2i+1`` (slope)."""
    _check_n(n)
    h = 1.0 / n
    Me, Ke = hermite_element_matrices(h)
    m = 2 * (n + 1)
    mt, kt = [], []
    for e in range(n):
        dofs = (2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3)
        for a in range(4):
            for b in range(4):
                mt.append((dofs[a], dofs[b], Me[a, b]))
                kt.append((dofs[a], dofs[b], Ke[a, b]))
    x = np.linspace(0.0, 1.0, n + 1)
    return SecondOrderSystem(
        M=csr_from_triplets(m, m, mt), C=sp.csr_matrix((m, m)), K=csr_from_triplets(m, m, kt),
        dirichlet=BoundarySpec.homogeneous([0, 1, m - 2, m - 1]),
        dof_points=np.repeat(x, 2)[:, None], dof_deriv=np.tile([0, 1], n + 1),
        label="beam1d", dim=1, n=n, h=h,
    )


def oscillator(omega: float = 1.0) -> SecondOrderSystem:
    """Scalar ``y'' = -omega**2 y``."""
    one = sp.csr_matrix(np.array([[1.0]]))
    return SecondOrderSystem(
        M=one, C=sp.csr_matrix((1, 1)), K=sp.csr_matrix(np.array([[omega**2]])),
        dirichlet=BoundarySpec.none(),
        dof_points=np.zeros((1, 1)), dof_deriv=np.zeros(1, dtype=int),
        label="oscillator", dim=0, n=1, h=1.0,
        meta={"omega": omega},
    )


def energy(sys: SecondOrderSystem, y: Vector, y_t: Vector, t: float = 0.0) -> EnergyReport:
    y = np.asarray(y, dtype=float)
    y_t = np.asarray(y_t, dtype=float)
    if y.shape != (sys.m,) or y_t.shape != (sys.m,):
        raise DimensionError(f"state vectors must have length {sys.m}")
    return EnergyReport(t, 0.5 * float(y_t @ (sys.M @ y_t)), 0.5 * float(y @ (sys.K @ y)))


def manufactured_problem(
    sys: SecondOrderSystem,
    u_exact: ExactSolution,
    source: ExactSolution | None = None,
) -> SecondOrderSystem:
    """Attach forcing and Dirichlet data so that ``u_exact`` solves the problem.

    Without ``source`` the load is ``M y'' + C y' + K y`` of the DOF
    interpolant, which makes the interpolant the exact semidiscrete solution.
    With ``source`` (the continuous residual ``u_tt + c u_t + L u``) the load
    is ``M`` times its interpolant, so the result also carries spatial error.
    """
    idx = sys.dirichlet.indices

    if source is None:
        def forcing(t):
            f = sys.M @ sys.interpolate(u_exact, t, 2) + sys.K @ sys.interpolate(u_exact, t, 0)
            if sys.damped:
                f = f + sys.C @ sys.interpolate(u_exact, t, 1)
            return f
    else:
        def forcing(t):
            return sys.M @ sys.interpolate(source, t, 0)

    bc = BoundarySpec(
        idx,
        lambda t: sys.interpolate(u_exact, t, 0)[idx],
        lambda t: sys.interpolate(u_exact, t, 1)[idx],
        lambda t: sys.interpolate(u_exact, t, 2)[idx],
    )
    return replace(sys, forcing=forcing, dirichlet=bc, exact=u_exact)


def reference_solution(sys: SecondOrderSystem) -> tuple[ExactSolution, ExactSolution | None]:
    """Closed-form solution used by the experiments, and its source term (``None`` if unforced)."""
    pi = math.pi
    name = sys.label.removesuffix("-lumped")
    if name == "oscillator":
        w = sys.meta.get("omega", 1.0)
        return ExactSolution.separable(lambda x, nx: np.ones(x.shape[0]), cos_time(w), "cos(w t)"), None
    if name == "wave1d":
        return ExactSolution.separable(sine_space(), cos_time(pi), "sin(pi x) cos(pi t)"), None
    if name == "wave2d":
        return (ExactSolution.separable(sine_space(), cos_time(math.sqrt(2) * pi),
                                        "sin(pi x) sin(pi y) cos(sqrt2 pi t)"), None)
    if name == "telegraph1d":
        return ExactSolution.separable(sine_space(), damped_mode_time(pi), "damped standing wave"), None
    if name == "beam1d":
        p = np.array([0.0, 0.0, 1.0, -2.0, 1.0])  # x^2 (1 - x)^2
        q = -pi**2 * p
        q[0] += 24.0  # fourth derivative of p
        u = ExactSolution.separable(polynomial_space(p), cos_time(pi), "[x(1-x)]^2 cos(pi t)")
        src = ExactSolution.separable(polynomial_space(q), cos_time(pi))
        return u, src
    raise KeyError(f"no reference solution for {sys.label!r}")


def bump_initial(sys: SecondOrderSystem) -> ExactSolution:
    """Smooth, time-independent initial shape that excites many discrete modes.

    Satisfies the model's homogeneous boundary conditions; velocity is zero.
    """
    name = sys.label.removesuffix("-lumped")
    if name == "oscillator":
        return ExactSolution(lambda t, x, nt, nx: np.full(x.shape[0], 1.0 if nt == 0 else 0.0))
    if name == "beam1d":
        p = Polynomial([0.0, 0.0, 16.0, -32.0, 16.0]) * Polynomial([1.0, 1.0])

        def f(t, x, nt, nx):
            if nt:
                return np.zeros(x.shape[0])
            return p.deriv(nx)(x[:, 0]) if nx else p(x[:, 0])

        return ExactSolution(f, "bump")
    if name in ("wave1d", "telegraph1d"):
        return ExactSolution(
            lambda t, x, nt, nx: 0.0 if nt else 4 * x[:, 0] * (1 - x[:, 0]) * (1 + x[:, 0]), "bump")
    if name == "wave2d":
        return ExactSolution(
            lambda t, x, nt, nx: 0.0 if nt else
            16 * x[:, 0] * (1 - x[:, 0]) * x[:, 1] * (1 - x[:, 1]) * (1 + x[:, 0]), "bump")
    raise KeyError(f"no bump initial data for {sys.label!r}")


MODEL_NAMES = ("oscillator", "wave1d", "wave2d", "telegraph1d", "beam1d")


def build_model(name: str, n: int = 1) -> SecondOrderSystem:
    builders = {
        "oscillator": lambda n: oscillator(),
        "wave1d": assemble_wave_1d,
        "wave2d": assemble_wave_2d,
        "telegraph1d": assemble_telegraph_1d,
        "beam1d": assemble_beam_1d,
    }
    if name not in builders:
        raise KeyError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return builders[name](n)
