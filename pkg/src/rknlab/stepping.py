"""Time steppers for linear second-order systems.

``NystromStepper`` advances ``(y, y_t)`` with a Runge-Kutta-Nystrom
tableau, solving one stage system

    (I (x) M + dt A (x) C + dt**2 Abar (x) K) kappa = F

per step. ``RKStepper`` applies an ordinary RK tableau to the first-order
reduction. ``CentralStepper`` is the explicit leapfrog scheme.

Dirichlet data is imposed strongly by replacing the constrained rows of
every stage block (see ``BC_STRATEGIES``).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import (
    BlockTriangularSolver,
    ConstraintRows,
    SolverConfig,
    StageOperator,
    factorize,
    gmres_solve,
    lump_mass,
    LumpingInvalid,
)
from .models import BoundarySpec, SecondOrderSystem, energy
from .tableau import (
    ButcherTableau,
    NystromTableau,
    SingularFactorization,
    as_nystrom,
    triangular_approx,
)

__all__ = [
    "BC_STRATEGIES",
    "ConfigurationError",
    "SingularConstraint",
    "UnsupportedDamping",
    "StepState",
    "StepReport",
    "FirstOrderSystem",
    "NystromStepper",
    "RKStepper",
    "CentralStepper",
    "rkn_step",
    "rk_step",
    "reduce_first_order",
    "central_step",
    "central_start",
    "enforce_bc",
    "integrate",
]

BC_STRATEGIES = ("ode", "dae", "ddae")


class ConfigurationError(ValueError):
    pass


class SingularConstraint(ConfigurationError):
    """The boundary strategy needs a tableau matrix that is singular."""


class UnsupportedDamping(ConfigurationError):
    pass


@dataclass(frozen=True)
class StepState:
    t: float
    y: np.ndarray
    y_t: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.y)) or (self.y_t is not None and not np.all(np.isfinite(self.y_t))):
            raise FloatingPointError(f"non-finite state at t={self.t}")


@dataclass(frozen=True)
class StepReport:
    """Per-step linear-algebra bookkeeping.

    ``iterations`` counts Krylov iterations only; ``solves`` counts direct
    (factored) solves, which is all an explicit step performs.
    """

    iterations: int = 0
    residual: float = 0.0
    wall_time: float = 0.0
    solves: int = 0


def _nonsingular(A: np.ndarray) -> bool:
    return np.linalg.matrix_rank(A) == A.shape[0]


def _check_strategy(bc: str, A: np.ndarray, Abar: np.ndarray | None) -> None:
    if bc not in BC_STRATEGIES:
        raise ConfigurationError(f"unknown boundary strategy {bc!r}")
    if bc == "dae" and not _nonsingular(Abar):
        raise SingularConstraint("dae boundary conditions need a nonsingular Abar")
    if bc == "ddae" and not _nonsingular(A):
        raise SingularConstraint("ddae boundary conditions need a nonsingular A")


def enforce_bc(
    strategy: str,
    tab: NystromTableau,
    rhs: np.ndarray,
    state: StepState,
    dt: float,
    bc_data: BoundarySpec,
) -> tuple[ConstraintRows, np.ndarray]:
    """Constraint rows and modified right-hand side for an RKN stage system.

    ``rhs`` is the stacked ``(s, m)`` stage load. Constrained rows become

    * ``ode``:  ``kappa_i = h_tt(t_i)``
    * ``dae``:  ``y + c_i dt y_t + dt**2 sum_j Abar_ij kappa_j = h(t_i)``
    * ``ddae``: ``y_t + dt sum_j A_ij kappa_j = h_t(t_i)``
    """
    _check_strategy(strategy, tab.A, tab.Abar)
    return _bc_rows(strategy, tab, rhs, state, dt, bc_data)


def _bc_rows(strategy, tab, rhs, state, dt, bc_data):
    idx = bc_data.indices
    coupling, scale = {"ode": ("identity", 1.0), "dae": ("Abar", dt**2), "ddae": ("A", dt)}[strategy]
    rows = ConstraintRows(idx, idx, coupling, scale)
    F = np.array(rhs, dtype=float).reshape(tab.s, -1)
    if idx.size:
        for i, ci in enumerate(tab.c):
            ti = state.t + ci * dt
            if strategy == "ode":
                F[i, idx] = bc_data.h_tt(ti)
            elif strategy == "dae":
                F[i, idx] = bc_data.h(ti) - state.y[idx] - ci * dt * state.y_t[idx]
            else:
                F[i, idx] = bc_data.h_t(ti) - state.y_t[idx]
    return rows, F


def _triangular_pair(Abar, A, source, need_A: bool):
    At = triangular_approx(Abar, source)
    try:
        At_A = triangular_approx(A, source)
    except SingularFactorization:
        if need_A:
            raise
        At_A = None
    return At, At_A


class _StageEngine:
    """Cached solver for one stage system per step size."""

    def __init__(self, M, C, K, Abar, A, cfg: SolverConfig, explicit: bool, lower: bool, need_A: bool):
        self.M, self.C, self.K = M, C, K
        self.Abar, self.A = np.asarray(Abar), np.asarray(A)
        self.cfg = cfg
        self.explicit = explicit
        self.lower = lower
        self.need_A = need_A
        self._key = None

    def setup(self, dt: float, constraints: ConstraintRows) -> None:
        key = (dt, constraints.coupling, constraints.scale)
        if key == self._key:
            return
        self._key = key
        self.op = StageOperator(self.M, self.C, self.K, dt, self.Abar, self.A, constraints)
        self.lu = self.pc = None
        if self.explicit or (self.lower and self.cfg.method == "direct"):
            self.pc = BlockTriangularSolver(
                self.M, self.C, self.K, dt, np.tril(self.Abar), np.tril(self.A), constraints)
        elif self.cfg.method == "direct":
            self.lu = factorize(self.op.assemble())
        elif self.cfg.triangular_source is not None:
            At, At_A = _triangular_pair(self.Abar, self.A, self.cfg.triangular_source, self.need_A)
            self.pc = BlockTriangularSolver(self.M, self.C, self.K, dt, At, At_A, constraints)

    def solve(self, F: np.ndarray) -> tuple[np.ndarray, int, float, int]:
        if self.lu is not None:
            x = self.lu.solve(F)
            return x, 0, float(np.linalg.norm(F - self.op.apply(x))), 1
        if self.explicit or (self.lower and self.cfg.method == "direct"):
            x = self.pc.solve(F)
            return x, 0, float(np.linalg.norm(F - self.op.apply(x))), self.op.s
        res = gmres_solve(self.op.apply, self.pc, F, self.cfg)
        return res.x, res.iterations, res.residual, 0


class NystromStepper:
    """Runge-Kutta-Nystrom stepper for a :class:`SecondOrderSystem`.

    The stage factorization or preconditioner is built for the first step
    size seen and rebuilt only when ``dt`` changes.
    """

    def __init__(
        self,
        sys: SecondOrderSystem,
        tab: NystromTableau | ButcherTableau,
        bc: str | None = None,
        cfg: SolverConfig | None = None,
    ):
        self.sys = sys
        self.tab = as_nystrom(tab)
        self.bc = bc or ("ode" if self.tab.is_explicit else "ddae")
        self.cfg = cfg or SolverConfig()
        _check_strategy(self.bc, self.tab.A, self.tab.Abar)
        C = sys.C if sys.damped else None
        self._engine = _StageEngine(
            sys.M, C, sys.K, self.tab.Abar, self.tab.A, self.cfg,
            explicit=self.tab.is_explicit, lower=self.tab.is_lower_triangular,
            need_A=C is not None or self.bc == "ddae",
        )
        self.last_stages: np.ndarray | None = None

    def stage_rhs(self, state: StepState, dt: float) -> np.ndarray:
        sys, tab = self.sys, self.tab
        Ky, Kyt = sys.K @ state.y, sys.K @ state.y_t
        Cyt = sys.C @ state.y_t if sys.damped else 0.0
        F = np.empty((tab.s, sys.m))
        for i, ci in enumerate(tab.c):
            F[i] = sys.load(state.t + ci * dt) - Cyt - Ky - ci * dt * Kyt
        return F

    def prepare(self, dt: float) -> None:
        """Build the stage factorization or preconditioner for ``dt`` ahead of stepping."""
        idx = self.sys.dirichlet.indices
        coupling, scale = {"ode": ("identity", 1.0), "dae": ("Abar", dt**2), "ddae": ("A", dt)}[self.bc]
        self._engine.setup(dt, ConstraintRows(idx, idx, coupling, scale))

    def step(self, state: StepState, dt: float) -> tuple[StepState, StepReport]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        start = time.perf_counter()
        tab = self.tab
        # the strategy was validated at construction
        rows, F = _bc_rows(self.bc, tab, self.stage_rhs(state, dt), state, dt, self.sys.dirichlet)
        self._engine.setup(dt, rows)
        k, its, res, solves = self._engine.solve(F.reshape(-1))
        kappa = k.reshape(tab.s, -1)
        self.last_stages = kappa
        y = state.y + dt * state.y_t + dt**2 * (tab.bbar @ kappa)
        y_t = state.y_t + dt * (tab.b @ kappa)
        report = StepReport(its, res, time.perf_counter() - start, solves)
        return StepState(state.t + dt, y, y_t), report


def rkn_step(
    sys: SecondOrderSystem,
    tab: NystromTableau | ButcherTableau,
    state: StepState,
    dt: float,
    bc: str | None = None,
    cfg: SolverConfig | None = None,
) -> tuple[StepState, StepReport]:
    return NystromStepper(sys, tab, bc, cfg).step(state, dt)


@dataclass(frozen=True)
class FirstOrderSystem:
    """Linear ``Mhat z' + Khat z = fhat(t)``.

    ``second_order`` is set for reductions built by :func:`reduce_first_order`,
    where ``z = (y, y_t)`` and boundary strategies are available.
    """

    Mhat: sp.csr_matrix
    Khat: sp.csr_matrix
    forcing: object = None
    second_order: SecondOrderSystem | None = None

    @property
    def size(self) -> int:
        return self.Mhat.shape[0]

    def load(self, t: float) -> np.ndarray:
        return np.zeros(self.size) if self.forcing is None else np.asarray(self.forcing(t), dtype=float)


def _identity_weight(M) -> np.ndarray:
    try:
        return lump_mass(M).diagonal()
    except LumpingInvalid:
        # Hermite slope rows can sum to <= 0; the mass diagonal is always positive.
        return np.asarray(M.diagonal(), dtype=float)


def reduce_first_order(sys: SecondOrderSystem) -> FirstOrderSystem:
    """``z = (y, y_t)`` with ``Mhat = diag(W, M)`` and ``Khat = [[0, -W], [K, C]]``.

    ``W`` is the lumped mass diagonal, so both block rows scale alike.
    """
    W = sp.diags(_identity_weight(sys.M))
    m = sys.m
    Mhat = sp.bmat([[W, None], [None, sys.M]], format="csr")
    Khat = sp.bmat([[sp.csr_matrix((m, m)), -W], [sys.K, sys.C]], format="csr")
    forcing = None
    if sys.forcing is not None:
        forcing = lambda t: np.concatenate([np.zeros(m), sys.load(t)])  # noqa: E731
    return FirstOrderSystem(Mhat, Khat, forcing, sys)


class RKStepper:
    """Runge-Kutta stepper for a linear first-order system."""

    def __init__(
        self,
        fsys: FirstOrderSystem,
        tab: ButcherTableau,
        bc: str | None = None,
        cfg: SolverConfig | None = None,
    ):
        if not isinstance(tab, ButcherTableau):
            raise ConfigurationError("RK stepping needs a ButcherTableau")
        self.fsys = fsys
        self.tab = tab
        self.cfg = cfg or SolverConfig()
        self.bc = bc or ("ode" if tab.is_explicit else "ddae")
        has_bc = fsys.second_order is not None and len(fsys.second_order.dirichlet) > 0
        if has_bc:
            _check_strategy(self.bc, tab.A, tab.A)
        lower = not np.any(np.triu(tab.A, 1))
        self._engine = _StageEngine(
            fsys.Mhat, fsys.Khat, None, tab.A @ tab.A, tab.A, self.cfg,
            explicit=tab.is_explicit, lower=lower, need_A=True,
        )
        self.last_stages: np.ndarray | None = None

    def _constraints(self, t: float, z: np.ndarray, dt: float, F: np.ndarray) -> ConstraintRows:
        so = self.fsys.second_order
        if so is None or not len(so.dirichlet):
            return ConstraintRows([], [])
        bcd, m = so.dirichlet, so.m
        idx = bcd.indices
        rows = m + idx
        if self.bc == "ode":
            con = ConstraintRows(rows, rows, "identity", 1.0)
        elif self.bc == "dae":
            con = ConstraintRows(rows, idx, "A", dt)
        else:
            con = ConstraintRows(rows, rows, "A", dt)
        for i, ci in enumerate(self.tab.c):
            ti = t + ci * dt
            if self.bc == "ode":
                F[i, rows] = bcd.h_tt(ti)
            elif self.bc == "dae":
                F[i, rows] = bcd.h(ti) - z[idx]
            else:
                F[i, rows] = bcd.h_t(ti) - z[rows]
        return con

    def prepare(self, dt: float) -> None:
        z = np.zeros(self.fsys.size)
        F = np.zeros((self.tab.s, z.size))
        self._engine.setup(dt, self._constraints(0.0, z, dt, F))

    def step_z(self, t: float, z: np.ndarray, dt: float) -> tuple[np.ndarray, StepReport]:
        if dt <= 0:
            raise ValueError("dt must be positive")
        start = time.perf_counter()
        tab = self.tab
        Kz = self.fsys.Khat @ z
        F = np.empty((tab.s, z.size))
        for i, ci in enumerate(tab.c):
            F[i] = self.fsys.load(t + ci * dt) - Kz
        con = self._constraints(t, z, dt, F)
        self._engine.setup(dt, con)
        k, its, res, solves = self._engine.solve(F.reshape(-1))
        k = k.reshape(tab.s, -1)
        self.last_stages = k
        return z + dt * (tab.b @ k), StepReport(its, res, time.perf_counter() - start, solves)

    def step(self, state: StepState, dt: float) -> tuple[StepState, StepReport]:
        if state.y_t is None:
            z, rep = self.step_z(state.t, state.y, dt)
            return StepState(state.t + dt, z), rep
        m = state.y.size
        z, rep = self.step_z(state.t, np.concatenate([state.y, state.y_t]), dt)
        return StepState(state.t + dt, z[:m], z[m:]), rep


def rk_step(
    fsys: FirstOrderSystem,
    tab: ButcherTableau,
    state: StepState,
    dt: float,
    cfg: SolverConfig | None = None,
    bc: str | None = None,
) -> tuple[StepState, StepReport]:
    return RKStepper(fsys, tab, bc, cfg).step(state, dt)


class CentralStepper:
    """Leapfrog ``M y+ = M (2 y - y-) - dt**2 K y + dt**2 f``, Dirichlet rows overwritten."""

    def __init__(self, sys: SecondOrderSystem, dt: float, use_lumped: bool = False):
        if sys.damped:
            raise UnsupportedDamping("central differences are only defined for C = 0")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.sys = sys
        self.dt = dt
        self.mass = lump_mass(sys.M) if use_lumped else sys.M
        idx = sys.dirichlet.indices
        keep = np.ones(sys.m)
        keep[idx] = 0.0
        R = sp.csr_matrix((np.ones(idx.size), (idx, idx)), shape=self.mass.shape)
        self._lu = factorize(sp.diags(keep) @ self.mass + R)

    def _solve(self, rhs: np.ndarray, bvals: np.ndarray) -> np.ndarray:
        rhs = rhs.copy()
        rhs[self.sys.dirichlet.indices] = bvals
        return self._lu.solve(rhs)

    def start(self, y0: np.ndarray, v0: np.ndarray, t0: float = 0.0) -> np.ndarray:
        bcd = self.sys.dirichlet
        acc = self._solve(self.sys.load(t0) - self.sys.K @ y0, bcd.h_tt(t0))
        return y0 - self.dt * v0 + 0.5 * self.dt**2 * acc

    def step(self, t: float, y_prev: np.ndarray, y_curr: np.ndarray) -> np.ndarray:
        """Advance from ``y_curr`` at time ``t`` to ``t + dt``."""
        sys, dt = self.sys, self.dt
        rhs = self.mass @ (2 * y_curr - y_prev) - dt**2 * (sys.K @ y_curr) + dt**2 * sys.load(t)
        return self._solve(rhs, sys.dirichlet.h(t + dt))

    def velocity(self, y_prev: np.ndarray, y_next: np.ndarray) -> np.ndarray:
        return (y_next - y_prev) / (2 * self.dt)


def central_step(sys, y_prev, y_curr, dt, use_lumped: bool = False, t: float = 0.0) -> np.ndarray:
    return CentralStepper(sys, dt, use_lumped).step(t, y_prev, y_curr)


def central_start(sys, y0, v0, dt, use_lumped: bool = False, t0: float = 0.0) -> np.ndarray:
    return CentralStepper(sys, dt, use_lumped).start(y0, v0, t0)


def integrate(stepper, state: StepState, dt: float, n_steps: int, observer=None):
    """Take ``n_steps`` steps; ``observer(state, report)`` is called after each.

    Returns the final state and the list of step reports.
    """
    reports = []
    for _ in range(n_steps):
        state, rep = stepper.step(state, dt)
        reports.append(rep)
        if observer is not None:
            observer(state, rep)
    return state, reports


def initial_state(sys: SecondOrderSystem, u0=None, t0: float = 0.0) -> StepState:
    """State from the DOF interpolant of ``u0`` (default: ``sys.exact``) and its time derivative."""
    u = sys.exact if u0 is None else u0
    state = StepState(t0, sys.interpolate(u, t0, 0), sys.interpolate(u, t0, 1))
    if t0 == 0.0:
        sys.dirichlet.check_consistent(state.y, state.y_t)
    return state


def central_energy_trace(sys: SecondOrderSystem, y0, v0, dt: float, n_steps: int, use_lumped: bool = False):
    """Energies at steps ``0..n_steps-1`` using centred velocities."""
    st = CentralStepper(sys, dt, use_lumped)
    y_prev = st.start(y0, v0)
    y = np.asarray(y0, dtype=float)
    out = []
    for n in range(n_steps):
        y_next = st.step(n * dt, y_prev, y)
        out.append(energy(sys, y, st.velocity(y_prev, y_next), n * dt))
        y_prev, y = y, y_next
    return out
