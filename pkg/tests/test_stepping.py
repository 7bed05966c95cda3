import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from rknlab.linalg import SolverConfig
from rknlab.models import (
    BoundarySpec,
    ExactSolution,
    assemble_beam_1d,
    assemble_telegraph_1d,
    assemble_wave_1d,
    bump_initial,
    energy,
    manufactured_problem,
    oscillator,
)
from rknlab.stepping import (
    CentralStepper,
    ConfigurationError,
    FirstOrderSystem,
    NystromStepper,
    RKStepper,
    SingularConstraint,
    StepReport,
    StepState,
    UnsupportedDamping,
    central_energy_trace,
    central_start,
    central_step,
    enforce_bc,
    initial_state,
    integrate,
    reduce_first_order,
    rk_step,
    rkn_step,
)
from rknlab.tableau import as_nystrom, classical_nystrom_tableau, get_tableau

GMRES = SolverConfig(method="gmres", rtol=1e-12, atol=1e-14)


def scalar_state(y=1.0, v=0.0, t=0.0):
    return StepState(t, np.array([y]), np.array([v]))


def first_order_scalar(mhat=1.0, khat=1.0, forcing=None):
    return FirstOrderSystem(sp.csr_matrix([[mhat]]), sp.csr_matrix([[khat]]), forcing)


def quadratic_bc_wave(n=2):
    """wave1d whose two boundary DOFs follow h(t) = t**2."""
    base = assemble_wave_1d(n)
    bc = BoundarySpec([0, n], lambda t: np.full(2, t * t), lambda t: np.full(2, 2 * t),
                      lambda t: np.full(2, 2.0))
    return replace(base, dirichlet=bc)


# --- RKN step -----------------------------------------------------------------

def test_gl1_scalar_step():
    new, rep = rkn_step(oscillator(), get_tableau("gl1"), scalar_state(), 0.1)
    assert NystromStepper(oscillator(), get_tableau("gl1")).bc == "ddae"
    st = NystromStepper(oscillator(), get_tableau("gl1"))
    st.step(scalar_state(), 0.1)
    assert st.last_stages[0, 0] == pytest.approx(-1 / 1.0025, abs=1e-14)
    assert new.y[0] == pytest.approx(1 - 0.005 / 1.0025, abs=1e-14)
    assert new.y[0] == pytest.approx(0.99501247, abs=1e-8)
    assert new.y_t[0] == pytest.approx(-0.09975062, abs=1e-8)
    assert new.t == pytest.approx(0.1)
    assert isinstance(rep, StepReport) and rep.iterations == 0 and rep.solves == 1


@pytest.mark.parametrize("name", ["gl2", "radau2", "nystrom4"])
def test_zero_data_stays_zero(name):
    sys = assemble_wave_1d(6)
    z = np.zeros(sys.m)
    new, _ = rkn_step(sys, get_tableau(name), StepState(0.3, z, z), 0.05)
    np.testing.assert_array_equal(new.y, 0.0)
    np.testing.assert_array_equal(new.y_t, 0.0)
    assert new.t == pytest.approx(0.35)


def test_gl2_wave1d_matches_dense_block_system():
    sys = assemble_wave_1d(8)
    tab = as_nystrom(get_tableau("gl2"))
    dt = 0.1
    state = StepState(0.0, sys.interpolate(bump_initial(sys), 0.0), np.zeros(sys.m))
    st = NystromStepper(sys, tab, "ode")
    st.step(state, dt)
    # dense oracle: Kronecker block matrix with identity boundary rows
    M, K = sys.M.toarray(), sys.K.toarray()
    B = np.kron(np.eye(2), M) + dt**2 * np.kron(tab.Abar, K)
    F = np.concatenate([-K @ (state.y + c * dt * state.y_t) for c in tab.c])
    for i in range(2):
        for l in sys.dirichlet.indices:
            r = i * sys.m + l
            B[r] = 0.0
            B[r, r] = 1.0
            F[r] = 0.0
    np.testing.assert_allclose(st.last_stages.ravel(), np.linalg.solve(B, F), atol=1e-12)


def test_gmres_and_direct_agree():
    sys = assemble_telegraph_1d(16)
    state = StepState(0.0, sys.interpolate(bump_initial(sys), 0.0), np.zeros(sys.m))
    tab = get_tableau("gl2")
    a, _ = rkn_step(sys, tab, state, 1 / 16)
    for pc in ("none", "block_diagonal", "block_lower", "clines_ld"):
        b, rep = rkn_step(sys, tab, state, 1 / 16, cfg=replace(GMRES, preconditioner=pc))
        np.testing.assert_allclose(b.y, a.y, atol=1e-10)
        assert rep.iterations > 0


def test_explicit_path_has_no_krylov_iterations():
    sys = assemble_wave_1d(10)
    st = NystromStepper(sys, classical_nystrom_tableau(), cfg=GMRES)
    assert st.bc == "ode"
    state = StepState(0.0, sys.interpolate(bump_initial(sys), 0.0), np.zeros(sys.m))
    _, reps = integrate(st, state, 1e-3, 5)
    assert all(r.iterations == 0 and r.solves == 4 for r in reps)


def test_dt_must_be_positive():
    with pytest.raises(ValueError):
        rkn_step(oscillator(), get_tableau("gl1"), scalar_state(), 0.0)
    with pytest.raises(ValueError):
        RKStepper(reduce_first_order(oscillator()), get_tableau("gl1")).step(scalar_state(), -1.0)


def test_state_must_be_finite():
    with pytest.raises(FloatingPointError):
        StepState(0.0, np.array([np.nan]))


def test_stepper_caches_setup():
    sys = assemble_wave_1d(6)
    st = NystromStepper(sys, get_tableau("gl2"))
    st.prepare(0.1)
    op = st._engine.op
    st.step(StepState(0.0, np.zeros(sys.m), np.zeros(sys.m)), 0.1)
    assert st._engine.op is op
    st.step(StepState(0.0, np.zeros(sys.m), np.zeros(sys.m)), 0.05)
    assert st._engine.op is not op


# --- boundary strategies ------------------------------------------------------

def test_gl1_dae_and_ddae_constraint_examples():
    sys = quadratic_bc_wave()
    state = StepState(0.0, np.zeros(sys.m), np.zeros(sys.m))
    for bc, kappa in (("dae", 1.0), ("ddae", 2.0), ("ode", 2.0)):
        st = NystromStepper(sys, get_tableau("gl1"), bc)
        st.step(state, 1.0)
        np.testing.assert_allclose(st.last_stages[0, sys.dirichlet.indices], kappa, atol=1e-14)


def test_enforce_bc_rows():
    sys = quadratic_bc_wave()
    tab = as_nystrom(get_tableau("gl1"))
    state = StepState(0.0, np.zeros(sys.m), np.zeros(sys.m))
    rows, F = enforce_bc("dae", tab, np.ones((1, sys.m)), state, 1.0, sys.dirichlet)
    assert rows.coupling == "Abar" and rows.scale == 1.0
    np.testing.assert_allclose(F[0, [0, 2]], 0.25)
    assert F[0, 1] == 1.0
    rows, F = enforce_bc("ode", tab, np.ones((1, sys.m)), state, 1.0, BoundarySpec.homogeneous([0, 2]))
    np.testing.assert_array_equal(F[0, [0, 2]], 0.0)
    with pytest.raises(ConfigurationError):
        enforce_bc("shifted", tab, np.ones((1, sys.m)), state, 1.0, sys.dirichlet)


def test_homogeneous_ode_forces_zero_boundary_stages():
    sys = assemble_wave_1d(8)
    st = NystromStepper(sys, get_tableau("gl2"), "ode")
    st.step(StepState(0.0, sys.interpolate(bump_initial(sys), 0.0), np.zeros(sys.m)), 0.1)
    np.testing.assert_array_equal(st.last_stages[:, sys.dirichlet.indices], 0.0)


@pytest.mark.parametrize("bc", ["dae", "ddae"])
def test_singular_constraints_rejected(bc):
    with pytest.raises(SingularConstraint):
        NystromStepper(assemble_wave_1d(4), classical_nystrom_tableau(), bc)
    with pytest.raises(SingularConstraint):
        RKStepper(reduce_first_order(assemble_wave_1d(4)), get_tableau("rk4"), bc)


def test_rk_stepper_needs_butcher_tableau():
    with pytest.raises(ConfigurationError):
        RKStepper(reduce_first_order(assemble_wave_1d(4)), classical_nystrom_tableau())


def _time_dependent_problem(n=16):
    """wave1d with u = cos(pi t + x) * (1 + x): boundary DOFs move in time."""
    def f(t, x, nt, nx):
        ph = math.pi * t + x[:, 0]
        d = [np.cos(ph), -math.pi * np.sin(ph), -math.pi**2 * np.cos(ph)][nt]
        return d * (1 + x[:, 0])

    return manufactured_problem(assemble_wave_1d(n), ExactSolution(f))


def test_radau_dae_interpolates_boundary_data():
    sys = _time_dependent_problem()
    st = NystromStepper(sys, get_tableau("radau2"), "dae")
    state = initial_state(sys)
    idx = sys.dirichlet.indices
    for _ in range(10):
        state, _ = st.step(state, 0.05)
        np.testing.assert_allclose(state.y[idx], sys.dirichlet.h(state.t), atol=1e-12)


def test_radau_ddae_temporal_order():
    sys = _time_dependent_problem(32)
    errs = []
    for k in range(3):
        steps = 10 * 2**k
        st = NystromStepper(sys, get_tableau("radau2"), "ddae")
        state, _ = integrate(st, initial_state(sys), 1.0 / steps, steps)
        errs.append(sys.l2_error(state.y, 1.0))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 2.0), orders


@pytest.mark.parametrize("bc", ["ode", "dae", "ddae"])
def test_rk_boundary_strategies_track_data(bc):
    sys = _time_dependent_problem()
    fsys = reduce_first_order(sys)
    st = RKStepper(fsys, get_tableau("radau2"), bc)
    state = initial_state(sys)
    for _ in range(8):
        state, _ = st.step(state, 0.05)
    tol = 1e-12 if bc == "dae" else 1e-4
    np.testing.assert_allclose(state.y[sys.dirichlet.indices], sys.dirichlet.h(state.t), atol=tol)


# --- RK on the first-order reduction ------------------------------------------

def test_backward_euler_scalar():
    st = RKStepper(first_order_scalar(), get_tableau("radau1"))
    z, _ = st.step_z(0.0, np.array([1.0]), 0.1)
    assert st.last_stages[0, 0] == pytest.approx(-1 / 1.1, abs=1e-15)
    assert z[0] == pytest.approx(10 / 11, abs=1e-15)
    new, _ = rk_step(first_order_scalar(), get_tableau("radau1"), StepState(0.0, np.array([1.0])), 0.1)
    assert new.y_t is None and new.y[0] == pytest.approx(10 / 11)


def test_rk4_constant_rate():
    fsys = first_order_scalar(1.0, 0.0, forcing=lambda t: np.array([1.0]))
    z, rep = RKStepper(fsys, get_tableau("rk4")).step_z(0.0, np.array([2.0]), 0.3)
    assert z[0] == pytest.approx(2.3, abs=1e-15)
    assert rep.iterations == 0


def test_reduce_first_order_scalar():
    base = oscillator()
    sys = replace(base, M=sp.csr_matrix([[2.0]]), K=sp.csr_matrix([[3.0]]))
    fsys = reduce_first_order(sys)
    np.testing.assert_array_equal(fsys.Mhat.toarray(), [[2, 0], [0, 2]])
    np.testing.assert_array_equal(fsys.Khat.toarray(), [[0, -2], [3, 0]])
    ev = np.linalg.eigvals(-np.linalg.solve(reduce_first_order(oscillator()).Mhat.toarray(),
                                            reduce_first_order(oscillator()).Khat.toarray()))
    np.testing.assert_allclose(sorted(ev.imag), [-1, 1], atol=1e-15)
    np.testing.assert_allclose(ev.real, 0, atol=1e-15)


def test_reduction_energy_and_forcing():
    sys = manufactured_problem(assemble_wave_1d(5), ExactSolution(lambda t, x, nt, nx: (t**2 if nt == 0 else
                                                                  2 * t if nt == 1 else 2.0) * x[:, 0]))
    fsys = reduce_first_order(sys)
    np.testing.assert_allclose(fsys.load(0.3)[6:], sys.load(0.3))
    np.testing.assert_array_equal(fsys.load(0.3)[:6], 0.0)
    rng = np.random.default_rng(0)
    z = rng.standard_normal(12)
    assert energy(sys, z[:6], z[6:]).total == energy(sys, z[:6].copy(), z[6:].copy()).total


def test_beam_reduction_uses_mass_diagonal_fallback():
    sys = assemble_beam_1d(4)
    fsys = reduce_first_order(sys)
    np.testing.assert_allclose(fsys.Mhat.diagonal()[: sys.m], sys.M.diagonal())


@pytest.mark.parametrize("model", [assemble_wave_1d, assemble_telegraph_1d])
def test_rkn_rk_equivalence(model):
    sys = model(8)
    tab = get_tableau("gl2")
    state = StepState(0.0, sys.interpolate(bump_initial(sys), 0.0), np.zeros(sys.m))
    a = NystromStepper(sys, tab)
    b = RKStepper(reduce_first_order(sys), tab)
    sa = sb = state
    for _ in range(10):
        sa, _ = a.step(sa, 0.1)
        sb, _ = b.step(sb, 0.1)
        assert max(np.abs(sa.y - sb.y).max(), np.abs(sa.y_t - sb.y_t).max()) < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["gl1", "gl2", "gl3", "radau1", "radau2", "radau3"]),
       st.sampled_from(["ode", "ddae", "dae"]), st.floats(0.01, 0.5), st.integers(0, 2**31 - 1))
def test_rkn_rk_equivalence_property(name, bc, dt, seed):
    sys = _time_dependent_problem(6)
    tab = get_tableau(name)
    rng = np.random.default_rng(seed)
    y = sys.interpolate(sys.exact, 0.0)
    free = sys.free_dofs
    y[free] += 0.1 * rng.standard_normal(free.size)
    v = sys.interpolate(sys.exact, 0.0, 1)
    v[free] += 0.1 * rng.standard_normal(free.size)
    state = StepState(0.0, y, v)
    sa, _ = NystromStepper(sys, tab, bc).step(state, dt)
    sb, _ = RKStepper(reduce_first_order(sys), tab, bc).step(state, dt)
    scale = 1 + np.abs(sa.y_t).max()
    assert np.abs(sa.y - sb.y).max() < 1e-10 * scale
    assert np.abs(sa.y_t - sb.y_t).max() < 1e-10 * scale


# --- energy behaviour ---------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.floats(0.01, 1.0), st.integers(0, 2**31 - 1))
def test_gauss_conserves_energy(s, dt, seed):
    sys = assemble_wave_1d(8)
    rng = np.random.default_rng(seed)
    y = np.zeros(sys.m)
    v = np.zeros(sys.m)
    y[sys.free_dofs] = rng.standard_normal(sys.free_dofs.size)
    v[sys.free_dofs] = rng.standard_normal(sys.free_dofs.size)
    st = NystromStepper(sys, get_tableau(f"gl{s}"))
    e0 = energy(sys, y, v).total
    state = StepState(0.0, y, v)
    for _ in range(10):
        state, _ = st.step(state, dt)
    assert abs(energy(sys, state.y, state.y_t).total - e0) <= 1e-10 * e0


def test_telegraph_energy_nonincreasing():
    sys = assemble_telegraph_1d(16)
    st = NystromStepper(sys, get_tableau("gl2"))
    state = StepState(0.0, sys.interpolate(bump_initial(sys), 0.0), np.zeros(sys.m))
    totals = [energy(sys, state.y, state.y_t).total]
    for _ in range(40):
        state, _ = st.step(state, 1 / 16)
        totals.append(energy(sys, state.y, state.y_t).total)
    assert np.all(np.diff(totals) <= 1e-14 * totals[0])
    assert totals[-1] < 0.9 * totals[0]


# --- central differences ------------------------------------------------------

def test_central_scalar_examples():
    sys = oscillator()
    assert central_step(sys, np.array([0.995]), np.array([1.0]), 0.1)[0] == pytest.approx(0.995, abs=1e-15)
    assert central_start(sys, np.array([1.0]), np.array([0.0]), 0.1)[0] == pytest.approx(0.995, abs=1e-15)


def test_central_without_stiffness_extrapolates():
    sys = replace(assemble_wave_1d(4), K=sp.csr_matrix((5, 5)), dirichlet=BoundarySpec.none())
    y0, y1 = np.arange(5.0), np.arange(5.0) ** 2
    np.testing.assert_allclose(central_step(sys, y0, y1, 0.1), 2 * y1 - y0, atol=1e-13)
    np.testing.assert_allclose(central_start(sys, y1, np.zeros(5), 0.1), y1, atol=1e-14)


def test_central_symmetric_start():
    sys = assemble_wave_1d(8)
    st = CentralStepper(sys, 0.01)
    y0 = sys.interpolate(bump_initial(sys), 0.0)
    y_m1 = st.start(y0, np.zeros(sys.m))
    np.testing.assert_allclose(st.step(0.0, y_m1, y0), y_m1, atol=1e-15)


def test_central_rejects_damping():
    with pytest.raises(UnsupportedDamping):
        CentralStepper(assemble_telegraph_1d(4), 0.1)
    with pytest.raises(ValueError):
        CentralStepper(assemble_wave_1d(4), 0.0)


def test_central_order_two_on_oscillator():
    sys = oscillator()
    errs = []
    for n in (40, 80, 160, 320):
        dt = 2 * math.pi / n
        st = CentralStepper(sys, dt)
        y_prev, y = st.start(np.array([1.0]), np.array([0.0])), np.array([1.0])
        worst = 0.0
        for k in range(n):
            y_prev, y = y, st.step(k * dt, y_prev, y)
            worst = max(worst, abs(y[0] - math.cos((k + 1) * dt)))
        errs.append(worst)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(orders, 2.0, atol=0.05)


def test_central_lumped_and_dirichlet_rows():
    sys = _time_dependent_problem(8)
    st = CentralStepper(sys, 0.01, use_lumped=True)
    y0 = sys.interpolate(sys.exact, 0.0)
    y1 = st.step(0.0, st.start(y0, sys.interpolate(sys.exact, 0.0, 1)), y0)
    np.testing.assert_allclose(y1[sys.dirichlet.indices], sys.dirichlet.h(0.01), atol=1e-15)


def test_central_energy_trace_zero():
    sys = assemble_wave_1d(6)
    z = np.zeros(sys.m)
    assert all(e.total == 0.0 for e in central_energy_trace(sys, z, z, 0.01, 5))
