"""Experiment drivers behind the command-line runner.

Each ``run_*`` function takes an :class:`ExperimentConfig` and returns a
list of row dictionaries whose keys are the fixed CSV header for that
experiment. A row that fails carries ``status != "ok"``; the run keeps
going with the next mesh size.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .linalg import NonConvergence, SolverConfig, lump_mass, power_iteration_genev
from .models import (
    ExactSolution,
    SecondOrderSystem,
    build_model,
    bump_initial,
    energy,
    manufactured_problem,
    reference_solution,
)
from .stepping import (
    CentralStepper,
    NystromStepper,
    RKStepper,
    StepState,
    reduce_first_order,
)
from .tableau import get_tableau

__all__ = [
    "EXPERIMENTS",
    "HEADERS",
    "DtRule",
    "ExperimentConfig",
    "ConvergenceRow",
    "observed_orders",
    "stable_step",
    "run_converge",
    "run_energy",
    "run_solve_study",
    "run_stability",
    "run_experiment",
    "format_csv",
]

EXPERIMENTS = ("converge", "energy", "solve_study", "stability")
FORMULATIONS = ("rkn", "rk", "central")
INITS = ("auto", "reference", "bump", "zero")

HEADERS = {
    "converge": ("n", "dt", "steps", "error", "order", "mean_iterations", "wall_time", "status"),
    "energy": ("n", "method", "step", "t", "kinetic", "potential", "total", "status"),
    "solve_study": ("n", "dt", "steps", "mean_iterations", "max_iterations", "wall_time", "status"),
    "stability": (
        "n", "lambda_max", "dt_stable", "steps_to_tfinal", "runtime",
        "bounded_099", "blowup_105", "implicit_dt", "implicit_steps", "implicit_bounded",
        "implicit_runtime", "status",
    ),
}


@dataclass(frozen=True)
class DtRule:
    """Step-size rule: ``fixed`` value, ``hfactor`` times the mesh size, or
    ``stable`` times the central-difference limit ``2/sqrt(lambda_max)``."""

    kind: str = "hfactor"
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "hfactor", "stable"):
            raise ValueError(f"unknown dt rule {self.kind!r}")
        if not (self.value > 0 and math.isfinite(self.value)):
            raise ValueError("dt rule value must be positive")

    @classmethod
    def parse(cls, text: str | float) -> "DtRule":
        if isinstance(text, (int, float)):
            return cls("fixed", float(text))
        kind, sep, val = str(text).strip().partition(":")
        if not sep:
            return cls("fixed", float(kind))
        return cls(kind.strip().lower(), float(val))

    def __str__(self) -> str:
        return repr(self.value) if self.kind == "fixed" else f"{self.kind}:{self.value!r}"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "converge"
    model: str = "wave1d"
    tableau: str = "gl2"
    formulation: str = "rkn"
    bc: str | None = None
    n: tuple[int, ...] = (16, 32, 64)
    dt: DtRule = field(default_factory=DtRule)
    t_final: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    out: str | None = None
    include_setup_time: bool = False
    seed: int = 0
    lumped: bool = False
    init: str = "auto"
    timing: bool = True
    error_at: str = "final"

    def __post_init__(self):
        exp = self.experiment.replace("-", "_")
        object.__setattr__(self, "experiment", exp)
        object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        if isinstance(self.dt, (str, int, float)):
            object.__setattr__(self, "dt", DtRule.parse(self.dt))
        if exp not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown initial data {self.init!r}")
        if not self.n or any(v <= 0 for v in self.n) or any(b <= a for a, b in zip(self.n, self.n[1:])):
            raise ValueError("mesh sizes must be positive and strictly increasing")
        if self.error_at not in ("final", "max"):
            raise ValueError(f"error_at must be 'final' or 'max', got {self.error_at!r}")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["dt"] = str(self.dt)
        d["n"] = list(self.n)
        return d


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    dt: float
    steps: int
    error: float
    order: float | None
    mean_iterations: float
    wall_time: float
    status: str = "ok"

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in HEADERS["converge"]}


def observed_orders(ns, errors) -> list[float | None]:
    """``log(e[k-1]/e[k]) / log(n[k]/n[k-1])``; ``None`` where undefined."""
    out: list[float | None] = [None]
    for k in range(1, len(ns)):
        e0, e1 = errors[k - 1], errors[k]
        ok = all(e is not None and math.isfinite(e) and e > 0 for e in (e0, e1))
        out.append(math.log(e0 / e1) / math.log(ns[k] / ns[k - 1]) if ok else None)
    return out


def _free_lambda_max(sys: SecondOrderSystem, lumped: bool, seed: int = 0) -> float:
    free = sys.free_dofs
    M = lump_mass(sys.M) if lumped else sys.M
    if free.size == 0:
        return 0.0
    Kf = sys.K[free][:, free]
    if Kf.count_nonzero() == 0:
        return 0.0
    return power_iteration_genev(Kf, M[free][:, free], seed=seed)


def stable_step(sys: SecondOrderSystem, lumped: bool = False, seed: int = 0) -> tuple[float, float]:
    """``(lambda_max, 2/sqrt(lambda_max))`` on the free DOFs; ``inf`` step when ``lambda_max`` is 0."""
    lam = _free_lambda_max(sys, lumped, seed)
    scale = max(abs(lam), 1.0)
    if lam <= 1e-14 * scale:
        return lam, math.inf
    return lam, 2.0 / math.sqrt(lam)


def _mesh_size(cfg: ExperimentConfig, sys: SecondOrderSystem, n: int) -> float:
    # The oscillator has no mesh; its "n" is the step count over t_final.
    return cfg.t_final / n if sys.m == 1 and sys.dim == 0 else sys.h


def _step_size(cfg: ExperimentConfig, sys: SecondOrderSystem, n: int) -> float:
    if cfg.dt.kind == "fixed":
        return cfg.dt.value
    if cfg.dt.kind == "hfactor":
        return cfg.dt.value * _mesh_size(cfg, sys, n)
    _, dts = stable_step(sys, cfg.lumped, cfg.seed)
    if not math.isfinite(dts):
        raise ValueError("stable dt rule needs a nonzero stiffness")
    return cfg.dt.value * dts


def _system(cfg: ExperimentConfig, n: int, forced: bool) -> SecondOrderSystem:
    sys = build_model(cfg.model, n)
    if forced:
        u, src = reference_solution(sys)
        if src is None:
            # unforced reference: keep the boundary data, drop the zero load
            sys = replace(manufactured_problem(sys, u, ExactSolution.zero()), forcing=None)
        else:
            sys = manufactured_problem(sys, u, src)
    if cfg.lumped:
        sys = sys.lumped()
    return sys


def _initial(cfg: ExperimentConfig, sys: SecondOrderSystem, default: str) -> StepState:
    kind = default if cfg.init == "auto" else cfg.init
    if kind == "zero":
        return StepState(0.0, np.zeros(sys.m), np.zeros(sys.m))
    if kind == "bump":
        u = bump_initial(sys)
    else:
        u = sys.exact if sys.exact is not None else reference_solution(sys)[0]
    return StepState(0.0, sys.interpolate(u, 0.0, 0), sys.interpolate(u, 0.0, 1))


class _Integrator:
    """Uniform driver over the three formulations.

    ``run`` calls ``observe(k, t, y, y_t)`` for ``k = 0..steps`` and returns
    the per-step reports. Central differences take one extra step so that
    the final velocity is centred as well.
    """

    def __init__(self, cfg: ExperimentConfig, sys: SecondOrderSystem, dt: float):
        self.sys, self.dt, self.cfg = sys, dt, cfg
        self.label = "central" if cfg.formulation == "central" else cfg.tableau
        if cfg.formulation == "central":
            # lumping has already been applied to sys when requested
            self.stepper = CentralStepper(sys, dt)
        elif cfg.formulation == "rkn":
            self.stepper = NystromStepper(sys, get_tableau(cfg.tableau), cfg.bc, cfg.solver)
        else:
            self.stepper = RKStepper(reduce_first_order(sys), get_tableau(cfg.tableau), cfg.bc, cfg.solver)

    def prepare(self) -> None:
        if hasattr(self.stepper, "prepare"):
            self.stepper.prepare(self.dt)

    def run(self, state: StepState, steps: int, observe: Callable | None = None) -> list:
        obs = observe or (lambda k, t, y, v: None)
        dt = self.dt
        if isinstance(self.stepper, CentralStepper):
            st = self.stepper
            y_prev = st.start(state.y, state.y_t, state.t)
            y = state.y
            for k in range(steps + 1):
                t = state.t + k * dt
                y_next = st.step(t, y_prev, y)
                obs(k, t, y, st.velocity(y_prev, y_next))
                y_prev, y = y, y_next
            return []
        reports = []
        obs(0, state.t, state.y, state.y_t)
        for k in range(1, steps + 1):
            state, rep = self.stepper.step(state, dt)
            reports.append(rep)
            obs(k, state.t, state.y, state.y_t)
        return reports


def _status(exc: BaseException) -> str:
    return f"failed: {type(exc).__name__}: {exc}".replace("\n", " ").replace(",", ";")


def _clock(cfg: ExperimentConfig, seconds: float) -> float:
    return seconds if cfg.timing else 0.0


def _mean_its(reports) -> float:
    return float(np.mean([r.iterations for r in reports])) if reports else 0.0


def run_converge(cfg: ExperimentConfig) -> list[dict]:
    """Error against the reference solution for each ``n``.

    The error is the discrete L2 norm at ``t_final``, or its maximum over
    all steps when ``cfg.error_at == "max"``. The latter avoids instants
    where the exact solution is stationary, at which a phase error only
    enters quadratically.
    """
    rows: list[ConvergenceRow] = []
    for n in cfg.n:
        t0 = time.perf_counter()
        dt, steps = math.nan, 0
        try:
            sys = _system(cfg, n, forced=True)
            steps = max(1, round(cfg.t_final / _step_size(cfg, sys, n)))
            dt = cfg.t_final / steps
            integ = _Integrator(cfg, sys, dt)
            integ.prepare()
            if not cfg.include_setup_time:
                t0 = time.perf_counter()
            errs = []

            def keep(k, t, y, v):
                if k == steps or cfg.error_at == "max":
                    errs.append(sys.l2_error(y, k * dt))

            reports = integ.run(_initial(cfg, sys, "reference"), steps, keep)
            err = max(errs)
            rows.append(ConvergenceRow(n, dt, steps, err, None, _mean_its(reports),
                                       _clock(cfg, time.perf_counter() - t0)))
        except Exception as exc:  # noqa: BLE001 - recorded per row
            rows.append(ConvergenceRow(n, dt, steps, math.nan, None, math.nan,
                                       _clock(cfg, time.perf_counter() - t0), _status(exc)))
    orders = observed_orders([r.n for r in rows], [r.error for r in rows])
    return [{**r.as_row(), "order": o} for r, o in zip(rows, orders)]


def run_energy(cfg: ExperimentConfig) -> list[dict]:
    """Energy trace, one row per step, for the unforced model."""
    rows: list[dict] = []
    for n in cfg.n:
        label = "central" if cfg.formulation == "central" else cfg.tableau
        try:
            sys = _system(cfg, n, forced=False)
            dt = _step_size(cfg, sys, n)
            steps = max(1, math.ceil(cfg.t_final / dt - 1e-9))
            integ = _Integrator(cfg, sys, dt)
            integ.prepare()
            trace = []

            def record(k, t, y, v):
                e = energy(sys, y, v, t)
                trace.append({"n": n, "method": label, "step": k, "t": t, "kinetic": e.kinetic,
                              "potential": e.potential, "total": e.total, "status": "ok"})

            integ.run(_initial(cfg, sys, "reference"), steps, record)
            rows.extend(trace)
        except Exception as exc:  # noqa: BLE001
            rows.append({"n": n, "method": label, "step": 0, "t": math.nan, "kinetic": math.nan,
                         "potential": math.nan, "total": math.nan, "status": _status(exc)})
    return rows


def run_solve_study(cfg: ExperimentConfig) -> list[dict]:
    """Krylov iterations per step with the configured preconditioner."""
    if cfg.formulation == "central":
        raise ValueError("the solve study needs an implicit rkn or rk formulation")
    rows: list[dict] = []
    for n in cfg.n:
        t0 = time.perf_counter()
        row = {"n": n, "dt": math.nan, "steps": 0, "mean_iterations": math.nan,
               "max_iterations": math.nan, "wall_time": 0.0, "status": "ok"}
        try:
            sys = _system(cfg, n, forced=False)
            dt = _step_size(cfg, sys, n)
            steps = max(1, math.ceil(cfg.t_final / dt - 1e-9))
            row.update(dt=dt, steps=steps)
            integ = _Integrator(cfg, sys, dt)
            integ.prepare()
            if not cfg.include_setup_time:
                t0 = time.perf_counter()
            reports = integ.run(_initial(cfg, sys, "bump"), steps)
            its = [r.iterations for r in reports]
            row.update(mean_iterations=float(np.mean(its)), max_iterations=int(max(its)))
        except NonConvergence as exc:
            cap = cfg.solver.max_iters
            row.update(mean_iterations=float(cap), max_iterations=cap, status=_status(exc))
        except Exception as exc:  # noqa: BLE001
            row["status"] = _status(exc)
        row["wall_time"] = _clock(cfg, time.perf_counter() - t0)
        rows.append(row)
    return rows


def _bounded(sys, dt, t_final, y0, v0, cap: int | None = None) -> tuple[bool, int, float]:
    """Central run from ``(y0, v0)``: ``(bounded, steps, runtime)``.

    Growth is measured in the mass norm; Hermite slope DOFs make the
    Euclidean norm mesh-dependent.
    """
    st = CentralStepper(sys, dt)
    steps = max(1, math.ceil(t_final / dt - 1e-9))
    if cap is not None:
        steps = min(steps, cap)
    norm = lambda v: math.sqrt(max(float(v @ (sys.M @ v)), 0.0))  # noqa: E731
    limit = 10.0 * norm(y0) + 1.0
    t0 = time.perf_counter()
    y_prev, y = st.start(y0, v0), y0
    for k in range(steps):
        y_prev, y = y, st.step(k * dt, y_prev, y)
        if not np.all(np.isfinite(y)) or norm(y) > limit:
            return False, k + 1, time.perf_counter() - t0
    return True, steps, time.perf_counter() - t0


def run_stability(cfg: ExperimentConfig) -> list[dict]:
    """Central-difference step bound versus an implicit GL(2) run at ``dt = h``."""
    rows: list[dict] = []
    rng = np.random.default_rng(cfg.seed)
    for n in cfg.n:
        row = dict.fromkeys(HEADERS["stability"], math.nan)
        row.update(n=n, status="ok")
        try:
            sys = _system(cfg, n, forced=False)
            if sys.damped:
                raise ValueError("stability runs need an undamped model")
            lam, dts = stable_step(sys, cfg.lumped, cfg.seed)
            row.update(lambda_max=lam, dt_stable=dts)
            y0 = np.zeros(sys.m)
            y0[sys.free_dofs] = rng.standard_normal(sys.free_dofs.size)
            v0 = np.zeros(sys.m)
            if math.isfinite(dts):
                ok, steps, rt = _bounded(sys, 0.99 * dts, cfg.t_final, y0, v0)
                row.update(steps_to_tfinal=steps, runtime=_clock(cfg, rt), bounded_099=int(ok))
                # a growing mode amplifies by about 1.9 per step at 1.05x; 400 steps is ample
                blew, _, _ = _bounded(sys, 1.05 * dts, cfg.t_final, y0, v0, cap=400)
                row["blowup_105"] = int(not blew)
            else:
                row.update(steps_to_tfinal=0, runtime=0.0, bounded_099=1, blowup_105=0)
            dt_imp = _mesh_size(cfg, sys, n)
            imp_cfg = ExperimentConfig(formulation="rkn", tableau=cfg.tableau if cfg.formulation != "central"
                                       else "gl2", bc=cfg.bc, solver=cfg.solver, n=(n,), t_final=cfg.t_final)
            integ = _Integrator(imp_cfg, sys, dt_imp)
            integ.prepare()
            steps_imp = max(1, math.ceil(cfg.t_final / dt_imp - 1e-9))
            e0 = energy(sys, y0, v0).total
            peak = {"e": e0}

            def watch(k, t, y, v):
                peak["e"] = max(peak["e"], energy(sys, y, v).total)

            t0 = time.perf_counter()
            integ.run(StepState(0.0, y0, v0), steps_imp, watch)
            row.update(implicit_dt=dt_imp, implicit_steps=steps_imp,
                       implicit_runtime=_clock(cfg, time.perf_counter() - t0),
                       implicit_bounded=int(peak["e"] <= (1 + 1e-6) * e0 + 1e-12))
        except Exception as exc:  # noqa: BLE001
            row["status"] = _status(exc)
        rows.append(row)
    return rows


_RUNNERS = {
    "converge": run_converge,
    "energy": run_energy,
    "solve_study": run_solve_study,
    "stability": run_stability,
}


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    return _RUNNERS[cfg.experiment](cfg)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12e}"
    return str(v)


def format_csv(experiment: str, rows: list[dict]) -> str:
    """CSV text with the fixed header for ``experiment`` and stable float formatting."""
    header = HEADERS[experiment.replace("-", "_")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in header])
    return buf.getvalue()
