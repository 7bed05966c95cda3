"""Three ways to impose time-dependent Dirichlet data on the stages.

* ``ode`` sets the boundary stage equal to the exact second derivative.
* ``dae`` forces the stage positions y + c dt y' + dt^2 Abar kappa to
  match the data; it needs an invertible Abar.
* ``ddae`` does the same for the stage velocities with A.

The manufactured solution u = cos(pi t + x)(1 + x) has moving data at
both ends. Gauss with ``dae`` shows order reduction to 2, since the
last stage of Gauss is not at the step end.
"""
import math

import numpy as np

from rknlab import ExactSolution, NystromStepper, build_model, get_tableau, manufactured_problem
from rknlab.stepping import ConfigurationError, initial_state, integrate


def u(t, x, nt, nx):
    # nodal P1 elements only need point values (nx = 0)
    ph = math.pi * t + x[:, 0]
    d = [np.cos(ph), -math.pi * np.sin(ph), -math.pi**2 * np.cos(ph)][nt]
    return d * (1 + x[:, 0])


exact = ExactSolution(u, "cos(pi t + x)(1 + x)")
for name in ("radau2", "gl2"):
    for bc in ("ode", "dae", "ddae"):
        errs = []
        for n in (16, 32):
            sys = manufactured_problem(build_model("wave1d", n), exact)
            try:
                stepper = NystromStepper(sys, get_tableau(name), bc=bc)
            except ConfigurationError as exc:
                errs = [type(exc).__name__]
                break
            dt = 1.0 / n
            state, _ = integrate(stepper, initial_state(sys), dt, n)
            errs.append(np.abs(state.y - sys.interpolate(exact, state.t, 0)).max())
        if isinstance(errs[0], str):
            print(f"{name:7s} {bc:5s} rejected: {errs[0]}")
        else:
            print(f"{name:7s} {bc:5s} errors {errs[0]:.2e} {errs[1]:.2e}  order {math.log2(errs[0] / errs[1]):.2f}")

# an explicit method has a singular Abar, so a position constraint on the stages is not defined
sys = manufactured_problem(build_model("wave1d", 8), exact)
try:
    NystromStepper(sys, get_tableau("nystrom4"), bc="dae")
except ConfigurationError as exc:
    print(f"\nnystrom4 + dae: {type(exc).__name__}: {exc}")
