"""Temporal order of the inherited methods.

On the scalar oscillator y'' = -y the spatial error is absent, so the
observed order of the error under step halving is the formal order of
the time integrator. The error is taken as the maximum over all steps:
at t = 2 pi the exact solution sits at an extremum, where a pure phase
error only shows up in second order and the apparent order doubles.
"""
import math

from rknlab import ExperimentConfig, run_experiment

steps = (20, 40, 80, 160)
for name in ("gl1", "gl2", "radau2", "nystrom4"):
    cfg = ExperimentConfig(
        experiment="converge", model="oscillator", tableau=name,
        n=steps, dt="hfactor:1", t_final=2 * math.pi, error_at="max",
    )
    rows = run_experiment(cfg)
    errs = "  ".join(f"{r['error']:.2e}" for r in rows)
    orders = "  ".join(f"{r['order']:.2f}" for r in rows[1:])
    print(f"{name:9s} errors {errs}\n{'':9s} orders {orders}")

# on a PDE the forcing is the continuous residual, so the error also
# carries the O(h^2) of linear elements, which dominates at dt = h
cfg = ExperimentConfig(experiment="converge", model="wave1d", tableau="gl2",
                       n=(8, 16, 32, 64), dt="hfactor:1", t_final=0.5)
print("\nwave1d, Gauss-Legendre(2), dt = h:")
for r in run_experiment(cfg):
    order = "" if r["order"] is None else f"order {r['order']:.2f}"
    print(f"  n={r['n']:3d}  dt={r['dt']:.4f}  error {r['error']:.3e}  {order}")
