"""Explicit step limits versus unconditionally stable implicit steps.

The central-difference limit is dt <= 2 / sqrt(lambda_max) for the
generalized eigenproblem K x = lambda M x on the free DOFs. It shrinks
like h for the wave equation and like h^2 for the beam. GL(2) is run
at dt = h regardless.
"""
from rknlab import ExperimentConfig, run_experiment

for model, ns in (("wave1d", (16, 32, 64)), ("beam1d", (8, 16, 32))):
    cfg = ExperimentConfig(experiment="stability", model=model, n=ns, t_final=1.0, tableau="gl2")
    rows = run_experiment(cfg)
    print(model)
    prev = None
    for r in rows:
        ratio = "" if prev is None else f"ratio {prev / r['dt_stable']:.3f}"
        print(f"  n={r['n']:3d}  lambda_max={r['lambda_max']:.3e}  dt_stable={r['dt_stable']:.3e}  "
              f"bounded@0.99 {r['bounded_099']}  blows up@1.05 {r['blowup_105']}  "
              f"GL(2) bounded {r['implicit_bounded']}  {ratio}")
        prev = r["dt_stable"]
