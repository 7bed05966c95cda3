"""GMRES iteration counts under mesh refinement.

With the step tied to the mesh (dt = h) the stage system gets stiffer
as n grows. Both triangular preconditioners keep the iteration count
essentially flat; the block-diagonal one needs about twice as many.
"""
from rknlab import ExperimentConfig, SolverConfig, run_experiment

for pc in ("block-diagonal", "block-lower", "clines-ld"):
    cfg = ExperimentConfig(
        experiment="solve_study", model="wave2d", tableau="gl2",
        n=(8, 16, 32), dt="hfactor:1", t_final=0.25,
        solver=SolverConfig(method="gmres", preconditioner=pc, rtol=1e-8),
    )
    rows = run_experiment(cfg)
    its = "  ".join(f"n={r['n']}: {r['mean_iterations']:.2f}" for r in rows)
    print(f"{pc:15s} {its}")
