"""Inherited Nystrom tableaux from collocation methods.

Any Runge-Kutta method for a first-order system can be turned into a
method for y'' = f acting on second-derivative stages. The position
coefficients are Abar = A @ A and bbar = A.T @ b. This script builds
a few of them and checks their classical order conditions.
"""
import numpy as np

from rknlab import extend_tableau, get_tableau, triangular_approx, verify_order
from rknlab.tableau import stage_order

np.set_printoptions(precision=6, suppress=True)

for name, p in [("gl1", 2), ("gl2", 4), ("gl3", 6), ("radau2", 3), ("radau3", 5)]:
    tab = get_tableau(name)
    ext = extend_tableau(tab)
    defect = max(np.abs(ext.Abar - tab.A @ tab.A).max(), np.abs(ext.bbar - tab.A.T @ tab.b).max())
    print(f"{name:7s} s={tab.s} order {p}: {verify_order(tab, p)}  "
          f"stage order {stage_order(tab)}  inherited defect {defect:.1e}")

gl2 = extend_tableau(get_tableau("gl2"))
print("\nGauss-Legendre(2), Abar =")
print(gl2.Abar)
print("bbar =", gl2.bbar)

# lower-triangular surrogates of Abar drive the block preconditioners
for source in ("lower_part", "clines_ld"):
    print(f"\n{source} approximation of Abar:")
    print(triangular_approx(gl2.Abar, source).Atilde)

# the classical 4-stage Nystrom method is not inherited from any RK method
ny = get_tableau("nystrom4")
print("\nnystrom4 explicit:", ny.is_explicit, " inherited:", ny.inherited)
