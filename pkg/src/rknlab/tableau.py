"""Butcher and Nystrom tableaux: construction, extension, order checks,
and the triangular approximations used by stage-segregated preconditioners.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "Kind",
    "ButcherTableau",
    "NystromTableau",
    "TriangularApproximation",
    "UnsupportedStageCount",
    "SingularFactorization",
    "collocation_tableau",
    "extend_tableau",
    "classical_nystrom_tableau",
    "classical_rk4",
    "verify_order",
    "stage_order",
    "ldu",
    "triangular_approx",
    "get_tableau",
    "TABLEAU_NAMES",
]


class UnsupportedStageCount(ValueError):
    pass


class SingularFactorization(ArithmeticError):
    """A zero pivot was met while factoring without pivoting."""


class Kind(str, Enum):
    EXPLICIT = "explicit"
    DIAGONALLY_IMPLICIT = "diagonally_implicit"
    FULLY_IMPLICIT = "fully_implicit"


# Nodes on (0, 1]: Gauss points are roots of the shifted Legendre polynomial
# P_s(2x - 1); right Radau points are roots of P_s(2x - 1) - P_{s-1}(2x - 1).
_GAUSS_NODES = {
    1: ("0.5",),
    2: ("0.2113248654051871177454256", "0.7886751345948128822545744"),
    3: ("0.1127016653792583114820735", "0.5", "0.8872983346207416885179265"),
    4: (
        "0.06943184420297371238802676",
        "0.3300094782075718675986671",
        "0.6699905217924281324013329",
        "0.9305681557970262876119732",
    ),
    5: (
        "0.04691007703066800360118656",
        "0.2307653449471584544818428",
        "0.5",
        "0.7692346550528415455181572",
        "0.9530899229693319963988134",
    ),
}

_RADAU_NODES = {
    1: ("1.0",),
    2: ("0.3333333333333333333333333", "1.0"),
    3: ("0.1550510257216821901802716", "0.6449489742783178098197284", "1.0"),
    4: (
        "0.08858795951270394739554614",
        "0.4094668644407347108649263",
        "0.7876594617608470560252419",
        "1.0",
    ),
    5: (
        "0.05710419611451768219312119",
        "0.276843013638123827680046",
        "0.5835904323689168200566977",
        "0.8602401356562194478479129",
        "1.0",
    ),
}


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def classify(A: np.ndarray) -> Kind:
    if not np.any(np.triu(A)):
        return Kind.EXPLICIT
    if not np.any(np.triu(A, 1)):
        return Kind.DIAGONALLY_IMPLICIT
    return Kind.FULLY_IMPLICIT


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients ``(A, b, c)`` of an ``s``-stage Runge-Kutta method."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = ""
    kind: Kind = field(init=False)

    def __post_init__(self):
        A, b, c = _frozen(self.A), _frozen(self.b), _frozen(self.c)
        s = len(b)
        if A.shape != (s, s) or c.shape != (s,):
            raise ValueError(f"inconsistent tableau shapes A{A.shape}, b{b.shape}, c{c.shape}")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {b.sum()!r}, not 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "kind", classify(A))

    @property
    def s(self) -> int:
        return len(self.b)

    @property
    def is_explicit(self) -> bool:
        return self.kind is Kind.EXPLICIT


@dataclass(frozen=True)
class NystromTableau:
    """Extended tableau ``(Abar, A, bbar, b, c)`` acting on second-derivative stages.

    ``inherited`` is true when the coefficients come from an RK method via
    ``Abar = A @ A`` and ``bbar = A.T @ b``.
    """

    Abar: np.ndarray
    A: np.ndarray
    bbar: np.ndarray
    b: np.ndarray
    c: np.ndarray
    inherited: bool = False
    name: str = ""

    def __post_init__(self):
        arrays = {k: _frozen(getattr(self, k)) for k in ("Abar", "A", "bbar", "b", "c")}
        s = len(arrays["b"])
        for k in ("Abar", "A"):
            if arrays[k].shape != (s, s):
                raise ValueError(f"{k} has shape {arrays[k].shape}, expected {(s, s)}")
        for k in ("bbar", "c"):
            if arrays[k].shape != (s,):
                raise ValueError(f"{k} has shape {arrays[k].shape}, expected {(s,)}")
        if abs(arrays["b"].sum() - 1.0) > 1e-12:
            raise ValueError("weights b must sum to 1")
        for k, v in arrays.items():
            object.__setattr__(self, k, v)

    @property
    def s(self) -> int:
        return len(self.b)

    @property
    def is_explicit(self) -> bool:
        return not np.any(np.triu(self.Abar)) and not np.any(np.triu(self.A))

    @property
    def is_lower_triangular(self) -> bool:
        return not np.any(np.triu(self.Abar, 1)) and not np.any(np.triu(self.A, 1))


@dataclass(frozen=True)
class TriangularApproximation:
    Atilde: np.ndarray
    source: str

    def __post_init__(self):
        At = _frozen(self.Atilde)
        if np.any(np.triu(At, 1)):
            raise ValueError("Atilde must be lower triangular")
        object.__setattr__(self, "Atilde", At)


def _collocation_coefficients(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Row i of A holds the integrals over [0, c_i] of the Lagrange basis on c.
    # In the monomial basis: A @ V = R with V[j, k] = c_j**k, R[i, k] = c_i**(k+1)/(k+1).
    s = len(c)
    k = np.arange(s)
    V = c[:, None] ** k[None, :]
    R = c[:, None] ** (k[None, :] + 1) / (k[None, :] + 1)
    A = np.linalg.solve(V.T, R.T).T
    b = np.linalg.solve(V.T, 1.0 / (k + 1))
    return A, b


def collocation_tableau(family: str, s: int) -> ButcherTableau:
    """Collocation RK tableau for ``family`` in {"gauss_legendre", "radau_iia"}."""
    table = {"gauss_legendre": _GAUSS_NODES, "radau_iia": _RADAU_NODES}
    if family not in table:
        raise ValueError(f"unknown collocation family {family!r}")
    nodes = table[family]
    if s not in nodes:
        raise UnsupportedStageCount(f"{family} supports 1 <= s <= 5, got {s}")
    c = np.array([float(x) for x in nodes[s]])
    A, b = _collocation_coefficients(c)
    label = "GL" if family == "gauss_legendre" else "RadauIIA"
    tab = ButcherTableau(A, b, c, name=f"{label}({s})")
    order = 2 * s if family == "gauss_legendre" else 2 * s - 1
    if not verify_order(tab, order) or stage_order(tab) < s:
        raise ArithmeticError(f"{tab.name} failed its order checks")
    return tab


def classical_rk4() -> ButcherTableau:
    A = np.zeros((4, 4))
    A[1, 0] = A[2, 1] = 0.5
    A[3, 2] = 1.0
    return ButcherTableau(A, [1 / 6, 1 / 3, 1 / 3, 1 / 6], [0.0, 0.5, 0.5, 1.0], name="RK4")


def extend_tableau(tab: ButcherTableau) -> NystromTableau:
    return NystromTableau(
        Abar=tab.A @ tab.A,
        A=tab.A,
        bbar=tab.A.T @ tab.b,
        b=tab.b,
        c=tab.c,
        inherited=True,
        name=tab.name,
    )


def classical_nystrom_tableau() -> NystromTableau:
    Abar = np.zeros((4, 4))
    Abar[1, 0] = Abar[2, 0] = 1 / 8
    Abar[3, 2] = 1 / 2
    A = np.zeros((4, 4))
    A[1, 0] = A[2, 1] = 1 / 2
    A[3, 2] = 1.0
    return NystromTableau(
        Abar=Abar,
        A=A,
        bbar=[1 / 6, 1 / 6, 1 / 6, 0.0],
        b=[1 / 6, 1 / 3, 1 / 3, 1 / 6],
        c=[0.0, 0.5, 0.5, 1.0],
        inherited=False,
        name="Nystrom4",
    )


def verify_order(tab: ButcherTableau, p: int, tol: float = 1e-10) -> bool:
    """Check the quadrature conditions ``sum_i b_i c_i**(k-1) = 1/k`` for ``k <= p``."""
    if p < 1:
        raise ValueError("order must be >= 1")
    return all(abs(tab.b @ tab.c ** (k - 1) - 1.0 / k) <= tol for k in range(1, p + 1))


def stage_order(tab: ButcherTableau, tol: float = 1e-10) -> int:
    """Largest ``q`` with ``A @ c**(k-1) = c**k / k`` for every ``k <= q``."""
    q = 0
    for k in range(1, tab.s + 2):
        if np.max(np.abs(tab.A @ tab.c ** (k - 1) - tab.c**k / k)) > tol:
            break
        q = k
    return q


def ldu(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Doolittle-style ``A = L @ diag(d) @ U`` without pivoting.

    Returns ``(L, d, U)`` with unit-triangular ``L`` and ``U``. Raises
    :class:`SingularFactorization` on a zero pivot.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    L = np.eye(n)
    U = np.eye(n)
    d = np.zeros(n)
    scale = max(np.max(np.abs(A)), 1.0)
    for k in range(n):
        d[k] = A[k, k] - L[k, :k] @ (d[:k] * U[:k, k])
        if abs(d[k]) <= 1e-14 * scale:
            raise SingularFactorization(f"zero pivot at position {k}")
        for i in range(k + 1, n):
            L[i, k] = (A[i, k] - L[i, :k] @ (d[:k] * U[:k, k])) / d[k]
            U[k, i] = (A[k, i] - L[k, :k] @ (d[:k] * U[:k, i])) / d[k]
    return L, d, U


def triangular_approx(Abar: np.ndarray, source: str) -> TriangularApproximation:
    """Lower-triangular stand-in for a stage coupling matrix.

    ``source`` is one of ``"diagonal"``, ``"lower_part"``, ``"clines_ld"``
    (the ``L @ D`` factor of an unpivoted LDU factorization).
    """
    Abar = np.asarray(Abar, dtype=float)
    if source == "diagonal":
        At = np.diag(np.diag(Abar))
    elif source == "lower_part":
        At = np.tril(Abar)
    elif source == "clines_ld":
        L, d, _ = ldu(Abar)
        At = np.tril(L * d[None, :])
    else:
        raise ValueError(f"unknown triangular approximation {source!r}")
    return TriangularApproximation(At, source)


TABLEAU_NAMES = (
    "gl1", "gl2", "gl3", "gl4", "gl5",
    "radau1", "radau2", "radau3", "radau4", "radau5",
    "rk4", "nystrom4",
)


def get_tableau(name: str) -> ButcherTableau | NystromTableau:
    """Look a tableau up by its short name (``"gl2"``, ``"radau3"``, ``"nystrom4"``, ...)."""
    key = name.lower().replace("-", "").replace("_", "")
    if key == "nystrom4":
        return classical_nystrom_tableau()
    if key == "rk4":
        return classical_rk4()
    for prefix, family in (("gl", "gauss_legendre"), ("radau", "radau_iia")):
        if key.startswith(prefix) and key[len(prefix):].isdigit():
            return collocation_tableau(family, int(key[len(prefix):]))
    raise KeyError(f"unknown tableau {name!r}; choose from {', '.join(TABLEAU_NAMES)}")


def as_nystrom(tab: ButcherTableau | NystromTableau) -> NystromTableau:
    return tab if isinstance(tab, NystromTableau) else extend_tableau(tab)
