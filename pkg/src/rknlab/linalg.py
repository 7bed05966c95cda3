"""Sparse and stage-coupled linear algebra.

Sparse storage is scipy CSR. The stage operator

    I (x) M + dt A (x) C + dt**2 Abar (x) K

acts on stacked stage vectors ``x = [x_1, ..., x_s]`` without forming the
``s*m`` square matrix. Strong Dirichlet conditions enter as whole rows of
that system being replaced by small per-DOF stage couplings, see
:class:`ConstraintRows`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .tableau import TriangularApproximation

__all__ = [
    "DimensionError",
    "NonConvergence",
    "DiagonalSingular",
    "LumpingInvalid",
    "SolverConfig",
    "ConstraintRows",
    "StageOperator",
    "KrylovResult",
    "BlockTriangularSolver",
    "csr_from_triplets",
    "spmv",
    "stage_apply",
    "gmres_solve",
    "block_triangular_solve",
    "power_iteration_genev",
    "lump_mass",
    "factorize",
]


class DimensionError(ValueError):
    pass


class NonConvergence(RuntimeError):
    """Iterative method ran out of iterations; carries the best iterate."""

    def __init__(self, message, x=None, residual=None, iterations=None, estimate=None):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations
        self.estimate = estimate


class DiagonalSingular(ArithmeticError):
    pass


class LumpingInvalid(ValueError):
    pass


PRECONDITIONERS = ("none", "block_diagonal", "block_lower", "clines_ld")
_PC_SOURCE = {"block_diagonal": "diagonal", "block_lower": "lower_part", "clines_ld": "clines_ld"}


@dataclass(frozen=True)
class SolverConfig:
    method: str = "direct"
    rtol: float = 1e-7
    atol: float = 1e-12
    max_iters: int = 500
    restart: int = 50
    preconditioner: str = "clines_ld"

    def __post_init__(self):
        pc = self.preconditioner.replace("-", "_")
        object.__setattr__(self, "preconditioner", pc)
        if self.method not in ("direct", "gmres"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if pc not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("rtol and atol must be positive")
        if self.restart < 1 or self.max_iters < 1:
            raise ValueError("restart and max_iters must be >= 1")

    @property
    def triangular_source(self) -> str | None:
        return _PC_SOURCE.get(self.preconditioner)


def csr_from_triplets(n_rows: int, n_cols: int, entries) -> sp.csr_matrix:
    """CSR matrix from ``(row, col, value)`` triplets; duplicates are summed."""
    entries = list(entries)
    if entries:
        rows, cols, vals = (np.asarray(v) for v in zip(*entries))
    else:
        rows = cols = np.zeros(0, dtype=int)
        vals = np.zeros(0)
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError("triplet index out of range")
    A = sp.coo_matrix((vals.astype(float), (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.shape[1]:
        raise DimensionError(f"cannot multiply {A.shape} matrix with vector of length {x.shape[0]}")
    return A @ x


def _is_zero(A) -> bool:
    if A is None:
        return True
    if sp.issparse(A):
        return A.count_nonzero() == 0
    return not np.any(A)


@dataclass(frozen=True)
class ConstraintRows:
    """Replace row ``rows[l]`` of every stage block by a stage coupling.

    Stage ``i``'s replaced row reads ``sum_j W[i, j] * x_j[cols[l]]`` where
    ``W = scale * I`` (``coupling="identity"``), ``scale * A`` (``"A"``) or
    ``scale * Abar`` (``"Abar"``).
    """

    rows: np.ndarray
    cols: np.ndarray
    coupling: str = "identity"
    scale: float = 1.0

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must pair up")
        if self.coupling not in ("identity", "A", "Abar"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    def weights(self, A: np.ndarray, Abar: np.ndarray) -> np.ndarray:
        s = A.shape[0]
        base = {"identity": np.eye(s), "A": A, "Abar": Abar}[self.coupling]
        return self.scale * np.asarray(base, dtype=float)


@dataclass(frozen=True)
class StageOperator:
    M: sp.spmatrix
    C: sp.spmatrix | None
    K: sp.spmatrix | None
    dt: float
    Abar: np.ndarray
    A: np.ndarray
    constraints: ConstraintRows | None = None

    def __post_init__(self):
        m = self.M.shape[0]
        for name in ("C", "K"):
            mat = getattr(self, name)
            if mat is not None and mat.shape != (m, m):
                raise DimensionError(f"{name} has shape {mat.shape}, expected {(m, m)}")
        if np.shape(self.A) != np.shape(self.Abar) or np.shape(self.A)[0] != np.shape(self.A)[1]:
            raise DimensionError("A and Abar must be the same square shape")

    @property
    def s(self) -> int:
        return np.shape(self.A)[0]

    @property
    def m(self) -> int:
        return self.M.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        n = self.s * self.m
        return n, n

    def apply(self, x: np.ndarray) -> np.ndarray:
        s, m = self.s, self.m
        x = np.asarray(x, dtype=float)
        if x.shape != (s * m,):
            raise DimensionError(f"stage vector has length {x.size}, expected {s * m}")
        X = x.reshape(s, m)
        Y = (self.M @ X.T).T
        if not _is_zero(self.C):
            Y = Y + self.dt * (np.asarray(self.A) @ (self.C @ X.T).T)
        if not _is_zero(self.K):
            Y = Y + self.dt**2 * (np.asarray(self.Abar) @ (self.K @ X.T).T)
        con = self.constraints
        if con is not None and con.rows.size:
            Y[:, con.rows] = con.weights(self.A, self.Abar) @ X[:, con.cols]
        return Y.reshape(-1)

    __matmul__ = apply

    def assemble(self) -> sp.csr_matrix:
        """Explicit sparse stage matrix (used by the direct solver path)."""
        s, m = self.s, self.m
        B = sp.kron(sp.identity(s), self.M)
        if not _is_zero(self.C):
            B = B + self.dt * sp.kron(sp.csr_matrix(np.asarray(self.A)), self.C)
        if not _is_zero(self.K):
            B = B + self.dt**2 * sp.kron(sp.csr_matrix(np.asarray(self.Abar)), self.K)
        B = sp.csr_matrix(B)
        con = self.constraints
        if con is None or not con.rows.size:
            return B
        keep = np.ones(s * m)
        for i in range(s):
            keep[i * m + con.rows] = 0.0
        W = con.weights(self.A, self.Abar)
        ii, jj = np.nonzero(W)
        rr = (ii[:, None] * m + con.rows[None, :]).ravel()
        cc = (jj[:, None] * m + con.cols[None, :]).ravel()
        vv = np.repeat(W[ii, jj], con.rows.size)
        R = sp.csr_matrix((vv, (rr, cc)), shape=(s * m, s * m))
        return sp.csr_matrix(sp.diags(keep) @ B + R)


def stage_apply(op: StageOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


class KrylovResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def gmres_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    precond: Callable[[np.ndarray], np.ndarray] | None,
    rhs: np.ndarray,
    cfg: SolverConfig = SolverConfig(method="gmres"),
    x0: np.ndarray | None = None,
) -> KrylovResult:
    """Restarted GMRES with right preconditioning.

    The preconditioned directions are stored (flexible variant), so
    ``precond`` may itself be an inexact inner iteration. Convergence is
    declared on the true residual ``||rhs - A x|| <= max(rtol ||rhs||, atol)``.
    """
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    n = b.size
    P = precond if precond is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    target = max(cfg.rtol * np.linalg.norm(b), cfg.atol)
    r = b - apply(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    its = 0
    while True:
        if beta <= target:
            return KrylovResult(x, its, beta)
        if its >= cfg.max_iters:
            raise NonConvergence(
                f"GMRES did not converge in {its} iterations (residual {beta:.3e}, target {target:.3e})",
                x=x, residual=beta, iterations=its,
            )
        k = min(cfg.restart, cfg.max_iters - its)
        V = np.zeros((k + 1, n))
        Z = np.zeros((k, n))
        H = np.zeros((k + 1, k))
        cs = np.zeros(k)
        sn = np.zeros(k)
        g = np.zeros(k + 1)
        g[0] = beta
        V[0] = r / beta
        j_used = 0
        for j in range(k):
            Z[j] = P(V[j])
            w = apply(Z[j])
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = H[j + 1, j] <= 1e-14 * max(np.linalg.norm(H[: j + 2, j]), 1e-300)
            if not breakdown:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                hi, hk = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hk
                H[i + 1, j] = -sn[i] * hi + cs[i] * hk
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = (1.0, 0.0) if denom == 0 else (H[j, j] / denom, H[j + 1, j] / denom)
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            its += 1
            j_used = j + 1
            if abs(g[j + 1]) <= target or breakdown:
                break
        y = np.linalg.solve(np.triu(H[:j_used, :j_used]), g[:j_used]) if j_used else np.zeros(0)
        x = x + Z[:j_used].T @ y
        r = b - apply(x)
        beta = np.linalg.norm(r)


class _Factor:
    """Sparse LU of one matrix, with singularity reported as DiagonalSingular."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        self.shape = A.shape
        diag = A.diagonal()
        if A.nnz == np.count_nonzero(diag) and A.nnz == A.shape[0]:
            self._diag = diag
            self._lu = None
            return
        self._diag = None
        try:
            self._lu = spla.splu(A)
        except RuntimeError as err:
            raise DiagonalSingular(str(err)) from err

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return b / self._diag if b.ndim == 1 else b / self._diag[:, None]
        return self._lu.solve(b)


def factorize(A) -> _Factor:
    return _Factor(A)


class BlockTriangularSolver:
    """Forward block substitution with a lower-triangular stage coupling.

    Block ``(i, j)``, ``j <= i``, is ``[i == j] M + dt At_A[i, j] C + dt**2 At[i, j] K``;
    constrained rows carry the matching triangular weights. Diagonal blocks
    are factored once and reused for every application.
    """

    def __init__(
        self,
        M, C, K, dt: float,
        Atilde: TriangularApproximation | np.ndarray,
        Atilde_A: TriangularApproximation | np.ndarray | None = None,
        constraints: ConstraintRows | None = None,
        inner: SolverConfig | None = None,
    ):
        def arr(t):
            return None if t is None else np.asarray(getattr(t, "Atilde", t), dtype=float)

        self.At = arr(Atilde)
        self.At_A = arr(Atilde_A)
        s = self.At.shape[0]
        self.C = None if _is_zero(C) else sp.csr_matrix(C)
        self.K = None if _is_zero(K) else sp.csr_matrix(K)
        if self.C is not None and self.At_A is None:
            raise ValueError("a triangular approximation of A is required when C is nonzero")
        if self.At_A is None:
            self.At_A = np.zeros((s, s))
        for T in (self.At, self.At_A):
            if T.shape != (s, s) or np.any(np.triu(T, 1)):
                raise ValueError("triangular approximations must be lower triangular s-by-s")
        self.M = sp.csr_matrix(M)
        self.dt = float(dt)
        self.s = s
        self.m = self.M.shape[0]
        self.constraints = constraints
        self.inner = inner if inner is not None and inner.method == "gmres" else None
        self.W = None if constraints is None else constraints.weights(self.At_A, self.At)
        self._blocks = [self._diagonal_block(i) for i in range(s)]
        self._factors = [None] * s if self.inner else [self._factor(i) for i in range(s)]

    def _combo(self, a_c: float, a_k: float, with_mass: bool):
        B = self.M.copy() if with_mass else sp.csr_matrix(self.M.shape)
        if self.C is not None and a_c:
            B = B + self.dt * a_c * self.C
        if self.K is not None and a_k:
            B = B + self.dt**2 * a_k * self.K
        return sp.csr_matrix(B)

    def _diagonal_block(self, i: int):
        B = self._combo(self.At_A[i, i], self.At[i, i], True)
        con = self.constraints
        if con is None or not con.rows.size:
            return B
        keep = np.ones(self.m)
        keep[con.rows] = 0.0
        w = self.W[i, i]
        R = sp.csr_matrix((np.full(con.rows.size, w), (con.rows, con.cols)), shape=B.shape)
        return sp.csr_matrix(sp.diags(keep) @ B + R)

    def _factor(self, i: int) -> _Factor:
        con = self.constraints
        if con is not None and con.rows.size and self.W[i, i] == 0.0:
            raise DiagonalSingular(f"stage {i} constraint rows have zero diagonal weight")
        return _Factor(self._blocks[i])

    def _solve_block(self, i: int, r: np.ndarray) -> np.ndarray:
        if self.inner is None:
            return self._factors[i].solve(r)
        B = self._blocks[i]
        d = B.diagonal()
        if np.any(d == 0):
            raise DiagonalSingular(f"stage {i} block has a zero diagonal entry")
        return gmres_solve(lambda v: B @ v, lambda v: v / d, r, self.inner).x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        s, m = self.s, self.m
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (s * m,):
            raise DimensionError(f"stage vector has length {rhs.size}, expected {s * m}")
        R = rhs.reshape(s, m)
        X = np.zeros((s, m))
        CX = np.zeros((s, m))
        KX = np.zeros((s, m))
        con = self.constraints
        has_con = con is not None and con.rows.size > 0
        for i in range(s):
            r = R[i].copy()
            if i:
                acc = self.dt * (self.At_A[i, :i] @ CX[:i]) + self.dt**2 * (self.At[i, :i] @ KX[:i])
                if has_con:
                    acc[con.rows] = self.W[i, :i] @ X[:i][:, con.cols]
                r -= acc
            X[i] = self._solve_block(i, r)
            if self.C is not None:
                CX[i] = self.C @ X[i]
            if self.K is not None:
                KX[i] = self.K @ X[i]
        return X.reshape(-1)

    __call__ = solve


def block_triangular_solve(
    Atilde: TriangularApproximation | np.ndarray,
    M, C, K, dt: float,
    rhs: np.ndarray,
    inner: SolverConfig | None = None,
    Atilde_A: TriangularApproximation | np.ndarray | None = None,
    constraints: ConstraintRows | None = None,
) -> np.ndarray:
    return BlockTriangularSolver(M, C, K, dt, Atilde, Atilde_A, constraints, inner).solve(rhs)


def power_iteration_genev(
    K, M,
    tol: float = 1e-10,
    max_iters: int = 200_000,
    seed: int = 0,
) -> float:
    """Dominant eigenvalue of ``K x = lam M x`` by power iteration on ``M^-1 K``.

    The estimate is the Rayleigh quotient; iteration stops once its relative
    change drops below ``tol``.
    """
    K = sp.csr_matrix(K)
    lu = _Factor(M)
    n = K.shape[0]
    x = np.random.default_rng(seed).standard_normal(n)
    lam = 0.0
    for it in range(1, max_iters + 1):
        y = lu.solve(K @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
        Kx = K @ x
        new = (x @ Kx) / (x @ (M @ x))
        if abs(new - lam) <= tol * abs(new):
            return float(new)
        lam = new
    raise NonConvergence(f"power iteration stalled after {max_iters} iterations", estimate=lam)


def lump_mass(M) -> sp.csr_matrix:
    """Row-sum lumped (diagonal) mass matrix."""
    M = sp.csr_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise DimensionError("mass matrix must be square")
    d = np.asarray(M.sum(axis=1)).ravel()
    if np.any(d <= 0):
        raise LumpingInvalid(f"{np.count_nonzero(d <= 0)} nonpositive row sums")
    return sp.diags(d).tocsr()
