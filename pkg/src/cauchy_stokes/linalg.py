"""Weighted least-squares assembly and the linear solvers behind every method.

A quadratic objective is a list of :class:`LeastSquaresTerm` objects,
``sum_k w_k |T_k x - t_k|^2``.  Its minimizer can be computed three ways:

* ``"augmented"`` (default): sparse LU of the augmented system
  ``[[I, T], [T^T, 0]] [r; x] = [t; 0]`` with ``T`` the stacked
  ``sqrt(w)``-scaled rows.  Its conditioning is that of ``T`` rather than
  ``T^T T``, which matters once fourth-order operators and tiny
  regularization weights meet (``cond(T^T T)`` reaches 1e15 at n = 48).
* ``"normal"``: sparse LU of the symmetrically equilibrated normal matrix.
* ``"cg"``: Jacobi-preconditioned conjugate gradients on the normal matrix.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_CAP = 20_000


class LinalgError(RuntimeError):
    code = "linalg-error"


class DimensionMismatch(LinalgError):
    code = "dimension-mismatch"


class NotConverged(LinalgError):
    code = "not-converged"


class IndefiniteDetected(LinalgError):
    code = "indefinite-detected"


class NotPositiveDefinite(LinalgError):
    code = "not-positive-definite"


class SingularSystem(LinalgError):
    code = "singular-system"


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    wall_ms: float
    method: str = "cg"

    def as_dict(self) -> dict:
        return {"iterations": self.iterations, "relative_residual": self.relative_residual,
                "wall_ms": self.wall_ms, "method": self.method}


@dataclass(frozen=True)
class LeastSquaresTerm:
    """One additive term ``weight * |operator @ x - target|^2``."""

    operator: sp.spmatrix
    target: np.ndarray
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        op = sp.csr_matrix(self.operator)
        t = np.asarray(self.target, dtype=float)
        if t.ndim == 0:
            t = np.full(op.shape[0], float(t))
        if t.shape != (op.shape[0],):
            raise DimensionMismatch(f"term {self.name!r}: operator has {op.shape[0]} rows, "
                                    f"target has shape {t.shape}")
        if not self.weight >= 0:
            raise ValueError(f"term {self.name!r}: weight must be >= 0, got {self.weight}")
        object.__setattr__(self, "operator", op)
        object.__setattr__(self, "target", t)

    def value(self, x: np.ndarray) -> float:
        r = self.operator @ x - self.target
        return float(self.weight * (r @ r))


def _check_columns(terms) -> int:
    if not terms:
        raise DimensionMismatch("no least-squares terms given")
    ncol = terms[0].operator.shape[1]
    for t in terms:
        if t.operator.shape[1] != ncol:
            raise DimensionMismatch(f"term {t.name!r} has {t.operator.shape[1]} columns, "
                                    f"expected {ncol}")
    return ncol


def stack_terms(terms) -> tuple[sp.csr_matrix, np.ndarray]:
    """Stacked ``sqrt(w)``-scaled rows and targets, in term order."""
    _check_columns(terms)
    rows = [np.sqrt(t.weight) * t.operator for t in terms]
    tgts = [np.sqrt(t.weight) * t.target for t in terms]
    T = sp.vstack(rows, format="csr")
    T.eliminate_zeros()
    return T, np.concatenate(tgts)


def assemble_normal(terms) -> tuple[sp.csr_matrix, np.ndarray]:
    """``A = sum w_k T_k^T T_k`` and ``b = sum w_k T_k^T t_k``, summed in term order."""
    ncol = _check_columns(terms)
    A = sp.csr_matrix((ncol, ncol))
    b = np.zeros(ncol)
    for t in terms:
        if t.weight == 0:
            continue
        A = A + t.weight * (t.operator.T @ t.operator)
        b = b + t.weight * (t.operator.T @ t.target)
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    return A, b


def objective(terms, x: np.ndarray) -> float:
    return float(sum(t.value(x) for t in terms))


# ---------------------------------------------------------------------------
# conjugate gradients

def cg_solve(A, b, tol: float = 1e-10, max_iter: int | None = None,
             preconditioner: str | None = "jacobi", x0=None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients for SPD ``A``.

    Raises
    ------
    IndefiniteDetected
        If a search direction has non-positive curvature, or the Jacobi
        diagonal is not positive.
    NotConverged
        If ``max_iter`` iterations do not reach ``|Ax - b| <= tol |b|``.
    """
    t0 = time.perf_counter()
    A = sp.csr_matrix(A) if sp.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"matrix shape {A.shape} does not match rhs length {n}")
    max_iter = 10 * n if max_iter is None else int(max_iter)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, 1e3 * (time.perf_counter() - t0))

    if preconditioner == "jacobi":
        diag = A.diagonal() if sp.issparse(A) else np.diag(A).copy()
        if np.any(diag <= 0):
            raise IndefiniteDetected("indefinite-detected: non-positive diagonal entry")
        minv = 1.0 / diag
    elif preconditioner is None:
        minv = np.ones(n)
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    r = b - A @ x
    z = minv * r
    p = z.copy()
    rz = r @ z
    it = 0
    rel = np.linalg.norm(r) / bnorm
    while rel > tol:
        if it >= max_iter:
            raise NotConverged(f"not-converged: relative residual {rel:.3e} after {it} iterations")
        Ap = A @ p
        curv = p @ Ap
        if not curv > 0:
            raise IndefiniteDetected(f"indefinite-detected: curvature {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        if not np.all(np.isfinite(r)):
            raise NotConverged("not-converged: residual became non-finite")
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        rel = np.linalg.norm(r) / bnorm
    # recurrence residual can drift; report the true one
    rel = float(np.linalg.norm(b - A @ x) / bnorm)
    return x, SolveReport(it, rel, 1e3 * (time.perf_counter() - t0), "cg")


# ---------------------------------------------------------------------------
# dense Cholesky

class DenseCholesky:
    """Reusable Cholesky factorization of a dense SPD matrix."""

    def __init__(self, A, cap: int = DENSE_CAP):
        A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
        if A.shape[0] > cap:
            raise DimensionMismatch(f"dense solve of size {A.shape[0]} exceeds cap {cap}")
        try:
            self._factor = sla.cho_factor(A, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"not-positive-definite: {exc}") from None
        self.n = A.shape[0]

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has {b.shape[0]} rows, factor has {self.n}")
        if b.ndim == 1:
            return sla.cho_solve(self._factor, b)
        # column by column so batch and single solves agree bitwise
        return np.column_stack([sla.cho_solve(self._factor, b[:, k]) for k in range(b.shape[1])])


def dense_factor_solve(A, b, cap: int = DENSE_CAP) -> np.ndarray:
    return DenseCholesky(A, cap).solve(b)


# ---------------------------------------------------------------------------
# sparse direct least squares

def _lu(M: sp.spmatrix):
    try:
        return spla.splu(sp.csc_matrix(M), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystem(f"singular-system: {exc}") from None


class LeastSquaresSolver:
    """Factorization of ``min |T x - t|`` for a fixed operator ``T``.

    Parameters
    ----------
    T : sparse matrix
        Stacked weighted rows (see :func:`stack_terms`).
    method : {"augmented", "normal", "cg"}
    tol : float
        Relative tolerance on the normal-equations residual.  Direct
        methods take up to ``refine`` steps of iterative refinement to meet
        it; a direct solve that still misses it only flags the report.
    """

    def __init__(self, T, method: str = "augmented", tol: float = 1e-10,
                 max_iter: int | None = None, refine: int = 3):
        t0 = time.perf_counter()
        self.T = sp.csr_matrix(T)
        self.method = method
        self.tol = tol
        self.max_iter = max_iter
        self.refine = refine
        m, n = self.T.shape
        self.A = (self.T.T @ self.T).tocsr()
        if method == "augmented":
            K = sp.bmat([[sp.identity(m), self.T], [self.T.T, None]], format="csc")
            self._lu = _lu(K)
        elif method == "normal":
            d = self.A.diagonal()
            if np.any(d <= 0):
                raise SingularSystem("singular-system: unknown with no weighted rows")
            self._scale = 1.0 / np.sqrt(d)
            Ds = sp.diags(self._scale)
            self._lu = _lu(Ds @ self.A @ Ds)
        elif method == "cg":
            self._lu = None
        else:
            raise ValueError(f"unknown least-squares method {method!r}")
        self.factor_ms = 1e3 * (time.perf_counter() - t0)

    @property
    def num_unknowns(self) -> int:
        return self.T.shape[1]

    def _direct(self, rhs_n: np.ndarray) -> np.ndarray:
        """Solve ``A x = rhs_n`` with the stored factorization."""
        if self.method == "augmented":
            m = self.T.shape[0]
            z = np.concatenate([np.zeros((m,) + rhs_n.shape[1:]), rhs_n])
            return self._lu.solve(z)[m:]
        s = self._scale if rhs_n.ndim == 1 else self._scale[:, None]
        return s * self._lu.solve(s * rhs_n)

    def solve_normal(self, b: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        """Solve ``A x = b`` with ``A = T^T T``."""
        t0 = time.perf_counter()
        b = np.asarray(b, dtype=float)
        if self.method == "cg":
            x, rep = cg_solve(self.A, b, tol=self.tol, max_iter=self.max_iter)
            return x, rep
        bnorm = np.linalg.norm(b)
        x = self._direct(b)
        it = 0
        rel = np.linalg.norm(b - self.A @ x) / bnorm if bnorm > 0 else 0.0
        while rel > self.tol and it < self.refine:
            x = x + self._direct(b - self.A @ x)
            it += 1
            rel = np.linalg.norm(b - self.A @ x) / bnorm
        return x, SolveReport(it, float(rel), 1e3 * (time.perf_counter() - t0), self.method)

    def solve(self, t: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        """Least-squares solution for target ``t``."""
        t = np.asarray(t, dtype=float)
        if self.method != "augmented":
            return self.solve_normal(self.T.T @ t)
        t0 = time.perf_counter()
        m = self.T.shape[0]
        z = np.concatenate([t, np.zeros(self.T.shape[1])])
        x = self._lu.solve(z)[m:]
        b = self.T.T @ t
        bnorm = np.linalg.norm(b)
        rel = np.linalg.norm(b - self.A @ x) / bnorm if bnorm > 0 else 0.0
        it = 0
        while rel > self.tol and it < self.refine:
            x = x + self._direct(b - self.A @ x)
            it += 1
            rel = np.linalg.norm(b - self.A @ x) / bnorm
        return x, SolveReport(it, float(rel), 1e3 * (time.perf_counter() - t0), self.method)

    def solve_many(self, targets: np.ndarray) -> np.ndarray:
        """Least-squares solutions for the columns of ``targets`` (no refinement)."""
        targets = np.asarray(targets, dtype=float)
        if self.method == "cg":
            return np.column_stack([self.solve(targets[:, k])[0] for k in range(targets.shape[1])])
        if self.method == "augmented":
            m = self.T.shape[0]
            z = np.vstack([targets, np.zeros((self.T.shape[1], targets.shape[1]))])
            return self._lu.solve(z)[m:]
        return self._direct(self.T.T @ targets)

    def solve_normal_many(self, B: np.ndarray) -> np.ndarray:
        if self.method == "cg":
            return np.column_stack([self.solve_normal(B[:, k])[0] for k in range(B.shape[1])])
        return self._direct(np.asarray(B, dtype=float))


def dump_matrix_market(path, A, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, symmetry="general")
