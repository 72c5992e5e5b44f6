"""Sparse symmetric solves, extremal eigenvalues, conditioning and CFL numbers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, index: int, pivot: float):
        super().__init__(f"non-positive pivot {pivot:.3e} at row {index}")
        self.index = index
        self.pivot = pivot


class Factorization:
    """Solver for a sparse SPD matrix.

    Rows whose only nonzero is the diagonal (uncut Gauss-Lobatto blocks of
    the mass matrix) are solved by division. The remaining coupled block is
    factored by SuperLU with a symmetric minimum-degree ordering and no
    off-diagonal pivoting, which makes the U diagonal the LDL^T pivots.
    """

    def __init__(self, matrix):
        A = sp.csr_matrix(matrix)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("matrix must be square")
        self.n = n
        offdiag = A - sp.diags(A.diagonal())
        offdiag.eliminate_zeros()
        counts = np.diff(offdiag.tocsr().indptr)
        self.diagonal_rows = np.flatnonzero(counts == 0)
        self.coupled_rows = np.flatnonzero(counts > 0)
        d = A.diagonal()[self.diagonal_rows]
        bad = np.flatnonzero(~(d > 0))
        if bad.size:
            i = int(self.diagonal_rows[bad[0]])
            raise NotPositiveDefiniteError(i, float(A[i, i]))
        self._inv_diag = 1.0 / d
        self._lu = None
        if self.coupled_rows.size:
            C = A[self.coupled_rows][:, self.coupled_rows].tocsc()
            self._lu = spla.splu(C, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
            piv = self._lu.U.diagonal()
            bad = np.flatnonzero(~(piv > 0))
            if bad.size:
                k = int(self._lu.perm_c[bad[0]])
                raise NotPositiveDefiniteError(int(self.coupled_rows[k]), float(piv[bad[0]]))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = np.empty_like(b)
        if b.ndim == 1:
            x[self.diagonal_rows] = b[self.diagonal_rows] * self._inv_diag
        else:
            x[self.diagonal_rows] = b[self.diagonal_rows] * self._inv_diag[:, None]
        if self._lu is not None:
            x[self.coupled_rows] = self._lu.solve(np.ascontiguousarray(b[self.coupled_rows]))
        return x

    __call__ = solve

    def as_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.n, self.n), matvec=self.solve, dtype=float)


def factor(matrix) -> Factorization:
    return Factorization(matrix)


def solve(fact: Factorization, rhs) -> np.ndarray:
    return fact.solve(rhs)


@dataclass
class EigenEstimate:
    value: float
    residual: float
    iterations: int
    converged: bool = True


def _norm_estimate(A) -> float:
    if sp.issparse(A):
        return float(abs(A).sum(axis=1).max())
    return float(np.abs(A).sum(axis=1).max())


def _residual(A, M, x, lam):
    Mx = M @ x if M is not None else x
    return float(np.linalg.norm(A @ x - lam * Mx) / np.linalg.norm(x))


class _Counter:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def _dense_extremes(A, M):
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    Md = None if M is None else (M.toarray() if sp.issparse(M) else np.asarray(M))
    w, V = scipy.linalg.eigh(Ad, Md)
    return (w[0], V[:, 0]), (w[-1], V[:, -1])


def extremal_eigenvalues(A, M=None, tol: float = 1e-8, method: str = "auto",
                         maxiter: int = 5000, fact: Factorization | None = None,
                         which: str = "both"):
    """Smallest and largest eigenvalues of A x = lambda M x (or of A alone).

    ``method`` is "dense", "lanczos" (ARPACK implicitly restarted Lanczos),
    or "auto" which goes dense below ``DENSE_LIMIT`` unknowns. The smallest
    eigenvalue uses shift-invert about zero and needs A to be SPD; pass
    ``which="max"`` to skip it. Returns (lambda_min, lambda_max) as
    ``EigenEstimate``; an entry is None when not requested.
    """
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    normA = _norm_estimate(A)
    normM = 1.0 if M is None else _norm_estimate(M)

    def check(lam, x, its):
        res = _residual(A, M, x, lam)
        ok = res <= max(tol, 1e-10) * (abs(lam) * normM + normA) * 10
        if not ok:
            logger.warning("eigenpair lambda=%.6e has residual %.3e", lam, res)
        return EigenEstimate(float(lam), res, its, bool(ok))

    if method == "dense":
        (l0, v0), (l1, v1) = _dense_extremes(A, M)
        lo = check(l0, v0, 1) if which in ("both", "min") else None
        hi = check(l1, v1, 1) if which in ("both", "max") else None
        return lo, hi
    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")

    A = sp.csr_matrix(A)
    Msp = None if M is None else sp.csr_matrix(M)
    ncv = min(n - 1, 48)
    lo = hi = None
    if which in ("both", "max"):
        counter = _Counter(lambda x: A @ x)
        op = spla.LinearOperator((n, n), matvec=counter, dtype=float)
        try:
            if Msp is None:
                w, V = spla.eigsh(op, k=1, which="LA", tol=tol, maxiter=maxiter, ncv=ncv)
            else:
                mf = fact if fact is not None else Factorization(Msp)
                w, V = spla.eigsh(op, k=1, M=Msp, Minv=mf.as_operator(), which="LA",
                                  tol=tol, maxiter=maxiter, ncv=ncv)
            hi = check(w[0], V[:, 0], counter.calls)
        except spla.ArpackNoConvergence as err:
            if len(err.eigenvalues):
                hi = check(err.eigenvalues[-1], err.eigenvectors[:, -1], counter.calls)
                hi.converged = False
            else:
                hi = EigenEstimate(math.nan, math.inf, counter.calls, False)
    if which in ("both", "min"):
        af = Factorization(A)
        counter = _Counter(af.solve)
        opinv = spla.LinearOperator((n, n), matvec=counter, dtype=float)
        try:
            w, V = spla.eigsh(A, k=1, M=Msp, sigma=0.0, OPinv=opinv, which="LM",
                              tol=tol, maxiter=maxiter, ncv=ncv)
            lo = check(w[0], V[:, 0], counter.calls)
        except spla.ArpackNoConvergence as err:
            if len(err.eigenvalues):
                lo = check(err.eigenvalues[0], err.eigenvectors[:, 0], counter.calls)
                lo.converged = False
            else:
                lo = EigenEstimate(math.nan, math.inf, counter.calls, False)
    return lo, hi


def condition_number(M, method: str = "auto", tol: float = 1e-8) -> float:
    """Spectral condition number lambda_max / lambda_min of an SPD matrix."""
    lo, hi = extremal_eigenvalues(M, None, tol=tol, method=method)
    return hi.value / lo.value


def cfl_number(A, M, h: float, method: str = "auto", fact=None) -> float:
    """C_FL = 1 / (h sqrt(lambda_max)) for the pencil (A, M)."""
    _, hi = extremal_eigenvalues(A, M, method=method, fact=fact, which="max")
    if not hi.converged:
        logger.warning("lambda_max not converged; C_FL is an estimate")
    return 1.0 / (h * math.sqrt(hi.value))


def max_stable_step(cfl: float, h: float, alpha: float = 2.0 * math.sqrt(2.0)) -> float:
    """Largest step tau = alpha * C_FL * h (alpha = 2 sqrt 2 for classical RK4)."""
    return alpha * cfl * h


def growth_function(p: int) -> float:
    """P(p) = sum_k p^(4k+2) / ((k!)^2 (2k+1))."""
    return sum(float(p) ** (4 * k + 2) / (math.factorial(k) ** 2 * (2 * k + 1))
               for k in range(1, p + 1))


def growth_diagnostics(p: int, w) -> tuple[float, float, float]:
    """(P(p), G(w), sum_k 1/w_k).

    G(w) = sum_k w_k p^(4k+2) / ((2k+1)(k!)^2). The third entry is the
    weight-dependent part of L(w); see ``lower_bound_factor`` for L itself.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    k = np.arange(1, len(w) + 1)
    fact = np.array([math.factorial(int(i)) for i in k], dtype=float)
    G = float(np.sum(w * float(p) ** (4 * k + 2) / ((2 * k + 1) * fact**2)))
    return growth_function(p), G, float(np.sum(1.0 / w))


def lower_bound_factor(w, c1: float = 1.0) -> float:
    """L(w) = C_1 + sum_k 1/w_k. C_1 has no closed form; 1 is a placeholder."""
    return c1 + float(np.sum(1.0 / np.asarray(w, dtype=float)))


def write_matrix_market(path, matrix, comment: str = "") -> None:
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)


def read_matrix_market(path) -> sp.csr_matrix:
    from scipy.io import mmread
    return sp.csr_matrix(mmread(str(path)))
