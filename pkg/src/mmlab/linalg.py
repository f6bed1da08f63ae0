"""Symmetric eigensolvers: dense wrappers and a Lanczos iteration with full reorthogonalization."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csc_matrix, diags, issparse
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from .errors import NumericalError

DENSE_MAX = 2000
EIG_TOL = 1e-10


@dataclass
class LanczosResult:
    value: float
    vector: np.ndarray
    iterations: int
    residual: float


def lanczos_largest(matvec: Callable[[np.ndarray], np.ndarray], n: int, tol: float = 1e-12,
                    maxiter: int = 500, seed: int = 0, v0: np.ndarray | None = None) -> LanczosResult:
    """Largest eigenpair of a symmetric operator given by ``matvec``.

    Plain Lanczos with full Gram-Schmidt reorthogonalization (done twice) and
    a Ritz residual stopping test |beta_j * s_j| <= tol * |theta|.
    """
    if n == 1:
        e = np.ones(1)
        val = float(matvec(e)[0])
        return LanczosResult(val, e, 1, 0.0)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n) if v0 is None else np.asarray(v0, dtype=float).copy()
    q /= np.linalg.norm(q)
    m = min(maxiter, n)
    Q = np.zeros((n, m + 1))
    Q[:, 0] = q
    alpha = np.zeros(m)
    beta = np.zeros(m)
    theta, res = np.nan, np.inf
    for j in range(m):
        w = matvec(Q[:, j])
        alpha[j] = float(Q[:, j] @ w)
        for _ in range(2):
            w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        b = float(np.linalg.norm(w))
        beta[j] = b
        T = np.diag(alpha[: j + 1]) + np.diag(beta[:j], 1) + np.diag(beta[:j], -1)
        evals, evecs = np.linalg.eigh(T)
        theta = float(evals[-1])
        res = abs(b * evecs[-1, -1])
        if res <= tol * max(abs(theta), 1e-300) or b < 1e-14 * max(abs(theta), 1.0) or j == n - 1:
            vec = Q[:, : j + 1] @ evecs[:, -1]
            return LanczosResult(theta, vec / np.linalg.norm(vec), j + 1, res)
        Q[:, j + 1] = w / b
    raise NumericalError(f"Lanczos did not converge in {m} steps (residual {res:.3e})")


def dense_generalized_largest(A: np.ndarray, B: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenpair of A x = theta B x with B positive definite."""
    n = A.shape[0]
    try:
        w, v = sla.eigh(A, B, subset_by_index=[n - 1, n - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"dense generalized eigensolve failed: {exc}") from None
    return float(w[0]), v[:, 0]


def dense_smallest(S: np.ndarray) -> tuple[float, np.ndarray]:
    try:
        w, v = sla.eigh(S, subset_by_index=[0, 0])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"dense eigensolve failed: {exc}") from None
    return float(w[0]), v[:, 0]


def factorized(A) -> Callable[[np.ndarray], np.ndarray]:
    """Sparse LU solver for a symmetric matrix."""
    try:
        lu = splu(csc_matrix(A))
    except RuntimeError as exc:
        raise NumericalError(f"sparse factorization failed: {exc}") from None
    return lu.solve


def smallest_eigenvalue(Ksym, mu: np.ndarray, shift: float | None = None, tol: float = EIG_TOL,
                        seed: int = 0) -> tuple[float, np.ndarray]:
    """Smallest eigenpair of the pencil (Ksym, diag(mu)); vector is mu-normalized.

    Dense for n <= DENSE_MAX; above that, Lanczos on the shift-inverted
    operator (S - shift)^{-1} with S = M^{-1/2} Ksym M^{-1/2}; ``shift`` must
    lie strictly below the spectrum.
    """
    n = len(mu)
    s = 1.0 / np.sqrt(mu)
    if n <= DENSE_MAX:
        Kd = Ksym.toarray() if issparse(Ksym) else np.asarray(Ksym)
        S = s[:, None] * Kd * s[None, :]
        val, u = dense_smallest(0.5 * (S + S.T))
        return val, s * u
    if shift is None:
        raise NumericalError("a shift below the spectrum is needed above the dense limit")
    sigma = float(shift)
    S = diags(s) @ Ksym @ diags(s)
    solve = factorized(S - sigma * diags(np.ones(n)))
    res = lanczos_largest(solve, n, tol=tol * 1e-2, seed=seed)
    val = sigma + 1.0 / res.value
    return float(val), s * res.vector


def arpack_largest(matvec: Callable[[np.ndarray], np.ndarray], n: int, tol: float = 1e-12,
                   seed: int = 1) -> float:
    """Largest eigenvalue through ARPACK; used only as an independent cross-check.

    The start vector is seeded so repeated runs give identical bits.
    """
    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    v0 = np.random.default_rng(seed).uniform(0.5, 1.5, n)
    try:
        return float(eigsh(A, k=1, which="LA", tol=tol, v0=v0, return_eigenvectors=False)[0])
    except Exception as exc:  # ARPACK raises its own error types
        raise NumericalError(f"ARPACK failed: {exc}") from None
