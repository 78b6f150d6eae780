"""Pointwise linear algebra of the symbol: A = U B, A^+, P(w) and Q(w).

``P(w)`` is the orthogonal projection onto ``ker 𝔸(w)`` and ``Q(w) = 𝔸(w)^+``
satisfies ``Q(w) 𝔸(w) = I - P(w)``. The pseudoinverse is assembled from a
full-rank factorization with orthonormal ``U``::

    A^+ = B^T (B B^T)^{-1} U^T
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, RankChangeError, RankDeficientError, RankMismatchError
from .operators import DEFAULT_RANK_TOL, OperatorSpec, assemble_symbol


def numerical_rank(A: np.ndarray, tol: float = DEFAULT_RANK_TOL) -> int:
    s = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int((s > tol * s[0]).sum())


def full_rank_factorize(A, r: int, tol: float = DEFAULT_RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``A = U B`` with ``U^T U = I_r`` by pivoted Gram-Schmidt.

    Columns are selected greedily by largest residual norm (lowest index on
    ties); ``U`` orthonormalizes the selected columns and ``B = U^T A``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if r < 1:
        raise InputError("full_rank_factorize needs r >= 1; handle r = 0 upstream")
    found = numerical_rank(A, tol)
    if found != r:
        raise RankMismatchError(r, found)
    d, _ = A.shape
    R = A.copy()
    U = np.zeros((d, r))
    for k in range(r):
        norms = np.einsum("ij,ij->j", R, R)
        j = int(np.argmax(norms))
        u = R[:, j] / np.sqrt(norms[j])
        for _ in range(2):
            u = u - U[:, :k] @ (U[:, :k].T @ u)
            u = u / np.linalg.norm(u)
        U[:, k] = u
        R = R - np.outer(u, u @ R)
    return U, U.T @ A


def pseudoinverse(U, B) -> np.ndarray:
    """MacDuffee form ``B^T (B B^T)^{-1} U^T``; ``B B^T`` goes through Cholesky."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    try:
        factor = scipy.linalg.cho_factor(B @ B.T, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError(f"B B^T is not positive definite; B is rank deficient ({exc})") from exc
    # rounding can leave a tiny positive pivot instead of a failure
    piv = np.abs(np.diag(factor[0]))
    if piv.min() <= 1e-7 * piv.max():
        raise RankDeficientError(f"B B^T is numerically singular (pivot ratio {piv.min() / piv.max():.3g})")
    return B.T @ scipy.linalg.cho_solve(factor, U.T)


@dataclass
class SymbolDecomposition:
    w: np.ndarray
    A: np.ndarray
    r: int
    U: np.ndarray
    B: np.ndarray
    Aplus: np.ndarray
    P: np.ndarray
    Q: np.ndarray

    def residuals(self) -> dict[str, float]:
        """Relative Frobenius residuals of every identity the decomposition must satisfy."""
        A, Ap, P, Q = self.A, self.Aplus, self.P, self.Q
        n = A.shape[1]
        na = max(np.linalg.norm(A), 1e-300)
        nap = max(np.linalg.norm(Ap), 1e-300)
        fro = np.linalg.norm
        out = {
            "penrose_AXA": fro(A @ Ap @ A - A) / na,
            "penrose_XAX": fro(Ap @ A @ Ap - Ap) / nap,
            "penrose_AX_sym": fro(A @ Ap - (A @ Ap).T) / max(fro(A @ Ap), 1.0),
            "penrose_XA_sym": fro(Ap @ A - (Ap @ A).T) / max(fro(Ap @ A), 1.0),
            "P_idempotent": fro(P @ P - P),
            "P_symmetric": fro(P - P.T),
            "AP_zero": fro(A @ P) / na,
            "QA_eq_I_minus_P": fro(Q @ A - (np.eye(n) - P)),
        }
        if self.r:
            out["UtU"] = fro(self.U.T @ self.U - np.eye(self.r))
            out["UB_eq_A"] = fro(self.U @ self.B - A) / na
        return {k: float(v) for k, v in out.items()}


def decompose_symbol(op: OperatorSpec, w, r: int, tol: float = DEFAULT_RANK_TOL) -> SymbolDecomposition:
    w = np.asarray(w, dtype=float).reshape(-1)
    if abs(np.linalg.norm(w) - 1.0) > 1e-12:
        raise InputError(f"direction must be a unit vector, |w| = {np.linalg.norm(w)!r}")
    A = assemble_symbol(op, w)
    n, d = op.n, op.d
    if r == 0:
        found = numerical_rank(A, tol)
        if found != 0:
            raise RankMismatchError(0, found)
        return SymbolDecomposition(w, A, 0, np.zeros((d, 0)), np.zeros((0, n)), np.zeros((n, d)), np.eye(n), np.zeros((n, d)))
    U, B = full_rank_factorize(A, r, tol)
    Ap = pseudoinverse(U, B)
    P = np.eye(n) - Ap @ A
    return SymbolDecomposition(w, A, r, U, B, Ap, P, Ap.copy())


@dataclass
class ContinuityReport:
    max_delta_P: float
    max_delta_Q: float
    rank: int
    steps: list[tuple[list[float], float, float]]

    def to_dict(self) -> dict:
        return {"max_delta_P": self.max_delta_P, "max_delta_Q": self.max_delta_Q, "rank": self.rank, "steps": len(self.steps)}

    def write_csv(self, path: str, N: int) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"w{i + 1}" for i in range(N)] + ["deltaP", "deltaQ"])
            for w, dp, dq in self.steps:
                writer.writerow([repr(x) for x in w] + [repr(dp), repr(dq)])


def continuity_probe(op: OperatorSpec, path, tol: float = DEFAULT_RANK_TOL) -> ContinuityReport:
    """Largest difference quotients of ``w -> P(w)`` and ``w -> Q(w)`` along a path.

    Ranks are measured relative to the largest singular value seen on the whole
    path; a rank change between neighbours raises :class:`RankChangeError`.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[1] != op.N or len(path) < 2:
        raise InputError(f"path must be an array of at least two points in R^{op.N}")
    path = path / np.linalg.norm(path, axis=1, keepdims=True)
    sv = np.linalg.svd(assemble_symbol(op, path), compute_uv=False)
    smax = float(sv.max()) if sv.size else 0.0
    ranks = (sv > tol * smax).sum(axis=1) if smax > 0 else np.zeros(len(path), dtype=int)
    for k in range(len(path) - 1):
        if ranks[k] != ranks[k + 1]:
            raise RankChangeError(k, path[k], path[k + 1], int(ranks[k]), int(ranks[k + 1]))
    r = int(ranks[0])
    decs = [decompose_symbol(op, w, r, tol=tol) for w in path]
    steps = []
    max_p = max_q = 0.0
    for k in range(len(path) - 1):
        dw = float(np.linalg.norm(path[k + 1] - path[k]))
        if dw == 0.0:
            continue
        dp = float(np.linalg.norm(decs[k + 1].P - decs[k].P)) / dw
        dq = float(np.linalg.norm(decs[k + 1].Q - decs[k].Q)) / dw
        steps.append((path[k].tolist(), dp, dq))
        max_p, max_q = max(max_p, dp), max(max_q, dq)
    return ContinuityReport(max_p, max_q, r, steps)


def great_circle(N: int, points: int, a=None, b=None) -> np.ndarray:
    """Closed great circle through orthonormal ``a`` and ``b`` (default ``e_1``, ``e_2``)."""
    if N < 2:
        raise InputError("great circles need N >= 2")
    a = np.eye(N)[0] if a is None else np.asarray(a, dtype=float)
    b = np.eye(N)[1] if b is None else np.asarray(b, dtype=float)
    t = 2.0 * np.pi * np.arange(points + 1) / points
    return np.outer(np.cos(t), a) + np.outer(np.sin(t), b)
