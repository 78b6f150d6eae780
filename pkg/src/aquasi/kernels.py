"""Hot numerical kernels.

Every kernel exists twice: a loop version compiled with numba and a
vectorized numpy version. The public names at the bottom of the module
dispatch on :data:`aquasi._accel.USE_NUMBA`; tests and the benchmark call the
``*_numba`` / ``*_numpy`` variants directly.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Projector stacks: P(w) = I - A^+ A and Q(w) = A^+ for many symbols at once.
# A^+ comes from a pivoted Gram-Schmidt full-rank factorization A = U B and
# the MacDuffee formula A^+ = B^T (B B^T)^{-1} U^T.
# ---------------------------------------------------------------------------


def projector_stack_numpy(symbols: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched P and Q for ``symbols`` of shape ``(K, d, n)`` of common rank ``r``."""
    symbols = np.asarray(symbols, dtype=float)
    K, d, n = symbols.shape
    eye = np.broadcast_to(np.eye(n), (K, n, n))
    if r == 0:
        return eye.copy(), np.zeros((K, n, d))
    rows = np.arange(K)
    R = symbols.copy()
    U = np.zeros((K, d, r))
    for k in range(r):
        norms = np.einsum("kij,kij->kj", R, R)
        j = np.argmax(norms, axis=1)
        col = R[rows, :, j]
        u = col / np.sqrt(norms[rows, j])[:, None]
        for _ in range(2):  # re-orthogonalize against the accepted columns
            u = u - np.einsum("kic,kc->ki", U[:, :, :k], np.einsum("kic,ki->kc", U[:, :, :k], u))
            u = u / np.linalg.norm(u, axis=1, keepdims=True)
        U[:, :, k] = u
        R = R - u[:, :, None] * np.einsum("ki,kij->kj", u, R)[:, None, :]
    B = np.einsum("kic,kij->kcj", U, symbols)
    G = np.einsum("kcj,kej->kce", B, B)
    L = np.linalg.cholesky(G)
    # (B B^T)^{-1} U^T via two triangular solves.
    Y = np.linalg.solve(L, np.transpose(U, (0, 2, 1)))
    X = np.linalg.solve(np.transpose(L, (0, 2, 1)), Y)
    Q = np.einsum("kcj,kci->kji", B, X)
    P = eye - np.einsum("kji,kil->kjl", Q, symbols)
    return P, Q


@njit
def _projector_stack_loop(symbols, r):
    K, d, n = symbols.shape
    P = np.zeros((K, n, n))
    Q = np.zeros((K, n, d))
    R = np.empty((d, n))
    U = np.zeros((d, r))
    B = np.zeros((r, n))
    G = np.zeros((r, r))
    L = np.zeros((r, r))
    Y = np.zeros((r, d))
    X = np.zeros((r, d))
    for k in range(K):
        for i in range(n):
            for j in range(n):
                P[k, i, j] = 1.0 if i == j else 0.0
        if r == 0:
            continue
        for a in range(d):
            for b in range(n):
                R[a, b] = symbols[k, a, b]
        for c in range(r):
            best = -1.0
            jb = 0
            for j in range(n):
                s = 0.0
                for a in range(d):
                    s += R[a, j] * R[a, j]
                if s > best:
                    best = s
                    jb = j
            nrm = np.sqrt(best)
            for a in range(d):
                U[a, c] = R[a, jb] / nrm
            for _ in range(2):
                for e in range(c):
                    dot = 0.0
                    for a in range(d):
                        dot += U[a, e] * U[a, c]
                    for a in range(d):
                        U[a, c] -= dot * U[a, e]
                s = 0.0
                for a in range(d):
                    s += U[a, c] * U[a, c]
                s = np.sqrt(s)
                for a in range(d):
                    U[a, c] /= s
            for j in range(n):
                dot = 0.0
                for a in range(d):
                    dot += U[a, c] * R[a, j]
                for a in range(d):
                    R[a, j] -= dot * U[a, c]
        for c in range(r):
            for j in range(n):
                s = 0.0
                for a in range(d):
                    s += U[a, c] * symbols[k, a, j]
                B[c, j] = s
        for c in range(r):
            for e in range(r):
                s = 0.0
                for j in range(n):
                    s += B[c, j] * B[e, j]
                G[c, e] = s
        # Cholesky G = L L^T
        for c in range(r):
            for e in range(c + 1):
                s = G[c, e]
                for m in range(e):
                    s -= L[c, m] * L[e, m]
                if c == e:
                    L[c, c] = np.sqrt(s)
                else:
                    L[c, e] = s / L[e, e]
        # forward then backward substitution for G X = U^T
        for col in range(d):
            for c in range(r):
                s = U[col, c]
                for m in range(c):
                    s -= L[c, m] * Y[m, col]
                Y[c, col] = s / L[c, c]
            for c in range(r - 1, -1, -1):
                s = Y[c, col]
                for m in range(c + 1, r):
                    s -= L[m, c] * X[m, col]
                X[c, col] = s / L[c, c]
        for j in range(n):
            for col in range(d):
                s = 0.0
                for c in range(r):
                    s += B[c, j] * X[c, col]
                Q[k, j, col] = s
        for i in range(n):
            for j in range(n):
                s = 0.0
                for a in range(d):
                    s += Q[k, i, a] * symbols[k, a, j]
                P[k, i, j] -= s
    return P, Q


def projector_stack_numba(symbols: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    return _projector_stack_loop(np.ascontiguousarray(symbols, dtype=np.float64), int(r))


# ---------------------------------------------------------------------------
# Discrete Legendre-Fenchel transform along the last axis:
#   out[..., s] = max_j ( slopes[s] * x[j] - f[..., j] )
# ---------------------------------------------------------------------------


def legendre_lastaxis_numpy(f: np.ndarray, x: np.ndarray, slopes: np.ndarray, chunk: int = 1 << 22) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    lead = f.shape[:-1]
    rows = f.reshape(-1, f.shape[-1])
    out = np.empty((rows.shape[0], slopes.size))
    sx = np.multiply.outer(slopes, x)  # (S, M)
    step = max(1, chunk // max(1, sx.size))
    for start in range(0, rows.shape[0], step):
        block = rows[start : start + step]
        out[start : start + step] = (sx[None, :, :] - block[:, None, :]).max(axis=2)
    return out.reshape(lead + (slopes.size,))


@njit
def _legendre_rows(rows, x, slopes):
    R, M = rows.shape
    S = slopes.size
    out = np.empty((R, S))
    for i in range(R):
        for s in range(S):
            sl = slopes[s]
            best = -np.inf
            for j in range(M):
                v = sl * x[j] - rows[i, j]
                if v > best:
                    best = v
            out[i, s] = best
    return out


def legendre_lastaxis_numba(f: np.ndarray, x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    rows = np.ascontiguousarray(f.reshape(-1, f.shape[-1]))
    out = _legendre_rows(rows, np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(slopes, dtype=float))
    return out.reshape(f.shape[:-1] + (slopes.size,))


# ---------------------------------------------------------------------------
# Multilinear interpolation on a regular grid, with gradient. Points outside
# the box (beyond a relative slack) evaluate to +inf with a zero gradient.
# ---------------------------------------------------------------------------

_SLACK = 1e-9


def multilinear_numpy(table, lo, h, points):
    table = np.asarray(table, dtype=float)
    lo = np.asarray(lo, dtype=float)
    h = np.asarray(h, dtype=float)
    pts = np.asarray(points, dtype=float)
    P, n = pts.shape
    shape = np.array(table.shape)
    t = (pts - lo) / h
    outside = np.any((t < -_SLACK) | (t > shape - 1 + _SLACK), axis=1)
    idx = np.clip(np.floor(t).astype(np.int64), 0, shape - 2)
    frac = np.clip(t - idx, 0.0, 1.0)
    val = np.zeros(P)
    grad = np.zeros((P, n))
    flat = table.ravel()
    strides = np.array([int(np.prod(shape[i + 1 :])) for i in range(n)])
    for corner in range(1 << n):
        bits = np.array([(corner >> (n - 1 - i)) & 1 for i in range(n)])
        wts = np.where(bits == 1, frac, 1.0 - frac)  # (P, n)
        fv = flat[(idx + bits) @ strides]
        val += np.prod(wts, axis=1) * fv
        for i in range(n):
            others = np.prod(np.delete(wts, i, axis=1), axis=1) if n > 1 else np.ones(P)
            grad[:, i] += (1.0 if bits[i] else -1.0) * others * fv / h[i]
    val[outside] = np.inf
    grad[outside] = 0.0
    return val, grad


@njit
def _interp_one(flat, lo, h, shape, strides, x, grad, want_grad):
    n = x.size
    base = 0
    fr = np.empty(n)
    for i in range(n):
        t = (x[i] - lo[i]) / h[i]
        if t < -_SLACK or t > shape[i] - 1 + _SLACK:
            if want_grad:
                for m in range(n):
                    grad[m] = 0.0
            return np.inf
        k = int(np.floor(t))
        if k < 0:
            k = 0
        if k > shape[i] - 2:
            k = shape[i] - 2
        f = t - k
        if f < 0.0:
            f = 0.0
        if f > 1.0:
            f = 1.0
        fr[i] = f
        base += k * strides[i]
    if want_grad:
        for m in range(n):
            grad[m] = 0.0
    val = 0.0
    for corner in range(1 << n):
        off = 0
        w = 1.0
        for i in range(n):
            b = (corner >> (n - 1 - i)) & 1
            off += b * strides[i]
            w *= fr[i] if b else 1.0 - fr[i]
        fv = flat[base + off]
        val += w * fv
        if want_grad:
            for m in range(n):
                wm = 1.0
                for i in range(n):
                    if i == m:
                        continue
                    b = (corner >> (n - 1 - i)) & 1
                    wm *= fr[i] if b else 1.0 - fr[i]
                bm = (corner >> (n - 1 - m)) & 1
                grad[m] += (1.0 if bm else -1.0) * wm * fv / h[m]
    return val


@njit
def _multilinear_loop(flat, lo, h, shape, strides, pts):
    P, n = pts.shape
    val = np.empty(P)
    grad = np.zeros((P, n))
    g = np.zeros(n)
    for p in range(P):
        val[p] = _interp_one(flat, lo, h, shape, strides, pts[p], g, True)
        for m in range(n):
            grad[p, m] = g[m]
    return val, grad


def _grid_meta(table, lo, h):
    table = np.ascontiguousarray(table, dtype=float)
    shape = np.array(table.shape, dtype=np.int64)
    strides = np.array([int(np.prod(shape[i + 1 :])) for i in range(table.ndim)], dtype=np.int64)
    return table.ravel(), np.asarray(lo, dtype=float), np.asarray(h, dtype=float), shape, strides


def multilinear_numba(table, lo, h, points):
    flat, lo, h, shape, strides = _grid_meta(table, lo, h)
    return _multilinear_loop(flat, lo, h, shape, strides, np.ascontiguousarray(points, dtype=float))


# ---------------------------------------------------------------------------
# One round of Λ-convexification on a tabulated function:
#   F'(ξ) = min(F(ξ), min_{u, θ, t} θ F(ξ + (1-θ) t u) + (1-θ) F(ξ - θ t u))
# Splits leaving the table are skipped and counted.
# ---------------------------------------------------------------------------


def _grid_points(shape, lo, h):
    axes = [lo[i] + h[i] * np.arange(shape[i]) for i in range(len(shape))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def laminate_round_numpy(table, lo, h, dirs, thetas, steps):
    table = np.asarray(table, dtype=float)
    lo = np.asarray(lo, dtype=float)
    h = np.asarray(h, dtype=float)
    pts = _grid_points(table.shape, lo, h)
    best = table.ravel().copy()
    skipped = 0
    for u in np.asarray(dirs, dtype=float):
        for th in thetas:
            for t in steps:
                fa, _ = multilinear_numpy(table, lo, h, pts + (1.0 - th) * t * u)
                fb, _ = multilinear_numpy(table, lo, h, pts - th * t * u)
                cand = th * fa + (1.0 - th) * fb
                skipped += int(np.count_nonzero(~np.isfinite(cand)))
                np.minimum(best, np.where(np.isfinite(cand), cand, np.inf), out=best)
    return best.reshape(table.shape), skipped


@njit
def _laminate_loop(flat, lo, h, shape, strides, pts, dirs, thetas, steps):
    P, n = pts.shape
    out = flat.copy()
    a = np.empty(n)
    b = np.empty(n)
    g = np.zeros(n)
    skipped = 0
    for p in range(P):
        best = out[p]
        for iu in range(dirs.shape[0]):
            for ith in range(thetas.size):
                th = thetas[ith]
                for it in range(steps.size):
                    t = steps[it]
                    for m in range(n):
                        a[m] = pts[p, m] + (1.0 - th) * t * dirs[iu, m]
                        b[m] = pts[p, m] - th * t * dirs[iu, m]
                    fa = _interp_one(flat, lo, h, shape, strides, a, g, False)
                    if not np.isfinite(fa):
                        skipped += 1
                        continue
                    fb = _interp_one(flat, lo, h, shape, strides, b, g, False)
                    if not np.isfinite(fb):
                        skipped += 1
                        continue
                    c = th * fa + (1.0 - th) * fb
                    if c < best:
                        best = c
        out[p] = best
    return out, skipped


def laminate_round_numba(table, lo, h, dirs, thetas, steps):
    flat, lo, h, shape, strides = _grid_meta(table, lo, h)
    pts = _grid_points(tuple(shape), lo, h)
    out, skipped = _laminate_loop(
        flat,
        lo,
        h,
        shape,
        strides,
        pts,
        np.ascontiguousarray(dirs, dtype=float),
        np.ascontiguousarray(thetas, dtype=float),
        np.ascontiguousarray(steps, dtype=float),
    )
    return out.reshape(tuple(shape)), int(skipped)


if USE_NUMBA:
    projector_stack = projector_stack_numba
    legendre_lastaxis = legendre_lastaxis_numba
    multilinear = multilinear_numba
    laminate_round = laminate_round_numba
else:
    projector_stack = projector_stack_numpy
    legendre_lastaxis = legendre_lastaxis_numpy
    multilinear = multilinear_numpy
    laminate_round = laminate_round_numpy

BACKENDS = {
    "numpy": {
        "projector_stack": projector_stack_numpy,
        "legendre_lastaxis": legendre_lastaxis_numpy,
        "multilinear": multilinear_numpy,
        "laminate_round": laminate_round_numpy,
    },
    "numba": {
        "projector_stack": projector_stack_numba,
        "legendre_lastaxis": legendre_lastaxis_numba,
        "multilinear": multilinear_numba,
        "laminate_round": laminate_round_numba,
    },
}
