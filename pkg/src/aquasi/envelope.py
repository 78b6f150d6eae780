"""Numerical 𝒜-quasiconvexification and bounds for the closed envelope.

``quasiconvexify`` minimizes the torus average of ``g(ξ + w)`` over mean-zero,
spectrally 𝒜-free fields ``w`` on a single periodic grid. The result is
bracketed from below by the convex envelope (convex functions satisfy Jensen
against every admissible measure) and complemented by a Λ-laminate upper
bound built from explicit two-point splittings along the characteristic cone.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from . import kernels
from ._accel import thread_cap
from .errors import DivergenceError, DomainError, InputError
from .operators import DEFAULT_SEED, OperatorSpec, sample_characteristic_cone
from .torus import (
    afree_residual,
    frequencies,
    irfft_field,
    nyquist_mask,
    operator_rank,
    PeriodicField,
    projector_half,
    rfft_field,
)

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
INIT_NORMS = (0.5, 1.0, 2.0)
THETAS = np.arange(1, 16) / 16.0
STEPS = 2.0 ** np.linspace(-6.0, 3.0, 10)


class Integrand(Protocol):
    n: int

    def value(self, x: np.ndarray) -> np.ndarray: ...

    def value_and_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


# ---------------------------------------------------------------- tables


@dataclass(frozen=True, eq=False)
class TabulatedFunction:
    """Multilinear interpolant of values on a regular grid; ``+inf`` outside it."""

    table: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    label: str = "table"

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim < 1 or min(t.shape) < 2:
            raise InputError("tables need at least two points per axis")
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).reshape(t.ndim))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).reshape(t.ndim))
        if not np.all(self.hi > self.lo):
            raise InputError(f"table box needs hi > lo on every axis, got {self.lo.tolist()} .. {self.hi.tolist()}")

    @classmethod
    def from_function(cls, g: Integrand, lo, hi, pts) -> "TabulatedFunction":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        mesh = grid_mesh(lo, hi, _per_axis(pts, len(lo)))
        return cls(g.value(mesh), lo, hi, label=f"tab[{g}]")

    @property
    def n(self) -> int:
        return self.table.ndim

    @property
    def h(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.table.shape) - 1)

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(self.lo[i], self.hi[i], self.table.shape[i]) for i in range(self.n)]

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[:1] != (self.n,):
            raise InputError(f"table expects {self.n} components, got shape {x.shape}")
        return x.reshape(self.n, -1).T, x.shape[1:]

    def value(self, x) -> np.ndarray:
        pts, shape = self._points(x)
        val, _ = kernels.multilinear(self.table, self.lo, self.h, pts)
        return val.reshape(shape)

    def value_and_grad(self, x):
        pts, shape = self._points(x)
        val, g = kernels.multilinear(self.table, self.lo, self.h, pts)
        return val.reshape(shape), g.T.reshape((self.n,) + shape)

    def __str__(self) -> str:
        return self.label


def _per_axis(pts, n: int) -> tuple[int, ...]:
    if np.isscalar(pts):
        return (int(pts),) * n
    pts = tuple(int(p) for p in pts)
    if len(pts) != n:
        raise InputError(f"need {n} point counts, got {len(pts)}")
    return pts


def grid_mesh(lo, hi, pts) -> np.ndarray:
    """Component-major mesh of shape ``(n, p_1, ..., p_n)``."""
    axes = [np.linspace(lo[i], hi[i], pts[i]) for i in range(len(lo))]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


# ------------------------------------------------------ convex envelope


def _legendre_nd(f: np.ndarray, xs: Sequence[np.ndarray], ss: Sequence[np.ndarray]) -> np.ndarray:
    """``f*(s) = max_x (s·x - f(x))`` by one 1-D max-plus sweep per axis."""
    n = f.ndim
    phi = f
    for k, axis in enumerate(reversed(range(n))):
        arr = phi if k == 0 else -phi
        moved = np.moveaxis(arr, axis, -1)
        phi = np.moveaxis(kernels.legendre_lastaxis(moved, xs[axis], ss[axis]), -1, axis)
    return phi


def convex_envelope_oracle(g: Integrand, box, pts, slope_factor: int = 4) -> TabulatedFunction:
    """Discrete Legendre-Fenchel biconjugate of ``g`` sampled on a box.

    ``box`` is ``(lo, hi)`` (scalars or per-axis sequences). The slope grid on
    each axis spans the largest finite-difference slope of the samples with
    ``slope_factor`` times as many points as the value grid, spaced
    quadratically (``s = s_max u|u|``) so small slopes, where curvature of
    typical growth integrands is lowest, are resolved finely.
    """
    n = g.n
    if n > 3:
        raise InputError("convex envelope tabulation supports n <= 3")
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (n,)).copy()
    p = _per_axis(pts, n)
    if min(p) < 3:
        raise InputError("need at least 3 grid points per axis")
    xs = [np.linspace(lo[i], hi[i], p[i]) for i in range(n)]
    f = g.value(np.stack(np.meshgrid(*xs, indexing="ij")))
    finite = np.isfinite(f)
    if not finite.any():
        raise InputError("integrand is infinite on the whole box")
    ss = []
    for i in range(n):
        diffs = np.diff(np.where(finite, f, np.nan), axis=i) / (xs[i][1] - xs[i][0])
        smax = float(np.nanmax(np.abs(diffs))) if np.isfinite(diffs).any() else 1.0
        count = slope_factor * p[i] + (1 - (slope_factor * p[i]) % 2)  # odd so 0 is a slope
        u = np.linspace(-1.0, 1.0, count)
        ss.append(smax * u * np.abs(u))
    fstar = _legendre_nd(np.where(finite, f, np.inf), xs, ss)
    fss = _legendre_nd(fstar, ss, xs)
    return TabulatedFunction(fss, lo, hi, label=f"conv[{g}]")


_CONVEX_CACHE: dict[Any, TabulatedFunction] = {}


def _default_box(g: Integrand, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # [-4, 4] with 2^k intervals puts every dyadic base point of step 1/16
    # (n = 2) on a node, where the tabulated biconjugate carries no
    # interpolation error. Far base points get a box of the same width.
    if isinstance(g, TabulatedFunction):
        return g.lo.copy(), g.hi.copy()
    centre = np.where(np.abs(xi) <= 2.0, 0.0, np.round(xi))
    return centre - 4.0, centre + 4.0


_DEFAULT_PTS = {1: 257, 2: 129, 3: 33}


def convex_lower_bound(g: Integrand, xi) -> float | None:
    """Convex-envelope value at ``ξ`` (None when ``n > 3``)."""
    xi = np.asarray(xi, dtype=float)
    if g.n > 3:
        return None
    lo, hi = _default_box(g, xi)
    key = (g, tuple(lo), tuple(hi))  # tables hash by identity; the key keeps them alive
    table = _CONVEX_CACHE.get(key)
    if table is None:
        table = convex_envelope_oracle(g, (lo, hi), _DEFAULT_PTS[g.n])
        if len(_CONVEX_CACHE) > 64:
            _CONVEX_CACHE.clear()
        _CONVEX_CACHE[key] = table
    return float(table.value(xi.reshape(-1, 1))[0])


# ------------------------------------------------- field optimization


@dataclass(frozen=True)
class CappedIntegrand:
    """``g`` with values at or above its cap level read as ``+inf`` (infeasible)."""

    inner: Any
    level: float

    @property
    def n(self) -> int:
        return self.inner.n

    def value(self, x):
        v = self.inner.value(x)
        return np.where(v >= self.level, np.inf, v)

    def value_and_grad(self, x):
        v, g = self.inner.value_and_grad(x)
        return np.where(v >= self.level, np.inf, v), g

    def __str__(self) -> str:
        return str(self.inner)


def feasible_form(g: Integrand) -> Integrand:
    """Wrap integrands carrying a top-level ``cap`` so the cap acts as +inf."""
    level = getattr(g, "cap", None)
    return g if level is None else CappedIntegrand(g, float(level))


@dataclass
class RunResult:
    value: float
    grad_norm: float
    iterations: int
    field: np.ndarray
    aborted: str | None = None


@dataclass
class EnvelopeReport:
    xi: list[float]
    qca_value: float
    convex_lb: float | None
    laminate_ub: float | None
    restarts: int
    grid_dims: list[int]
    converged: bool
    minimizer_norm: float
    tol: float
    g_at_xi: float
    best_restart: int = 0
    iterations: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)
    minimizer: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "xi": self.xi,
            "qcaValue": self.qca_value,
            "convexLB": self.convex_lb,
            "laminateUB": self.laminate_ub,
            "restarts": self.restarts,
            "gridDims": self.grid_dims,
            "converged": self.converged,
            "minimizerNorm": self.minimizer_norm,
            "tol": self.tol,
            "gAtXi": self.g_at_xi,
            "bestRestart": self.best_restart,
            "iterations": self.iterations,
            "diagnostics": self.diagnostics,
        }


class _FieldProblem:
    """Energy ``mean g(ξ + w)`` restricted to mean-zero 𝒜-free fields."""

    def __init__(self, op: OperatorSpec, g: Integrand, xi: np.ndarray, dims: tuple[int, ...]):
        self.op, self.g, self.dims = op, g, dims
        self.xi = xi.reshape((op.n,) + (1,) * op.N)
        self.P = projector_half(op, dims)
        self.zero_index = (slice(None),) + (0,) * op.N

    def project(self, values: np.ndarray) -> np.ndarray:
        spec = rfft_field(values)
        out = np.einsum("ij...,j...->i...", self.P, spec)
        out[self.zero_index] = 0.0
        return irfft_field(out, self.dims)

    def energy(self, w: np.ndarray) -> float:
        with np.errstate(invalid="ignore", over="ignore"):
            val = self.g.value(self.xi + w)
        return float(np.mean(val))

    def energy_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        with np.errstate(invalid="ignore", over="ignore"):
            val, grad = self.g.value_and_grad(self.xi + w)
        return float(np.mean(val)), self.project(grad)

    def random_start(self, rng: np.random.Generator, norm: float) -> np.ndarray:
        lam = frequencies(self.dims, half=True)
        low = (np.max(np.abs(lam), axis=0) <= 2) & ~nyquist_mask(self.dims, half=True)
        spec = np.zeros((self.op.n,) + lam.shape[1:], dtype=complex)
        k = int(low.sum())
        spec[:, low] = rng.standard_normal((self.op.n, k)) + 1j * rng.standard_normal((self.op.n, k))
        w = self.project(irfft_field(spec, self.dims))
        nrm = _l2(w)
        return w * (norm / nrm) if nrm > 0 else w


def _l2(w: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(w * w, axis=0))))


def _descend(
    prob: _FieldProblem, w: np.ndarray, max_iters: int, tol: float, floor: float | None
) -> RunResult:
    """Projected gradient with Armijo backtracking (c = 1e-4, halving).

    Trial steps start from a Barzilai-Borwein estimate; only steps satisfying
    the sufficient-decrease test are accepted, so the energy is monotone.
    """
    J, d = prob.energy_grad(w)
    gn2 = float(np.mean(np.sum(d * d, axis=0)))
    step = 1.0
    it = 0
    prev = None
    while it < max_iters:
        if math.sqrt(gn2) <= tol:
            break
        if prev is not None:
            sw, sd = prev
            denom = float(np.mean(np.sum(sw * sd, axis=0)))
            if denom > 0:
                step = float(np.mean(np.sum(sw * sw, axis=0))) / denom
        step = min(max(step, 1e-12), 1e6)
        accepted = False
        while step > 1e-16:
            trial = w - step * d
            Jt = prob.energy(trial)
            if math.isfinite(Jt) and Jt <= J - ARMIJO_C * step * gn2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        trial = prob.project(trial)  # keeps the iterate exactly mean-zero and 𝒜-free
        Jn, dn = prob.energy_grad(trial)
        if not math.isfinite(Jn) or Jn > J:
            break
        prev = (trial - w, dn - d)
        w, J, d = trial, Jn, dn
        gn2 = float(np.mean(np.sum(d * d, axis=0)))
        it += 1
        if floor is not None and J < floor:
            return RunResult(J, math.sqrt(gn2), it, w, aborted=f"energy {J:.6g} fell below convex bound - 1")
    return RunResult(J, math.sqrt(gn2), it, w)


def quasiconvexify(
    op: OperatorSpec,
    g: Integrand,
    xi,
    grid: int | Sequence[int] | None = None,
    restarts: int = 8,
    max_iters: int = 2000,
    tol: float = 1e-6,
    seed: int = DEFAULT_SEED,
    laminate_depth: int = 0,
    keep_minimizer: bool = False,
) -> EnvelopeReport:
    """Numerical ``Q_𝒜 g(ξ)`` on a single periodic grid.

    Runs the zero field plus ``restarts`` random low-frequency starts (modes
    with ``|λ|_∞ <= 2``, scaled to L2 norms cycling through 0.5, 1, 2) and
    keeps the lowest final energy, ties going to the lowest restart index.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.size != op.n:
        raise InputError(f"ξ has {xi.size} components, operator has n={op.n}")
    if g.n != op.n:
        raise InputError(f"integrand dimension {g.n} differs from operator n={op.n}")
    operator_rank(op)
    g = feasible_form(g)
    dims = _grid_dims(op, grid)
    prob = _FieldProblem(op, g, xi, dims)
    g_xi = float(g.value(xi.reshape(-1, 1))[0])
    if not math.isfinite(g_xi):
        raise DomainError(f"integrand is not finite at ξ = {xi.tolist()}")
    lb = convex_lower_bound(g, xi)
    floor = None if lb is None else lb - 1.0
    rng = np.random.default_rng(seed)
    starts = [np.zeros((op.n,) + dims)]
    for k in range(restarts):
        w0 = prob.random_start(rng, INIT_NORMS[k % len(INIT_NORMS)])
        for _ in range(60):
            if math.isfinite(prob.energy(w0)):
                break
            w0 = 0.5 * w0
        starts.append(w0)
    runs: list[RunResult] = []
    aborted = []
    for k, w0 in enumerate(starts):
        if not math.isfinite(prob.energy(w0)):
            aborted.append({"restart": k, "reason": "infeasible start"})
            continue
        res = _descend(prob, w0, max_iters, tol, floor)
        if res.aborted:
            aborted.append({"restart": k, "reason": res.aborted})
            log.warning("restart %d aborted: %s", k, res.aborted)
            continue
        runs.append((k, res))
    if not runs:
        raise DivergenceError(f"every run diverged at ξ = {xi.tolist()}: {aborted}")
    best_k, best = min(runs, key=lambda kr: (kr[1].value, kr[0]))
    best_field = PeriodicField(best.field)
    diagnostics = {
        "afree_residual": afree_residual(op, best_field),
        "mean_abs": float(np.max(np.abs(best_field.mean()))),
        "aborted": aborted,
        "final_values": [r.value for _, r in runs],
    }
    ub = None
    if laminate_depth > 0:
        ub = laminate_upper_bound(op, g, xi, depth=laminate_depth).value
    return EnvelopeReport(
        xi=xi.tolist(),
        qca_value=best.value,
        convex_lb=lb,
        laminate_ub=ub,
        restarts=restarts,
        grid_dims=list(dims),
        converged=best.grad_norm <= tol,
        minimizer_norm=_l2(best.field),
        tol=tol,
        g_at_xi=g_xi,
        best_restart=best_k,
        iterations=best.iterations,
        diagnostics=diagnostics,
        minimizer=best.field if keep_minimizer else None,
    )


def _grid_dims(op: OperatorSpec, grid) -> tuple[int, ...]:
    if grid is None:
        grid = {1: 256, 2: 64, 3: 16}.get(op.N, 8)
    dims = _per_axis(grid, op.N)
    if min(dims) < 2:
        raise InputError("grid needs at least 2 points per axis")
    return dims


# ------------------------------------------------------------ ξ sweeps


def _qca_task(args) -> EnvelopeReport:
    op, g, xi, params = args
    return quasiconvexify(op, g, xi, **params)


def sweep(op: OperatorSpec, g: Integrand, xis: np.ndarray, **params) -> list[EnvelopeReport]:
    """``quasiconvexify`` over many base points; results in input order."""
    tasks = [(op, g, xi, params) for xi in np.asarray(xis, dtype=float)]
    workers = min(thread_cap(), len(tasks))
    if workers <= 1:
        return [_qca_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_qca_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass
class IdempotenceReport:
    xi_points: np.ndarray
    first: np.ndarray
    second: np.ndarray
    table: TabulatedFunction
    enlarged: bool

    @property
    def max_increase(self) -> float:
        return float(np.max(self.second - self.first))

    @property
    def max_decrease(self) -> float:
        return float(np.max(self.first - self.second))

    @property
    def max_violation(self) -> float:
        return max(self.max_increase, self.max_decrease)

    def to_dict(self) -> dict[str, Any]:
        return {
            "points": len(self.first),
            "maxSecondMinusFirst": self.max_increase,
            "maxFirstMinusSecond": self.max_decrease,
            "maxViolation": self.max_violation,
            "enlarged": self.enlarged,
            "rows": [
                {"xi": x.tolist(), "first": float(a), "second": float(b)}
                for x, a, b in zip(self.xi_points, self.first, self.second)
            ],
        }


def _near_boundary(table: TabulatedFunction, xi: np.ndarray, w: np.ndarray | None) -> bool:
    if w is None:
        return False
    pts = xi.reshape(-1, *([1] * (w.ndim - 1))) + w
    h = table.h.reshape(-1, *([1] * (w.ndim - 1)))
    lo = table.lo.reshape(h.shape)
    hi = table.hi.reshape(h.shape)
    return bool(np.any((pts < lo + h) | (pts > hi - h)))


def idempotence_check(
    op: OperatorSpec, g: Integrand, lo, hi, pts, violation_tol: float = 2e-2, **params
) -> IdempotenceReport:
    """Two-pass check of ``Q(Q g) = Q g`` on a ξ grid.

    The first pass tabulates ``ξ -> Q g(ξ)``; the second quasiconvexifies the
    multilinear interpolant of that table at the same nodes. If a second-pass
    minimizer presses against the table edge while undercutting the first
    pass by more than ``violation_tol``, the table is enlarged once by a quarter of its
    width on every side; a repeat raises :class:`DomainError`.
    """
    n = op.n
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    p = _per_axis(pts, n)
    mesh = grid_mesh(lo, hi, p)
    xis = mesh.reshape(n, -1).T
    enlarged = False
    tlo, thi, tp = lo, hi, p
    first_map: dict[tuple, float] = {}
    while True:
        tmesh = grid_mesh(tlo, thi, tp)
        txis = tmesh.reshape(n, -1).T
        todo = [x for x in txis if tuple(np.round(x, 12)) not in first_map]
        for x, rep in zip(todo, sweep(op, g, np.array(todo), **params) if todo else []):
            first_map[tuple(np.round(x, 12))] = rep.qca_value
        values = np.array([first_map[tuple(np.round(x, 12))] for x in txis]).reshape(tp)
        table = TabulatedFunction(values, tlo, thi, label=f"Q[{g}]")
        second_reports = sweep(op, table, xis, keep_minimizer=True, **params)
        first = np.array([first_map[tuple(np.round(x, 12))] for x in xis])
        second = np.array([r.qca_value for r in second_reports])
        escaping = [
            i
            for i, r in enumerate(second_reports)
            if first[i] - second[i] > violation_tol and _near_boundary(table, xis[i], r.minimizer)
        ]
        if not escaping:
            return IdempotenceReport(xis, first, second, table, enlarged)
        if enlarged:
            raise DomainError(f"second-pass minimizers leave the enlarged table at ξ = {xis[escaping[0]].tolist()}")
        h = (thi - tlo) / (np.array(tp) - 1)
        pad = np.maximum(1, (np.array(tp) - 1) // 4)
        tlo, thi = tlo - pad * h, thi + pad * h
        tp = tuple(int(q) for q in np.array(tp) + 2 * pad)
        enlarged = True
        log.info("enlarging idempotence table to [%s, %s] with %s points", tlo, thi, tp)


# ------------------------------------------------------- Λ directions


def cone_directions(op: OperatorSpec, dir_samples: int = 16) -> np.ndarray:
    """Unit vectors of Λ from ``dir_samples`` sphere directions, deduplicated up to sign."""
    cone = sample_characteristic_cone(op, samples=dir_samples)
    cand = []
    for _, basis in cone.directions:
        cand.extend(basis)
        for i in range(len(basis)):
            for j in range(i + 1, len(basis)):
                cand.append((basis[i] + basis[j]) / math.sqrt(2.0))
                cand.append((basis[i] - basis[j]) / math.sqrt(2.0))
    out: list[np.ndarray] = []
    for u in cand:
        u = np.asarray(u, dtype=float)
        u = u / np.linalg.norm(u)
        k = int(np.flatnonzero(np.abs(u) > 1e-12)[0])
        if u[k] < 0:
            u = -u
        if all(abs(float(u @ v)) < 1.0 - 1e-9 for v in out):
            out.append(u)
    return np.array(out).reshape(-1, op.n)


# ------------------------------------------------------- laminates


@dataclass
class LaminateReport:
    xi: list[float]
    value: float
    per_depth: list[float]
    clamped: bool
    directions: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "xi": self.xi,
            "laminateUB": self.value,
            "perDepth": self.per_depth,
            "clamped": self.clamped,
            "directions": self.directions,
        }


_LAMINATE_PTS = {1: 257, 2: 65, 3: 17}


def laminate_upper_bound(
    op: OperatorSpec,
    F: Integrand,
    xi,
    depth: int = 3,
    dir_samples: int = 16,
    box=None,
    pts=None,
    thetas=THETAS,
    steps=STEPS,
) -> LaminateReport:
    """Λ-convexification of ``F`` evaluated at ``ξ``.

    Rounds ``1 .. depth-1`` are carried out on a table of ``F`` (splits leaving
    the table are skipped and flagged as ``clamped``); the last round is
    evaluated at ``ξ`` itself using ``min(F, table)``, with ``F`` exact outside
    the table. Depth 0 returns ``F(ξ)``.
    """
    if depth < 0:
        raise InputError("depth must be >= 0")
    xi = np.asarray(xi, dtype=float).reshape(-1)
    n = op.n
    dirs = cone_directions(op, dir_samples)
    if box is None:
        lo, hi = np.minimum(-3.0, xi - 1.0), np.maximum(3.0, xi + 1.0)
    else:
        lo = np.broadcast_to(np.asarray(box[0], dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(box[1], dtype=float), (n,)).copy()
    p = _per_axis(pts if pts is not None else _LAMINATE_PTS.get(n, 9), n)
    tables = [TabulatedFunction.from_function(F, lo, hi, p)]
    skipped = 0
    for _ in range(1, depth):
        prev = tables[-1]
        nxt, sk = kernels.laminate_round(prev.table, prev.lo, prev.h, dirs, np.asarray(thetas), np.asarray(steps))
        skipped += sk
        tables.append(TabulatedFunction(nxt, lo, hi))
    f_xi = float(F.value(xi.reshape(-1, 1))[0])
    per_depth = [f_xi]
    for k in range(1, depth + 1):
        per_depth.append(min(per_depth[-1], _split_value(F, tables[k - 1], xi, dirs, thetas, steps)))
    return LaminateReport(xi.tolist(), per_depth[-1], per_depth, skipped > 0, len(dirs))


def _split_value(F: Integrand, table: TabulatedFunction, xi, dirs, thetas, steps) -> float:
    th, t = np.meshgrid(np.asarray(thetas), np.asarray(steps), indexing="ij")
    th, t = th.ravel(), t.ravel()
    best = math.inf
    for u in dirs:
        a = xi[:, None] + ((1.0 - th) * t)[None, :] * u[:, None]
        b = xi[:, None] - (th * t)[None, :] * u[:, None]
        fa = np.minimum(F.value(a), table.value(a))
        fb = np.minimum(F.value(b), table.value(b))
        cand = th * fa + (1.0 - th) * fb
        best = min(best, float(np.min(cand)))
    return best


# ------------------------------------------------ Λ-convexity check


def lambda_convexity_check(
    op: OperatorSpec, g: Integrand, box, pts, dir_samples: int = 16, steps=STEPS
) -> dict[str, Any]:
    """Largest midpoint-convexity violation of ``g`` along Λ on a ξ grid.

    Pairs whose endpoints are not finite (e.g. outside a table) are skipped.
    """
    n = op.n
    lo = np.broadcast_to(np.asarray(box[0], dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(box[1], dtype=float), (n,)).copy()
    xis = grid_mesh(lo, hi, _per_axis(pts, n)).reshape(n, -1)
    g0 = g.value(xis)
    dirs = cone_directions(op, dir_samples)
    worst, where = 0.0, None
    for u in dirs:
        for t in np.asarray(steps):
            plus = g.value(xis + t * u[:, None])
            minus = g.value(xis - t * u[:, None])
            with np.errstate(invalid="ignore"):
                viol = g0 - 0.5 * (plus + minus)
            viol = np.where(np.isfinite(viol), viol, -np.inf)
            i = int(np.argmax(viol))
            if viol[i] > worst:
                worst, where = float(viol[i]), {"xi": xis[:, i].tolist(), "u": u.tolist(), "t": float(t)}
    return {"max_violation": worst, "witness": where, "directions": len(dirs)}


# ------------------------------------------------ remark relaxation


def remark_relaxation_demo(v, interval=(0.0, 1.0)) -> tuple[float, float, float]:
    """Both branch integrals of the two-well example and their minimum.

    ``v`` holds samples of ``(v1, v2)`` at equispaced points covering the
    closed interval (at least two rows); integrals use the trapezoid rule.
    """
    from scipy.integrate import trapezoid

    v = np.atleast_2d(np.asarray(v, dtype=float))
    if v.shape[1] != 2 or v.shape[0] < 2:
        raise InputError("need at least two samples of (v1, v2)")
    a, b = float(interval[0]), float(interval[1])
    if not b > a:
        raise InputError("interval must satisfy a < b")
    x = np.linspace(a, b, v.shape[0])
    lhs = float(trapezoid((v[:, 0] - 1.0) ** 2 + v[:, 1] ** 2, x))
    rhs = float(trapezoid((v[:, 0] + 1.0) ** 2 + v[:, 1] ** 2, x))
    return lhs, rhs, min(lhs, rhs)
