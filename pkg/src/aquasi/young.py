"""𝒜-free oscillating sequences and the homogeneous Young measures they generate.

A profile is either a layered two-atom construction along a direction ``w``
with ``y - z ∈ ker 𝔸(w)``, a single sine mode ``a sin(2π<q,x>)`` with
``a ∈ ker 𝔸(q)``, or an arbitrary periodic field. ``oscillate`` evaluates the
rescaled profile ``x -> w(jx)`` on the lattice; the empirical distribution of
its values approximates the generated Young measure, which does not depend on
``j``.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import scipy.optimize
import scipy.stats

from ._io import atomic_write_text
from .errors import DomainError, InputError
from .operators import OperatorSpec, assemble_symbol
from .torus import (
    PeriodicField,
    afree_residual,
    apply_operator_spectral,
    lattice,
    neg_sobolev_norm,
    project_afree,
)

KERNEL_TOL = 1e-9
DEFAULT_MAX_ATOMS = 256


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True, eq=False)
class OscillationProfile:
    """Periodic profile to be oscillated.

    ``kind`` is ``"two-atom"`` (uses ``y``, ``z``, ``theta``, ``direction``),
    ``"sine"`` (uses ``amplitude``, ``direction``) or ``"field"`` (uses
    ``field``). ``name`` is carried into measure provenance.
    """

    kind: str
    direction: np.ndarray | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    theta: float = 0.5
    amplitude: np.ndarray | None = None
    field: PeriodicField | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("two-atom", "sine", "field"):
            raise InputError(f"unknown profile kind {self.kind!r}")
        if self.kind == "field":
            if self.field is None:
                raise InputError("field profiles need a PeriodicField")
            return
        if self.direction is None:
            raise InputError(f"{self.kind} profiles need a direction")
        w = np.asarray(self.direction, dtype=float).reshape(-1)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            raise InputError("direction must be nonzero")
        object.__setattr__(self, "direction", w / nw)
        if self.kind == "two-atom":
            if self.y is None or self.z is None:
                raise InputError("two-atom profiles need y and z")
            y = np.asarray(self.y, dtype=float).reshape(-1)
            z = np.asarray(self.z, dtype=float).reshape(-1)
            if y.shape != z.shape:
                raise InputError("y and z must have the same length")
            if not 0.0 < float(self.theta) < 1.0:
                raise InputError(f"theta must lie in (0, 1), got {self.theta}")
            object.__setattr__(self, "y", y)
            object.__setattr__(self, "z", z)
            object.__setattr__(self, "theta", float(self.theta))
        else:
            if self.amplitude is None:
                raise InputError("sine profiles need an amplitude vector")
            object.__setattr__(self, "amplitude", np.asarray(self.amplitude, dtype=float).reshape(-1))

    @property
    def n(self) -> int:
        if self.kind == "field":
            return self.field.n
        return len(self.y) if self.kind == "two-atom" else len(self.amplitude)

    @property
    def jump(self) -> np.ndarray:
        """Vector that must lie in ``ker 𝔸(w)``."""
        return self.y - self.z if self.kind == "two-atom" else self.amplitude

    def check(self, op: OperatorSpec, direction=None) -> float:
        """Kernel-membership residual ``|𝔸(w)(y - z)|``; raises above 1e-9."""
        if self.kind == "field":
            return 0.0
        if self.n != op.n or len(self.direction) != op.N:
            raise InputError(f"profile (N={len(self.direction)}, n={self.n}) does not match operator (N={op.N}, n={op.n})")
        w = self.direction if direction is None else direction
        res = float(np.linalg.norm(assemble_symbol(op, w) @ self.jump))
        scale = max(1.0, float(np.linalg.norm(self.jump)))
        if res > KERNEL_TOL * scale:
            raise InputError(f"profile jump {self.jump.tolist()} is not in ker A(w) for w = {np.asarray(w).tolist()} (residual {res:.3g})")
        return res

    def describe(self) -> str:
        if self.name:
            return self.name
        if self.kind == "two-atom":
            return f"two-atom y={self.y.tolist()} z={self.z.tolist()} theta={self.theta} w={self.direction.tolist()}"
        if self.kind == "sine":
            return f"sine a={self.amplitude.tolist()} w={self.direction.tolist()}"
        return "field"


def two_atom(y, z, theta, w, name: str = "") -> OscillationProfile:
    return OscillationProfile("two-atom", direction=w, y=y, z=z, theta=theta, name=name)


def sine_profile(amplitude, w, name: str = "") -> OscillationProfile:
    return OscillationProfile("sine", direction=w, amplitude=amplitude, name=name)


def shipped_profiles() -> dict[str, OscillationProfile]:
    """Profiles shipped for ``curl2`` (gradient fields in the plane)."""
    s = 1.0 / math.sqrt(2.0)
    return {
        "pm-e1": two_atom([1.0, 0.0], [-1.0, 0.0], 0.5, [1.0, 0.0], name="pm-e1"),
        "pm-e1-quarter": two_atom([1.0, 0.0], [-1.0, 0.0], 0.25, [1.0, 0.0], name="pm-e1-quarter"),
        "diag": two_atom([s, s], [-s, -s], 0.5, [1.0, 1.0], name="diag"),
        "sine": sine_profile([1.0, 0.0], [1.0, 0.0], name="sine"),
    }


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise InputError(f"cannot parse vector {text!r}") from exc


def parse_profile(spec: str) -> OscillationProfile:
    """Parse ``two-atom:y=..;z=..;theta=..;w=..``, ``sine:a=..;w=..`` or a shipped name."""
    spec = spec.strip()
    shipped = shipped_profiles()
    if spec in shipped:
        return shipped[spec]
    kind, _, rest = spec.partition(":")
    fields: dict[str, str] = {}
    for part in filter(None, (p.strip() for p in rest.split(";"))):
        key, eq, val = part.partition("=")
        if not eq:
            raise InputError(f"profile field {part!r} is not key=value")
        fields[key.strip()] = val.strip()
    try:
        if kind == "two-atom":
            theta = float(fields.get("theta", "0.5"))
            return two_atom(_vector(fields["y"]), _vector(fields["z"]), theta, _vector(fields["w"]))
        if kind == "sine":
            return sine_profile(_vector(fields["a"]), _vector(fields["w"]))
    except KeyError as exc:
        raise InputError(f"profile {spec!r} is missing field {exc.args[0]!r}") from exc
    raise InputError(f"unknown profile {spec!r}; use two-atom:..., sine:... or one of {sorted(shipped)}")


# ----------------------------------------------------------- oscillation


def rational_direction(w, budget: int) -> np.ndarray:
    """Integer vector ``q`` with ``|q|_∞ <= budget`` whose direction is closest to ``w``.

    Ties go to the smallest ``|q|_∞``. Exhaustive for ``N <= 3``; larger ``N``
    scales and rounds.
    """
    w = np.asarray(w, dtype=float)
    w = w / np.linalg.norm(w)
    N = len(w)
    if budget < 1:
        raise InputError("frequency budget must be >= 1")
    if N > 3:
        best, best_cos = None, -2.0
        for m in range(1, budget + 1):
            q = np.round(w * m / np.max(np.abs(w)))
            if not q.any():
                continue
            c = float(q @ w / np.linalg.norm(q))
            if c > best_cos + 1e-15:
                best, best_cos = q, c
        return best.astype(int)
    rng = np.arange(-budget, budget + 1)
    grid = np.array(list(itertools.product(rng, repeat=N)), dtype=float)
    grid = grid[np.any(grid != 0, axis=1)]
    cos = grid @ w / np.linalg.norm(grid, axis=1)
    linf = np.max(np.abs(grid), axis=1)
    best = cos.max()
    cand = np.flatnonzero(cos >= best - 1e-15)
    return grid[cand[np.argmin(linf[cand])]].astype(int)


@dataclass(frozen=True)
class Oscillation:
    field: PeriodicField
    j: int
    q: list[int]
    rounding_error: float
    cleanup_change: float


def oscillate(op: OperatorSpec, profile: OscillationProfile, j: int, grid) -> Oscillation:
    """Sample ``x -> w(jx)`` on the lattice and apply one cleanup projection.

    Two-atom profiles take the value ``y`` where ``frac(j<q,x>) < θ`` and
    ``z`` elsewhere, with ``q`` the rational rounding of the direction, so the
    layering is exactly periodic on the lattice.
    """
    if int(j) != j or j < 1:
        raise InputError(f"scale j must be a positive integer, got {j}")
    j = int(j)
    dims = tuple(int(g) for g in (grid if np.ndim(grid) else (grid,) * op.N))
    if len(dims) != op.N:
        raise InputError(f"grid needs {op.N} sizes")
    x = lattice(dims)
    if profile.kind == "field":
        f = profile.field
        if f.dims != dims or f.n != op.n:
            raise InputError("field profile must live on the requested grid and match n")
        idx = np.meshgrid(*[(j * np.arange(g)) % g for g in dims], indexing="ij")
        raw = f.values[(slice(None),) + tuple(idx)]
        q, rounding = [], 0.0
    else:
        profile.check(op)
        qv = rational_direction(profile.direction, max(1, min(dims) // 4))
        qhat = qv / np.linalg.norm(qv)
        rounding = float(np.linalg.norm(qhat - profile.direction))
        try:
            profile.check(op, qhat)
        except InputError as exc:
            raise DomainError(
                f"direction {profile.direction.tolist()} rounds to q = {qv.tolist()} "
                f"(error {rounding:.3g}), which breaks kernel membership; use a larger grid"
            ) from exc
        phase = j * np.tensordot(qv.astype(float), x, axes=(0, 0))
        phase = phase - np.floor(phase + 1e-12)
        phase = np.where(phase < 0.0, 0.0, phase)
        if profile.kind == "two-atom":
            lower = phase < profile.theta - 1e-12
            shape = (-1,) + (1,) * op.N
            raw = np.where(lower[None], profile.y.reshape(shape), profile.z.reshape(shape))
        else:
            raw = profile.amplitude.reshape((-1,) + (1,) * op.N) * np.sin(2.0 * np.pi * phase)[None]
        q = qv.tolist()
    raw = np.broadcast_to(raw, (op.n,) + dims)
    cleaned = project_afree(op, PeriodicField(raw))
    change = float(np.sqrt(np.mean(np.sum((cleaned.values - raw) ** 2, axis=0))))
    return Oscillation(cleaned, j, q, rounding, change)


# ------------------------------------------------------------- measures


@dataclass(frozen=True, eq=False)
class EmpiricalYoungMeasure:
    atoms: np.ndarray  # (K, n)
    weights: np.ndarray  # (K,)
    mean: np.ndarray
    p_moment: float
    provenance: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(atoms):
            raise InputError("one weight per atom required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    def integrate(self, g) -> float:
        """``<μ, g>`` for a vectorized integrand taking ``(n, K)`` arrays."""
        return float(np.dot(self.weights, g.value(self.atoms.T)))

    def atom_mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def to_dict(self) -> dict[str, Any]:
        return {
            "atoms": [list(map(float, a)) + [float(w)] for a, w in zip(self.atoms, self.weights)],
            "mean": self.mean.tolist(),
            "pMoment": self.p_moment,
            "provenance": self.provenance,
            "meta": self.meta,
        }

    def histogram_csv(self, bins: int = 64) -> str:
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["component", "bin_lo", "bin_hi", "weight"])
        for c in range(self.n):
            vals = self.atoms[:, c]
            lo, hi = float(vals.min()), float(vals.max())
            if hi <= lo:
                lo, hi = lo - 0.5, hi + 0.5
            hist, edges = np.histogram(vals, bins=bins, range=(lo, hi), weights=self.weights)
            for k in range(bins):
                writer.writerow([c + 1, repr(float(edges[k])), repr(float(edges[k + 1])), repr(float(hist[k]))])
        return out.getvalue()

    def write_histogram_csv(self, path, bins: int = 64) -> None:
        atomic_write_text(path, self.histogram_csv(bins))


def _cluster(points: np.ndarray, weights: np.ndarray, max_atoms: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Merge points into at most ``max_atoms`` weighted centroids.

    Exact duplicates (to 1e-12) merge first. If more remain, points are snapped
    to a cubic grid whose cell size starts at ``extent / max_atoms^(1/n)`` and
    doubles until few enough cells are occupied; each occupied cell becomes its
    weighted centroid. Returns atoms, weights and the final merge radius.
    """
    def merge(keys):
        _, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        k = inv.max() + 1
        w = np.bincount(inv, weights=weights, minlength=k)
        c = np.stack([np.bincount(inv, weights=weights * points[:, i], minlength=k) for i in range(points.shape[1])], axis=1)
        return c / w[:, None], w, inv

    keys = np.round(points / 1e-12).astype(np.int64) if np.abs(points).max(initial=0) < 1e6 else points
    _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    if len(first) <= max_atoms:
        # duplicates agree to 1e-12; keep a sample rather than a rounded centroid
        return points[first], np.bincount(inv.reshape(-1), weights=weights, minlength=len(first)), 0.0
    extent = float(np.max(points.max(axis=0) - points.min(axis=0)))
    radius = extent / max_atoms ** (1.0 / points.shape[1])
    lo = points.min(axis=0)
    while True:
        atoms, w, _ = merge(np.floor((points - lo) / radius).astype(np.int64))
        if len(atoms) <= max_atoms:
            return atoms, w, radius
        radius *= 2.0


def empirical_measure(f: PeriodicField | Oscillation, max_atoms: int = DEFAULT_MAX_ATOMS, provenance: str = "") -> EmpiricalYoungMeasure:
    """Uniform distribution of lattice values, clustered to at most ``max_atoms``.

    Mean and second moment come from the raw samples, before clustering.
    """
    meta: dict[str, Any] = {}
    if isinstance(f, Oscillation):
        meta = {"j": f.j, "q": f.q, "roundingError": f.rounding_error, "cleanupChange": f.cleanup_change}
        f = f.field
    pts = f.values.reshape(f.n, -1).T
    weights = np.full(len(pts), 1.0 / len(pts))
    mean = pts.mean(axis=0)
    p2 = float(np.mean(np.sum(pts * pts, axis=1)))
    atoms, w, radius = _cluster(pts, weights, max_atoms)
    w = w / w.sum()
    meta["mergeRadius"] = radius
    meta["samples"] = len(pts)
    return EmpiricalYoungMeasure(atoms, w, mean, p2, provenance, meta)


def translate_measure(m: EmpiricalYoungMeasure, a) -> EmpiricalYoungMeasure:
    a = np.asarray(a, dtype=float).reshape(-1)
    if len(a) != m.n:
        raise InputError(f"shift has {len(a)} components, measure has n={m.n}")
    # second moment of the shifted measure from the raw moments: |x+a|^2 = |x|^2 + 2<x,a> + |a|^2
    p2 = m.p_moment + 2.0 * float(m.mean @ a) + float(a @ a)
    return EmpiricalYoungMeasure(
        m.atoms + a, m.weights.copy(), m.mean + a, p2, f"{m.provenance} translated by {a.tolist()}".strip(), dict(m.meta)
    )


def jensen_gap(m: EmpiricalYoungMeasure, g) -> float:
    """``<μ, g> - g(mean μ)``; negative values certify failure of Jensen's inequality."""
    if g.n != m.n:
        raise InputError(f"integrand dimension {g.n} differs from measure dimension {m.n}")
    return m.integrate(g) - float(g.value(m.mean.reshape(-1, 1))[0])


def jensen_certificate(m: EmpiricalYoungMeasure, g) -> dict[str, Any]:
    gap = jensen_gap(m, g)
    return {
        "gap": gap,
        "counterexample": gap < 0.0,
        "integral": m.integrate(g),
        "valueAtMean": float(g.value(m.mean.reshape(-1, 1))[0]),
        "integrand": str(g),
        "measure": m.to_dict(),
    }


def wasserstein1(a: EmpiricalYoungMeasure, b: EmpiricalYoungMeasure) -> float:
    """Wasserstein-1 distance with Euclidean ground cost.

    One-dimensional measures use the CDF formula; otherwise the transport
    linear program is solved with HiGHS.
    """
    if a.n != b.n:
        raise InputError("measures live in different dimensions")
    if a.n == 1:
        return float(scipy.stats.wasserstein_distance(a.atoms[:, 0], b.atoms[:, 0], a.weights, b.weights))
    cost = np.linalg.norm(a.atoms[:, None, :] - b.atoms[None, :, :], axis=2)
    ka, kb = cost.shape
    rows = np.kron(np.eye(ka), np.ones((1, kb)))
    cols = np.kron(np.ones((1, ka)), np.eye(kb))
    A_eq = np.vstack([rows, cols[:-1]])  # one marginal constraint is redundant
    b_eq = np.concatenate([a.weights, b.weights[:-1]])
    res = scipy.optimize.linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise DomainError(f"transport problem failed: {res.message}")
    return float(max(res.fun, 0.0))


def arcsine_cdf(t) -> np.ndarray:
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    return 0.5 + np.arcsin(t) / np.pi


def ks_distance(m: EmpiricalYoungMeasure, cdf, component: int = 0) -> float:
    """Kolmogorov-Smirnov distance between one marginal of ``m`` and ``cdf``."""
    vals = m.atoms[:, component]
    order = np.argsort(vals, kind="stable")
    v, w = vals[order], m.weights[order]
    uniq, start = np.unique(v, return_index=True)
    upper = np.add.reduceat(w, start).cumsum()
    lower = upper - np.add.reduceat(w, start)
    F = cdf(uniq)
    return float(max(np.max(np.abs(upper - F)), np.max(np.abs(lower - F))))


def ks_arcsine(m: EmpiricalYoungMeasure, component: int = 0, amplitude: float = 1.0) -> float:
    return ks_distance(m, lambda t: arcsine_cdf(t / amplitude), component)


# ------------------------------------------------------------ diagnostics


@dataclass(frozen=True)
class ScaleDiagnostics:
    j: int
    weak_mean_drift: float
    neg_sobolev_of_A: float
    neg_sobolev_oscillation: float
    p_moment: float
    afree_residual: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "j": self.j,
            "weakMeanDrift": self.weak_mean_drift,
            "negSobolevOfA": self.neg_sobolev_of_A,
            "negSobolevOscillation": self.neg_sobolev_oscillation,
            "pMoment": self.p_moment,
            "afreeResidual": self.afree_residual,
        }


def weak_mean_drift(f: PeriodicField, cells: int = 4) -> float:
    """Max over a ``cells^N`` partition of ``|cell mean - global mean|``."""
    if any(g % cells for g in f.dims):
        raise InputError(f"grid {f.dims} is not divisible into {cells} cells per axis")
    shape = [f.n]
    for g in f.dims:
        shape += [cells, g // cells]
    blocks = f.values.reshape(shape)
    means = blocks.mean(axis=tuple(range(2, 2 * f.N + 1, 2)))
    dev = means - f.mean().reshape((f.n,) + (1,) * f.N)
    return float(np.max(np.sqrt(np.sum(dev**2, axis=0))))


def sequence_diagnostics(op: OperatorSpec, profile: OscillationProfile, j_list: Sequence[int], grid) -> list[ScaleDiagnostics]:
    js = [int(j) for j in j_list]
    if any(b <= a for a, b in zip(js, js[1:])):
        raise InputError("j values must be strictly increasing")
    out = []
    for j in js:
        osc = oscillate(op, profile, j, grid)
        f = osc.field
        u = f.shifted(-f.mean())
        out.append(
            ScaleDiagnostics(
                j=j,
                weak_mean_drift=weak_mean_drift(f),
                neg_sobolev_of_A=neg_sobolev_norm(apply_operator_spectral(op, f)),
                neg_sobolev_oscillation=neg_sobolev_norm(u),
                p_moment=float(np.mean(np.sum(f.values**2, axis=0))),
                afree_residual=afree_residual(op, f),
            )
        )
    return out


def loglog_slope(js: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(values)`` against ``log(js)``."""
    return float(np.polyfit(np.log(js), np.log(values), 1)[0])
