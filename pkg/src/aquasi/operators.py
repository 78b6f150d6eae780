"""First-order constant-coefficient operators and their symbols.

An operator ``A v = sum_i A^i dv/dx_i`` acting on ``v: R^N -> R^n`` with values
in ``R^d`` is stored as its ``N`` coefficient matrices of shape ``(d, n)``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InputError, NonConstantRankError

DEFAULT_RANK_TOL = 1e-9
DEFAULT_SEED = 0x5EED


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    name: str
    N: int
    n: int
    d: int
    matrices: np.ndarray  # shape (N, d, n)

    def __post_init__(self):
        if self.N < 1 or self.n < 1 or self.d < 1:
            raise InputError(f"operator dimensions must be positive, got N={self.N}, n={self.n}, d={self.d}")
        mats = np.asarray(self.matrices, dtype=float)
        if mats.shape != (self.N, self.d, self.n):
            raise InputError(
                f"operator '{self.name}' expects {self.N} matrices of shape {self.d}x{self.n}, "
                f"got array of shape {mats.shape}"
            )
        if not np.all(np.isfinite(mats)):
            raise InputError(f"operator '{self.name}' has non-finite coefficients")
        mats = mats.copy()
        mats.setflags(write=False)
        object.__setattr__(self, "matrices", mats)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OperatorSpec":
        try:
            name = str(data["name"])
            N, n, d = int(data["N"]), int(data["n"]), int(data["d"])
            raw = data["matrices"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed operator spec: {exc}") from exc
        if not isinstance(raw, list) or len(raw) != N:
            raise InputError(f"operator spec needs exactly N={N} matrices")
        try:
            mats = np.array(raw, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InputError(f"operator matrices are not rectangular numeric arrays: {exc}") from exc
        return cls(name=name, N=N, n=n, d=d, matrices=mats)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "N": self.N,
            "n": self.n,
            "d": self.d,
            "matrices": self.matrices.tolist(),
        }


def _preset_table() -> dict[str, OperatorSpec]:
    div2 = OperatorSpec("div2", 2, 2, 1, [[[1.0, 0.0]], [[0.0, 1.0]]])
    curl2 = OperatorSpec("curl2", 2, 2, 1, [[[0.0, 1.0]], [[-1.0, 0.0]]])
    line1d = OperatorSpec("line1d", 1, 2, 1, [[[0.0, 1.0]]])
    diag = OperatorSpec("diag", 2, 2, 2, [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    return {
        "div2": div2,
        "curl2": curl2,
        "grad-scalar-2d": curl2,
        "line1d": line1d,
        "diag": diag,
    }


PRESETS = _preset_table()


def preset(name: str) -> OperatorSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise InputError(f"unknown operator preset '{name}' (known: {', '.join(sorted(PRESETS))})") from None


def load_operator(source: str) -> OperatorSpec:
    """Resolve ``preset:NAME``, a bare preset name, or a path to a JSON spec."""
    if source.startswith("preset:"):
        return preset(source.split(":", 1)[1])
    if source in PRESETS and not os.path.exists(source):
        return PRESETS[source]
    try:
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"operator spec file not found: {source}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"operator spec {source} is not valid JSON: {exc}") from exc
    return OperatorSpec.from_dict(data)


def assemble_symbol(op: OperatorSpec, w) -> np.ndarray:
    """Return ``sum_i w_i A^i`` (no normalization of ``w``).

    ``w`` may also be a stack of shape ``(K, N)``; the result then has shape
    ``(K, d, n)``.
    """
    w = np.asarray(w, dtype=float)
    if w.shape[-1:] != (op.N,):
        raise InputError(f"direction has {w.shape[-1] if w.ndim else 0} components, operator expects N={op.N}")
    return np.tensordot(w, op.matrices, axes=([-1], [0]))


def sphere_samples(N: int, samples: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Deterministic quasi-uniform points on ``S^{N-1}``, shape ``(samples, N)``.

    N=1 gives the two poles, N=2 an equiangular lattice starting at ``e_1``,
    N=3 a Fibonacci lattice, N=4 a Gaussianized Halton sequence, and N>4 a
    fixed-seed normalized Gaussian sample.
    """
    if samples < 1:
        raise InputError("need at least one sphere sample")
    if N == 1:
        return np.array([[1.0], [-1.0]])[: min(samples, 2)]
    if N == 2:
        t = 2.0 * np.pi * np.arange(samples) / samples
        return np.column_stack([np.cos(t), np.sin(t)])
    if N == 3:
        k = np.arange(samples) + 0.5
        z = 1.0 - 2.0 * k / samples
        phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(samples)
        rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    if N == 4:
        from scipy.stats import norm, qmc

        u = qmc.Halton(d=4, scramble=False).random(samples + 1)[1:]
        g = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    else:
        g = np.random.default_rng(seed).standard_normal((samples, N))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class RankCertificate:
    rank: int
    samples: int
    tolerance: float
    constant: bool
    witnesses: list[list[float]] = field(default_factory=list)
    witness_ranks: list[int] = field(default_factory=list)
    rank_counts: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rank": self.rank,
            "samples": self.samples,
            "tolerance": self.tolerance,
            "constant": self.constant,
            "witnesses": self.witnesses,
            "witness_ranks": self.witness_ranks,
            "rank_counts": {str(k): v for k, v in sorted(self.rank_counts.items())},
        }


def _singular_values(op: OperatorSpec, dirs: np.ndarray) -> np.ndarray:
    return np.linalg.svd(assemble_symbol(op, dirs), compute_uv=False)


def _pick(mask: np.ndarray, score: np.ndarray, largest: bool) -> int:
    idx = np.flatnonzero(mask)
    s = score[idx]
    best = s.max() if largest else s.min()
    close = np.abs(s - best) <= 1e-12 * max(1.0, abs(best))
    return int(idx[np.argmax(close)])


def verify_constant_rank(
    op: OperatorSpec, samples: int = 4096, tol: float = DEFAULT_RANK_TOL, seed: int = DEFAULT_SEED
) -> RankCertificate:
    """Sample rank 𝔸(w) over the unit sphere.

    A singular value counts toward the rank when it exceeds ``tol * sigma_max``
    with ``sigma_max`` taken over every sample. When the rank varies, the two
    witnesses are the lowest-rank direction with the smallest discarded
    singular value and the highest-rank direction with the largest retained
    one, so both are as unambiguous as the sample allows.
    """
    if samples < 1:
        raise InputError("samples must be >= 1")
    if not tol > 0:
        raise InputError("tol must be > 0")
    dirs = sphere_samples(op.N, samples, seed)
    sv = _singular_values(op, dirs)  # (K, min(d, n))
    smax = float(sv.max()) if sv.size else 0.0
    cutoff = tol * smax
    ranks = (sv > cutoff).sum(axis=1) if smax > 0 else np.zeros(len(dirs), dtype=int)
    counts = {int(r): int(c) for r, c in zip(*np.unique(ranks, return_counts=True))}
    lo, hi = int(ranks.min()), int(ranks.max())
    cert = RankCertificate(rank=hi, samples=len(dirs), tolerance=tol, constant=lo == hi, rank_counts=counts)
    if lo != hi:
        padded = np.concatenate([sv, np.zeros((len(sv), 1))], axis=1)
        dropped = padded[np.arange(len(sv)), ranks]  # first singular value counted as zero
        kept = sv[np.arange(len(sv)), np.maximum(ranks - 1, 0)]
        i_lo = _pick(ranks == lo, dropped, largest=False)
        i_hi = _pick(ranks == hi, kept, largest=True)
        cert.witnesses = [dirs[i_lo].tolist(), dirs[i_hi].tolist()]
        cert.witness_ranks = [lo, hi]
    return cert


def symbol_rank(op: OperatorSpec, w, tol: float = DEFAULT_RANK_TOL, scale: float | None = None) -> int:
    """Numerical rank of 𝔸(w) relative to ``scale`` (defaults to its own largest singular value)."""
    s = np.linalg.svd(assemble_symbol(op, w), compute_uv=False)
    ref = float(s.max()) if scale is None else scale
    if ref == 0.0:
        return 0
    return int((s > tol * ref).sum())


def require_constant_rank(op: OperatorSpec, samples: int = 1024, tol: float = DEFAULT_RANK_TOL) -> RankCertificate:
    cert = verify_constant_rank(op, samples=samples, tol=tol)
    if not cert.constant:
        raise NonConstantRankError(
            f"operator '{op.name}' is not of constant rank: ranks {cert.witness_ranks} at "
            f"directions {cert.witnesses}",
            certificate=cert,
        )
    return cert


@dataclass
class ConeSample:
    directions: list[tuple[np.ndarray, np.ndarray]]  # (w, kernel basis as rows)
    span_dimension: int
    spans_full_space: bool
    rank: int
    tolerance: float

    def kernel_vectors(self) -> np.ndarray:
        """All sampled kernel vectors stacked as rows."""
        rows = [basis for _, basis in self.directions if len(basis)]
        if not rows:
            return np.zeros((0, 0))
        return np.vstack(rows)

    def to_dict(self, max_directions: int | None = None) -> dict[str, Any]:
        dirs = self.directions if max_directions is None else self.directions[:max_directions]
        return {
            "span_dimension": self.span_dimension,
            "spans_full_space": self.spans_full_space,
            "rank": self.rank,
            "tolerance": self.tolerance,
            "sampled_directions": len(self.directions),
            "directions": [{"w": w.tolist(), "kernel": b.tolist()} for w, b in dirs],
        }


def sample_characteristic_cone(
    op: OperatorSpec, samples: int = 4096, tol: float = DEFAULT_RANK_TOL, seed: int = DEFAULT_SEED
) -> ConeSample:
    """Sample ``Λ = ∪_w ker 𝔸(w)`` and measure the dimension of its span."""
    cert = verify_constant_rank(op, samples=samples, tol=tol, seed=seed)
    if not cert.constant:
        raise NonConstantRankError(
            f"characteristic cone requires constant rank; certificate shows ranks {cert.witness_ranks}",
            certificate=cert,
        )
    r = cert.rank
    dirs = sphere_samples(op.N, samples, seed)
    _, _, vt = np.linalg.svd(assemble_symbol(op, dirs))
    kernels = vt[:, r:, :]  # (K, n - r, n)
    out = [(dirs[k].copy(), kernels[k].copy()) for k in range(len(dirs))]
    flat = kernels.reshape(-1, op.n)
    if flat.size == 0:
        span = 0
    else:
        ev = np.linalg.eigvalsh(flat.T @ flat)
        span = int((ev > tol * ev.max()).sum()) if ev.max() > 0 else 0
    return ConeSample(directions=out, span_dimension=span, spans_full_space=span == op.n, rank=r, tolerance=tol)
