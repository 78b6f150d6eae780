"""Periodic vector fields on the unit torus and Fourier multipliers acting on them.

Fields are sampled on the lattice ``x_k = (k_1/G_1, ..., k_N/G_N)`` and stored
component-major as an array of shape ``(n, G_1, ..., G_N)``. Fourier
coefficients use the torus normalization ``v(x) = sum_λ v̂(λ) exp(2πi x·λ)``,
so ``v̂(0)`` is the mean and Parseval reads ``mean|v|^2 = sum|v̂|^2``.

Modes at the Nyquist index of an even grid have no well-defined sign of
``λ``; the 𝒜-free projection and spectral differentiation both zero them so
that outputs stay real.
"""
from __future__ import annotations

import csv
import functools
import itertools
import logging
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft

from . import kernels
from ._accel import thread_cap
from .errors import InputError, NumericalError
from .operators import OperatorSpec, assemble_symbol, require_constant_rank

log = logging.getLogger(__name__)

MAX_SAMPLES = 1 << 31
AFLD_MAGIC = b"AFLD0001"
IMAG_RESIDUE_TOL = 1e-10


def _is_pow2(g: int) -> bool:
    return g >= 1 and (g & (g - 1)) == 0


@dataclass(frozen=True, eq=False)
class PeriodicField:
    values: np.ndarray  # (n, G_1, ..., G_N)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim < 2:
            raise InputError("field values need shape (n, G_1, ..., G_N)")
        if v.size > MAX_SAMPLES:
            raise InputError(f"field with {v.size} samples exceeds the supported size {MAX_SAMPLES}")
        if not np.all(np.isfinite(v)):
            raise InputError("field contains non-finite samples")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, n: int, dims) -> "PeriodicField":
        return cls(np.zeros((n, *dims)))

    @classmethod
    def from_function(cls, func: Callable, dims) -> "PeriodicField":
        """Sample ``func(x)`` where ``x`` has shape ``(N, G_1, ..., G_N)``."""
        return cls(np.asarray(func(lattice(dims)), dtype=float))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    @property
    def N(self) -> int:
        return self.values.ndim - 1

    @functools.cached_property
    def spectrum(self) -> np.ndarray:
        return scipy.fft.fftn(self.values, axes=_axes(self.N), norm="forward", workers=thread_cap())

    def mean(self) -> np.ndarray:
        return self.values.reshape(self.n, -1).mean(axis=1)

    def l2_norm(self) -> float:
        """Torus L^2 norm (lattice average of |v|^2, square-rooted)."""
        return float(np.sqrt(np.mean(np.sum(self.values**2, axis=0))))

    def inner(self, other: "PeriodicField") -> float:
        return float(np.mean(np.sum(self.values * other.values, axis=0)))

    def __add__(self, other: "PeriodicField") -> "PeriodicField":
        return PeriodicField(self.values + other.values)

    def __sub__(self, other: "PeriodicField") -> "PeriodicField":
        return PeriodicField(self.values - other.values)

    def shifted(self, c) -> "PeriodicField":
        c = np.asarray(c, dtype=float).reshape((self.n,) + (1,) * self.N)
        return PeriodicField(self.values + c)


def _axes(N: int) -> tuple[int, ...]:
    return tuple(range(1, N + 1))


def lattice(dims) -> np.ndarray:
    """Lattice coordinates, shape ``(N, G_1, ..., G_N)``."""
    axes = [np.arange(g) / g for g in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def frequencies(dims, half: bool = False) -> np.ndarray:
    """Integer frequency lattice, shape ``(N, ...)``; ``half`` matches ``rfftn`` output."""
    axes = [np.fft.fftfreq(g, 1.0 / g) for g in dims]
    if half:
        axes[-1] = np.fft.rfftfreq(dims[-1], 1.0 / dims[-1])
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def nyquist_mask(dims, half: bool = False) -> np.ndarray:
    """True where any frequency component sits at the Nyquist index of an even axis."""
    lam = frequencies(dims, half)
    mask = np.zeros(lam.shape[1:], dtype=bool)
    for i, g in enumerate(dims):
        if g % 2 == 0:
            mask |= np.abs(lam[i]) == g // 2
    return mask


def fft(field: PeriodicField, strict_pow2: bool = True) -> np.ndarray:
    if strict_pow2 and not all(_is_pow2(g) for g in field.dims):
        raise InputError(f"grid {field.dims} is not a power of two; pass strict_pow2=False for arbitrary sizes")
    return field.spectrum.copy()


def ifft(spectrum: np.ndarray, strict_pow2: bool = True) -> PeriodicField:
    spectrum = np.asarray(spectrum)
    dims = spectrum.shape[1:]
    if strict_pow2 and not all(_is_pow2(g) for g in dims):
        raise InputError(f"grid {dims} is not a power of two; pass strict_pow2=False for arbitrary sizes")
    if spectrum.size > MAX_SAMPLES:
        raise InputError("spectrum exceeds the supported size")
    out = scipy.fft.ifftn(spectrum, axes=_axes(len(dims)), norm="forward", workers=thread_cap())
    return PeriodicField(_real_part(out, np.sqrt(np.sum(np.abs(spectrum) ** 2))))


def _real_part(arr: np.ndarray, scale: float) -> np.ndarray:
    resid = float(np.max(np.abs(arr.imag))) if arr.size else 0.0
    if resid > IMAG_RESIDUE_TOL * max(1.0, scale):
        raise NumericalError(f"multiplier output has imaginary residue {resid:.3e}; the symbol is not Hermitian-compatible")
    return arr.real


@dataclass(frozen=True)
class MultiplierOp:
    """Fourier multiplier ``T_Θ``.

    ``theta`` maps unit directions of shape ``(K, N)`` to matrices of shape
    ``(K, m, n)``; feeding it ``λ/|λ|`` makes every multiplier homogeneous of
    degree 0 by construction.
    """

    theta: Callable[[np.ndarray], np.ndarray]
    zero_mode: str = "preserve-mean"
    nyquist: str = "keep"
    name: str = "multiplier"

    def __post_init__(self):
        if self.zero_mode not in ("preserve-mean", "zero-mean"):
            raise InputError(f"unknown zero-mode rule {self.zero_mode!r}")
        if self.nyquist not in ("keep", "zero"):
            raise InputError(f"unknown Nyquist rule {self.nyquist!r}")

    def matrices(self, lam) -> np.ndarray:
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        return np.asarray(self.theta(lam / np.linalg.norm(lam, axis=1, keepdims=True)))


def identity_multiplier(n: int, zero_mode: str = "preserve-mean") -> MultiplierOp:
    return MultiplierOp(lambda dirs: np.broadcast_to(np.eye(n), (len(dirs), n, n)), zero_mode, name="identity")


def apply_multiplier(T: MultiplierOp, v: PeriodicField) -> PeriodicField:
    spec = v.spectrum
    N, dims = v.N, v.dims
    lam = frequencies(dims).reshape(N, -1).T
    flat = spec.reshape(v.n, -1)
    nonzero = np.any(lam != 0, axis=1)
    mats = T.matrices(lam[nonzero])
    if mats.ndim != 3 or mats.shape[2] != v.n:
        raise InputError(f"multiplier matrices of shape {mats.shape[1:]} do not act on {v.n} components")
    m = mats.shape[1]
    out = np.zeros((m, flat.shape[1]), dtype=complex)
    out[:, nonzero] = np.einsum("kij,jk->ik", mats, flat[:, nonzero])
    zero_idx = np.flatnonzero(~nonzero)
    if T.zero_mode == "preserve-mean":
        if m != v.n:
            raise InputError("preserve-mean needs a square multiplier")
        out[:, zero_idx] = flat[:, zero_idx]
    if T.nyquist == "zero":
        out[:, nyquist_mask(dims).ravel()] = 0.0
    res = scipy.fft.ifftn(out.reshape((m,) + dims), axes=_axes(N), norm="forward", workers=thread_cap())
    return PeriodicField(_real_part(res, np.sqrt(np.sum(np.abs(spec) ** 2))))


# --------------------------------------------------------------------------
# 𝒜-free projection. The per-frequency projector stack on the rfft half
# lattice is cached per (operator, grid).
# --------------------------------------------------------------------------


def _op_key(op: OperatorSpec) -> tuple:
    return (op.N, op.n, op.d, op.matrices.tobytes())


_RANK_CACHE: dict[tuple, int] = {}


def operator_rank(op: OperatorSpec) -> int:
    """Certified constant rank (raises NonConstantRankError otherwise); memoized."""
    key = _op_key(op)
    if key not in _RANK_CACHE:
        _RANK_CACHE[key] = require_constant_rank(op).rank
    return _RANK_CACHE[key]


@functools.lru_cache(maxsize=32)
def _projector_half(key: tuple, dims: tuple[int, ...]) -> np.ndarray:
    N, n, d, raw = key
    mats = np.frombuffer(raw, dtype=float).reshape(N, d, n)
    op = OperatorSpec("cached", N, n, d, mats)
    r = operator_rank(op)
    lam = frequencies(dims, half=True).reshape(N, -1).T
    nyq = nyquist_mask(dims, half=True).ravel()
    nonzero = np.any(lam != 0, axis=1)
    live = nonzero & ~nyq
    P = np.zeros((lam.shape[0], n, n))
    unit = lam[live] / np.linalg.norm(lam[live], axis=1, keepdims=True)
    P[live], _ = kernels.projector_stack(assemble_symbol(op, unit), r)
    P[~nonzero] = np.eye(n)
    half_shape = tuple(dims[:-1]) + (dims[-1] // 2 + 1,)
    out = np.ascontiguousarray(np.moveaxis(P, 0, -1).reshape((n, n) + half_shape))
    out.setflags(write=False)
    return out


def projector_half(op: OperatorSpec, dims) -> np.ndarray:
    """Stack of ``P(λ/|λ|)`` on the rfft half lattice, shape ``(n, n, *half_dims)``."""
    return _projector_half(_op_key(op), tuple(int(g) for g in dims))


def rfft_field(values: np.ndarray) -> np.ndarray:
    N = values.ndim - 1
    return scipy.fft.rfftn(values, axes=_axes(N), norm="forward", workers=thread_cap())


def irfft_field(spec: np.ndarray, dims) -> np.ndarray:
    return scipy.fft.irfftn(spec, s=tuple(dims), axes=_axes(len(dims)), norm="forward", workers=thread_cap())


def project_array(op: OperatorSpec, values: np.ndarray, zero_mean: bool = False) -> np.ndarray:
    """Apply the 𝒜-free projection to a raw ``(n, *dims)`` array."""
    dims = values.shape[1:]
    P = projector_half(op, dims)
    spec = rfft_field(values)
    out = np.einsum("ij...,j...->i...", P, spec)
    if zero_mean:
        out[(slice(None),) + (0,) * len(dims)] = 0.0
    return irfft_field(out, dims)


def project_afree(op: OperatorSpec, v: PeriodicField) -> PeriodicField:
    """Orthogonal projection onto spectrally 𝒜-free fields; the mean is preserved."""
    if v.n != op.n or v.N != op.N:
        raise InputError(f"field with N={v.N}, n={v.n} does not match operator N={op.N}, n={op.n}")
    return PeriodicField(project_array(op, v.values))


def projection_multiplier(op: OperatorSpec) -> MultiplierOp:
    """The same projection expressed as a generic :class:`MultiplierOp`."""
    r = operator_rank(op)

    def theta(dirs):
        P, _ = kernels.projector_stack(assemble_symbol(op, dirs), r)
        return P

    return MultiplierOp(theta, "preserve-mean", nyquist="zero", name=f"P[{op.name}]")


def apply_operator_spectral(op: OperatorSpec, v: PeriodicField) -> PeriodicField:
    """``(𝒜v)^(λ) = 2πi 𝔸(λ) v̂(λ)``, with Nyquist modes dropped."""
    if v.n != op.n or v.N != op.N:
        raise InputError(f"field with N={v.N}, n={v.n} does not match operator N={op.N}, n={op.n}")
    dims = v.dims
    lam = frequencies(dims, half=True)
    sym = np.tensordot(op.matrices, lam, axes=([0], [0]))  # (d, n, *half)
    spec = rfft_field(v.values)
    spec[:, nyquist_mask(dims, half=True)] = 0.0
    out = 2j * np.pi * np.einsum("ij...,j...->i...", sym, spec)
    return PeriodicField(irfft_field(out, dims))


def afree_residual(op: OperatorSpec, v: PeriodicField) -> float:
    """``max_{λ≠0} |𝔸(λ) v̂(λ)|`` over the full spectrum (Nyquist modes excluded)."""
    lam = frequencies(v.dims)
    sym = np.tensordot(op.matrices, lam, axes=([0], [0]))
    mask = ~nyquist_mask(v.dims)
    res = np.einsum("ij...,j...->i...", sym, v.spectrum)
    mags = np.sqrt(np.sum(np.abs(res) ** 2, axis=0))
    return float(mags[mask].max()) if mask.any() else 0.0


def neg_sobolev_norm(u: PeriodicField) -> float:
    """``(sum_λ |û(λ)|^2 / (1 + |2πλ|^2))^{1/2}``, the p = 2 stand-in for W^{-1,p}."""
    lam = frequencies(u.dims)
    weight = 1.0 / (1.0 + (2.0 * np.pi) ** 2 * np.sum(lam**2, axis=0))
    power = np.sum(np.abs(u.spectrum) ** 2, axis=0)
    return float(np.sqrt(np.sum(power * weight)))


def random_field(n: int, dims, rng: np.random.Generator) -> PeriodicField:
    return PeriodicField(rng.standard_normal((n, *dims)))


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def write_afld(path, field: PeriodicField) -> None:
    header = AFLD_MAGIC + struct.pack("<II", field.N, field.n) + struct.pack(f"<{field.N}I", *field.dims)
    from ._io import atomic_write_bytes

    atomic_write_bytes(path, header + np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_afld(path) -> PeriodicField:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != AFLD_MAGIC:
        raise InputError(f"{path}: not an AFLD0001 field file")
    try:
        N, n = struct.unpack_from("<II", data, 8)
        dims = struct.unpack_from(f"<{N}I", data, 16)
    except struct.error as exc:
        raise InputError(f"{path}: truncated header") from exc
    offset = 16 + 4 * N
    count = n * int(np.prod(dims))
    if len(data) - offset != 8 * count:
        raise InputError(f"{path}: expected {count} samples, found {(len(data) - offset) / 8:g}")
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(float)
    return PeriodicField(vals.reshape((n, *dims)))


def write_field_csv(path, field: PeriodicField) -> None:
    from ._io import atomic_write_text
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([f"k{i + 1}" for i in range(field.N)] + [f"v{c + 1}" for c in range(field.n)])
    for idx in itertools.product(*(range(g) for g in field.dims)):
        writer.writerow(list(idx) + [repr(float(x)) for x in field.values[(slice(None),) + idx]])
    atomic_write_text(path, buf.getvalue())
