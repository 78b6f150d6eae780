import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aquasi.errors import InputError, NonConstantRankError
from aquasi.operators import preset
from aquasi.torus import (
    MultiplierOp,
    PeriodicField,
    afree_residual,
    apply_multiplier,
    apply_operator_spectral,
    fft,
    frequencies,
    identity_multiplier,
    ifft,
    lattice,
    neg_sobolev_norm,
    project_afree,
    projection_multiplier,
    random_field,
    read_afld,
    write_afld,
    write_field_csv,
)

TWO_D = ["div2", "curl2"]


def grad_field(dims=(32, 32)):
    """Spectral gradient of u = sin(2πx1) sin(2πx2)."""
    x = lattice(dims)
    s1, s2 = np.sin(2 * np.pi * x[0]), np.sin(2 * np.pi * x[1])
    c1, c2 = np.cos(2 * np.pi * x[0]), np.cos(2 * np.pi * x[1])
    return PeriodicField(2 * np.pi * np.stack([c1 * s2, s1 * c2]))


def test_constant_field_spectrum():
    f = PeriodicField(np.full((2, 8, 8), 3.5))
    spec = fft(f)
    assert spec[0, 0, 0] == pytest.approx(3.5) and spec[1, 0, 0] == pytest.approx(3.5)
    rest = spec.copy()
    rest[:, 0, 0] = 0
    assert np.abs(rest).max() <= 1e-12


@pytest.mark.parametrize("N", [1, 2, 3])
def test_pure_tone_has_two_modes(N):
    dims = (16,) * N
    f = PeriodicField.from_function(lambda x: np.sin(2 * np.pi * x[:1]), dims)
    spec = np.abs(fft(f)[0])
    idx = np.argwhere(spec > 1e-12)
    lam = frequencies(dims)[(slice(None),) + tuple(idx.T)].T
    assert sorted(map(tuple, lam)) == sorted([(-1.0,) + (0.0,) * (N - 1), (1.0,) + (0.0,) * (N - 1)])


def test_round_trip_and_hermitian(rng):
    f = random_field(3, (16, 8), rng)
    spec = fft(f)
    back = ifft(spec)
    assert np.linalg.norm(back.values - f.values) / np.linalg.norm(f.values) <= 1e-12
    flipped = np.conj(np.roll(np.flip(spec, axis=(1, 2)), 1, axis=(1, 2)))
    np.testing.assert_allclose(spec, flipped, atol=1e-14)


def test_non_power_of_two_is_opt_in(rng):
    f = random_field(1, (12,), rng)
    with pytest.raises(InputError):
        fft(f)
    np.testing.assert_allclose(ifft(fft(f, strict_pow2=False), strict_pow2=False).values, f.values, atol=1e-13)


def test_parseval(rng):
    f = random_field(2, (32, 32), rng)
    assert abs(f.l2_norm() ** 2 - np.sum(np.abs(f.spectrum) ** 2)) <= 1e-12 * f.l2_norm() ** 2


def test_identity_multiplier_rules(rng):
    f = random_field(2, (16, 16), rng)
    np.testing.assert_allclose(apply_multiplier(identity_multiplier(2), f).values, f.values, atol=1e-13)
    zm = apply_multiplier(identity_multiplier(2, "zero-mean"), f)
    np.testing.assert_allclose(zm.values, f.shifted(-f.mean()).values, atol=1e-13)


def test_multiplier_degree_zero():
    T = projection_multiplier(preset("div2"))
    lam = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 5.0]])
    np.testing.assert_allclose(T.matrices(lam), T.matrices(2 * lam), atol=1e-15)


def test_multiplier_rejects_bad_rules():
    with pytest.raises(InputError):
        MultiplierOp(lambda d: d, zero_mode="bogus")


def test_projection_multiplier_keeps_gradient():
    v = grad_field()
    out = apply_multiplier(projection_multiplier(preset("curl2")), v)
    assert np.abs(out.values - v.values).max() <= 1e-10


def test_projection_keeps_afree_field():
    v = grad_field()
    assert np.abs(project_afree(preset("curl2"), v).values - v.values).max() <= 1e-11


def test_div2_projection_is_leray(rng):
    v = random_field(2, (16, 16), rng)
    out = fft(project_afree(preset("div2"), v))
    lam = frequencies(v.dims)
    spec = v.spectrum
    norm = np.sqrt(np.sum(lam**2, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        hat = np.where(norm > 0, lam / norm, 0.0)
    expected = spec - hat * np.sum(hat * spec, axis=0)
    expected[:, np.abs(lam).max(axis=0) == 8] = 0.0  # Nyquist modes are dropped
    expected[:, 0, 0] = spec[:, 0, 0]
    np.testing.assert_allclose(out, expected, atol=1e-13)


@pytest.mark.parametrize("name", TWO_D)
@given(seed=st.integers(0, 2**32 - 1), g1=st.sampled_from([8, 16, 32]), g2=st.sampled_from([8, 16, 32]))
def test_projection_properties(name, seed, g1, g2):
    op = preset(name)
    v = random_field(2, (g1, g2), np.random.default_rng(seed))
    p = project_afree(op, v)
    pp = project_afree(op, p)
    nv = v.l2_norm()
    assert (pp - p).l2_norm() <= 1e-11 * nv
    assert abs(p.inner(v - p)) <= 1e-10 * nv**2
    assert p.l2_norm() <= nv + 1e-12
    assert afree_residual(op, p) <= 1e-10 * nv
    assert np.abs(p.mean() - v.mean()).max() <= 1e-12


def test_projection_rejects_non_constant_rank(rng):
    with pytest.raises(NonConstantRankError):
        project_afree(preset("diag"), random_field(2, (8, 8), rng))


def test_projection_dimension_mismatch(rng):
    with pytest.raises(InputError):
        project_afree(preset("div2"), random_field(2, (8,), rng))


def test_operator_on_constant_is_zero():
    out = apply_operator_spectral(preset("div2"), PeriodicField(np.ones((2, 8, 8))))
    assert np.abs(out.values).max() <= 1e-14


def test_curl_of_gradient_vanishes():
    out = apply_operator_spectral(preset("curl2"), grad_field())
    assert np.abs(out.values).max() <= 1e-10


def test_div_of_sine():
    f = PeriodicField.from_function(lambda x: np.stack([np.sin(2 * np.pi * x[0]), 0 * x[1]]), (32, 32))
    out = apply_operator_spectral(preset("div2"), f)
    expected = 2 * np.pi * np.cos(2 * np.pi * lattice((32, 32))[0])
    np.testing.assert_allclose(out.values[0], expected, atol=1e-11)


def test_neg_sobolev_zero_and_pure_mode():
    assert neg_sobolev_norm(PeriodicField.zeros(2, (16, 16))) == 0.0
    a, lam = 1.7, np.array([2.0, 3.0])
    f = PeriodicField.from_function(lambda x: a * np.cos(2 * np.pi * np.tensordot(lam, x, axes=1))[None], (16, 16))
    # a real cosine splits amplitude a into two modes of a/2
    expected = a / np.sqrt(2) / np.sqrt(1 + 4 * np.pi**2 * lam @ lam)
    assert neg_sobolev_norm(f) == pytest.approx(expected, rel=1e-12)


def test_neg_sobolev_decay_of_oscillations():
    js = [1, 2, 4, 8, 16]
    norms = []
    for j in js:
        f = PeriodicField.from_function(
            lambda x: np.stack([np.sin(2 * np.pi * j * x[0]) + 0.5 * np.cos(2 * np.pi * j * (x[0] + 2 * x[1]))]),
            (128, 128),
        )
        norms.append(neg_sobolev_norm(f))
    slope = np.polyfit(np.log(js), np.log(norms), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_afld_round_trip_and_layout(tmp_path, rng):
    f = random_field(2, (4, 8), rng)
    path = tmp_path / "f.afld"
    write_afld(path, f)
    raw = path.read_bytes()
    assert raw[:8] == b"AFLD0001"
    assert struct.unpack_from("<II", raw, 8) == (2, 2)
    assert struct.unpack_from("<2I", raw, 16) == (4, 8)
    # component-major, last lattice index fastest
    assert struct.unpack_from("<d", raw, 24 + 8)[0] == f.values[0, 0, 1]
    assert struct.unpack_from("<d", raw, 24 + 8 * 32)[0] == f.values[1, 0, 0]
    np.testing.assert_array_equal(read_afld(path).values, f.values)


def test_afld_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.afld"
    bad.write_bytes(b"NOTAFLD!" + b"\0" * 16)
    with pytest.raises(InputError):
        read_afld(bad)
    short = tmp_path / "short.afld"
    short.write_bytes(b"AFLD0001" + struct.pack("<III", 1, 1, 4) + b"\0" * 8)
    with pytest.raises(InputError):
        read_afld(short)


def test_field_csv(tmp_path):
    f = PeriodicField(np.arange(8.0).reshape(2, 2, 2))
    path = tmp_path / "f.csv"
    write_field_csv(path, f)
    lines = path.read_text().splitlines()
    assert lines[0] == "k1,k2,v1,v2"
    assert lines[2] == "0,1,1.0,5.0"


def test_field_validation():
    with pytest.raises(InputError):
        PeriodicField(np.zeros(4))
    with pytest.raises(InputError):
        PeriodicField(np.full((1, 2), np.inf))
