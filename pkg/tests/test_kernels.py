import os
import subprocess
import sys

import numpy as np
import pytest

from aquasi import kernels
from aquasi.operators import assemble_symbol, preset, require_constant_rank, sphere_samples

NP = kernels.BACKENDS["numpy"]
NB = kernels.BACKENDS["numba"]


@pytest.mark.parametrize("name", ["curl2", "div2", "grad-scalar-2d", "line1d"])
def test_projector_stack_backends_agree(name):
    op = preset(name)
    r = require_constant_rank(op, samples=256).rank
    syms = assemble_symbol(op, sphere_samples(op.N, 64, seed=3))
    P0, Q0 = NP["projector_stack"](syms, r)
    P1, Q1 = NB["projector_stack"](syms, r)
    np.testing.assert_allclose(P1, P0, atol=1e-12)
    np.testing.assert_allclose(Q1, Q0, atol=1e-12)
    # and both agree with the SVD pseudoinverse
    np.testing.assert_allclose(Q0, np.linalg.pinv(syms), atol=1e-10)


def test_projector_stack_rank_zero():
    syms = np.zeros((3, 2, 2))
    for be in (NP, NB):
        P, Q = be["projector_stack"](syms, 0)
        np.testing.assert_array_equal(P, np.broadcast_to(np.eye(2), (3, 2, 2)))
        np.testing.assert_array_equal(Q, 0.0)


def test_legendre_backends_agree(rng):
    f = rng.normal(size=(7, 5, 33))
    x = np.linspace(-2, 2, 33)
    s = np.linspace(-3, 3, 41)
    a = NP["legendre_lastaxis"](f, x, s)
    b = NB["legendre_lastaxis"](f, x, s)
    np.testing.assert_allclose(a, b, atol=0)
    # brute-force oracle on one row
    np.testing.assert_allclose(a[2, 3], np.max(s[:, None] * x[None, :] - f[2, 3][None, :], axis=1))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_multilinear_backends_agree(rng, n):
    shape = (9, 7, 5)[:n]
    table = rng.normal(size=shape)
    lo = -np.ones(n)
    h = 2.0 / (np.array(shape) - 1)
    pts = rng.uniform(-1.2, 1.2, size=(200, n))
    v0, g0 = NP["multilinear"](table, lo, h, pts)
    v1, g1 = NB["multilinear"](table, lo, h, pts)
    np.testing.assert_allclose(v1, v0, atol=1e-13)
    np.testing.assert_allclose(g1, g0, atol=1e-12)
    outside = np.any(np.abs(pts) > 1.0 + 1e-9, axis=1)
    assert np.all(np.isinf(v0[outside])) and np.all(np.isfinite(v0[~outside]))


def test_multilinear_reproduces_affine(rng):
    a = np.array([0.3, -1.2, 2.0])
    lo = np.array([-1.0, -2.0, 0.0])
    h = np.array([0.25, 0.5, 0.1])
    axes = [lo[i] + h[i] * np.arange(6) for i in range(3)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"))
    table = np.tensordot(a, mesh, axes=1) + 0.7
    pts = np.stack([rng.uniform(axes[i][0], axes[i][-1], 50) for i in range(3)], axis=1)
    for be in (NP, NB):
        v, g = be["multilinear"](table, lo, h, pts)
        np.testing.assert_allclose(v, pts @ a + 0.7, atol=1e-12)
        np.testing.assert_allclose(g, np.broadcast_to(a, g.shape), atol=1e-12)


def test_laminate_round_backends_agree(rng):
    x = np.linspace(-1.5, 1.5, 17)
    X, Y = np.meshgrid(x, x, indexing="ij")
    table = (X**2 + Y**2 - 1) ** 2
    lo, h = np.array([-1.5, -1.5]), np.array([x[1] - x[0]] * 2)
    dirs = np.array([[1.0, 0.0], [0.0, 1.0]])
    thetas = np.array([0.25, 0.5, 0.75])
    steps = np.array([0.1875, 0.375, 0.75, 1.5])
    a, sa = NP["laminate_round"](table, lo, h, dirs, thetas, steps)
    b, sb = NB["laminate_round"](table, lo, h, dirs, thetas, steps)
    np.testing.assert_allclose(a, b, atol=1e-13)
    assert sa == sb > 0
    assert np.all(a <= table + 1e-15)
    assert a[8, 8] < table[8, 8]


def test_disable_flag_selects_numpy():
    code = "from aquasi import kernels, _accel; print(_accel.backend_name(), kernels.multilinear.__name__)"
    env = dict(os.environ, AQUASI_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout
    assert out.split() == ["numpy", "multilinear_numpy"]
