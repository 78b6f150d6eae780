"""Compare the numba and numpy backends of the hot kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Each kernel runs once untimed (numba compilation, caches) and is then timed
``--repeat`` times; the best time is reported along with the largest
difference between the two backends' outputs. ``--end-to-end`` additionally
times a depth-3 laminate bound in two subprocesses, one with
``AQUASI_DISABLE_NUMBA=1``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from aquasi import kernels
from aquasi.envelope import cone_directions
from aquasi.operators import assemble_symbol, preset, sphere_samples


def _best(fn, repeat: int) -> tuple[float, object]:
    out = fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    both = np.isfinite(a) & np.isfinite(b)
    if np.any(np.isfinite(a) != np.isfinite(b)):
        return float("inf")
    return float(np.max(np.abs(a[both] - b[both]), initial=0.0))


def cases(rng: np.random.Generator):
    op = preset("curl2")
    syms = assemble_symbol(op, sphere_samples(2, 64 * 33, seed=1))
    yield "projector_stack (2112 symbols)", (syms, 1)

    x = np.linspace(-3, 3, 129)
    yield "legendre_lastaxis (129 x 129, 517 slopes)", (rng.normal(size=(129, 129)), x, np.linspace(-40, 40, 517))

    table = rng.normal(size=(65, 65))
    lo, h = np.array([-3.0, -3.0]), np.array([6 / 64, 6 / 64])
    yield "multilinear (65^2 table, 64^2 points)", (table, lo, h, rng.uniform(-3, 3, size=(4096, 2)))

    xs = np.linspace(-3, 3, 65)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    dw = (X**2 + Y**2 - 1) ** 2
    thetas = np.arange(1, 16) / 16
    steps = 2.0 ** np.linspace(-6, 3, 10)
    yield "laminate_round (65^2 table, 8 dirs x 15 x 10)", (dw, lo, h, cone_directions(op), thetas, steps)


NAMES = ["projector_stack", "legendre_lastaxis", "multilinear", "laminate_round"]

END_TO_END = (
    "import time; from aquasi.envelope import laminate_upper_bound; from aquasi.integrand import resolve_integrand; "
    "from aquasi.operators import preset; t=time.perf_counter(); "
    "r=laminate_upper_bound(preset('curl2'), resolve_integrand('doublewell2', 2), (0.0, 0.0), depth=3); "
    "print(time.perf_counter()-t, r.value)"
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--end-to-end", action="store_true")
    args = parser.parse_args()
    rng = np.random.default_rng(0x5EED)
    print(f"{'kernel':48s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, (label, inputs) in zip(NAMES, cases(rng)):
        t_np, out_np = _best(lambda: kernels.BACKENDS["numpy"][name](*inputs), args.repeat)
        t_nb, out_nb = _best(lambda: kernels.BACKENDS["numba"][name](*inputs), args.repeat)
        print(f"{label:48s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {_max_diff(out_np, out_nb):10.2e}")
    if args.end_to_end:
        for flag in ("1", "0"):
            env = dict(os.environ, AQUASI_DISABLE_NUMBA=flag)
            # first run warms the numba cache, second is timed
            for _ in range(2):
                out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
            secs, value = out.stdout.split()
            backend = "numpy" if flag == "1" else "numba"
            print(f"laminate_upper_bound depth 3, {backend:5s}: {float(secs):8.3f} s (value {float(value):.3e})")


if __name__ == "__main__":
    main()
