"""Acceptance criteria, one test each, printing a PASS/FAIL line per criterion."""
import time

import numpy as np
import pytest

from aquasi.envelope import (
    idempotence_check,
    lambda_convexity_check,
    quasiconvexify,
    remark_relaxation_demo,
)
from aquasi.integrand import resolve_integrand
from aquasi.operators import (
    preset,
    sample_characteristic_cone,
    sphere_samples,
    symbol_rank,
    verify_constant_rank,
)
from aquasi.pinv import decompose_symbol
from aquasi.torus import afree_residual, project_afree, random_field
from aquasi.young import (
    empirical_measure,
    jensen_gap,
    ks_arcsine,
    loglog_slope,
    oscillate,
    sequence_diagnostics,
    shipped_profiles,
    wasserstein1,
)

CURL2 = preset("curl2")
DW = resolve_integrand("doublewell2", 2)
# optimizer settings for the 17 x 17 two-pass check, sized for a single core
IDEMPOTENCE_PARAMS = dict(grid=32, restarts=4, max_iters=400)


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def idempotence():
    t0 = time.perf_counter()
    rep = idempotence_check(CURL2, DW, -2.0, 2.0, 17, violation_tol=2e-2, **IDEMPOTENCE_PARAMS)
    return rep, time.perf_counter() - t0


def test_criterion_01_constant_rank(capsys):
    lines, ok = [], True
    for name in ("div2", "curl2"):
        t0 = time.perf_counter()
        cert = verify_constant_rank(preset(name), samples=4096, tol=1e-9)
        dt = time.perf_counter() - t0
        ok &= cert.rank == 1 and cert.constant and dt < 1.0
        lines.append(f"{name} r={cert.rank} constant={cert.constant} {dt:.3f}s")
    t0 = time.perf_counter()
    diag = preset("diag")
    cert = verify_constant_rank(diag, samples=4096, tol=1e-9)
    dt = time.perf_counter() - t0
    ranks = [symbol_rank(diag, w) for w in cert.witnesses]
    ok &= (not cert.constant) and len(cert.witnesses) == 2 and ranks == cert.witness_ranks and ranks[0] != ranks[1] and dt < 1.0
    lines.append(f"diag constant={cert.constant} witness ranks={ranks} {dt:.3f}s")
    report(capsys, 1, ok, "; ".join(lines))


def test_criterion_02_pseudoinverse_identities(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("div2", "curl2", "line1d"):
        op = preset(name)
        r = verify_constant_rank(op, samples=256).rank
        for w in sphere_samples(op.N, 100, seed=0x5EED):
            worst = max(worst, max(decompose_symbol(op, w, r).residuals().values()))
    dt = time.perf_counter() - t0
    report(capsys, 2, worst <= 1e-10 and dt < 1.0, f"max relative residual {worst:.2e} (<= 1e-10), {dt:.3f}s")


def test_criterion_03_projection_suite(capsys):
    t0 = time.perf_counter()
    worst = dict(idempotence=0.0, orthogonality=0.0, afree=0.0, mean=0.0, parseval=0.0)
    rng = np.random.default_rng(0x5EED)
    for name in ("div2", "curl2"):
        op = preset(name)
        for _ in range(100):
            v = random_field(2, (64, 64), rng)
            p = project_afree(op, v)
            nv = v.l2_norm()
            worst["idempotence"] = max(worst["idempotence"], (project_afree(op, p) - p).l2_norm() / nv)
            worst["orthogonality"] = max(worst["orthogonality"], abs(p.inner(v - p)) / nv**2)
            worst["afree"] = max(worst["afree"], afree_residual(op, p) / nv)
            worst["mean"] = max(worst["mean"], float(np.max(np.abs(p.mean() - v.mean()))))
            worst["parseval"] = max(worst["parseval"], abs(nv**2 - np.sum(np.abs(v.spectrum) ** 2)) / nv**2)
    dt = time.perf_counter() - t0
    limits = dict(idempotence=1e-11, orthogonality=1e-10, afree=1e-10, mean=1e-12, parseval=1e-12)
    ok = all(worst[k] <= limits[k] for k in limits) and dt < 10.0
    report(capsys, 3, ok, ", ".join(f"{k} {worst[k]:.1e}" for k in limits) + f", {dt:.2f}s")


def test_criterion_04_scalar_gradient_convexification(capsys):
    t0 = time.perf_counter()
    rep = quasiconvexify(CURL2, DW, (0.0, 0.0), grid=64, restarts=8)
    dt = time.perf_counter() - t0
    ok = rep.qca_value <= 5e-3 and abs(rep.convex_lb) <= 1e-12 and dt < 120.0
    report(capsys, 4, ok, f"qcaValue {rep.qca_value:.2e} (<= 5e-3), convex oracle {rep.convex_lb:.1e}, {dt:.1f}s")


def test_criterion_05_idempotence(capsys, idempotence):
    rep, dt = idempotence
    ok = rep.max_violation <= 2e-2 and dt < 1800.0
    report(
        capsys,
        5,
        ok,
        f"max(second-first) {rep.max_increase:.2e}, max(first-second) {rep.max_decrease:.2e} (<= 2e-2), "
        f"enlarged={rep.enlarged}, {dt:.0f}s",
    )


def test_criterion_06_lambda_convexity(capsys, idempotence):
    rep, _ = idempotence
    t0 = time.perf_counter()
    raw = lambda_convexity_check(CURL2, DW, (-2.0, 2.0), 17)
    raw_at_zero = float(DW.value(np.zeros((2, 1)))[0] - 0.5 * (DW.value(np.array([[1.0], [0.0]]))[0] + DW.value(np.array([[-1.0], [0.0]]))[0]))
    tab = lambda_convexity_check(CURL2, rep.table, (-2.0, 2.0), 17)
    dt = time.perf_counter() - t0
    ok = raw["max_violation"] >= 0.9 and raw_at_zero >= 0.9 and tab["max_violation"] <= 2e-2 and dt < 60.0
    report(
        capsys,
        6,
        ok,
        f"raw violation {raw['max_violation']:.3f} (at xi=0, u=e1, t=1: {raw_at_zero:.3f}), "
        f"table violation {tab['max_violation']:.2e} (<= 2e-2), {dt:.2f}s",
    )


def test_criterion_07_jensen(capsys, idempotence):
    rep, _ = idempotence
    t0 = time.perf_counter()
    profiles = shipped_profiles()
    m = empirical_measure(oscillate(CURL2, profiles["pm-e1"], 1, 64))
    raw_gap = jensen_gap(m, DW)
    table_gap = jensen_gap(m, rep.table)
    duality = {}
    qca_cache = {}
    for name, prof in profiles.items():
        mu = empirical_measure(oscillate(CURL2, prof, 1, 64))
        key = tuple(np.round(mu.mean, 12))
        if key not in qca_cache:
            qca_cache[key] = quasiconvexify(CURL2, DW, mu.mean, grid=32, restarts=4).qca_value
        duality[name] = mu.integrate(DW) - qca_cache[key]
    dt = time.perf_counter() - t0
    ok = abs(raw_gap + 1.0) <= 1e-10 and table_gap >= -2e-2 and min(duality.values()) >= -2e-2 and dt < 60.0
    report(
        capsys,
        7,
        ok,
        f"raw gap {raw_gap:.12f}, table gap {table_gap:.2e}, "
        f"min <mu,g> - qca(mean) {min(duality.values()):.3f} over {len(duality)} profiles, {dt:.1f}s",
    )


def test_criterion_08_oscillation_lemma(capsys):
    t0 = time.perf_counter()
    profiles = shipped_profiles()
    G = 256
    w1 = {}
    for name, prof in profiles.items():
        # the sine's lattice sampling costs about 2j/G between j and 2j, so its
        # pairs are taken where that stays inside the tolerance (j <= 2)
        js = (1, 2, 4, 8) if prof.kind == "two-atom" else (1, 2, 4)
        ms = [empirical_measure(oscillate(CURL2, prof, j, G)) for j in js]
        w1[name] = max(wasserstein1(a, b) for a, b in zip(ms, ms[1:]))
    ks = ks_arcsine(empirical_measure(oscillate(CURL2, profiles["sine"], 1, G)), 0)
    diag = sequence_diagnostics(CURL2, profiles["pm-e1"], [1, 2, 4, 8, 16], G)
    slope = loglog_slope([d.j for d in diag], [d.neg_sobolev_oscillation for d in diag])
    dt = time.perf_counter() - t0
    ok = max(w1.values()) <= 0.02 and ks <= 0.02 and abs(slope + 1.0) <= 0.1 and dt < 60.0
    report(
        capsys,
        8,
        ok,
        f"max W1(j,2j) {max(w1.values()):.4f} (<= 0.02), KS arcsine {ks:.4f} (<= 0.02), "
        f"neg-Sobolev slope {slope:.3f} (-1 +- 0.1), {dt:.1f}s",
    )


def test_criterion_09_remark_formula(capsys):
    t0 = time.perf_counter()
    cases = {(0.0, 0.0): (1.0, 1.0, 1.0), (1.0, 0.0): (0.0, 4.0, 0.0), (0.0, 1.0): (2.0, 2.0, 2.0)}
    worst = 0.0
    for v, expected in cases.items():
        for points in (2, 3, 17):
            got = remark_relaxation_demo(np.tile(v, (points, 1)), (0.0, 1.0))
            worst = max(worst, float(np.max(np.abs(np.array(got) - expected))))
    dt = time.perf_counter() - t0
    report(capsys, 9, worst <= 1e-12 and dt < 1.0, f"max deviation {worst:.1e} (<= 1e-12), {dt:.4f}s")


def test_criterion_10_cone_geometry(capsys):
    t0 = time.perf_counter()
    spans = {name: sample_characteristic_cone(preset(name)).span_dimension for name in ("div2", "curl2", "line1d")}
    dt = time.perf_counter() - t0
    ok = spans == {"div2": 2, "curl2": 2, "line1d": 1} and dt < 1.0
    report(capsys, 10, ok, f"span dimensions {spans}, {dt:.3f}s")
