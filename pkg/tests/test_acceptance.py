"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from ccgeom.approx import E_map, F_map, G_map, N_bar, N_length, word_length
from ccgeom.ccdist import (
    GridSpec,
    ball_volume,
    distance_equivalence_check,
    distance_field,
    doubling_ratio,
    lambda_volume_ratio,
    sandwich_check,
)
from ccgeom.cli import parse_config, run
from ccgeom.convexity import (
    gradient_ratio,
    horizontal_second_difference,
    lambda_ratio,
    lower_bound_check,
    mu_iterate,
    nxb_bound,
    pointed_fields,
    sublaplacian_check,
    sup_mean_grid,
    xconvexity_test,
)
from ccgeom.flow import FlowProgram, Step, run_program
from ccgeom.polynomial import Polynomial
from ccgeom.vecfield import (
    BUILTINS,
    VectorField,
    box_norm,
    builtin_basis,
    builtin_system,
    commutator,
    select_multiindex,
)

H = builtin_system("heisenberg1")
HB = builtin_basis("heisenberg1")
E2 = builtin_system("euclidean2")
EB = builtin_basis("euclidean2")


def _random_field(rng, n=3, max_deg=2):
    comps = []
    for _ in range(n):
        terms = {}
        for e in np.ndindex(*(max_deg + 1,) * n):
            if sum(e) <= max_deg and rng.random() < 0.5:
                terms[tuple(int(k) for k in e)] = Fraction(int(rng.integers(-4, 5)), 3)
        comps.append(Polynomial(n, terms))
    return VectorField(comps)


def test_c01_bracket_exactness():
    start = time.perf_counter()
    ok = commutator(H.field(1), H.field(2)) == VectorField.constant([0, 0, 1])
    rng = np.random.default_rng(42)
    for _ in range(100):
        X, Y, Z = (_random_field(rng) for _ in range(3))
        ok &= (commutator(X, Y) + commutator(Y, X)).is_zero()
        jac = (commutator(X, commutator(Y, Z)) + commutator(Y, commutator(Z, X))
               + commutator(Z, commutator(X, Y)))
        ok &= jac.is_zero()
    secs = time.perf_counter() - start
    ok = bool(ok) and secs < 5
    record(1, "bracket exactness, antisymmetry and Jacobi", ok, f"{secs:.2f}s")
    assert ok


def test_c02_heisenberg_cycle():
    start = time.perf_counter()
    prog = FlowProgram((Step(1, 1, 1.0), Step(2, 1, 1.0), Step(1, -1, 1.0), Step(2, -1, 1.0)))
    end = run_program(H, prog, [0, 0, 0], 1e-2)
    secs = time.perf_counter() - start
    err = float(np.max(np.abs(end - [0, 0, 1])))
    ok = err < 1e-6 and secs < 1
    record(2, "Heisenberg bracket cycle reaches (0,0,1)", ok, f"err={err:.1e}, {secs:.3f}s")
    assert ok


def test_c03_factorization():
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = 0.0
    for name in ("heisenberg1", "grushin"):
        B = builtin_basis(name)
        for _ in range(100):
            x = rng.uniform(-1, 1, B.n)
            I = select_multiindex(B, x, 0.1)
            h = rng.uniform(-0.1, 0.1, B.n)
            worst = max(worst, float(np.max(np.abs(E_map(B, I, x, h)
                                                   - G_map(B, I, x, F_map(B, I, h))))))
    secs = time.perf_counter() - start
    ok = worst < 1e-6 and secs < 30
    record(3, "E = G o F on heisenberg1 and grushin", ok, f"max diff={worst:.1e}, {secs:.1f}s")
    assert ok


def test_c04_norm_identity():
    rng = np.random.default_rng(42)
    ok = True
    for name in sorted(BUILTINS):
        B = builtin_basis(name)
        for _ in range(1000):
            I = tuple(rng.choice(np.arange(1, B.q + 1), B.n, replace=False))
            h = rng.uniform(-1, 1, B.n) * 10.0 ** rng.integers(-4, 1)
            ok &= F_map(B, I, h).norm() == box_norm(B, I, h)
    record(4, "norm identity holds exactly on every builtin", bool(ok))
    assert ok


def test_c05_length_formulas():
    ok = word_length(2) == 4 and word_length(3) == 10 and N_bar(HB) == 48
    rng = np.random.default_rng(42)
    for name in sorted(BUILTINS):
        B = builtin_basis(name)
        for _ in range(20):
            I = select_multiindex(B, rng.uniform(-1, 1, B.n), rng.uniform(0.01, 1))
            ok &= N_length(B, I).total <= N_bar(B)
    record(5, "N(2)=4, N(3)=10, N_bar=48, N(I) <= N_bar", bool(ok))
    assert ok


def test_c06_distance_sanity():
    start = time.perf_counter()
    f = distance_field(H, [0, 0, 0], budget=2.0, tau=0.05)
    d1, d2 = f.rho_upper([1, 0, 0]), f.rho_upper([0, 0, 0.25])
    secs = time.perf_counter() - start
    ok = 1.0 <= d1 <= 1.1 and d2 <= 2.05 and secs < 60
    record(6, "Heisenberg distance sanity", ok, f"d(e1)={d1:.3f}, d(0.25 e3)={d2:.3f}, {secs:.1f}s")
    assert ok


def test_c07_volume_and_doubling():
    start = time.perf_counter()
    fe = distance_field(E2, [0, 0], budget=0.6, tau=0.01,
                        grid=GridSpec.centered([0, 0], [0.6, 0.6], 0.01), controls="cube")
    r = 0.5
    vol = ball_volume(fe, r, 100_000, 42).volume
    fh = distance_field(H, [0, 0, 0], budget=2.0, tau=0.05,
                        grid=GridSpec.centered([0, 0, 0], [2.1, 2.1, 0.8], (0.05, 0.05, 0.005)),
                        controls="cube")
    ratio = doubling_ratio(fh, 1.0, 100_000, 42)
    secs = time.perf_counter() - start
    ok = abs(vol - 4 * r * r) <= 0.05 * 4 * r * r and 12.8 <= ratio <= 19.2 and secs < 60
    record(7, "square ball volume and Heisenberg doubling", ok,
           f"vol={vol:.4f} vs {4 * r * r}, ratio={ratio:.2f}, {secs:.1f}s")
    assert ok


def test_c08_volume_lambda_ratio():
    tau = 0.005
    fh = distance_field(H, [0, 0, 0], budget=0.4, tau=tau,
                        grid=GridSpec.centered([0, 0, 0], [0.41, 0.41, 0.06], (tau, tau, tau / 20)),
                        controls="cube")
    deltas = np.round(np.arange(0.10, 0.401, 0.05), 2)
    ratios = [lambda_volume_ratio(HB, fh, [0, 0, 0], d) for d in deltas]
    spread = max(ratios) / min(ratios) - 1
    fe = distance_field(E2, [0, 0], budget=0.6, tau=0.01,
                        grid=GridSpec.centered([0, 0], [0.6, 0.6], 0.01), controls="cube")
    eu = [lambda_volume_ratio(EB, fe, [0, 0], d) for d in (0.2, 0.4, 0.5)]
    ok = spread < 0.5 and all(abs(v - 2) <= 0.2 for v in eu)
    record(8, "|B|/Lambda constant in delta; Euclidean ratio 2", ok,
           f"spread={spread:.3f}, euclid={', '.join(f'{v:.3f}' for v in eu)}")
    assert ok


def test_c09_sandwich():
    f = distance_field(H, [0, 0, 0], budget=1.2, tau=0.05,
                       grid=GridSpec.centered([0, 0, 0], [1.2, 1.2, 0.4], (0.05, 0.05, 0.005)),
                       controls="cube")
    I = select_multiindex(HB, [0, 0, 0], 0.2)
    rep = sandwich_check(HB, f, I, [0, 0, 0], 0.2, image_samples=500, slack=0.05, seed=42)
    ok = rep["outer_pass_rate"] == 1.0 and rep["b_hat"] > 0
    record(9, "ball sandwich: outer 100%, inner b_hat > 0", ok,
           f"outer={rep['outer_pass_rate']:.3f}, max rho={rep['outer_max_rho']:.2f}"
           f" <= {rep['outer_bound']:.2f}, b_hat={rep['b_hat']}")
    assert ok


def test_c10_convexity_suite():
    box = ([-1, -1, -1], [1, 1, 1])
    a = xconvexity_test(H, "x^2+y^2", box)
    b = xconvexity_test(H, "abs(x)", box)
    c = xconvexity_test(H, "-x^2", box)
    rng = np.random.default_rng(42)
    exact = 0.0
    for _ in range(50):
        x = rng.uniform(-1, 1, 3)
        alpha = rng.uniform(-1, 1, 2)
        t = rng.uniform(0.01, 0.3)
        v = horizontal_second_difference(H, "x^2+y^2", x, alpha, t)
        exact = max(exact, abs(v - 2 * (alpha @ alpha) * t * t))
    ok = (a.verdict == "pass" and b.verdict == "pass" and c.verdict == "fail"
          and len(c.witnesses) >= 1 and exact < 1e-8)
    record(10, "convexity suite on heisenberg1", ok,
           f"x2+y2 {a.verdict}, |x| {b.verdict}, -x2 {c.verdict}, formula err={exact:.1e}")
    assert ok


def test_c11_lower_bound():
    rng = np.random.default_rng(42)
    cases, passed, total = set(), 0, 0
    for _ in range(20):
        x = rng.uniform(-0.5, 0.5, 3)
        delta = rng.uniform(0.01, 0.02)
        f = distance_field(H, x, budget=48 * delta, tau=0.05,
                           grid=GridSpec.centered(x, [1.0, 1.0, 0.6], (0.05, 0.05, 0.005)),
                           controls="cube")
        for u in ("x^2+y^2", "5", "-1"):
            rep = lower_bound_check(H, HB, u, f, x, delta, 0.5, seed=int(rng.integers(1 << 30)))
            passed += rep.verdict == "pass"
            total += 1
            cases.add(rep.data[0]["muN1_case"])
    # case 2 needs u(x) < 0 <= sup, which no constant has
    f0 = distance_field(H, [0, 0, 0], budget=0.48, tau=0.05,
                        grid=GridSpec.centered([0, 0, 0], [1.0, 1.0, 0.6], (0.05, 0.05, 0.005)),
                        controls="cube")
    rep = lower_bound_check(H, HB, "x^2+y^2-0.0001", f0, [0, 0, 0], 0.01, 0.5)
    passed += rep.verdict == "pass"
    total += 1
    cases.add(rep.data[0]["muN1_case"])
    recursion = all(
        nxb_bound(u, M, N) == mu_iterate(u, M, N)
        for u, M in [(Fraction(3, 7), Fraction(-5, 3)), (Fraction(-2), Fraction(9, 4)), (1, 1)]
        for N in range(49)
    )
    ok = passed == total and cases == {1, 2, 3} and recursion
    record(11, "lower-bound recursion and three-case bound", ok,
           f"{passed}/{total} checks, cases {sorted(cases)}, recursion exact={recursion}")
    assert ok


def test_c12_regularity_surrogates():
    grid = GridSpec.centered([0, 0, 0], [0.9, 0.9, 0.15], (0.02, 0.02, 0.001))
    f = distance_field(H, [0, 0, 0], budget=0.8, tau=0.02, grid=grid)
    u = "x^2+y^2"
    r_list = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4]
    sm = sup_mean_grid(u, f, [0, 0, 0], r_list, seed=42, bound=10.0)
    grad = gradient_ratio(u, f, [0, 0, 0], 0.2, seed=42)
    lam = lambda_ratio(u, f, [0, 0, 0], 0.15, [1.5, 2, 3, 4], seed=42)
    ok = sm.verdict == "pass" and grad.verdict == "pass" and lam.verdict == "pass"
    record(12, "sup/mean, gradient and lambda ratios", ok,
           f"sup/mean max={sm.constant:.3f} spread={sm.extra['spread']:.2f}; "
           f"grad C={grad.constant:.3f} change={grad.extra['refinement_change']:.3f}; "
           f"lambda ratios={[round(r['ratio'], 3) for r in lam.data]}")
    assert ok


def test_c13_pointed_sublaplacian():
    G = builtin_system("grushin")
    Y = pointed_fields(G, [0, 0])
    pointed = Y.fields[1] == G.fields[1] + G.fields[0]
    good = sublaplacian_check(H, "x^2+y^2", [0, 0, 0], 0.2)
    bad = sublaplacian_check(H, "-x^2", [0, 0, 0], 0.2)
    vals = np.array([row["value"] for row in good.data])
    ok = (pointed and good.verdict == "pass" and np.all(np.abs(vals - 4) <= 1e-3)
          and bad.verdict == "fail" and abs(bad.constant + 2) <= 1e-3)
    record(13, "pointed fields and sub-Laplacian surrogate", ok,
           f"sum in [{vals.min():.6f}, {vals.max():.6f}], violation={bad.constant:.6f}")
    assert ok


def test_c14_modified_family():
    rng = np.random.default_rng(42)
    pairs = [(rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.5, 0.5, 3)) for _ in range(50)]
    rep = distance_equivalence_check(
        H, pairs, tau=0.1, budget=10.0,
        grid=lambda x: GridSpec.centered(x, [1.3, 1.3, 1.6], (0.1, 0.1, 0.02)),
    )
    ok = rep["verdict"] == "pass"
    record(14, "distance equivalence with Y1 = X1 + X2", ok,
           f"ratios in [{rep['min_ratio']:.3f}, {rep['max_ratio']:.3f}], "
           f"unreached={rep['unreached']}")
    assert ok


def test_c15_determinism(tmp_path):
    config = {
        "system": "heisenberg1",
        "experiments": [
            {"command": "basis"},
            {"command": "convexity", "parameters": {"u": "-x^2"}, "seed": 1},
            {"command": "doubling", "parameters": {"budget": 1.0, "r": 0.5, "samples": 20000}},
            {"command": "lower-bound", "parameters": {"u": "x^2+y^2", "delta": 0.01}},
            {"command": "estimates", "parameters": {"u": "x^2+y^2", "budget": 0.8,
                                                    "lambda_list": [1.5, 2, 3]}},
            {"command": "sublaplacian", "parameters": {"u": "x^2+y^2"}},
        ],
    }
    text = json.dumps(config)
    run(parse_config(text), tmp_path / "a")
    run(parse_config(text), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").glob("*.json") if p.name != "manifest.json")
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
               for n in names)
    ok = same and len(names) == len(config["experiments"]) + 1
    record(15, "identical seeds give byte-identical JSON reports", ok, f"{len(names)} files")
    assert ok
