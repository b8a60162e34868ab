"""End-to-end acceptance checks, one verdict line per criterion.

Run with ``pytest -v tests/test_acceptance.py``; each test prints a line of the
form ``[criterion N] PASS|FAIL title: detail`` before asserting.
"""

import math
import random
import time
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import expm

from sqv.errors import DegreeParityImpossible
from sqv.feynman import Theory, VertexKernel, feynman_amplitude, quadrature_moment_oracle
from sqv.langevin import SimConfig, equilibrium_moments
from sqv.maps import canonical_key, embedding_counts, enumerate_maps, from_cycles, relabel, to_abstract_graph
from sqv.operator import heat_kernel, noise_propagator, simplex_constant, spd_build
from sqv.stochastic import enumerate_spanning_forests, stochastic_amplitude, taylor_terms, verify_order
from sqv.trees import (
    EVALUATORS,
    TaylorFunction,
    alpha_multiplicity,
    enumerate_plane_trees,
    enumerate_qary_trees,
    enumerate_recursive_trees,
    ode_numeric,
    ode_tree_series,
    taylor_coefficients,
    tree_parents,
)

OP1 = spd_build([[1.0]])
OP2 = spd_build([[2.0, -1.0], [-1.0, 2.0]])
TADPOLE = from_cycles([(2, 3, 4, 5)], [(0, 2), (3, 4), (5, 1)], [0, 1])
SUNSET = from_cycles([(2, 3, 4, 5), (6, 7, 8, 9)], [(0, 2), (3, 6), (4, 7), (5, 8), (9, 1)], [0, 1])


@pytest.fixture
def verdict(capsys):
    def emit(n, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, f"criterion {n}: {detail}"

    return emit


def mixed_theory(externals):
    return Theory(OP2, [VertexKernel.local(3, 0.7), VertexKernel.local(4, 0.4)], externals)


def test_criterion_1_forest_sum_quartic_0d(verdict):
    th = Theory(OP1, [VertexKernel.local(4, 1.0)], [0, 0])
    start = time.perf_counter()
    worst, checks = 0.0, 0
    for p in range(4):
        rep = verify_order(th, p, connected=True, jobs=1)
        worst = max(worst, rep.worst)
        checks += len(rep.reports)
    elapsed = time.perf_counter() - start
    ok = checks == 1 + 3 + 24 + 297 and worst < 1e-8 and elapsed < 30
    verdict(1, "forest sum, quartic 0d, p<=3", ok, f"{checks} maps, worst rel {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_forest_sum_matrix_mixed(verdict):
    start = time.perf_counter()
    worst = {"closed_form": 0.0, "quadrature": 0.0}
    checks = 0
    for externals in ([0], [0, 1]):
        th = mixed_theory(externals)
        for p in range(3):
            for method in worst:
                rep = verify_order(th, p, method=method, jobs=1)
                worst[method] = max(worst[method], rep.worst)
                checks += len(rep.reports)
    elapsed = time.perf_counter() - start
    ok = worst["closed_form"] < 1e-8 and worst["quadrature"] < 1e-5 and elapsed < 300 and checks > 0
    detail = (
        f"{checks} map checks, closed {worst['closed_form']:.2e}, "
        f"quadrature {worst['quadrature']:.2e}, {elapsed:.1f}s"
    )
    verdict(2, "forest sum, N=2 cubic+quartic, p<=2", ok, detail)


def test_criterion_3_coefficient_multiplicities(verdict):
    expected = {0: [1], 1: [3], 2: [9, 9, 6], 3: [27] * 5 + [54, 18, 18, 54, 18]}
    got = {}
    for p in expected:
        maps = enumerate_maps(2, (4,), p, connected=True).maps
        got[p] = sorted(embedding_counts(maps).values())
    ok = all(got[p] == sorted(v) for p, v in expected.items())
    verdict(3, "quartic 2-point embedding multiplicities", ok, str(got))


def test_criterion_4_free_and_low_order_reductions(verdict):
    # (a) against expm, and against the noise integral 2 int_{-inf}^{min} e^{-(t-u)A} e^{-(s-u)A} du
    err_a = 0.0
    for op in (OP1, OP2):
        A = op.matrix
        for dt in (0.0, 0.5, 2.0):
            ref = expm(-dt * A) @ np.linalg.inv(A)
            integral = quad_vec(lambda w: 2 * heat_kernel(op, dt + w) @ heat_kernel(op, w), 0, np.inf, epsabs=1e-13)[0]
            for t, s in ((dt, 0.0), (0.0, dt)):
                value = noise_propagator(op, t, s)
                err_a = max(err_a, np.abs(value - ref).max(), np.abs(value - integral).max())
    # (b) tadpole: two forests of -1/2 on each of 3 maps; sunset: four weighted terms summing to 1 on each of 6 maps
    th = Theory(OP1, [VertexKernel.local(4, 1.0)], [0, 0])
    tadpole_values = [stochastic_amplitude(TADPOLE, f, th) for f in enumerate_spanning_forests(TADPOLE)]
    terms = taylor_terms(SUNSET)
    sunset_sum = math.fsum(t.multiplicity * stochastic_amplitude(SUNSET, t.forest, th, vertex_order=t.vertex_order) for t in terms)
    order1 = enumerate_maps(2, (4,), 1, connected=True).maps
    order2 = defaultdict(list)
    for m in enumerate_maps(2, (4,), 2, connected=True).maps:
        order2[to_abstract_graph(m)].append(m)
    sunset_class = order2[to_abstract_graph(SUNSET)]
    factor3 = math.fsum(sum(stochastic_amplitude(m, f, th) for f in enumerate_spanning_forests(m)) for m in order1)
    factor6 = math.fsum(sum(stochastic_amplitude(m, f, th) for f in enumerate_spanning_forests(m)) for m in sunset_class)
    ok_b = (
        all(abs(v + 0.5) < 1e-14 for v in tadpole_values)
        and len(tadpole_values) == 2
        and len(terms) == 4
        and abs(sunset_sum - 1.0) < 1e-12
        and abs(factor3 + 3.0) < 1e-12
        and len(sunset_class) == 6
        and abs(factor6 - 6.0) < 1e-12
    )
    detail = f"free max err {err_a:.1e}; tadpole {tadpole_values} x3 = {factor3:.12g}; sunset 4-term {sunset_sum:.12g} x6 = {factor6:.12g}"
    verdict(4, "free propagator and tadpole/sunset factors", err_a < 1e-10 and ok_b, detail)


def test_criterion_5_tree_combinatorics(verdict):
    fails = []
    for p in range(1, 8):
        if len(enumerate_recursive_trees(p)) != math.factorial(p - 1):
            fails.append(f"recursive p={p}")
    for E in range(1, 9):
        if len(enumerate_plane_trees(E)) != math.comb(2 * E, E) // (E + 1):
            fails.append(f"plane E={E}")
    for q in range(2, 5):
        for k in range(5):
            if len(enumerate_qary_trees(q, k)) != math.comb(q * k + 1, k) // (q * k + 1):
                fails.append(f"q-ary q={q} k={k}")
    shapes = [(), ((),), (((),),), ((), ()), ((((),),),), (((), ()),), ((), ((),)), ((), (), ())]
    if [alpha_multiplicity(t) for t in shapes] != [1, 1, 1, 1, 1, 1, 3, 1]:
        fails.append("alpha list")
    table = [Fraction(1), Fraction(1, 2), Fraction(1, 6), Fraction(1, 3)] + [Fraction(1, d) for d in (24, 12, 8, 4)]
    if [simplex_constant(tree_parents(t)) for t in shapes] != table:
        fails.append("simplex table")
    verdict(5, "tree counts, alpha list, simplex table", not fails, ", ".join(fails) or "all exact")


def test_criterion_6_ode_tree_series(verdict):
    rng = np.random.default_rng(2024)
    corpus = []
    for _ in range(50):
        q = int(rng.integers(0, 5))
        corpus.append((TaylorFunction(rng.uniform(-1, 1, size=q + 1)), float(rng.uniform(0, 0.5)), int(rng.integers(1, 9))))
    spread = 0.0
    bound_violations = 0
    for f, t, p in corpus:
        vals = [ode_tree_series(f, t, p, name) for name in EVALUATORS]
        spread = max(spread, (max(vals) - min(vals)) / max(1.0, max(map(abs, vals))))
        tail = taylor_coefficients(f, p + 40)[p + 1 :]
        K = 2.0 * sum(abs(c) * t**j for j, c in enumerate(tail)) + 1e-12
        if abs(vals[0] - ode_numeric(f, t)) > K * t ** (p + 1) + 1e-10:
            bound_violations += 1
    tangent = [1.0, 0.0, 1.0]
    partial = [0.0] + [ode_tree_series(tangent, 1.0, k) for k in range(1, 6)]
    coeffs = {k: partial[k] - partial[k - 1] for k in (1, 3, 5)}
    tan_err = max(abs(coeffs[1] - 1), abs(coeffs[3] - 1 / 3), abs(coeffs[5] - 2 / 15))
    ok = spread <= 1e-12 and tan_err <= 1e-12 and bound_violations == 0
    detail = f"evaluator spread {spread:.1e}, tangent err {tan_err:.1e}, bound violations {bound_violations}/50"
    verdict(6, "ODE tree series", ok, detail)


LANGEVIN_CASES = {
    "0d g=0.1": (Theory(OP1, [VertexKernel.local(4, 0.1)]), [(0, 0), (0, 0, 0, 0)]),
    "0d g=0.5": (Theory(OP1, [VertexKernel.local(4, 0.5)]), [(0, 0), (0, 0, 0, 0)]),
    "N=2 g=0.1": (Theory(OP2, [VertexKernel.local(4, 0.1)]), [(0, 0), (0, 0, 0, 0), (1, 1), (1, 1, 1, 1)]),
}


@pytest.mark.slow
def test_criterion_7_langevin_equilibrium(verdict):
    h = 1e-3
    cfg = SimConfig(step=h, burn_in=10_000, samples=1_000_000, chains=2048, seed=20240601)
    parts, ok = [], True
    for name, (th, monomials) in LANGEVIN_CASES.items():
        start = time.perf_counter()
        estimates = equilibrium_moments(th, cfg, monomials)
        elapsed = time.perf_counter() - start
        refs = quadrature_moment_oracle(th, monomials=monomials)
        for mono, est, ref in zip(monomials, estimates, refs):
            dev = abs(est.value - ref)
            good = est.agrees(ref, 3.0) and dev <= 5 * h
            ok &= good
            parts.append(f"{name} {len(mono)}pt site{mono[0]} dev {dev:.1e} ({dev / est.std_error:.1f} se)" + ("" if good else " MISS"))
        ok &= elapsed < 180
        parts.append(f"{name} {elapsed:.0f}s")
    verdict(7, "Langevin moments vs quadrature", ok, "; ".join(parts))


def test_criterion_8_structural_properties(verdict):
    fails = []
    rng = random.Random(42)
    pool = []
    for n, degs, p in [(2, (4,), 2), (1, (3,), 3), (2, (3, 4), 2), (4, (4,), 2), (2, (4,), 3)]:
        pool.extend(enumerate_maps(n, degs, p).maps)
    rng.shuffle(pool)
    violations = 0
    for m in pool[:50]:
        key = canonical_key(m)
        inner = [d for d in range(m.n_darts) if d not in set(m.externals)]
        for _ in range(200):
            shuffled = inner[:]
            rng.shuffle(shuffled)
            tau = list(range(m.n_darts))
            for a, b in zip(inner, shuffled):
                tau[a] = b
            violations += canonical_key(relabel(m, tau)) != key
    if violations:
        fails.append(f"{violations} relabeling violations")

    for n, deg, pmax in [(1, 3, 3), (2, 3, 3), (3, 3, 3), (2, 4, 2), (4, 4, 2)]:
        for p in range(pmax + 1):
            try:
                enum = enumerate_maps(n, (deg,), p)
            except DegreeParityImpossible:
                continue
            if any(c.multiplicity != math.factorial(p) * deg**p for c in enum):
                fails.append(f"multiplicity n={n} degree={deg} p={p}")

    gap_err = top_err = 0.0
    forests = 0
    for externals in ([0], [0, 1]):
        th = mixed_theory(externals)
        for p in range(3):
            try:
                maps = enumerate_maps(len(externals), (3, 4), p).maps
            except DegreeParityImpossible:
                continue
            for m in maps:
                scale = abs(feynman_amplitude(m, th)) or 1.0
                for f in enumerate_spanning_forests(m):
                    closed = stochastic_amplitude(m, f, th, "closed_form")
                    q0 = stochastic_amplitude(m, f, th, "quadrature", t_top=0.0)
                    q2 = stochastic_amplitude(m, f, th, "quadrature", t_top=2.0)
                    denom = max(abs(closed), 1e-12 * scale)
                    gap_err = max(gap_err, abs(q0 - closed) / denom)
                    top_err = max(top_err, abs(q2 - q0) / max(abs(q0), 1e-12 * scale))
                    forests += 1
    if gap_err >= 1e-6:
        fails.append(f"gap vs quadrature {gap_err:.1e}")
    if top_err >= 1e-6:
        fails.append(f"top-time {top_err:.1e}")
    detail = f"{violations} relabel violations; {forests} forests, gap err {gap_err:.1e}, top-time err {top_err:.1e}"
    verdict(8, "structural properties", not fails, "; ".join(fails) or detail)
