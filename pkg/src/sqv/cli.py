"""Command-line driver.

Exit codes: 0 success, 1 a verification failed, 2 usage or configuration
error. Set ``SQV_LOG`` (DEBUG, INFO, WARNING, ...) to control logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from fractions import Fraction
from typing import Sequence, TextIO

from . import __version__
from .config import load_theory
from .errors import ConfigError, SQVError
from .feynman import Theory, VertexKernel, feynman_amplitude, quadrature_moment_oracle, wick_moment
from .langevin import SimConfig, equilibrium_moments, simulate, write_trajectory
from .maps import embedding_counts, enumerate_maps, parse_map
from .operator import covariance, noise_propagator, simplex_constant, spd_build
from .stochastic import enumerate_spanning_forests, stochastic_amplitude, taylor_terms, verify_order
from .trees import (
    alpha_multiplicity,
    catalan,
    enumerate_plane_trees,
    enumerate_qary_trees,
    enumerate_recursive_trees,
    fuss_catalan,
    tree_parents,
    unlabeled_trees,
)

log = logging.getLogger("sqv")

VERBS = ("enumerate-maps", "enumerate-trees", "amplitude", "verify", "verify-order", "simulate", "selftest")


def fmt(x) -> str:
    """Numbers at 12 significant digits; everything else via ``str``."""
    if isinstance(x, bool) or x is None:
        return str(x).lower()
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _json_value(x):
    if isinstance(x, float):
        return float(f"{x:.12g}") if math.isfinite(x) else str(x)
    return x


class Emitter:
    """Writes rows either as an aligned table or as JSON lines."""

    def __init__(self, mode: str, out: TextIO):
        self.mode = mode
        self.out = out
        self.rows: list[dict] = []

    def row(self, **fields):
        if self.mode == "records":
            self.out.write(json.dumps({k: _json_value(v) for k, v in fields.items()}) + "\n")
        else:
            self.rows.append(fields)

    def flush(self, title: str | None = None):
        if self.mode == "records" or not self.rows:
            self.rows = []
            return
        cols = list(self.rows[0])
        cells = [[fmt(r.get(c, "")) for c in cols] for r in self.rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        if title:
            self.out.write(title + "\n")
        self.out.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)) + "\n")
        for row in cells:
            self.out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)) + "\n")
        self.rows = []

    def note(self, text: str):
        if self.mode != "records":
            self.out.write(text + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqv", description="Forest-sum verification for scalar field theories.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", metavar="VERB", required=True)

    def common(sp, theory=False):
        sp.add_argument("--format", choices=("table", "records"), default="table")
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        if theory:
            sp.add_argument("--theory", required=True, metavar="FILE")

    sp = sub.add_parser("enumerate-maps", help="enumerate unlabeled maps at one order")
    common(sp)
    sp.add_argument("--n", type=int, required=True, help="number of external vertices")
    sp.add_argument("--degree", type=int, action="append", required=True, help="internal vertex degree (repeatable)")
    sp.add_argument("--p", type=int, required=True, help="number of internal vertices")
    sp.add_argument("--connected", action="store_true")

    sp = sub.add_parser("enumerate-trees", help="tree counts, multiplicities and simplex constants")
    common(sp)
    sp.add_argument("--p", type=int, required=True, help="largest number of vertices")
    sp.add_argument("--degree", type=int, default=None, help="also count q-ary trees for this q")

    sp = sub.add_parser("amplitude", help="Feynman and per-forest stochastic amplitudes of one map")
    common(sp, theory=True)
    sp.add_argument("--map", required=True, help="map record: 'darts=..; sigma=..; alpha=..; externals=[..]'")
    sp.add_argument("--method", choices=("closed", "quadrature"), default="closed")

    for verb, text in (("verify", "forest-sum check at one order"), ("verify-order", "forest-sum check at orders 0..P")):
        sp = sub.add_parser(verb, help=text)
        common(sp, theory=True)
        sp.add_argument("--n", type=int, default=None)
        sp.add_argument("--order", type=int, required=True)
        sp.add_argument("--method", choices=("closed", "quadrature"), default="closed")
        sp.add_argument("--connected", action="store_true")

    sp = sub.add_parser("simulate", help="Langevin equilibrium moments")
    common(sp, theory=True)
    sp.add_argument("--steps", type=int, default=100_000, help="recorded post-burn-in steps per chain")
    sp.add_argument("--burn-in", type=int, default=10_000)
    sp.add_argument("--step", type=float, default=1e-3, help="time step h")
    sp.add_argument("--chains", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--monomial", action="append", default=None, help="comma-separated sites, e.g. 0,0 (repeatable)")
    sp.add_argument("--dump", metavar="FILE", default=None, help="write the first chain's trajectory")

    sp = sub.add_parser("selftest", help="run the built-in golden checks")
    common(sp)
    return p


def _method(name: str) -> str:
    return "closed_form" if name == "closed" else "quadrature"


def _theory_for(args) -> Theory:
    theory = load_theory(args.theory)
    n = getattr(args, "n", None)
    if n is None:
        return theory
    if theory.n_external == 0:
        return theory.with_externals([0] * n)
    if theory.n_external != n:
        raise ConfigError(f"theory lists {theory.n_external} externals but --n is {n}", None, "externals")
    return theory


def cmd_enumerate_maps(args, em: Emitter) -> int:
    enum = enumerate_maps(args.n, args.degree, args.p, connected=args.connected)
    counts = embedding_counts(enum.maps)
    for i, (graph, count) in enumerate(sorted(counts.items(), key=lambda kv: kv[0].canonical)):
        em.row(graph=i, embeddings=count, edges=" ".join(f"{a}-{b}" for a, b in graph.canonical[2]))
    em.flush(f"{len(enum)} unlabeled maps in {len(counts)} abstract graphs")
    em.note(f"multiplicity law p!*prod(deg) holds: {enum.multiplicity_law_holds}")
    return 0 if enum.multiplicity_law_holds else 1


def cmd_enumerate_trees(args, em: Emitter) -> int:
    for p in range(1, args.p + 1):
        shapes = unlabeled_trees(p)
        em.row(
            p=p,
            recursive=len(enumerate_recursive_trees(p)),
            plane=len(enumerate_plane_trees(p - 1)),
            unlabeled=len(shapes),
        )
    em.flush("tree counts by number of vertices")
    for p in range(1, args.p + 1):
        for shape in unlabeled_trees(p):
            c = simplex_constant(tree_parents(shape))
            em.row(p=p, tree=_tree_text(shape), alpha=alpha_multiplicity(shape), simplex=f"t^{p}*{c}")
    em.flush("unlabeled trees: alpha multiplicity and simplex integral")
    if args.degree:
        for k in range(args.p + 1):
            em.row(q=args.degree, k=k, trees=len(enumerate_qary_trees(args.degree, k)), fuss_catalan=fuss_catalan(args.degree, k))
        em.flush("q-ary trees")
    return 0


def _tree_text(t) -> str:
    return "o" + ("(" + ",".join(_tree_text(c) for c in t) + ")" if t else "")


def cmd_amplitude(args, em: Emitter) -> int:
    theory = load_theory(args.theory)
    m = parse_map(args.map)
    if theory.n_external != m.n_external:
        theory = theory.with_externals(([0] * m.n_external) if theory.n_external == 0 else theory.external_sites)
    method = _method(args.method)
    feyn = feynman_amplitude(m, theory)
    total = []
    for f in enumerate_spanning_forests(m):
        v = stochastic_amplitude(m, f, theory, method)
        total.append(v)
        em.row(forest=f.key, value=v)
    em.flush()
    s = math.fsum(total)
    em.row(feynman=feyn, forest_sum=s, rel_discrepancy=abs(s - feyn) / max(abs(feyn), 1e-300), method=method)
    em.flush()
    return 0


def cmd_verify(args, em: Emitter, orders: Sequence[int]) -> int:
    theory = _theory_for(args)
    method = _method(args.method)
    ok = True
    for order in orders:
        t0 = time.perf_counter()
        rep = verify_order(theory, order, method=method, connected=args.connected, jobs=args.jobs)
        for r in rep.reports:
            em.row(
                map_key=r.map_key.short(),
                order=r.order,
                feynman_value=r.feynman_value,
                forests=len(r.forest_values),
                forest_sum=r.forest_sum,
                rel_discrepancy=r.rel_discrepancy,
                passed=r.passed,
            )
        em.flush(f"order {order}: {len(rep.reports)} map checks")
        em.note(
            f"order {order}: worst rel_discrepancy {fmt(rep.worst)}; moment {fmt(rep.moment_stochastic)} "
            f"vs Feynman series {fmt(rep.moment_reference)}; {'PASS' if rep.passed else 'FAIL'} "
            f"({time.perf_counter() - t0:.1f}s)"
        )
        ok &= rep.passed
    return 0 if ok else 1


def cmd_simulate(args, em: Emitter) -> int:
    theory = load_theory(args.theory)
    monomials = [tuple(int(x) for x in m.split(",") if x.strip()) for m in (args.monomial or ["0,0"])]
    for mono in monomials:
        if any(not 0 <= x < theory.op.dim for x in mono):
            raise ConfigError(f"monomial {mono} has sites outside 0..{theory.op.dim - 1}", None, "monomial")
    cfg = SimConfig(step=args.step, burn_in=args.burn_in, samples=args.steps, seed=args.seed, chains=args.chains)
    if args.dump:
        with open(args.dump, "w") as fh:
            write_trajectory(simulate(theory, SimConfig(step=args.step, burn_in=args.burn_in, samples=args.steps, seed=args.seed)), fh)
    ests = equilibrium_moments(theory, cfg, monomials, jobs=args.jobs)
    refs = None
    if theory.op.dim <= 3:
        try:
            refs = quadrature_moment_oracle(theory, monomials=monomials)
        except SQVError as exc:
            log.warning("no quadrature reference: %s", exc)
    for i, (mono, e) in enumerate(zip(monomials, ests)):
        row = dict(monomial=",".join(map(str, mono)), value=e.value, std_error=e.std_error, n_effective=e.n_effective)
        if refs is not None:
            row.update(oracle=refs[i], z=(e.value - refs[i]) / e.std_error if e.std_error else 0.0)
        em.row(**row)
    em.flush(f"Langevin h={fmt(args.step)}, {args.chains} chains x {args.steps} samples")
    return 0


def selftest_checks() -> list[tuple[str, bool, str]]:
    """Golden low-order checks; each entry is (name, passed, detail)."""
    checks = []

    def add(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    q = enumerate_maps(2, (4,), 0)
    add("quartic 2-point order 0 maps", len(q) == 1, str(len(q)))
    q1 = enumerate_maps(2, (4,), 1, connected=True)
    add("quartic 2-point order 1 maps", len(q1) == 3, str(len(q1)))
    q2 = enumerate_maps(2, (4,), 2, connected=True)
    counts = sorted(embedding_counts(q2.maps).values())
    add("quartic order 2 embeddings 6,9,9", counts == [6, 9, 9], str(counts))
    add("multiplicity law at order 2", q2.multiplicity_law_holds)
    c3 = enumerate_maps(1, (3,), 3, connected=True)
    add("cubic 1-point order 3 maps", len(c3) == 5 and c3.multiplicity_law_holds, str(len(c3)))

    op = spd_build([[1.0]])
    th = Theory(op, [VertexKernel.local(4, 1.0)], [0, 0])
    tad = q1.maps[0]
    vals = [stochastic_amplitude(tad, f, th) for f in enumerate_spanning_forests(tad)]
    add("tadpole forests -1/2, -1/2", len(vals) == 2 and all(abs(v + 0.5) < 1e-12 for v in vals), fmt(vals))
    add("tadpole Feynman value -1", abs(feynman_amplitude(tad, th) + 1) < 1e-12)
    sunset = next(m for m in q2.maps if len(taylor_terms(m)) == 4 and len(enumerate_spanning_forests(m)) == 7)
    tt = taylor_terms(sunset)
    s = math.fsum(t.multiplicity * stochastic_amplitude(sunset, t.forest, th, vertex_order=t.vertex_order) for t in tt)
    add("sunset: 4 Taylor terms sum to +1", abs(s - 1) < 1e-12, fmt(s))

    op2 = spd_build([[2.0, -1.0], [-1.0, 2.0]])
    free = all(
        abs(noise_propagator(op2, dt, 0.0)[0, 1] - (op2.spectral(math.e ** (-dt * op2.eigenvalues) / op2.eigenvalues))[0, 1]) < 1e-12
        for dt in (0.0, 0.5, 2.0)
    )
    add("free stochastic 2-point at equal times is C", free and abs(noise_propagator(op2, 1, 1)[0, 1] - covariance(op2)[0, 1]) < 1e-15)
    add("Wick 4-point N=1", abs(wick_moment([[2.0]], [0] * 4) - 12.0) < 1e-12)

    for p in range(4):
        rep = verify_order(th, p)
        add(f"forest sum, quartic 0d, order {p}", rep.passed, fmt(rep.worst))

    alphas = [alpha_multiplicity(t) for p in range(1, 5) for t in _small_tree_order(p)]
    add("alpha list 1,1,1,1,1,1,3,1", alphas == [1, 1, 1, 1, 1, 1, 3, 1], str(alphas))
    consts = [simplex_constant(tree_parents(t)) for p in range(1, 5) for t in _small_tree_order(p)]
    expected = [Fraction(1), Fraction(1, 2), Fraction(1, 6), Fraction(1, 3), Fraction(1, 24), Fraction(1, 12), Fraction(1, 8), Fraction(1, 4)]
    add("simplex table", consts == expected, str([str(c) for c in consts]))
    add("Catalan counts", all(len(enumerate_plane_trees(E)) == catalan(E) for E in range(1, 8)))
    return checks


def _small_tree_order(p: int):
    """Unlabeled trees in the order chains first, then by branching."""
    table = {
        1: [()],
        2: [((),)],
        3: [(((),),), ((), ())],
        4: [((((),),),), (((), ()),), ((), ((),)), ((), (), ())],
    }
    return table[p]


def cmd_selftest(args, em: Emitter) -> int:
    checks = selftest_checks()
    for name, ok, detail in checks:
        em.row(check=name, passed=ok, detail=detail)
    em.flush()
    failed = sum(1 for _, ok, _ in checks if not ok)
    em.note(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


def run(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    level = os.environ.get("SQV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    em = Emitter(args.format, out)
    try:
        if args.verb == "enumerate-maps":
            return cmd_enumerate_maps(args, em)
        if args.verb == "enumerate-trees":
            return cmd_enumerate_trees(args, em)
        if args.verb == "amplitude":
            return cmd_amplitude(args, em)
        if args.verb == "verify":
            return cmd_verify(args, em, [args.order])
        if args.verb == "verify-order":
            return cmd_verify(args, em, range(args.order + 1))
        if args.verb == "simulate":
            return cmd_simulate(args, em)
        return cmd_selftest(args, em)
    except ConfigError as exc:
        print(f"sqv: config error: {exc}", file=sys.stderr)
        return 2
    except (SQVError, ValueError) as exc:
        print(f"sqv: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
