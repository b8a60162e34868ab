"""Stochastic side: spanning forests of maps and their amplitudes.

A forest picks, for every internal vertex, one incoming tree edge whose
parent end is closer to an external root. All remaining edges are noise
edges. At equal external times ``t`` the amplitude of ``(map, forest)`` is

    sum over eigen-indices k_e per edge of
        (external eigenvector factors) x prod_v (-V~_v)  x  prod_noise 1/lambda
        x sum over linear extensions of prod_gaps 1/R_gap

where ``V~`` is the kernel rotated into the eigenbasis of ``A`` and
``R_gap`` sums the eigenvalues of the edges spanning that gap of the
extension. Tree edges decay as ``exp(-dt lambda)``, noise edges as
``exp(-|dt| lambda)/lambda``; self-loops and edges between two externals
carry a bare ``1/lambda``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import DegreeParityImpossible, NotSpanning, TooManyVertices
from .feynman import AmplitudeReport, Theory, _check_map, feynman_amplitude, order_total, perturbative_moment
from .maps import CombinatorialMap, canonical_key, enumerate_maps
from .operator import covariance, heat_kernel_batch, nested_ordered_quadrature, noise_propagator_batch

log = logging.getLogger(__name__)

MAX_LINEAR_EXTENSION_VERTICES = 8
CLOSED_FORM_RTOL = 1e-8
QUADRATURE_RTOL = 1e-5
REL_GUARD = 1e-300


@dataclass(frozen=True)
class SpanningForest:
    """Oriented tree edges ``(parent dart, child dart)`` plus the noise edges."""

    tree_edges: tuple[tuple[int, int], ...]
    noise_edges: tuple[tuple[int, int], ...]
    roots: tuple[int, ...]

    @property
    def key(self) -> str:
        return ",".join(f"{a}>{b}" for a, b in self.tree_edges) or "-"

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class ForestPoset:
    """Ancestry order on internal vertices.

    ``parent[i]`` is the index (into ``vertices``) of the internal parent of
    ``vertices[i]``, or ``-1`` when the parent is an external root.
    """

    vertices: tuple[int, ...]
    parent: tuple[int, ...]

    def linear_extensions(self) -> Iterator[tuple[int, ...]]:
        """Total orders (top to bottom) as tuples of indices into ``vertices``."""
        p = len(self.parent)
        if p > MAX_LINEAR_EXTENSION_VERTICES:
            raise TooManyVertices(
                f"{p} internal vertices exceeds the exact-enumeration cap of {MAX_LINEAR_EXTENSION_VERTICES}"
            )
        kids: list[list[int]] = [[] for _ in range(p)]
        ready = []
        for i, q in enumerate(self.parent):
            (ready if q < 0 else kids[q]).append(i)
        order: list[int] = []

        def rec(avail: list[int]):
            if len(order) == p:
                yield tuple(order)
                return
            for j, v in enumerate(avail):
                order.append(v)
                yield from rec(avail[:j] + avail[j + 1 :] + kids[v])
                order.pop()

        yield from rec(sorted(ready))


def _vertex_parents(m: CombinatorialMap, forest: SpanningForest) -> dict[int, int]:
    vo = m.vertex_of
    out: dict[int, int] = {}
    for a, b in forest.tree_edges:
        child = vo[b]
        if child in out:
            raise NotSpanning(f"vertex {child} has two incoming tree edges")
        out[child] = vo[a]
    return out


def validate_forest(m: CombinatorialMap, forest: SpanningForest) -> None:
    edges = set(m.edges)
    tree = {tuple(sorted(e)) for e in forest.tree_edges}
    noise = {tuple(sorted(e)) for e in forest.noise_edges}
    if tree & noise or (tree | noise) != edges or len(tree) != len(forest.tree_edges):
        raise NotSpanning("tree and noise edges must partition the edges of the map")
    n_ext = m.n_external
    parents = _vertex_parents(m, forest)
    if set(parents) != set(range(n_ext, len(m.vertices))):
        raise NotSpanning("every internal vertex needs exactly one incoming tree edge")
    for v in parents:
        seen = set()
        while v >= n_ext:
            if v in seen:
                raise NotSpanning("tree edges contain a cycle")
            seen.add(v)
            v = parents[v]


def forest_poset(m: CombinatorialMap, forest: SpanningForest) -> ForestPoset:
    validate_forest(m, forest)
    n_ext = m.n_external
    parents = _vertex_parents(m, forest)
    verts = tuple(range(n_ext, len(m.vertices)))
    return ForestPoset(verts, tuple(-1 if parents[v] < n_ext else parents[v] - n_ext for v in verts))


# ---------------------------------------------------------------------------
# enumeration


def _step_sequences(m: CombinatorialMap, dedupe: bool) -> Iterator[tuple[tuple[tuple[int, int], ...], tuple[int, ...]]]:
    """Choice sequences of the iterative procedure.

    Yields ``(tree_edges_in_choice_order, vertex_order)``. With ``dedupe``
    the search is pruned so that each tree-edge set is produced once.
    """
    vo = m.vertex_of
    n_ext = m.n_external
    n_vert = len(m.vertices)
    alpha = m.alpha
    seen: set[frozenset] = set()

    def rec(reached: frozenset, chosen: list, order: list):
        if len(reached) == n_vert:
            yield tuple(chosen), tuple(order)
            return
        for d in range(m.n_darts):
            w = vo[alpha[d]]
            if vo[d] in reached and w not in reached:
                chosen.append((d, alpha[d]))
                if dedupe:
                    k = frozenset(chosen)
                    if k in seen:
                        chosen.pop()
                        continue
                    seen.add(k)
                order.append(w)
                yield from rec(reached | {w}, chosen, order)
                order.pop()
                chosen.pop()

    yield from rec(frozenset(range(n_ext)), [], [])


def _forest_from_edges(m: CombinatorialMap, tree_edges) -> SpanningForest:
    tree = tuple(sorted(tree_edges))
    used = {tuple(sorted(e)) for e in tree}
    noise = tuple(e for e in m.edges if e not in used)
    return SpanningForest(tree, noise, tuple(m.externals))


def enumerate_spanning_forests(m: CombinatorialMap) -> list[SpanningForest]:
    """All forests reachable by the grow-from-the-externals procedure.

    Edges joining two externals are noise from the start; each step attaches
    one not-yet-reached internal vertex through one of the edges leaving the
    reached set, its dart on the new vertex becoming that vertex's first
    dart. Forests are identified by their set of oriented tree edges.
    """
    out = {}
    for edges, _ in _step_sequences(m, dedupe=True):
        f = _forest_from_edges(m, edges)
        out[f.tree_edges] = f
    return [out[k] for k in sorted(out)]


def enumerate_forests_by_components(m: CombinatorialMap) -> list[SpanningForest]:
    """Same set as :func:`enumerate_spanning_forests`, built as a product over
    connected components (each component has its own roots)."""
    per_comp = []
    for comp in m.components:
        comp = set(comp)
        sub = [f for f in _component_forests(m, comp)]
        per_comp.append(sub)
    out = [()]
    for sub in per_comp:
        out = [a + b for a in out for b in sub]
    forests = [_forest_from_edges(m, edges) for edges in out]
    return sorted(forests, key=lambda f: f.tree_edges)


def _component_forests(m: CombinatorialMap, comp: set[int]) -> list[tuple]:
    vo = m.vertex_of
    n_ext = m.n_external
    internal = [v for v in comp if v >= n_ext]
    results = set()

    def rec(reached: frozenset, chosen: tuple):
        if all(v in reached for v in internal):
            results.add(tuple(sorted(chosen)))
            return
        for d in range(m.n_darts):
            if vo[d] in comp and vo[d] in reached and vo[m.alpha[d]] not in reached:
                rec(reached | {vo[m.alpha[d]]}, chosen + ((d, m.alpha[d]),))

    rec(frozenset(v for v in comp if v < n_ext), ())
    return sorted(results)


@dataclass(frozen=True)
class TaylorTerm:
    """One term of the step-by-step interpolation, up to the choice among
    parallel edges: a forest, the order in which its vertices were attached,
    and how many parallel-edge variants share the same value."""

    forest: SpanningForest
    vertex_order: tuple[int, ...]
    multiplicity: int


def taylor_terms(m: CombinatorialMap) -> list[TaylorTerm]:
    vo = m.vertex_of
    groups: dict[tuple, list] = {}
    for edges, order in _step_sequences(m, dedupe=False):
        shape = tuple(sorted((vo[a], vo[b]) for a, b in edges))
        groups.setdefault((shape, order), []).append(edges)
    out = []
    for (_, order), members in sorted(groups.items()):
        distinct = sorted({tuple(sorted(e)) for e in members})
        out.append(TaylorTerm(_forest_from_edges(m, distinct[0]), order, len(distinct)))
    return out


# ---------------------------------------------------------------------------
# amplitudes


@dataclass
class _Layout:
    """Edge bookkeeping shared by both evaluation methods."""

    ends: list[tuple[int, int]]  # vertex at each end (parent first for tree edges)
    is_tree: list[bool]
    poset: ForestPoset


def _layout(m: CombinatorialMap, forest: SpanningForest) -> _Layout:
    poset = forest_poset(m, forest)
    vo = m.vertex_of
    tree_pairs = {tuple(sorted(e)): e for e in forest.tree_edges}
    ends, is_tree = [], []
    for e in m.edges:
        if e in tree_pairs:
            a, b = tree_pairs[e]
            ends.append((vo[a], vo[b]))
            is_tree.append(True)
        else:
            ends.append((vo[e[0]], vo[e[1]]))
            is_tree.append(False)
    return _Layout(ends, is_tree, poset)


def _spatial_weight(m: CombinatorialMap, theory: Theory) -> np.ndarray:
    """``W[k_0, ..., k_{E-1}]``: eigenbasis vertex and external factors."""
    kernels = _check_map(m, theory)
    U = theory.op.eigenvectors
    edge_of = {}
    for i, (a, b) in enumerate(m.edges):
        edge_of[a] = edge_of[b] = i
    operands: list = []
    for nu, d in enumerate(m.externals):
        operands += [U[theory.external_sites[nu]], [edge_of[d]]]
    for cyc, ker in zip(m.internal_vertices, kernels):
        operands += [-ker.eigen_tensor(theory.op), [edge_of[d] for d in cyc]]
    n_edges = len(m.edges)
    return np.einsum(*operands, list(range(n_edges)), optimize="greedy")


def _closed_form_time_factor(layout: _Layout, lam: np.ndarray, n_ext: int, extensions=None) -> np.ndarray:
    n_edges = len(layout.ends)
    shape = [1] * n_edges

    def axis(e):
        s = list(shape)
        s[e] = len(lam)
        return lam.reshape(s)

    pref = np.ones([len(lam)] * n_edges)
    for e, tree in enumerate(layout.is_tree):
        if not tree:
            pref = pref / axis(e)
    p = len(layout.poset.vertices)
    if p == 0:
        return pref
    total = np.zeros_like(pref)
    exts = layout.poset.linear_extensions() if extensions is None else extensions
    for ext in exts:
        pos = {v: 0 for v in range(n_ext)}
        for rank, i in enumerate(ext, start=1):
            pos[layout.poset.vertices[i]] = rank
        term = np.ones_like(pref)
        for k in range(p):  # gap between positions k and k+1
            rate = np.zeros_like(pref)
            for e, (a, b) in enumerate(layout.ends):
                lo, hi = sorted((pos[a], pos[b]))
                if lo <= k < hi:
                    rate = rate + axis(e)
            term = term / rate
        total += term
    return pref * total


def stochastic_amplitude(
    m: CombinatorialMap,
    forest: SpanningForest,
    theory: Theory,
    method: str = "closed_form",
    t_top: float = 0.0,
    vertex_order: Sequence[int] | None = None,
) -> float:
    """Amplitude of one forest at equal external times ``t_top``.

    ``vertex_order`` (internal vertices, top to bottom) restricts the time
    integral to a single linear extension.
    """
    layout = _layout(m, forest)
    exts = None
    if vertex_order is not None:
        index = {v: i for i, v in enumerate(layout.poset.vertices)}
        exts = [tuple(index[v] for v in vertex_order)]
    if method == "closed_form":
        lam = np.asarray(theory.op.eigenvalues)
        W = _spatial_weight(m, theory)
        T = _closed_form_time_factor(layout, lam, m.n_external, exts)
        return float(np.sum(W * T))
    if method == "quadrature":
        return _quadrature_amplitude(m, layout, theory, t_top, exts)
    raise ValueError(f"unknown method {method!r}")


def _quadrature_amplitude(m, layout: _Layout, theory: Theory, t_top: float, exts) -> float:
    kernels = _check_map(m, theory)
    op = theory.op
    n = op.dim
    n_ext = m.n_external
    p = len(layout.poset.vertices)
    C = covariance(op)

    label = [0] * m.n_darts
    static: list = []
    nxt = 1  # label 0 is the batch of quadrature points
    for nu, d in enumerate(m.externals):
        label[d] = nxt
        static += [np.eye(n)[theory.external_sites[nu]], [nxt]]
        nxt += 1
    for cyc, ker in zip(m.internal_vertices, kernels):
        if ker.kind == "local":
            for d in cyc:
                label[d] = nxt
            static += [np.full(n, -ker.g), [nxt]]
            nxt += 1
        else:
            labs = list(range(nxt, nxt + len(cyc)))
            for d, lab in zip(cyc, labs):
                label[d] = lab
            nxt += len(cyc)
            static += [-ker.tensor, labs]
    edge_labels = [[label[a], label[b]] for a, b in m.edges]
    if p == 0:
        ops = list(static)
        for (a, b) in edge_labels:
            ops += [C, [a, b]]
        return float(np.einsum(*ops, [], optimize="greedy"))

    t_span = 40.0 / op.lam_min
    exts = list(layout.poset.linear_extensions()) if exts is None else exts
    total = 0.0
    for ext in exts:
        pos = {v: 0 for v in range(n_ext)}
        for rank, i in enumerate(ext, start=1):
            pos[layout.poset.vertices[i]] = rank

        def integrand(times, pos=pos):
            ops = list(static)
            for e, ((va, vb), tree) in enumerate(zip(layout.ends, layout.is_tree)):
                la, lb = edge_labels[e]
                if va == vb or (pos[va] == 0 and pos[vb] == 0):
                    ops += [C, [la, lb]]
                    continue
                ta, tb = times[:, pos[va]], times[:, pos[vb]]
                if tree:
                    # parent is later in fictitious time, so ta >= tb
                    mats = heat_kernel_batch(op, ta - tb)
                else:
                    mats = noise_propagator_batch(op, ta - tb)
                ops += [mats, [0, la, lb]]
            return np.einsum(*ops, [0], optimize="greedy")

        total += nested_ordered_quadrature(integrand, p, t_top, t_span)
    return total


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), REL_GUARD)


def verify_forest_sum(m: CombinatorialMap, theory: Theory, method: str = "closed_form") -> AmplitudeReport:
    feyn = feynman_amplitude(m, theory)
    values = tuple(
        (f.key, stochastic_amplitude(m, f, theory, method)) for f in enumerate_spanning_forests(m)
    )
    total = math.fsum(v for _, v in values)
    tol = CLOSED_FORM_RTOL if method == "closed_form" else QUADRATURE_RTOL
    return AmplitudeReport(
        map_key=canonical_key(m),
        order=len(m.internal_vertices),
        feynman_value=feyn,
        forest_values=values,
        forest_sum=total,
        abs_discrepancy=abs(total - feyn),
        rel_discrepancy=_rel(total, feyn),
        method=method,
        tolerance=tol,
    )


@dataclass(frozen=True)
class OrderReport:
    order: int
    reports: tuple[AmplitudeReport, ...]
    moment_feynman: float
    moment_stochastic: float
    moment_reference: float
    tolerance: float

    @property
    def worst(self) -> float:
        return max((r.rel_discrepancy for r in self.reports), default=0.0)

    @property
    def moment_rel_discrepancy(self) -> float:
        return _rel(self.moment_stochastic, self.moment_reference)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports) and self.moment_rel_discrepancy < self.tolerance


def _verify_job(args):
    m, theory, method = args
    return verify_forest_sum(m, theory, method)


def verify_order(
    theory: Theory,
    order: int,
    method: str = "closed_form",
    connected: bool = False,
    jobs: int = 1,
) -> OrderReport:
    """Check the forest-sum identity on every map of the given order and the
    resulting order-``p`` moment against the Feynman series."""
    maps: list[CombinatorialMap] = []
    if order == 0 or theory.kernels:
        try:
            maps = enumerate_maps(theory.n_external, theory.degrees or (2,), order, connected=connected).maps
        except DegreeParityImpossible:
            pass
    work = [(m, theory, method) for m in maps]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_verify_job, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        reports = [_verify_job(w) for w in work]
    reference = order_total(perturbative_moment(theory, order, connected=connected)[order])
    tol = CLOSED_FORM_RTOL if method == "closed_form" else QUADRATURE_RTOL
    return OrderReport(
        order=order,
        reports=tuple(reports),
        moment_feynman=math.fsum(r.feynman_value for r in reports),
        moment_stochastic=math.fsum(r.forest_sum for r in reports),
        moment_reference=reference if maps else 0.0,
        tolerance=tol,
    )
