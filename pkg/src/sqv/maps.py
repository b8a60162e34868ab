"""Rooted combinatorial maps: darts, vertex rotation ``sigma`` and edge
involution ``alpha``, with canonical labels, brute-force enumeration over
Wick pairings and the keep-to-the-right spanning tree.

Darts are the integers ``0 .. D-1``. External vertices are univalent, i.e.
fixed points of ``sigma``, and are listed in ``externals`` in the order of
the external positions ``x^1 .. x^n``.
"""

from __future__ import annotations

import itertools
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

from .errors import (
    DartCapExceeded,
    DegreeParityImpossible,
    FixedPointAlpha,
    InvalidMap,
    OrphanComponent,
    UnivalentInternal,
)

log = logging.getLogger(__name__)

DEFAULT_DART_CAP = 18


@dataclass(frozen=True)
class CombinatorialMap:
    sigma: tuple[int, ...]
    alpha: tuple[int, ...]
    externals: tuple[int, ...]

    @property
    def n_darts(self) -> int:
        return len(self.sigma)

    @cached_property
    def vertices(self) -> tuple[tuple[int, ...], ...]:
        """Cycles of ``sigma``, externals first (in order), then internal
        vertices ordered by their smallest dart; each cycle starts at its
        smallest dart."""
        ext = set(self.externals)
        seen = set()
        internal = []
        for d in range(self.n_darts):
            if d in seen or d in ext:
                continue
            cyc = [d]
            seen.add(d)
            nxt = self.sigma[d]
            while nxt != d:
                cyc.append(nxt)
                seen.add(nxt)
                nxt = self.sigma[nxt]
            internal.append(tuple(cyc))
        return tuple((e,) for e in self.externals) + tuple(internal)

    @property
    def n_external(self) -> int:
        return len(self.externals)

    @property
    def internal_vertices(self) -> tuple[tuple[int, ...], ...]:
        return self.vertices[self.n_external :]

    @cached_property
    def vertex_of(self) -> tuple[int, ...]:
        out = [0] * self.n_darts
        for i, cyc in enumerate(self.vertices):
            for d in cyc:
                out[d] = i
        return tuple(out)

    @cached_property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted((d, a) for d, a in enumerate(self.alpha) if d < a))

    def degree(self, v: int) -> int:
        return len(self.vertices[v])

    @property
    def internal_degrees(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.internal_vertices)

    @cached_property
    def components(self) -> tuple[tuple[int, ...], ...]:
        """Vertex sets of the connected components, ordered by smallest vertex."""
        parent = list(range(len(self.vertices)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            ra, rb = find(self.vertex_of[a]), find(self.vertex_of[b])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for v in range(len(self.vertices)):
            groups.setdefault(find(v), []).append(v)
        return tuple(tuple(g) for _, g in sorted(groups.items()))

    @property
    def is_connected(self) -> bool:
        return len(self.components) == 1

    def to_text(self) -> str:
        return format_map(self)

    def __str__(self) -> str:
        return format_map(self)


def from_cycles(
    sigma_cycles: Iterable[Sequence[int]],
    alpha_pairs: Iterable[Sequence[int]],
    externals: Sequence[int],
    n_darts: int | None = None,
) -> CombinatorialMap:
    """Build a map from cycle notation; darts absent from ``sigma_cycles`` are fixed points."""
    sigma_cycles = [tuple(c) for c in sigma_cycles]
    alpha_pairs = [tuple(p) for p in alpha_pairs]
    mentioned = [d for c in sigma_cycles for d in c] + [d for p in alpha_pairs for d in p] + list(externals)
    D = n_darts if n_darts is not None else (max(mentioned) + 1 if mentioned else 0)
    sigma = list(range(D))
    for cyc in sigma_cycles:
        for i, d in enumerate(cyc):
            sigma[d] = cyc[(i + 1) % len(cyc)]
    alpha = list(range(D))
    for pair in alpha_pairs:
        if len(pair) == 1:
            continue
        if len(pair) != 2:
            raise InvalidMap(f"alpha cycle {pair} is not a pair")
        a, b = pair
        alpha[a], alpha[b] = b, a
    return CombinatorialMap(tuple(sigma), tuple(alpha), tuple(externals))


def validate(m: CombinatorialMap) -> None:
    """Raise if ``m`` violates the map invariants; return None otherwise."""
    D = m.n_darts
    if sorted(m.sigma) != list(range(D)):
        raise InvalidMap("sigma is not a permutation")
    if len(m.alpha) != D:
        raise InvalidMap("alpha has the wrong length")
    for h, a in enumerate(m.alpha):
        if not 0 <= a < D or m.alpha[a] != h:
            raise InvalidMap(f"alpha is not an involution at dart {h}")
        if a == h:
            raise FixedPointAlpha(f"alpha fixes dart {h}")
    if len(set(m.externals)) != len(m.externals):
        raise InvalidMap("duplicate external darts")
    for e in m.externals:
        if not 0 <= e < D or m.sigma[e] != e:
            raise InvalidMap(f"external dart {e} is not a fixed point of sigma")
    ext = set(m.externals)
    for h in range(D):
        if m.sigma[h] == h and h not in ext:
            raise UnivalentInternal(f"dart {h} is an unlisted univalent vertex")
    for comp in m.components:
        if comp[0] >= m.n_external:
            raise OrphanComponent(f"component with vertices {comp} has no external vertex")


# ---------------------------------------------------------------------------
# canonical labels


@dataclass(frozen=True, order=True)
class CanonicalKey:
    bytes: bytes

    def __str__(self) -> str:
        return self.bytes.decode("ascii")

    def short(self) -> str:
        import hashlib

        return hashlib.sha1(self.bytes).hexdigest()[:10]


def _canonical_labels(sigma: Sequence[int], alpha: Sequence[int], externals: Sequence[int]):
    """Breadth-first labeling from the externals; returns (order, label, degrees)."""
    label = {}
    order = []
    for e in externals:
        label[e] = len(order)
        order.append(e)
    degrees = []
    i = 0
    while i < len(order):
        a = alpha[order[i]]
        if a not in label:
            deg = 0
            d = a
            while True:
                label[d] = len(order)
                order.append(d)
                deg += 1
                d = sigma[d]
                if d == a:
                    break
            degrees.append(deg)
        i += 1
    return order, label, degrees


def _key_bytes(n_ext: int, alpha: Sequence[int], order, label, degrees) -> bytes:
    alab = ".".join(str(label[alpha[d]]) for d in order)
    return f"n={n_ext};d={'.'.join(map(str, degrees))};a={alab}".encode("ascii")


def canonical_key(m: CombinatorialMap) -> CanonicalKey:
    """Relabeling-invariant key.

    All externals are distinguishable and every component contains one, so a
    breadth-first traversal seeded with the externals in order labels every
    dart canonically; no component sorting is needed.
    """
    order, label, degrees = _canonical_labels(m.sigma, m.alpha, m.externals)
    if len(order) != m.n_darts:
        raise OrphanComponent("map has a component without external vertex")
    return CanonicalKey(_key_bytes(m.n_external, m.alpha, order, label, degrees))


def canonical_form(m: CombinatorialMap) -> CombinatorialMap:
    """The representative whose darts are numbered by canonical labels."""
    order, label, _ = _canonical_labels(m.sigma, m.alpha, m.externals)
    if len(order) != m.n_darts:
        raise OrphanComponent("map has a component without external vertex")
    return relabel(m, [label[d] for d in range(m.n_darts)])


def relabel(m: CombinatorialMap, tau: Sequence[int]) -> CombinatorialMap:
    """Conjugate by the dart bijection ``tau`` (``tau[d]`` is the new name of ``d``)."""
    D = m.n_darts
    sigma = [0] * D
    alpha = [0] * D
    for d in range(D):
        sigma[tau[d]] = tau[m.sigma[d]]
        alpha[tau[d]] = tau[m.alpha[d]]
    return CombinatorialMap(tuple(sigma), tuple(alpha), tuple(tau[e] for e in m.externals))


# ---------------------------------------------------------------------------
# enumeration


@dataclass(frozen=True)
class MapClass:
    """One unlabeled map with the number of labeled Wick pairings producing it."""

    key: CanonicalKey
    map: CombinatorialMap
    multiplicity: int

    @property
    def order(self) -> int:
        return len(self.map.internal_vertices)

    @property
    def expected_multiplicity(self) -> int:
        degs = self.map.internal_degrees
        return math.factorial(len(degs)) * math.prod(degs)


@dataclass
class MapEnumeration:
    classes: list[MapClass]
    n_pairings: int
    deviations: list[MapClass] = field(default_factory=list)

    def __iter__(self):
        return iter(self.classes)

    def __len__(self):
        return len(self.classes)

    @property
    def maps(self) -> list[CombinatorialMap]:
        return [c.map for c in self.classes]

    @property
    def multiplicity_law_holds(self) -> bool:
        return not self.deviations


def _matchings(darts: list[int]) -> Iterator[list[tuple[int, int]]]:
    if not darts:
        yield []
        return
    first = darts[0]
    for i in range(1, len(darts)):
        rest = darts[1:i] + darts[i + 1 :]
        for tail in _matchings(rest):
            yield [(first, darts[i])] + tail


def perfect_matchings(n: int) -> Iterator[list[tuple[int, int]]]:
    """All pairings of ``range(n)``; ``(n-1)!!`` of them for even ``n``."""
    return _matchings(list(range(n)))


def _components_have_externals(vertex_of, n_vertices, n_ext, alpha) -> tuple[bool, bool]:
    parent = list(range(n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for d, a in enumerate(alpha):
        if d < a:
            ra, rb = find(vertex_of[d]), find(vertex_of[a])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = {find(v) for v in range(n_vertices)}
    # union-by-min keeps the smallest vertex as root; externals are 0..n_ext-1
    ok = all(r < n_ext for r in roots)
    return ok, len(roots) == 1


def degree_sequences(degrees: Iterable[int], p: int) -> list[tuple[int, ...]]:
    return list(itertools.product(sorted(set(degrees)), repeat=p))


def enumerate_maps(
    n_external: int,
    degrees: Iterable[int],
    p: int,
    connected: bool = False,
    dart_cap: int = DEFAULT_DART_CAP,
) -> MapEnumeration:
    """All unlabeled maps with ``n_external`` externals and ``p`` internal vertices.

    Every ordered assignment of degrees from ``degrees`` to the ``p`` labeled
    internal vertices is expanded into all Wick pairings of its darts; maps
    with a component lacking an external are dropped. Each class's
    multiplicity is checked against ``p! * prod(deg)`` and mismatches are
    collected in ``deviations``.
    """
    degrees = sorted(set(degrees))
    if p < 0 or n_external < 0:
        raise ValueError("p and n_external must be non-negative")
    if any(d < 2 for d in degrees) and p > 0:
        raise ValueError("internal vertices need degree >= 2")
    seqs = degree_sequences(degrees, p) if p > 0 else [()]
    seqs = [s for s in seqs if (n_external + sum(s)) % 2 == 0]
    if not seqs:
        raise DegreeParityImpossible(
            f"{n_external} externals and {p} vertices of degrees {degrees} give an odd dart count"
        )
    biggest = max(n_external + sum(s) for s in seqs)
    if biggest > dart_cap:
        raise DartCapExceeded(f"{biggest} darts exceed the cap of {dart_cap}")

    counts: Counter = Counter()
    reps: dict[bytes, CombinatorialMap] = {}
    n_pairings = 0
    for seq in seqs:
        D = n_external + sum(seq)
        sigma = list(range(D))
        vertex_of = list(range(n_external)) + [0] * (D - n_external)
        start = n_external
        for v, deg in enumerate(seq):
            for j in range(deg):
                sigma[start + j] = start + (j + 1) % deg
                vertex_of[start + j] = n_external + v
            start += deg
        n_vertices = n_external + len(seq)
        externals = tuple(range(n_external))
        alpha = [0] * D
        for matching in perfect_matchings(D):
            n_pairings += 1
            for a, b in matching:
                alpha[a] = b
                alpha[b] = a
            ok, conn = _components_have_externals(vertex_of, n_vertices, n_external, alpha)
            if not ok or (connected and not conn):
                continue
            order, label, degs = _canonical_labels(sigma, alpha, externals)
            key = _key_bytes(n_external, alpha, order, label, degs)
            counts[key] += 1
            if key not in reps:
                m = CombinatorialMap(tuple(sigma), tuple(alpha), externals)
                reps[key] = canonical_form(m)

    classes = [MapClass(CanonicalKey(k), reps[k], counts[k]) for k in sorted(counts)]
    deviations = [c for c in classes if c.multiplicity != c.expected_multiplicity]
    for c in deviations:
        log.warning("multiplicity %d != %d for %s", c.multiplicity, c.expected_multiplicity, c.key)
    return MapEnumeration(classes, n_pairings, deviations)


# ---------------------------------------------------------------------------
# spanning tree


@dataclass(frozen=True)
class SpanningTree:
    root: int
    edges: tuple[tuple[int, int], ...]  # (parent dart, child dart)


def keep_to_right_tree(m: CombinatorialMap) -> SpanningTree:
    """Depth-first tree taking, at each vertex, the first available edge in
    counterclockwise (``sigma``) order after the entering dart."""
    if not m.is_connected:
        raise InvalidMap("keep-to-the-right tree needs a connected map")
    root = m.externals[0]

    def successors(h_in):
        out, h = [], m.sigma[h_in]
        while h != h_in:
            out.append(h)
            h = m.sigma[h]
        return out

    visited = {m.vertex_of[root]}
    edges = []
    stack = [[root]]  # candidate darts still to try at each vertex of the path
    while stack:
        cands = stack[-1]
        step = None
        while cands:
            h = cands.pop(0)
            if m.vertex_of[m.alpha[h]] not in visited:
                step = h
                break
        if step is None:
            stack.pop()
            continue
        child = m.alpha[step]
        visited.add(m.vertex_of[child])
        edges.append((step, child))
        stack.append(successors(child))
    if len(visited) != len(m.vertices):
        raise InvalidMap("map is not connected")
    return SpanningTree(root, tuple(edges))


# ---------------------------------------------------------------------------
# abstract graphs


@dataclass(frozen=True)
class AbstractGraph:
    """Multigraph obtained by forgetting the dart cyclic order.

    Vertices ``0..n_external-1`` are the (labeled) externals; edges are
    sorted vertex pairs, with repetition.
    """

    n_external: int
    n_internal: int
    edges: tuple[tuple[int, int], ...]

    @cached_property
    def canonical(self) -> tuple:
        """Isomorphism invariant fixing every external vertex."""
        n = self.n_external
        best = None
        for perm in itertools.permutations(range(self.n_internal)):
            relab = list(range(n)) + [n + q for q in perm]
            es = tuple(sorted(tuple(sorted((relab[a], relab[b]))) for a, b in self.edges))
            if best is None or es < best:
                best = es
        return (n, self.n_internal, best)

    def __eq__(self, other):
        return isinstance(other, AbstractGraph) and self.canonical == other.canonical

    def __hash__(self):
        return hash(self.canonical)


def to_abstract_graph(m: CombinatorialMap) -> AbstractGraph:
    edges = tuple(sorted(tuple(sorted((m.vertex_of[a], m.vertex_of[b]))) for a, b in m.edges))
    return AbstractGraph(m.n_external, len(m.internal_vertices), edges)


def count_embeddings(graph: AbstractGraph, maps: Iterable[CombinatorialMap]) -> int:
    """Number of distinct unlabeled maps in ``maps`` whose abstract graph is ``graph``."""
    keys = {canonical_key(m) for m in maps if to_abstract_graph(m) == graph}
    return len(keys)


def embedding_counts(maps: Iterable[CombinatorialMap]) -> dict[AbstractGraph, int]:
    out: dict[AbstractGraph, set] = {}
    for m in maps:
        out.setdefault(to_abstract_graph(m), set()).add(canonical_key(m))
    return {g: len(k) for g, k in out.items()}


# ---------------------------------------------------------------------------
# text exchange format
#
#   darts=D; sigma=(c1 c2 ...)(...); alpha=(a b)(c d)...; externals=[e1, e2, ...]
#
# Dart ids are integers 0..D-1 separated by spaces or commas inside cycles.
# sigma fixed points may be omitted. Fields may come in any order.

_FIELD = re.compile(r"^\s*(darts|sigma|alpha|externals)\s*=\s*(.*?)\s*$")
_CYCLE = re.compile(r"\(([^()]*)\)")


def _parse_cycles(text: str, what: str) -> list[tuple[int, ...]]:
    stripped = _CYCLE.sub("", text).strip()
    if stripped:
        raise InvalidMap(f"{what}: unexpected text {stripped!r}")
    out = []
    for body in _CYCLE.findall(text):
        parts = [s for s in re.split(r"[\s,]+", body.strip()) if s]
        out.append(tuple(int(s) for s in parts))
    return out


def parse_map(text: str) -> CombinatorialMap:
    """Parse the one-line exchange record; the result is validated."""
    fields = {}
    for chunk in text.strip().split(";"):
        if not chunk.strip():
            continue
        mo = _FIELD.match(chunk)
        if not mo:
            raise InvalidMap(f"cannot parse map field {chunk.strip()!r}")
        fields[mo.group(1)] = mo.group(2)
    missing = {"darts", "sigma", "alpha", "externals"} - fields.keys()
    if missing:
        raise InvalidMap(f"missing map fields: {sorted(missing)}")
    try:
        D = int(fields["darts"])
        ext_txt = fields["externals"].strip()
        if not (ext_txt.startswith("[") and ext_txt.endswith("]")):
            raise InvalidMap("externals must be a bracketed list")
        externals = [int(s) for s in re.split(r"[\s,]+", ext_txt[1:-1].strip()) if s]
    except ValueError as exc:
        raise InvalidMap(str(exc)) from None
    sigma = _parse_cycles(fields["sigma"], "sigma")
    alpha = _parse_cycles(fields["alpha"], "alpha")
    for cyc in sigma + alpha:
        for d in cyc:
            if not 0 <= d < D:
                raise InvalidMap(f"dart {d} out of range 0..{D - 1}")
    m = from_cycles(sigma, alpha, externals, n_darts=D)
    validate(m)
    return m


def format_map(m: CombinatorialMap) -> str:
    sig = "".join("(" + " ".join(map(str, c)) + ")" for c in m.vertices)
    alp = "".join(f"({a} {b})" for a, b in m.edges)
    ext = ", ".join(map(str, m.externals))
    return f"darts={m.n_darts}; sigma={sig}; alpha={alp}; externals=[{ext}]"
