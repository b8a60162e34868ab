import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqv.errors import DartCapExceeded, DegreeParityImpossible, FixedPointAlpha, InvalidMap, OrphanComponent, UnivalentInternal
from sqv.maps import (
    CombinatorialMap,
    canonical_key,
    count_embeddings,
    embedding_counts,
    enumerate_maps,
    format_map,
    from_cycles,
    keep_to_right_tree,
    parse_map,
    perfect_matchings,
    relabel,
    to_abstract_graph,
    validate,
)

# darts: r=0, v1..v4=1..4, w1..w3=5..7, u1,u2=8,9
MIXED_MAP = from_cycles([(1, 2, 3, 4), (5, 6, 7), (8, 9)], [(0, 1), (2, 5), (3, 8), (4, 7), (9, 6)], [0])


def random_relabel(m, rng):
    """Dart bijection fixing every external dart."""
    ext = set(m.externals)
    inner = [d for d in range(m.n_darts) if d not in ext]
    shuffled = inner[:]
    rng.shuffle(shuffled)
    tau = list(range(m.n_darts))
    for a, b in zip(inner, shuffled):
        tau[a] = b
    return relabel(m, tau)


def corpus(size=50):
    out = []
    for n, degs, p in [(2, (4,), 2), (1, (3,), 3), (2, (3, 4), 2), (4, (4,), 2), (2, (4,), 3)]:
        out.extend(enumerate_maps(n, degs, p).maps)
    random.Random(0).shuffle(out)
    return out[:size]


def test_mixed_map_is_valid_and_graph():
    validate(MIXED_MAP)
    g = to_abstract_graph(MIXED_MAP)
    # r=0, v=1, w=2, u=3
    assert Counter(g.edges) == Counter([(0, 1), (1, 2), (1, 3), (1, 2), (2, 3)])
    assert MIXED_MAP.internal_degrees == (4, 3, 2)


def test_mixed_map_conjugate_has_same_key():
    tau = list(range(10))
    tau[4], tau[6] = 6, 4
    assert canonical_key(relabel(MIXED_MAP, tau)) == canonical_key(MIXED_MAP)


def test_single_edge_maps():
    validate(from_cycles([], [(0, 1)], [0, 1]))
    # an edge subdivided by a bivalent vertex, with its two inner darts renamed
    m = from_cycles([(2, 3)], [(0, 2), (1, 3)], [0, 1])
    assert canonical_key(relabel(m, [0, 1, 3, 2])) == canonical_key(m)


@pytest.mark.parametrize(
    "build, err",
    [
        (lambda: CombinatorialMap((0, 1), (0, 1), (0, 1)), FixedPointAlpha),
        (lambda: from_cycles([(2, 3), (4, 5)], [(0, 1), (2, 3), (4, 5)], [0, 1]), OrphanComponent),
        (lambda: from_cycles([], [(0, 1)], [0]), UnivalentInternal),
    ],
)
def test_validate_errors(build, err):
    with pytest.raises(err):
        validate(build())


def test_tadpole_embeddings_distinct():
    enum = enumerate_maps(2, (4,), 1)
    keys = {canonical_key(m) for m in enum.maps}
    assert len(enum) == 3 and len(keys) == 3


@pytest.mark.parametrize(
    "n, degs, p, connected, expected",
    [
        (2, (4,), 0, False, [1]),
        (2, (4,), 1, False, [3]),
        (2, (4,), 2, True, [6, 9, 9]),
    ],
)
def test_enumeration_low_order(n, degs, p, connected, expected):
    enum = enumerate_maps(n, degs, p, connected=connected)
    assert sorted(embedding_counts(enum.maps).values()) == expected
    assert len(enum) == sum(expected)


def test_order_three_embedding_counts():
    enum = enumerate_maps(2, (4,), 3, connected=True)
    assert sorted(embedding_counts(enum.maps).values()) == sorted([27] * 5 + [54, 18, 18, 54, 18])


def test_count_embeddings_matches_table():
    maps = enumerate_maps(2, (4,), 2, connected=True).maps
    for graph, n in embedding_counts(maps).items():
        assert count_embeddings(graph, maps) == n


@pytest.mark.parametrize("n, degs, pmax", [(1, (3,), 3), (2, (4,), 2)])
def test_multiplicity_law(n, degs, pmax):
    q1 = degs[0]
    for p in range(pmax + 1):
        try:
            enum = enumerate_maps(n, degs, p)
        except DegreeParityImpossible:
            continue
        assert all(c.multiplicity == math.factorial(p) * q1**p for c in enum)
        assert sum(c.multiplicity for c in enum) <= enum.n_pairings


def test_mixed_degree_multiplicity_generalization():
    enum = enumerate_maps(2, (3, 4), 2)
    assert enum.multiplicity_law_holds
    assert {c.multiplicity for c in enum} <= {2 * 9, 2 * 12, 2 * 16}


def test_parity_and_cap_errors():
    with pytest.raises(DegreeParityImpossible):
        enumerate_maps(1, (4,), 2)
    with pytest.raises(DartCapExceeded):
        enumerate_maps(2, (4,), 5)


def test_perfect_matching_count():
    assert sum(1 for _ in perfect_matchings(8)) == 105


def test_relabeling_invariance_corpus():
    rng = random.Random(42)
    maps = corpus()
    assert len(maps) == 50
    violations = 0
    for m in maps:
        key = canonical_key(m)
        violations += sum(canonical_key(random_relabel(m, rng)) != key for _ in range(200))
    assert violations == 0


def test_external_order_matters():
    # externals are labeled, so the 3 ways of pairing 4 points through one vertex stay distinct
    enum = enumerate_maps(4, (4,), 1)
    keys = [canonical_key(m) for m in enum.maps]
    assert len(set(keys)) == len(keys)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_key_distinguishes_classes(seed):
    rng = random.Random(seed)
    maps = enumerate_maps(2, (4,), 2).maps
    a, b = rng.sample(range(len(maps)), 2)
    assert canonical_key(maps[a]) != canonical_key(random_relabel(maps[b], rng))


def _is_spanning_tree(m, tree):
    vo = m.vertex_of
    parent = {}
    for a, b in tree.edges:
        assert m.alpha[a] == b
        child = vo[b]
        assert child not in parent
        parent[child] = vo[a]
    root_v = vo[m.externals[0]]
    assert len(tree.edges) == len(m.vertices) - 1
    for v in range(len(m.vertices)):
        seen = set()
        while v != root_v:
            assert v not in seen
            seen.add(v)
            v = parent[v]
    return tree.edges[0][0] == m.externals[0]


def test_keep_to_right_single_edge():
    m = from_cycles([], [(0, 1)], [0, 1])
    assert keep_to_right_tree(m).edges == ((0, 1),)


def test_keep_to_right_tadpole():
    # r1=0, r2=1, vertex (2 3 4 5); r1-2, then 3-4 loop, 5-r2
    m = from_cycles([(2, 3, 4, 5)], [(0, 2), (3, 4), (5, 1)], [0, 1])
    tree = keep_to_right_tree(m)
    assert tree.edges == ((0, 2), (5, 1))


def test_keep_to_right_cubic_maps():
    maps = enumerate_maps(1, (3,), 3, connected=True).maps
    assert len(maps) == 5
    for m in maps:
        assert _is_spanning_tree(m, keep_to_right_tree(m))
        assert keep_to_right_tree(m) == keep_to_right_tree(m)


def test_keep_to_right_follows_rotation():
    # triangle-free cubic 1-point map: r=0; a=(1 2 3), b=(4 5 6), c=(7 8 9)
    m = from_cycles([(1, 2, 3), (4, 5, 6), (7, 8, 9)], [(0, 1), (2, 4), (3, 7), (5, 8), (6, 9)], [0])
    validate(m)
    # from a, entered at 1, the first successor is 2 (to b); from b, entered at 4, next is 5 (to c)
    assert keep_to_right_tree(m).edges == ((0, 1), (2, 4), (5, 8))


def test_keep_to_right_rejects_disconnected():
    m = from_cycles([], [(0, 1), (2, 3)], [0, 1, 2, 3])
    with pytest.raises(InvalidMap):
        keep_to_right_tree(m)


def test_exchange_format_round_trip():
    for m in corpus(20) + [MIXED_MAP]:
        text = format_map(m)
        assert parse_map(text) == m


def test_exchange_format_errors():
    with pytest.raises(InvalidMap):
        parse_map("darts=2; sigma=; alpha=(0 1)")
    with pytest.raises(InvalidMap):
        parse_map("darts=2; sigma=; alpha=(0 5); externals=[0, 1]")
    with pytest.raises(InvalidMap):
        parse_map("darts=2; sigma=; alpha=(0 1); externals=0 1")
