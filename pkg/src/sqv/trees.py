"""Tree families behind the series solution of ``dphi/dt = f(phi), phi(0)=0``.

Conventions. Every tree hangs from a univalent root ``r`` whose single child
is vertex 1. ``p`` counts the non-root vertices. A vertex's degree counts the
edge to its parent, so ``degree = children + 1``.

* recursive trees: parent arrays with ``parent[i] < i`` (labels 0..p-1,
  vertex 0 hooked to ``r``, stored as ``-1``);
* unlabeled rooted trees: nested tuples of sorted children (AHU form);
* plane trees: nested tuples of *ordered* children;
* q-ary trees: plane trees whose vertices have 0 or q children.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .operator import simplex_constant

Tree = tuple  # nested tuple of children


# ---------------------------------------------------------------------------
# recursive trees


@dataclass(frozen=True)
class RecursiveTree:
    parent: tuple[int, ...]

    def __post_init__(self):
        if not self.parent or self.parent[0] != -1:
            raise ValueError("vertex 0 must hang from the root")
        for i, q in enumerate(self.parent[1:], start=1):
            if not 0 <= q < i:
                raise ValueError(f"vertex {i} violates the increasing-label property")

    @property
    def size(self) -> int:
        return len(self.parent)

    def children_counts(self) -> list[int]:
        c = [0] * self.size
        for q in self.parent[1:]:
            c[q] += 1
        return c

    def shape(self) -> Tree:
        return shape_from_parents(self.parent)


def enumerate_recursive_trees(p: int) -> list[RecursiveTree]:
    if p < 1:
        raise ValueError("p must be >= 1")
    out = []
    for choice in _product_ranges(p):
        out.append(RecursiveTree((-1,) + choice))
    return out


def _product_ranges(p: int) -> Iterator[tuple[int, ...]]:
    # vertex i (1..p-1) picks a parent in 0..i-1
    if p == 1:
        yield ()
        return
    for head in _product_ranges(p - 1):
        for q in range(p - 1):
            yield head + (q,)


# ---------------------------------------------------------------------------
# unlabeled rooted trees


def shape_from_parents(parent: Sequence[int]) -> Tree:
    """AHU canonical form of the tree below the root."""
    kids: dict[int, list[int]] = {i: [] for i in range(len(parent))}
    tops = []
    for i, q in enumerate(parent):
        (tops if q == -1 else kids[q]).append(i)
    if len(tops) != 1:
        raise ValueError("the root must have exactly one child")

    def canon(v):
        return tuple(sorted(canon(c) for c in kids[v]))

    return canon(tops[0])


def tree_size(t: Tree) -> int:
    return 1 + sum(tree_size(c) for c in t)


def tree_parents(t: Tree) -> list[int]:
    """Preorder parent array of a nested-tuple tree (root child is vertex 0)."""
    parent: list[int] = []

    def walk(node, par):
        me = len(parent)
        parent.append(par)
        for c in node:
            walk(c, me)

    walk(t, -1)
    return parent


def tree_children_counts(t: Tree) -> list[int]:
    out: list[int] = []

    def walk(node):
        out.append(len(node))
        for c in node:
            walk(c)

    walk(t)
    return out


def canonical_shape(t: Tree) -> Tree:
    return tuple(sorted(canonical_shape(c) for c in t))


@lru_cache(maxsize=None)
def unlabeled_trees(p: int) -> tuple[Tree, ...]:
    """All unlabeled rooted trees with ``p`` non-root vertices, sorted."""
    shapes = {RecursiveTree((-1,) + c).shape() for c in _product_ranges(p)}
    return tuple(sorted(shapes))


def alpha_multiplicity(t: Tree) -> int:
    """Number of recursive trees whose shape is ``t``."""
    t = canonical_shape(t)
    return _alpha_table(tree_size(t))[t]


@lru_cache(maxsize=None)
def _alpha_table(p: int) -> dict:
    return dict(Counter(rt.shape() for rt in enumerate_recursive_trees(p)))


# ---------------------------------------------------------------------------
# plane trees


@lru_cache(maxsize=None)
def _plane_forests(n: int) -> tuple[tuple[Tree, ...], ...]:
    """Ordered sequences of plane trees with ``n`` vertices in total."""
    if n == 0:
        return ((),)
    out = []
    for first in range(1, n + 1):
        for head in _plane_trees_with(first):
            for tail in _plane_forests(n - first):
                out.append((head,) + tail)
    return tuple(out)


@lru_cache(maxsize=None)
def _plane_trees_with(n: int) -> tuple[Tree, ...]:
    """Plane trees with ``n`` vertices (the top vertex included)."""
    return tuple(_plane_forests(n - 1))


def enumerate_plane_trees(E: int) -> list[Tree]:
    """Plane trees with ``E`` edges below vertex 1, i.e. ``E + 1`` non-root
    vertices hanging from the univalent root; there are Catalan(E) of them."""
    if E < 0:
        raise ValueError("E must be >= 0")
    return list(_plane_trees_with(E + 1))


def plane_trees_with_vertices(p: int) -> list[Tree]:
    return enumerate_plane_trees(p - 1)


def catalan(E: int) -> int:
    return math.comb(2 * E, E) // (E + 1)


@lru_cache(maxsize=None)
def _qary(q: int, k: int) -> tuple[Tree, ...]:
    if k == 0:
        return ((),)
    out = []
    # split k - 1 internal vertices among q ordered subtrees
    for split in _compositions(k - 1, q):
        for combo in _cartesian([_qary(q, s) for s in split]):
            out.append(tuple(combo))
    return tuple(out)


def _compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


def _cartesian(lists):
    if not lists:
        yield ()
        return
    for x in lists[0]:
        for rest in _cartesian(lists[1:]):
            yield (x,) + rest


def enumerate_qary_trees(q: int, k: int) -> list[Tree]:
    """Plane trees in which every vertex has 0 or ``q`` children, with ``k``
    vertices having ``q`` children."""
    if q < 2 or k < 0:
        raise ValueError("need q >= 2 and k >= 0")
    return list(_qary(q, k))


def fuss_catalan(q: int, k: int) -> int:
    return math.factorial(q * k) // (math.factorial(k) * math.factorial(q * k - k + 1))


def plane_count(t: Tree) -> int:
    """N(t): number of plane embeddings of the unlabeled tree ``t`` (closed form)."""
    n = math.factorial(len(t))
    for mult in Counter(canonical_shape(c) for c in t).values():
        n //= math.factorial(mult)
    for c in t:
        n *= plane_count(c)
    return n


# ---------------------------------------------------------------------------
# the alpha identity


def consistency_alpha_identity(t: Tree) -> bool:
    """Check ``alpha(t)/p! == N(t) * simplex(t) / prod (d(v)-1)!`` exactly.

    ``N(t)`` is obtained by classifying every enumerated plane tree with
    ``p`` vertices, not from a formula.
    """
    t = canonical_shape(t)
    p = tree_size(t)
    n_plane = sum(1 for pt in plane_trees_with_vertices(p) if canonical_shape(pt) == t)
    lhs = Fraction(alpha_multiplicity(t), math.factorial(p))
    denom = math.prod(math.factorial(c) for c in tree_children_counts(t))
    rhs = n_plane * simplex_constant(tree_parents(t)) / denom
    return lhs == rhs


# ---------------------------------------------------------------------------
# the ODE series


@dataclass(frozen=True)
class TaylorFunction:
    """Polynomial ``f(phi) = sum_q coeffs[q] phi^q`` with ``coeffs[q] = f^(q)(0)/q!``."""

    coeffs: tuple[float, ...]

    def __init__(self, coeffs):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in coeffs))

    def coeff(self, q: int) -> float:
        return self.coeffs[q] if q < len(self.coeffs) else 0.0

    def derivative_at_zero(self, q: int) -> float:
        return math.factorial(q) * self.coeff(q)

    def __call__(self, phi):
        return np.polynomial.polynomial.polyval(phi, self.coeffs)


def series_recursive(f: TaylorFunction, t: float, max_order: int) -> float:
    total = 0.0
    for p in range(1, max_order + 1):
        s = 0.0
        for rt in enumerate_recursive_trees(p):
            s += math.prod(f.derivative_at_zero(c) for c in rt.children_counts())
        total += t**p / math.factorial(p) * s
    return total


def series_unlabeled(f: TaylorFunction, t: float, max_order: int) -> float:
    total = 0.0
    for p in range(1, max_order + 1):
        for shape in unlabeled_trees(p):
            w = math.prod(f.derivative_at_zero(c) for c in tree_children_counts(shape))
            total += t**p / math.factorial(p) * alpha_multiplicity(shape) * w
    return total


def series_plane(f: TaylorFunction, t: float, max_order: int) -> float:
    total = 0.0
    for p in range(1, max_order + 1):
        const_cache: dict = {}
        for pt in plane_trees_with_vertices(p):
            w = math.prod(f.coeff(c) for c in tree_children_counts(pt))
            if w == 0.0:
                continue
            shape = canonical_shape(pt)
            if shape not in const_cache:
                const_cache[shape] = float(simplex_constant(tree_parents(shape)))
            total += w * const_cache[shape] * t**p
    return total


EVALUATORS = {
    "recursive": series_recursive,
    "unlabeled": series_unlabeled,
    "plane": series_plane,
}


def ode_tree_series(f, t: float, max_order: int, method: str = "plane") -> float:
    """Truncated tree-series solution at time ``t`` (orders 1..max_order)."""
    if not isinstance(f, TaylorFunction):
        f = TaylorFunction(f)
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    try:
        ev = EVALUATORS[method]
    except KeyError:
        raise ValueError(f"unknown evaluator {method!r}; choose from {sorted(EVALUATORS)}") from None
    return ev(f, t, max_order)


def taylor_coefficients(f: TaylorFunction, order: int) -> list[float]:
    """Coefficients c_0..c_order of phi(t) from the power-series recursion
    ``(k+1) c_{k+1} = [f(phi)]_k``; independent of any tree enumeration."""
    c = [0.0] * (order + 1)
    for k in range(order):
        # [f(phi)]_k with phi known through degree k
        acc = f.coeff(0) if k == 0 else 0.0
        power = [1.0] + [0.0] * k  # phi^0 truncated
        for q in range(1, len(f.coeffs)):
            power = _poly_mul(power, c[: k + 1], k)
            acc += f.coeffs[q] * power[k]
        c[k + 1] = acc / (k + 1)
    return c


def _poly_mul(a, b, deg):
    out = [0.0] * (deg + 1)
    for i, x in enumerate(a[: deg + 1]):
        if x == 0.0:
            continue
        for j, y in enumerate(b[: deg + 1 - i]):
            out[i + j] += x * y
    return out


def ode_numeric(f: TaylorFunction, t: float, atol: float = 1e-12, rtol: float = 1e-12) -> float:
    """Adaptive embedded Runge-Kutta (DOP853) solution of the same ODE."""
    from scipy.integrate import solve_ivp

    if t == 0:
        return 0.0
    sol = solve_ivp(lambda _s, y: f(y), (0.0, t), [0.0], method="DOP853", atol=atol, rtol=rtol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return float(sol.y[0, -1])
