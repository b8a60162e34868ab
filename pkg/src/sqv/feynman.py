"""Path-integral side: Wick moments, theories and Feynman amplitudes.

Sign and normalization conventions: the action is
``S(phi) = 1/2 phi.A.phi + sum_kernels V_q(phi)`` with
``V_q(phi) = 1/(q+1) sum V(x1..x_{q+1}) phi_x1 ... phi_x{q+1}``.
Each internal vertex of a map therefore carries ``-V`` and each edge a
covariance ``C = A^-1``; every unlabeled map enters the moment with
coefficient one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArityMismatch, DegreeParityImpossible, ExternalCountMismatch, Unbounded
from .maps import CanonicalKey, CombinatorialMap, enumerate_maps
from .operator import Operator, covariance


@dataclass(frozen=True)
class VertexKernel:
    """Interaction vertex of arity ``q + 1``.

    ``kind`` is ``"local"`` (coupling ``g`` times a product of deltas) or
    ``"dense"`` (an explicit tensor, stored fully symmetrized).
    """

    arity: int
    kind: str
    g: float = 0.0
    tensor: np.ndarray | None = field(default=None, repr=False, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.arity < 2:
            raise ValueError("interaction monomials have degree >= 2")
        if self.kind not in ("local", "dense"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "dense":
            if self.tensor is None:
                raise ValueError("dense kernel needs a tensor")
            t = np.asarray(self.tensor, dtype=float)
            if t.ndim != self.arity or len(set(t.shape)) != 1:
                raise ArityMismatch(f"tensor shape {t.shape} does not match arity {self.arity}")
            t = symmetrize(t)
            t.setflags(write=False)
            object.__setattr__(self, "tensor", t)
        if not self.name:
            object.__setattr__(self, "name", f"g{self.arity}")

    @classmethod
    def local(cls, arity: int, g: float, name: str = "") -> "VertexKernel":
        return cls(arity, "local", g=float(g), name=name)

    @classmethod
    def dense(cls, tensor, name: str = "") -> "VertexKernel":
        t = np.asarray(tensor, dtype=float)
        return cls(t.ndim, "dense", tensor=t, name=name)

    def full_tensor(self, n: int) -> np.ndarray:
        """The kernel as an explicit ``n^arity`` array."""
        if self.kind == "dense":
            if self.tensor.shape[0] != n:
                raise ArityMismatch(f"tensor acts on {self.tensor.shape[0]} sites, theory has {n}")
            return self.tensor
        out = np.zeros((n,) * self.arity)
        for x in range(n):
            out[(x,) * self.arity] = self.g
        return out

    def eigen_tensor(self, op: Operator) -> np.ndarray:
        """Kernel with every slot rotated into the eigenbasis of ``op``."""
        U = op.eigenvectors
        if self.kind == "local":
            operands = []
            for i in range(self.arity):
                operands += [U, [0, i + 1]]
            return self.g * np.einsum(*operands, list(range(1, self.arity + 1)), optimize=True)
        operands = [self.full_tensor(op.dim), list(range(self.arity))]
        for i in range(self.arity):
            operands += [U, [i, self.arity + i]]
        return np.einsum(*operands, list(range(self.arity, 2 * self.arity)), optimize=True)

    def potential(self, phi: np.ndarray) -> np.ndarray:
        """``V_q(phi)`` for a batch of field configurations ``(..., N)``."""
        phi = np.asarray(phi, dtype=float)
        if self.kind == "local":
            return self.g / self.arity * np.sum(phi**self.arity, axis=-1)
        operands = [self.tensor, list(range(1, self.arity + 1))]
        for i in range(self.arity):
            operands += [phi, [..., i + 1]]
        return np.einsum(*operands, [...]) / self.arity


def symmetrize(t: np.ndarray) -> np.ndarray:
    perms = list(itertools.permutations(range(t.ndim)))
    return sum(np.transpose(t, p) for p in perms) / len(perms)


@dataclass(frozen=True)
class Theory:
    op: Operator
    kernels: tuple[VertexKernel, ...]
    external_sites: tuple[int, ...] = ()

    def __init__(self, op: Operator, kernels: Sequence[VertexKernel] = (), external_sites: Sequence[int] = ()):
        kernels = tuple(kernels)
        arities = [k.arity for k in kernels]
        if len(set(arities)) != len(arities):
            raise ValueError("kernel arities must be distinct")
        for x in external_sites:
            if not 0 <= x < op.dim:
                raise ValueError(f"external site {x} outside 0..{op.dim - 1}")
        for k in kernels:
            k.full_tensor(op.dim)  # shape check
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "kernels", tuple(sorted(kernels, key=lambda k: k.arity)))
        object.__setattr__(self, "external_sites", tuple(int(x) for x in external_sites))

    @property
    def n_external(self) -> int:
        return len(self.external_sites)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(k.arity for k in self.kernels)

    def kernel(self, arity: int) -> VertexKernel:
        for k in self.kernels:
            if k.arity == arity:
                return k
        raise ArityMismatch(f"no interaction kernel of arity {arity}")

    def with_externals(self, sites: Sequence[int]) -> "Theory":
        return Theory(self.op, self.kernels, sites)

    def action(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        s = 0.5 * np.einsum("...i,ij,...j->...", phi, self.op.matrix, phi)
        for k in self.kernels:
            s = s + k.potential(phi)
        return s


@dataclass(frozen=True)
class AmplitudeReport:
    map_key: CanonicalKey
    order: int
    feynman_value: float
    forest_values: tuple[tuple[str, float], ...]
    forest_sum: float
    abs_discrepancy: float
    rel_discrepancy: float
    method: str
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_discrepancy < self.tolerance


# ---------------------------------------------------------------------------
# Wick theorem


def wick_moment(cov, sites: Sequence[int]) -> float:
    """Gaussian moment ``<phi_x1 ... phi_xn>`` as a sum over pairings."""
    cov = np.asarray(cov, dtype=float)
    sites = list(sites)
    if len(sites) % 2:
        return 0.0

    def rec(rest: list[int]) -> float:
        if not rest:
            return 1.0
        first, others = rest[0], rest[1:]
        return math.fsum(
            cov[first, others[i]] * rec(others[:i] + others[i + 1 :]) for i in range(len(others))
        )

    return rec(sites)


# ---------------------------------------------------------------------------
# Feynman amplitudes


def _check_map(m: CombinatorialMap, theory: Theory) -> list[VertexKernel]:
    if m.n_external != theory.n_external:
        raise ExternalCountMismatch(
            f"map has {m.n_external} external vertices, theory has {theory.n_external}"
        )
    return [theory.kernel(d) for d in m.internal_degrees]


def feynman_amplitude(m: CombinatorialMap, theory: Theory) -> float:
    """Site-basis contraction of covariances against ``-V`` at each vertex."""
    kernels = _check_map(m, theory)
    n = theory.op.dim
    C = covariance(theory.op)

    # one einsum label per free site variable
    label = [0] * m.n_darts
    operands: list = []
    nxt = 0
    for i, d in enumerate(m.externals):
        label[d] = nxt
        operands += [np.eye(n)[theory.external_sites[i]], [nxt]]
        nxt += 1
    for cyc, ker in zip(m.internal_vertices, kernels):
        if ker.kind == "local":
            for d in cyc:
                label[d] = nxt
            operands += [np.full(n, -ker.g), [nxt]]
            nxt += 1
        else:
            labs = []
            for d in cyc:
                label[d] = nxt
                labs.append(nxt)
                nxt += 1
            operands += [-ker.tensor, labs]
    for a, b in m.edges:
        operands += [C, [label[a], label[b]]]
    if not operands:
        return 1.0
    return float(np.einsum(*operands, [], optimize="greedy"))


@dataclass(frozen=True)
class PerturbativeTerm:
    exponents: tuple[int, ...]  # vertex count per kernel, in theory.kernels order
    value: float
    n_maps: int


def map_exponents(m: CombinatorialMap, theory: Theory) -> tuple[int, ...]:
    degs = m.internal_degrees
    return tuple(sum(1 for d in degs if d == k.arity) for k in theory.kernels)


def perturbative_moment(
    theory: Theory, max_order: int, connected: bool = False, dart_cap: int | None = None
) -> list[list[PerturbativeTerm]]:
    """Order-by-order contributions to ``<phi_x1 ... phi_xn>``.

    Entry ``p`` lists one term per exponent vector (vertex counts per kernel)
    with ``p`` internal vertices; each value already carries its couplings.
    """
    out = []
    kwargs = {} if dart_cap is None else {"dart_cap": dart_cap}
    for p in range(max_order + 1):
        terms: dict[tuple[int, ...], list[float]] = {}
        if p > 0 and not theory.kernels:
            out.append([])
            continue
        try:
            enum = enumerate_maps(theory.n_external, theory.degrees or (2,), p, connected=connected, **kwargs)
        except DegreeParityImpossible:
            out.append([])
            continue
        for cls in enum:
            terms.setdefault(map_exponents(cls.map, theory), []).append(
                feynman_amplitude(cls.map, theory)
            )
        out.append(
            [PerturbativeTerm(e, math.fsum(v), len(v)) for e, v in sorted(terms.items())]
        )
    return out


def order_total(terms: Sequence[PerturbativeTerm]) -> float:
    return math.fsum(t.value for t in terms)


# ---------------------------------------------------------------------------
# non-perturbative oracle


def _check_bounded(theory: Theory, rng_seed: int = 0) -> None:
    live = [k for k in theory.kernels if (k.g != 0 if k.kind == "local" else np.any(k.tensor))]
    if not live:
        return
    top = live[-1]
    if top.arity % 2:
        raise Unbounded(f"highest interaction has odd degree {top.arity}")
    if top.kind == "local":
        if top.g <= 0:
            raise Unbounded("highest coupling must be positive")
        return
    rng = np.random.default_rng(rng_seed)
    u = rng.standard_normal((4096, theory.op.dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    if np.min(top.potential(u)) <= 0:
        raise Unbounded("top-degree part of the potential is not positive")


def _gauss_grid(n_dim: int, L: float, m: int):
    x, w = np.polynomial.legendre.leggauss(m)
    x, w = L * x, L * w
    grids = np.meshgrid(*([x] * n_dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.ones(len(pts))
    for k, g in enumerate(np.meshgrid(*([w] * n_dim), indexing="ij")):
        wts = wts * g.ravel()
    return pts, wts


def _moments_on_grid(theory: Theory, monomials, L: float, m: int):
    pts, wts = _gauss_grid(theory.op.dim, L, m)
    s = theory.action(pts)
    weight = wts * np.exp(-(s - s.min()))
    z = weight.sum()
    vals = [float(np.dot(weight, np.prod(pts[:, list(mono)], axis=1)) / z) if mono else 1.0 for mono in monomials]
    return z, vals, s.min()


def quadrature_moment_oracle(theory: Theory, sites: Sequence[int] | None = None, monomials=None, tol: float = 1e-12):
    """``<phi_x1 ... phi_xn>`` by tensor Gauss-Legendre quadrature.

    The window ``[-L, L]^N`` is widened until the weight on the boundary
    shell is below ``tol`` relative to the peak, and the node count is
    doubled until the moments settle. Pass ``monomials`` (a list of site
    tuples) to get several moments from one set of evaluations.
    """
    if theory.op.dim > 3:
        raise ValueError("quadrature oracle supports N <= 3")
    _check_bounded(theory)
    single = monomials is None
    if single:
        monomials = [tuple(theory.external_sites if sites is None else sites)]
    monomials = [tuple(mono) for mono in monomials]

    n = theory.op.dim
    L = math.sqrt(2.0 * 30.0 / theory.op.lam_min)
    probe = np.linspace(-1.0, 1.0, {1: 2001, 2: 201, 3: 41}[n])
    cube = np.stack(np.meshgrid(*([probe] * n), indexing="ij"), axis=-1).reshape(-1, n)
    on_face = np.max(np.abs(cube), axis=1) == 1.0
    while True:
        s = theory.action(cube * L)
        if s[on_face].min() - s.min() > -math.log(tol) + 8.0:
            break
        L *= 1.25
    m = {1: 256, 2: 128, 3: 48}[theory.op.dim]
    _, prev, _ = _moments_on_grid(theory, monomials, L, m)
    for _ in range(4):
        m *= 2 if theory.op.dim < 3 else 1.5
        m = int(m)
        _, cur, _ = _moments_on_grid(theory, monomials, L, m)
        if all(abs(a - b) <= 1e-13 * max(1.0, abs(b)) for a, b in zip(cur, prev)):
            prev = cur
            break
        prev = cur
    return prev[0] if single else prev
