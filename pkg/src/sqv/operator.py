"""Finite-dimensional quadratic operator A, its inverse, heat kernels and
the closed-form engine for nested exponential time integrals.

Every kernel is evaluated in the eigenbasis of A, so ``A = U diag(lam) U^T``
and ``f(A) = U diag(f(lam)) U^T`` for the functions used here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyGap, NegativeTime, NonPositiveRate, NotPositiveDefinite, NotSymmetric

SYMMETRY_RTOL = 1e-12
SPD_RTOL = 1e-12
RECONSTRUCTION_RTOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Operator:
    """A symmetric positive-definite N x N matrix with its eigen-decomposition.

    Instances are immutable; build them with :func:`spd_build`.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def lam_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lam_max(self) -> float:
        return float(self.eigenvalues[-1])

    def spectral(self, values: np.ndarray) -> np.ndarray:
        """Return ``U diag(values) U^T``; ``values`` may carry leading batch axes."""
        U = self.eigenvectors
        return np.einsum("ik,...k,jk->...ij", U, values, U)

    def __repr__(self) -> str:
        return f"Operator(dim={self.dim}, eigenvalues={np.array2string(self.eigenvalues, precision=6)})"


def spd_build(matrix) -> Operator:
    """Validate ``matrix`` as symmetric positive definite and diagonalize it.

    Eigenvalues come back sorted ascending. Eigenvector signs are fixed so
    that the first non-negligible component of each column is positive.
    """
    M = np.asarray(matrix, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"operator matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("operator matrix has non-finite entries")
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    if scale == 0.0:
        raise NotPositiveDefinite("zero matrix")
    asym = float(np.max(np.abs(M - M.T)))
    if asym > SYMMETRY_RTOL * scale:
        raise NotSymmetric(f"max |A - A^T| = {asym:.3e} exceeds {SYMMETRY_RTOL:g} relative")
    M = 0.5 * (M + M.T)

    lam, U = np.linalg.eigh(M)
    if lam[-1] <= 0 or lam[0] <= SPD_RTOL * lam[-1]:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {lam[0]:.3e} is not positive relative to {lam[-1]:.3e}"
        )
    for k in range(U.shape[1]):
        col = U[:, k]
        lead = np.flatnonzero(np.abs(col) > 1e-12)[0]
        if col[lead] < 0:
            U[:, k] = -col

    recon = (U * lam) @ U.T
    err = float(np.max(np.abs(recon - M)))
    if err > RECONSTRUCTION_RTOL * scale:
        raise NotSymmetric(f"eigen-reconstruction error {err:.3e} too large")
    return Operator(_frozen(M), _frozen(lam), _frozen(U))


def laplacian_1d(n: int, mass2: float = 1.0, omega2: float = 0.0, spacing: float = 1.0) -> Operator:
    """Dirichlet lattice discretization of ``-d^2/dx^2 + mass2 + omega2 x^2``.

    Sites sit at ``x_i = (i - (n-1)/2) * spacing``; with ``omega2 > 0`` this is
    the harmonic-confinement covariance, with ``omega2 = 0`` the massive
    lattice Laplacian.
    """
    if n < 1:
        raise ValueError("n must be positive")
    h2 = spacing * spacing
    x = (np.arange(n) - (n - 1) / 2.0) * spacing
    M = np.diag(2.0 / h2 + mass2 + omega2 * x * x)
    off = -np.ones(n - 1) / h2
    M += np.diag(off, 1) + np.diag(off, -1)
    return spd_build(M)


def heat_kernel(op: Operator, t: float) -> np.ndarray:
    """``exp(-t A)`` for ``t >= 0``."""
    if t < 0:
        raise NegativeTime(f"heat kernel needs t >= 0, got {t}")
    return op.spectral(np.exp(-t * op.eigenvalues))


def covariance(op: Operator) -> np.ndarray:
    """``C = A^{-1}``."""
    return op.spectral(1.0 / op.eigenvalues)


def noise_propagator(op: Operator, t: float, s: float) -> np.ndarray:
    """Stochastic two-point function ``exp(-|t-s| A) / A``."""
    lam = op.eigenvalues
    return op.spectral(np.exp(-abs(t - s) * lam) / lam)


def heat_kernel_batch(op: Operator, taus) -> np.ndarray:
    """Heat kernels for an array of non-negative times, shape ``taus.shape + (N, N)``."""
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0):
        raise NegativeTime("heat kernel needs non-negative times")
    return op.spectral(np.exp(-taus[..., None] * op.eigenvalues))


def noise_propagator_batch(op: Operator, dts) -> np.ndarray:
    dts = np.abs(np.asarray(dts, dtype=float))
    lam = op.eigenvalues
    return op.spectral(np.exp(-dts[..., None] * lam) / lam)


# ---------------------------------------------------------------------------
# time integrals


@dataclass(frozen=True)
class GapProduct:
    """One linear extension's time integral: ``prod_k 1 / R_k``."""

    gap_rates: tuple[float, ...]
    value: float = field(init=False)

    def __post_init__(self):
        v = 1.0
        for r in self.gap_rates:
            v /= r
        object.__setattr__(self, "value", v)


def gap_product(gap_crossings: Sequence[Sequence[int]], rates: Sequence[float]) -> GapProduct:
    rates = [float(r) for r in rates]
    for i, r in enumerate(rates):
        if not r > 0:
            raise NonPositiveRate(f"edge {i} has rate {r}")
    gap_rates = []
    for k, crossing in enumerate(gap_crossings):
        if len(crossing) == 0:
            raise EmptyGap(f"gap {k} is crossed by no edge")
        gap_rates.append(math.fsum(rates[e] for e in crossing))
    return GapProduct(tuple(gap_rates))


def integrate_linear_extension(gap_crossings: Sequence[Sequence[int]], rates: Sequence[float]) -> float:
    """Closed form of one ordered exponential integral.

    ``gap_crossings[k]`` lists the indices of the edges spanning the k-th
    time gap (between the k-th and (k+1)-th time of the total order, the top
    time first); ``rates[e]`` is the decay rate of edge ``e``. The integral
    of ``prod_e exp(-rate_e * (t_upper(e) - t_lower(e)))`` over
    ``t >= t_1 >= ... >= t_p > -inf`` factorizes over the gap variables into
    ``prod_k 1 / R_k`` with ``R_k`` the summed rate over gap ``k``.
    """
    return gap_product(gap_crossings, rates).value


def crossings_from_edges(edges: Sequence[tuple[int, int]], p: int) -> list[list[int]]:
    """Gap crossings for edges given as pairs of positions in a total order.

    Position 0 is the top (external) time, positions 1..p the integrated
    times in decreasing order. Edge ``(a, b)`` spans gaps ``min+1 .. max``.
    """
    gaps: list[list[int]] = [[] for _ in range(p)]
    for e, (a, b) in enumerate(edges):
        lo, hi = min(a, b), max(a, b)
        for k in range(lo, hi):
            gaps[k].append(e)
    return gaps


@lru_cache(maxsize=64)
def _graded_rule(panels: int = 9, order: int = 6, ratio: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [0, 1], geometrically refined toward 0."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = [0.0] + [ratio ** k for k in range(panels - 1, -1, -1)]
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        nodes.append(a + half * (x + 1.0))
        weights.append(half * w)
    n = np.concatenate(nodes)
    wt = np.concatenate(weights)
    n.setflags(write=False)
    wt.setflags(write=False)
    return n, wt


def nested_ordered_quadrature(
    integrand: Callable[[np.ndarray], np.ndarray],
    p: int,
    t_top: float,
    t_span: float,
    panels: int = 9,
    order: int = 6,
    chunk: int = 2_000_000,
) -> float:
    """Integrate over ``t_top >= u_1 >= ... >= u_p >= t_top - t_span``.

    Each nested variable is integrated on ``[t_top - t_span, u_{k-1}]`` with a
    graded Gauss-Legendre rule clustered at the upper end, where the
    exponential integrands carry their mass. ``integrand`` receives an array
    of shape ``(M, p + 1)`` whose column 0 is the top time.
    """
    y, wy = _graded_rule(panels, order)
    floor = t_top - t_span
    if p == 0:
        return float(integrand(np.array([[t_top]]))[0])

    def expand(times: np.ndarray, weights: np.ndarray) -> float:
        level = times.shape[1]
        if level == p + 1:
            return float(np.dot(weights, integrand(times)))
        m = times.shape[0]
        step = max(1, chunk // (len(y) ** (p + 1 - level)))
        total = 0.0
        for start in range(0, m, step):
            tt = times[start : start + step]
            ww = weights[start : start + step]
            upper = tt[:, -1]
            length = upper - floor
            new = upper[:, None] - length[:, None] * y[None, :]
            neww = ww[:, None] * length[:, None] * wy[None, :]
            k = tt.shape[0] * len(y)
            stacked = np.concatenate([np.repeat(tt, len(y), axis=0), new.reshape(k, 1)], axis=1)
            total += expand(stacked, neww.reshape(k))
        return total

    return expand(np.array([[t_top]]), np.array([1.0]))


def quadrature_linear_extension(
    edges: Sequence[tuple[int, int]],
    rates: Sequence[float],
    p: int,
    t_top: float = 0.0,
    t_span: float | None = None,
) -> float:
    """Numerical counterpart of :func:`integrate_linear_extension`.

    Integrates the raw product of exponentials over the truncated ordered
    region; used as an independent check of the gap formula.
    """
    rates = np.asarray(rates, dtype=float)
    if np.any(rates <= 0):
        raise NonPositiveRate("rates must be positive")
    if t_span is None:
        t_span = 40.0 / float(rates.min())
    ea = np.array([a for a, _ in edges], dtype=int)
    eb = np.array([b for _, b in edges], dtype=int)

    def f(times):
        dt = np.abs(times[:, ea] - times[:, eb])
        return np.exp(-(dt * rates).sum(axis=1))

    return nested_ordered_quadrature(f, p, t_top, t_span)


# ---------------------------------------------------------------------------
# bounded simplex integrals over tree orders


def _check_parents(parent: Sequence[int]) -> None:
    for i, q in enumerate(parent):
        if q != -1 and not (0 <= q < len(parent)):
            raise ValueError(f"vertex {i} has invalid parent {q}")
    # reject cycles
    for i in range(len(parent)):
        seen, v = set(), i
        while v != -1:
            if v in seen:
                raise ValueError("parent array contains a cycle")
            seen.add(v)
            v = parent[v]


def count_linear_extensions(parent: Sequence[int]) -> int:
    """Number of total orders of the vertices compatible with the tree order.

    ``parent[i] == -1`` marks a child of the (implicit, top) root.
    Counted by dynamic programming over down-sets.
    """
    _check_parents(parent)
    p = len(parent)
    par_mask = [0 if q == -1 else 1 << q for q in parent]

    @lru_cache(maxsize=None)
    def count(placed: int) -> int:
        if placed == (1 << p) - 1:
            return 1
        total = 0
        for v in range(p):
            bit = 1 << v
            if not placed & bit and (placed & par_mask[v]) == par_mask[v]:
                total += count(placed | bit)
        return total

    return count(0)


def simplex_constant(parent: Sequence[int]) -> Fraction:
    """Exact rational ``c`` with ``vol{0 <= t_w <= t_v <= t for v < w} = c t^p``."""
    p = len(parent)
    return Fraction(count_linear_extensions(parent), math.factorial(p))


def simplex_integral_bounded(parent: Sequence[int], t: float) -> float:
    """Volume of the order-respecting region of ``[0, t]^p``; ``c t^p``."""
    if t <= 0:
        raise ValueError("t must be positive")
    c = simplex_constant(parent)
    return float(c) * t ** len(parent)
