"""Euler-Maruyama simulation of ``dphi = -dS/dphi dt + sqrt(2) dW``.

Noise comes from an SFC64 generator seeded through ``SeedSequence``.
Within one run the stream is consumed step-major, then chain, then site.
Run ``r`` of a pooled campaign uses ``SeedSequence(seed).spawn(runs)[r]``,
so any run can be replayed on its own.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from collections import Counter
from dataclasses import dataclass, replace
from typing import IO, Iterator, Sequence

import numpy as np

from .errors import Diverged
from .feynman import Theory

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e8
N_BLOCKS = 32
_CHUNK = 512  # steps of noise drawn per generator call
_SEGMENT = 32  # steps folded into the moment sums per vectorized pass


@dataclass(frozen=True)
class SimConfig:
    step: float = 1e-3
    burn_in: int = 10_000
    samples: int = 100_000
    thin: int = 1
    seed: int = 0
    initial: tuple[float, ...] | None = None
    chains: int = 1

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.samples < 1 or self.thin < 1 or self.chains < 1 or self.burn_in < 0:
            raise ValueError("samples, thin and chains must be >= 1 and burn_in >= 0")


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    std_error: float
    n_effective: float

    def agrees(self, reference: float, n_sigma: float = 3.0) -> bool:
        return abs(self.value - reference) <= n_sigma * self.std_error


def drift(theory: Theory, phi: np.ndarray) -> np.ndarray:
    """``-A phi - dV/dphi`` for one configuration or a batch ``(..., N)``."""
    phi = np.asarray(phi, dtype=float)
    out = -phi @ theory.op.matrix
    for k in theory.kernels:
        q = k.arity - 1
        if k.kind == "local":
            out -= k.g * _ipow(phi, q)
        else:
            operands = [k.tensor, list(range(k.arity))]
            for i in range(1, k.arity):
                operands += [phi, [..., i]]
            out -= np.einsum(*operands, [..., 0])
    return out


def _ipow(x: np.ndarray, q: int) -> np.ndarray:
    out = x
    for _ in range(q - 1):
        out = out * x
    return out


def _generator(seed) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.SFC64(ss))


def _run_chunks(theory: Theory, cfg: SimConfig, seed=None) -> Iterator[np.ndarray]:
    """Recorded states (post burn-in, every ``thin``-th step) in arrays of shape
    ``(m, chains, N)``, one per noise chunk. The buffer is reused between yields."""
    n = theory.op.dim
    rng = _generator(cfg.seed if seed is None else seed)
    phi = np.zeros((cfg.chains, n))
    if cfg.initial is not None:
        phi[:] = np.asarray(cfg.initial, dtype=float)
    h = cfg.step
    amp = math.sqrt(2.0 * h)
    step_fn = _stepper(theory, h)
    noise = np.empty((_CHUNK, cfg.chains, n))
    states = np.empty_like(noise)
    total = cfg.burn_in + cfg.samples * cfg.thin
    done = 0
    while done < total:
        k = min(_CHUNK, total - done)
        rng.standard_normal(out=noise[:k])
        noise[:k] *= amp
        r = 0
        for j in range(k):
            phi = step_fn(phi, noise[j])
            step = done + j + 1
            if step > cfg.burn_in and (step - cfg.burn_in) % cfg.thin == 0:
                states[r] = phi
                r += 1
        done += k
        if not np.all(np.isfinite(phi)) or np.max(np.abs(phi)) > DIVERGENCE_BOUND:
            raise Diverged(f"|phi| exceeded {DIVERGENCE_BOUND:g} by step {done}; reduce the step size")
        if r:
            yield states[:r]


def _run(theory: Theory, cfg: SimConfig, seed=None) -> Iterator[np.ndarray]:
    """Yield the state after every post-burn-in step that is a multiple of ``thin``."""
    for chunk in _run_chunks(theory, cfg, seed):
        yield from chunk


def _stepper(theory: Theory, h: float):
    """Return ``phi -> phi + h drift(phi) + noise``; fused for local kernels."""
    if any(k.kind == "dense" for k in theory.kernels):
        return lambda phi, eta: phi + h * drift(theory, phi) + eta
    n = theory.op.dim
    lin = np.eye(n) - h * theory.op.matrix
    scalar = float(lin[0, 0]) if n == 1 else None
    terms = [(k.arity - 1, h * k.g) for k in theory.kernels if k.g != 0]
    top = max((q for q, _ in terms), default=0)

    def step(phi, eta):
        new = phi * scalar if scalar is not None else phi @ lin
        if terms:
            pw = phi
            for q in range(2, top + 1):
                pw = pw * phi
                for qq, c in terms:
                    if qq == q:
                        new -= c * pw
            for qq, c in terms:
                if qq == 1:
                    new -= c * phi
        new += eta
        return new

    return step


def simulate(theory: Theory, cfg: SimConfig) -> Iterator[np.ndarray]:
    """Recorded states: ``N``-vectors for one chain, ``(chains, N)`` otherwise."""
    for phi in _run(theory, cfg):
        yield phi[0].copy() if cfg.chains == 1 else phi.copy()


def write_trajectory(stream: Iterator[np.ndarray], fh: IO[str], thin: int = 1) -> int:
    """Write ``index v_0 ... v_{N-1}`` lines (first chain only); returns the line count."""
    count = 0
    for i, phi in enumerate(stream):
        row = np.atleast_2d(phi)[0]
        fh.write(f"{i * thin} " + " ".join(f"{x:.12g}" for x in row) + "\n")
        count += 1
    return count


def _power_plan(wanted) -> list[int]:
    """Exponents above 1 to build, in order, so that ``x^k = x^(k//2) x^(k-k//2)``."""
    plan: set[int] = set()

    def need(k):
        if k > 1 and k not in plan:
            plan.add(k)
            need(k // 2)
            need(k - k // 2)

    for k in wanted:
        need(k)
    return sorted(plan)


class _Accumulator:
    """Per-chain sums of the requested monomials over ``N_BLOCKS`` time blocks.

    With ``theory`` given it also accumulates the control variates
    ``Z_xy = phi_x b_y + phi_y b_x + h b_x b_y + 2 delta_xy`` (``b`` the drift).
    Stationarity of the discrete chain for quadratic observables makes
    ``E[Z] = 0`` exactly at any step size, so subtracting a fitted multiple of
    ``Z`` lowers the variance without adding bias.
    """

    def __init__(self, monomials, chains: int, samples: int, theory: Theory | None = None, step: float = 0.0):
        self.terms = [sorted(Counter(m).items()) for m in monomials]
        top = max((k for t in self.terms for _, k in t), default=1)
        # the first factor of every monomial is gathered in one fancy-index call
        first = [t[0] if t else (0, 0) for t in self.terms]
        self.first_k = np.array([k for _, k in first])
        self.first_site = np.array([s for s, _ in first])
        self.rest = [(j, t[1:]) for j, t in enumerate(self.terms) if len(t) > 1]
        self._top = top
        wanted = {k for t in self.terms for _, k in t}
        self._powers = _power_plan(wanted)
        self._pw = None
        self.theory, self.step = theory, step
        n = theory.op.dim if theory is not None else 0
        self.pairs = [(x, y) for x in range(n) for y in range(x, n)]
        n_obs = len(monomials) + len(self.pairs)
        self.sums = np.zeros((n_obs, N_BLOCKS, chains))
        self.sumsq = np.zeros(len(monomials))
        self.block_len = max(1, samples // N_BLOCKS)
        self.i = 0

    def add(self, phi: np.ndarray) -> None:
        self.add_chunk(phi[None])

    def add_chunk(self, states: np.ndarray) -> None:
        """Record consecutive states of shape ``(m, chains, N)``."""
        start = 0
        while start < len(states):
            b = min(self.i // self.block_len, N_BLOCKS - 1)
            room = _SEGMENT if b == N_BLOCKS - 1 else min(_SEGMENT, (b + 1) * self.block_len - self.i)
            seg = states[start : start + room]
            self._add_segment(seg, b)
            start += len(seg)
            self.i += len(seg)

    def _add_segment(self, phi: np.ndarray, b: int) -> None:
        n_mono = len(self.terms)
        m, chains, n = phi.shape
        if n_mono:
            # site-major copy so every power and gather below is contiguous
            size = m * chains
            if self._pw is None or self._pw.shape[2] < size:
                self._pw = np.ones((self._top + 1, n, size))
            pw = self._pw[:, :, :size]
            x = pw[1]
            x[...] = np.moveaxis(phi, -1, 0).reshape(n, size)
            for k in self._powers:  # repeated squaring; np.power is far slower
                np.multiply(pw[k // 2], pw[k - k // 2], out=pw[k])
            vals = pw[self.first_k, self.first_site]
            for j, extra in self.rest:
                for site, k in extra:
                    vals[j] *= pw[k, site]
            self.sums[:n_mono, b] += vals.reshape(n_mono, m, chains).sum(axis=1)
            self.sumsq += np.einsum("ij,ij->i", vals, vals)
        if self.pairs:
            drift_ = drift(self.theory, phi)
            for j, (x, y) in enumerate(self.pairs):
                z = phi[..., x] * drift_[..., y] + phi[..., y] * drift_[..., x] + self.step * drift_[..., x] * drift_[..., y]
                self.sums[n_mono + j, b] += z.sum(axis=0) + m * (2.0 if x == y else 0.0)

    @property
    def counts(self) -> np.ndarray:
        """Samples recorded in each block."""
        c = np.array([min(max(self.i - k * self.block_len, 0), self.block_len) for k in range(N_BLOCKS)], dtype=float)
        c[-1] += max(self.i - N_BLOCKS * self.block_len, 0)
        return c

    def _units(self):
        """Independent units (per-chain or per-block means) and the blocks
        they are grouped into for the error bar."""
        chains = self.sums.shape[2]
        if chains >= N_BLOCKS:
            units = self.sums.sum(axis=1) / self.counts.sum()
            groups = np.array_split(np.arange(chains), N_BLOCKS)
        else:
            units = self.sums.sum(axis=2) / (self.counts * chains)
            groups = [np.array([i]) for i in range(N_BLOCKS)]
        return units, groups

    def estimates(self) -> list[MomentEstimate]:
        n_mono = len(self.terms)
        n_raw = float(self.counts.sum() * self.sums.shape[2])
        units, groups = self._units()
        if self.pairs:
            z = units[n_mono:].T
            zc = z - z.mean(axis=0)
            beta, *_ = np.linalg.lstsq(zc, (units[:n_mono] - units[:n_mono].mean(axis=1, keepdims=True)).T, rcond=None)
            corrected = units[:n_mono] - (z @ beta).T
        else:
            corrected = units[:n_mono]
        out = []
        for j in range(n_mono):
            block_means = np.array([corrected[j, g].mean() for g in groups])
            weights = np.array([len(g) for g in groups], dtype=float)
            mean = float(np.dot(weights, block_means) / weights.sum())
            err = float(block_means.std(ddof=1) / math.sqrt(len(block_means)))
            raw_mean = self.sums[j].sum() / n_raw
            var = max(self.sumsq[j] / n_raw - raw_mean**2, 0.0)
            n_eff = n_raw if err == 0 else min(n_raw, var / err**2)
            out.append(MomentEstimate(mean, err, float(n_eff)))
        return out


def blocking_estimate(series: np.ndarray, n_blocks: int = N_BLOCKS) -> MomentEstimate:
    """Mean of a correlated series with an error bar from contiguous block means."""
    series = np.asarray(series, dtype=float)
    n = len(series)
    if n < n_blocks:
        raise ValueError(f"need at least {n_blocks} samples for blocking")
    usable = n - n % n_blocks
    blocks = series[:usable].reshape(n_blocks, -1).mean(axis=1)
    err = float(blocks.std(ddof=1) / math.sqrt(n_blocks))
    var = float(series.var())
    n_eff = float(n) if err == 0 or var == 0 else min(float(n), var / err**2)
    return MomentEstimate(float(series.mean()), err, n_eff)


def pool(estimates: Sequence[MomentEstimate]) -> MomentEstimate:
    """Inverse-variance weighted combination of independent estimates."""
    if len(estimates) == 1:
        return estimates[0]
    w = np.array([1.0 / e.std_error**2 if e.std_error > 0 else np.inf for e in estimates])
    vals = np.array([e.value for e in estimates])
    if np.isinf(w).any():
        mask = np.isinf(w)
        return MomentEstimate(float(vals[mask].mean()), 0.0, sum(e.n_effective for e in estimates))
    value = float(np.dot(w, vals) / w.sum())
    return MomentEstimate(value, float(1.0 / math.sqrt(w.sum())), sum(e.n_effective for e in estimates))


def _run_job(args):
    theory, cfg, monomials, seed, control = args
    if cfg.samples < N_BLOCKS:
        raise ValueError(f"need at least {N_BLOCKS} samples for blocking")
    acc = _Accumulator(monomials, cfg.chains, cfg.samples, theory if control else None, cfg.step)
    for chunk in _run_chunks(theory, cfg, seed):
        acc.add_chunk(chunk)
    return acc.estimates()


def equilibrium_moments(
    theory: Theory,
    cfg: SimConfig,
    monomials: Sequence[Sequence[int]],
    runs: int = 1,
    jobs: int = 1,
    control_variates: bool = False,
) -> list[MomentEstimate]:
    """Time-averaged moments ``<prod phi_x>`` for each site tuple in ``monomials``.

    With ``runs > 1`` independent runs (spawned seeds) are pooled by inverse
    variance; ``jobs`` runs them in parallel. ``control_variates`` switches
    on the zero-mean quadratic correction described in :class:`_Accumulator`.
    """
    monomials = [tuple(m) for m in monomials]
    if runs == 1:
        return _run_job((theory, cfg, monomials, None, control_variates))
    seeds = np.random.SeedSequence(cfg.seed).spawn(runs)
    work = [(theory, cfg, monomials, s, control_variates) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            per_run = list(ex.map(_run_job, work))
    else:
        per_run = [_run_job(w) for w in work]
    return [pool([r[j] for r in per_run]) for j in range(len(monomials))]


def with_step(cfg: SimConfig, step: float, matched_time: bool = True) -> SimConfig:
    """Same configuration at another step size, optionally keeping the total
    simulated time (burn-in and sampling) fixed."""
    if not matched_time:
        return replace(cfg, step=step)
    r = cfg.step / step
    return replace(cfg, step=step, burn_in=int(round(cfg.burn_in * r)), samples=int(round(cfg.samples * r)))
