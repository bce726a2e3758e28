"""Run-length statistics of collision-free fine sub-steps, and the fast level-0 sampler.

Within one coarse step of M fine sub-steps there are M - 1 boundaries at
which a collision may happen.  A "success" is a boundary without a
collision (probability p_nc).  A run of lam consecutive sub-steps that share
a velocity is a success run of length lam - 1.

For each lam in 2..Lambda two statistics are tabulated:

* E: the number of success runs of length exactly lam - 1,
* G: the number of success runs of length lam - 1 or more,

by embedding each count in a finite Markov chain and propagating its state
distribution over the M - 1 trials.  The sampler then draws a multiset of
run lengths from these tables and turns it into an approximate coarse
Brownian increment whose cost is O(Lambda), independent of M.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from math import sqrt
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .velocity import VelocityModel, VelocitySumTable, sample_velocity_sum

logger = logging.getLogger(__name__)

MAX_FINE_STEPS = 1 << 20
DEFAULT_LAMBDA = 20
# rows of the chain below this mass are dropped while propagating
_NEGLIGIBLE = 1e-30


class TableResourceError(RuntimeError):
    pass


def count_runs(successes, k: int) -> tuple[int, int]:
    """Count (exactly-k, at-least-k) success runs in a 0/1 sequence."""
    exact = at_least = 0
    length = 0
    for s in list(successes) + [0]:
        if s:
            length += 1
            continue
        if length == k:
            exact += 1
        if length >= k:
            at_least += 1
        length = 0
    return exact, at_least


def run_lengths(collisions) -> list[int]:
    """Lengths (in sub-steps) of the velocity runs given M - 1 boundary collision flags."""
    out = []
    length = 1
    for c in collisions:
        if c:
            out.append(length)
            length = 1
        else:
            length += 1
    out.append(length)
    return out


def exact_run_chain(n_trials: int, lam: int, p_nc: float):
    """Transition matrix, initial vector and per-count observation masks for E.

    State (x, j) holds x runs of exactly k = lam - 1 successes seen so far
    (the current run counted tentatively once it reaches k) and the current
    run length j in 0..k, with j = k + 1 meaning the run has outgrown k.
    """
    k = lam - 1
    n_max = (n_trials + 1) // lam
    width = k + 2
    r = (n_max + 1) * width

    def idx(x, j):
        return x * width + j

    rows, cols, vals = [], [], []
    for x in range(n_max + 1):
        for j in range(width):
            src = idx(x, j)
            if j < k - 1:
                dst = idx(x, j + 1)
            elif j == k - 1:
                dst = idx(min(x + 1, n_max), k)
            elif j == k:
                dst = idx(max(x - 1, 0), k + 1)
            else:
                dst = src
            rows += [dst, idx(x, 0)]
            cols += [src, src]
            vals += [p_nc, 1.0 - p_nc]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, r))
    pi0 = np.zeros(r)
    pi0[idx(0, 0)] = 1.0
    masks = np.arange(r) // width
    return A, pi0, masks, n_max


def at_least_run_chain(n_trials: int, lam: int, p_nc: float):
    """As :func:`exact_run_chain` for G; j = k marks a run already counted."""
    k = lam - 1
    n_max = (n_trials + 1) // lam
    width = k + 1
    r = (n_max + 1) * width

    def idx(x, j):
        return x * width + j

    rows, cols, vals = [], [], []
    for x in range(n_max + 1):
        for j in range(width):
            src = idx(x, j)
            if j < k - 1:
                dst = idx(x, j + 1)
            elif j == k - 1:
                dst = idx(min(x + 1, n_max), k)
            else:
                dst = src
            rows += [dst, idx(x, 0)]
            cols += [src, src]
            vals += [p_nc, 1.0 - p_nc]
    A = sp.csr_matrix((vals, (rows, cols)), shape=(r, r))
    pi0 = np.zeros(r)
    pi0[idx(0, 0)] = 1.0
    masks = np.arange(r) // width
    return A, pi0, masks, n_max


def run_count_pmf(n_trials: int, lam: int, p_nc: float, statistic: str) -> np.ndarray:
    """P(R = omega), omega = 0..floor((n_trials + 1) / lam), for R in {"E", "G"}.

    Propagates the chain of :func:`exact_run_chain` / :func:`at_least_run_chain`
    with its banded structure written out as array shifts, restricted to the
    window of counts x that still carry probability mass.
    """
    if statistic not in ("E", "G"):
        raise ValueError(f"statistic must be 'E' or 'G', got {statistic!r}")
    exact = statistic == "E"
    k = lam - 1
    n_max = (n_trials + 1) // lam
    width = k + 2 if exact else k + 1
    pi = np.zeros((n_max + 2, width))
    pi[0, 0] = 1.0
    p, q = p_nc, 1.0 - p_nc
    lo = hi = 0
    for _ in range(n_trials):
        blk = pi[lo:hi + 1].copy()
        pi[lo:hi + 1] = 0.0
        pi[lo:hi + 1, 0] = q * blk.sum(axis=1)
        pi[lo:hi + 1, 1:k] += p * blk[:, :k - 1]
        pi[lo + 1:hi + 2, k] += p * blk[:, k - 1]
        if exact:
            # a run outgrowing k is no longer counted; (0, k) is unreachable
            src = blk[1:, k] if lo == 0 else blk[:, k]
            pi[max(lo - 1, 0):hi, k + 1] += p * src
            pi[lo:hi + 1, k + 1] += p * blk[:, k + 1]
            lo = max(lo - 1, 0)
        else:
            pi[lo:hi + 1, k] += p * blk[:, k]
        hi = min(hi + 1, n_max)
        while lo < hi and pi[lo].sum() < _NEGLIGIBLE:
            pi[lo] = 0.0
            lo += 1
        while hi > lo and pi[hi].sum() < _NEGLIGIBLE:
            pi[hi] = 0.0
            hi -= 1
    return pi[:n_max + 1].sum(axis=1)


def run_count_pmf_sparse(n_trials: int, lam: int, p_nc: float, statistic: str) -> np.ndarray:
    """Same as :func:`run_count_pmf` by explicit sparse matrix-vector products."""
    chain = exact_run_chain if statistic == "E" else at_least_run_chain
    A, pi, owner, n_max = chain(n_trials, lam, p_nc)
    for _ in range(n_trials):
        pi = A @ pi
    return np.bincount(owner, weights=pi, minlength=n_max + 1)


@dataclass(frozen=True)
class RunLengthTables:
    M: int
    p_nc: float
    lambda_max: int
    E_cumulative: dict[int, np.ndarray] = field(repr=False)
    G_cumulative: dict[int, np.ndarray] = field(repr=False)

    def sample(self, statistic: str, lam: int, u: np.ndarray) -> np.ndarray:
        cum = (self.E_cumulative if statistic == "E" else self.G_cumulative)[lam]
        return np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)

    def to_text(self) -> str:
        lines = [f"{self.M} {self.p_nc!r} {self.lambda_max}"]
        for lam in range(2, self.lambda_max + 1):
            for name, rows in (("E", self.E_cumulative), ("G", self.G_cumulative)):
                values = " ".join(f"{c:.17g}" for c in rows[lam])
                lines.append(f"{name} {lam} {values}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> RunLengthTables:
        lines = text.strip().splitlines()
        M, p_nc, lambda_max = lines[0].split()
        E, G = {}, {}
        for line in lines[1:]:
            name, lam, *values = line.split()
            (E if name == "E" else G)[int(lam)] = np.array([float(v) for v in values])
        return cls(int(M), float(p_nc), int(lambda_max), E, G)

    @classmethod
    def load(cls, path) -> RunLengthTables:
        return cls.from_text(Path(path).read_text())


def build_tables(M: int, p_nc: float, lambda_max: int = DEFAULT_LAMBDA) -> RunLengthTables:
    if not 2 <= lambda_max <= M:
        raise ValueError(f"need 2 <= lambda_max <= M, got lambda_max={lambda_max}, M={M}")
    if not 0.0 < p_nc < 1.0:
        raise ValueError("p_nc must lie strictly between 0 and 1")
    if M > MAX_FINE_STEPS:
        raise TableResourceError(f"M={M} exceeds the supported maximum {MAX_FINE_STEPS}")
    return _build_tables_cached(int(M), float(p_nc), int(lambda_max))


@functools.lru_cache(maxsize=32)
def _build_tables_cached(M: int, p_nc: float, lambda_max: int) -> RunLengthTables:
    E, G = {}, {}
    for lam in range(2, lambda_max + 1):
        for name, store in (("E", E), ("G", G)):
            c = np.cumsum(run_count_pmf(M - 1, lam, p_nc, name))
            store[lam] = c
    logger.debug("built run-length tables M=%d p_nc=%g Lambda=%d", M, p_nc, lambda_max)
    return RunLengthTables(M, p_nc, lambda_max, E, G)


def expected_truncated_runs(M: int, p_nc: float, lambda_max: int) -> float:
    """Expected number of runs longer than lambda_max in one coarse step."""
    if lambda_max >= M:
        return 0.0
    # a run starting at sub-step s is longer than lam iff the next lam
    # boundaries carry no collision, which needs s + lam <= M - 1
    starts = 1.0 + (1.0 - p_nc) * (M - 1 - lambda_max)
    return starts * p_nc**lambda_max


def sample_run_multiset(tables: RunLengthTables, rng: np.random.Generator, size: int | None = None):
    """Draw phi[lam] (lam = 0..Lambda, index 0 unused) with sum(lam * phi[lam]) == M.

    Counts are drawn from lam = Lambda down to 2, from the E table while no
    run has been placed and from the G table afterwards (minus the runs
    already placed); overshoot of the M sub-steps is trimmed and the rest is
    assigned to single-step runs.
    """
    n = 1 if size is None else size
    Lam, M = tables.lambda_max, tables.M
    phi = np.zeros((n, Lam + 1), dtype=np.int64)
    run_sum = np.zeros(n, dtype=np.int64)
    remaining = np.full(n, M, dtype=np.int64)
    for lam in range(Lam, 1, -1):
        u = rng.random(n)
        count = np.where(run_sum == 0, tables.sample("E", lam, u), tables.sample("G", lam, u))
        count = np.maximum(count - run_sum, 0)
        remaining -= lam * count
        over = remaining < 0
        if over.any():
            fix = -(remaining[over] // lam)  # ceil(-remaining / lam)
            remaining[over] += lam * fix
            count[over] -= fix
        phi[:, lam] = count
        run_sum += count
    phi[:, 1] = remaining
    return phi[0] if size is None else phi


def fast_level0_xi(model: VelocityModel, tables: RunLengthTables, sum_table: VelocitySumTable | None,
                   theta: float, var_sum: float, rng: np.random.Generator, size: int | None = None):
    """Coarse Brownian increments distributed like those of the combined coupling.

    ``var_sum`` is the variance of the fine velocity sum over one coarse step
    (:func:`apmlmc.variance.var_velocity_sum`).
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    n = 1 if size is None else size
    xi = rng.standard_normal(n)
    if theta < 1.0:
        phi = sample_run_multiset(tables, rng, n)
        total = np.zeros(n)
        for lam in range(1, tables.lambda_max + 1):
            col = phi[:, lam]
            if col.any():
                total += lam * sample_velocity_sum(model, col, sum_table, rng)
        xi = sqrt(theta) * xi + sqrt(1.0 - theta) * total / sqrt(var_sum)
    return float(xi[0]) if size is None else xi
