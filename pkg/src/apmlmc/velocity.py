"""Post-collision velocity distributions and sums of independent draws.

Two symmetric models are supported: the Goldstein-Taylor two-speed model
(unit draws are exactly +1 or -1) and a Gaussian model.  Velocities are
handled in unit-variance form; callers scale by the characteristic
velocity of their scheme.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

TWO_SPEED = "two-speed"
GAUSSIAN = "gaussian"
_KINDS = (TWO_SPEED, GAUSSIAN)

# Truncate table rows once the remaining tail mass is below double resolution.
_TAIL_CUTOFF = 2.0**-60


class TableBoundsError(IndexError):
    pass


@dataclass(frozen=True)
class VelocityModel:
    kind: str = TWO_SPEED
    v_char: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown velocity model {self.kind!r}, expected one of {_KINDS}")
        if not self.v_char > 0:
            raise ValueError("v_char must be positive")

    @property
    def is_gaussian(self) -> bool:
        return self.kind == GAUSSIAN


def sample_unit_velocity(model: VelocityModel, rng: np.random.Generator, size=None):
    """Draw from the unit-variance distribution B (mean 0, variance 1)."""
    if model.kind == GAUSSIAN:
        return rng.standard_normal(size)
    bits = rng.random(size) < 0.5
    return np.where(bits, -1.0, 1.0) if size is not None else (-1.0 if bits else 1.0)


@dataclass(frozen=True)
class VelocitySumTable:
    """Cumulative distribution of |sigma_phi| for the two-speed model.

    Row ``phi`` lists P(|sigma_phi| <= k) for k = phi % 2, phi % 2 + 2, ...
    Rows are stored back to back in ``cum``; ``offsets[phi]`` is the start
    of row ``phi`` and ``offsets[phi + 1]`` its end.  Rows for large phi are
    cut where the cumulative reaches 1 to double precision.
    """

    max_phi: int
    cum: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    def row(self, phi: int) -> np.ndarray:
        if phi < 0 or phi > self.max_phi:
            raise TableBoundsError(f"phi={phi} outside table range 0..{self.max_phi}")
        return self.cum[self.offsets[phi]:self.offsets[phi + 1]]

    def pmf(self, phi: int) -> dict[int, float]:
        """Signed pmf of sigma_phi reconstructed from row ``phi``."""
        row = self.row(phi)
        probs = np.diff(np.concatenate(([0.0], row)))
        out = {}
        for j, p in enumerate(probs):
            k = phi % 2 + 2 * j
            if k == 0:
                out[0] = p
            else:
                out[k] = out[-k] = p / 2
        return out


def _abs_sum_pmf(phi: int) -> np.ndarray:
    # |sigma| = phi - 2i for i heads out of phi fair flips, folded onto k >= 0
    ks = np.arange(phi % 2, phi + 1, 2)
    heads = (phi + ks) // 2
    logp = gammaln(phi + 1) - gammaln(heads + 1) - gammaln(phi - heads + 1) - phi * np.log(2.0)
    p = np.exp(logp)
    p[ks > 0] *= 2
    return p


def build_velocity_sum_table(model: VelocityModel, max_phi: int) -> VelocitySumTable:
    if model.kind != TWO_SPEED:
        raise ValueError("velocity-sum tables are only needed for the two-speed model; "
                         "Gaussian sums are sampled in closed form")
    if max_phi < 1:
        raise ValueError("max_phi must be at least 1")
    rows = []
    offsets = [0]
    for phi in range(max_phi + 1):
        c = np.cumsum(_abs_sum_pmf(phi))
        cut = int(np.searchsorted(c, 1.0 - _TAIL_CUTOFF)) + 1
        c = c[:cut]
        c[-1] = 1.0
        rows.append(c)
        offsets.append(offsets[-1] + len(c))
    return VelocitySumTable(max_phi=max_phi, cum=np.concatenate(rows),
                            offsets=np.asarray(offsets, dtype=np.int64))


def _inverse_transform(table: VelocitySumTable, phi: np.ndarray, u: np.ndarray) -> np.ndarray:
    # vectorized bisection inside each sample's own row: first j with cum[j] > u
    lo = table.offsets[phi].copy()
    hi = table.offsets[phi + 1] - 1
    while True:
        active = lo < hi
        if not active.any():
            break
        mid = (lo + hi) // 2
        right = table.cum[mid] > u
        hi = np.where(active & right, mid, hi)
        lo = np.where(active & ~right, mid + 1, lo)
    return lo - table.offsets[phi]


def sample_velocity_sum(model: VelocityModel, phi, table: VelocitySumTable | None,
                        rng: np.random.Generator):
    """Draw sigma_phi, the sum of ``phi`` independent unit velocities.

    ``phi`` may be an integer or an integer array.  The cost per draw does
    not depend on ``phi``: Gaussian sums are N(0, phi) and two-speed sums
    use inverse transform on ``table`` plus a random sign.
    """
    scalar = np.ndim(phi) == 0
    phi = np.atleast_1d(np.asarray(phi, dtype=np.int64))
    if (phi < 0).any():
        raise ValueError("phi must be nonnegative")
    if model.kind == GAUSSIAN:
        out = np.sqrt(phi) * rng.standard_normal(phi.shape)
    else:
        if table is None:
            raise ValueError("two-speed velocity sums need a VelocitySumTable")
        if phi.size and phi.max() > table.max_phi:
            raise TableBoundsError(f"phi={phi.max()} exceeds table max_phi={table.max_phi}")
        u = rng.random(phi.shape)
        sign = np.where(rng.random(phi.shape) < 0.5, -1.0, 1.0)
        idx = _inverse_transform(table, phi, u)
        out = sign * (phi % 2 + 2 * idx)
    out = out.astype(float)
    return float(out[0]) if scalar else out
