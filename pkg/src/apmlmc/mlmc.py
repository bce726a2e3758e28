"""Multilevel Monte Carlo driver.

Level 0 simulates independent AP paths with the coarsest step dt0.  Level 1
couples dt1 to dt0 with the configured coupling and weight theta_1; deeper
levels halve (or divide by ``m_tail``) the step and use theta = 1.  Sample
counts follow the usual cost-optimal allocation and levels are added until
the extrapolated bias is below rmse / sqrt(2).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng as streams
from .coupling import COMBINED, TERM_BY_TERM, CouplingConfig, pair_params, simulate_pairs, simulate_single, square
from .runlength import DEFAULT_LAMBDA, build_tables, expected_truncated_runs, fast_level0_xi
from .scheme import SchemeParams
from .variance import optimal_theta, var_velocity_sum
from .velocity import VelocityModel, build_velocity_sum_table

logger = logging.getLogger(__name__)

REFERENCE_DT = 0.01
WARMUP_SAMPLES = 1000
MIN_SAMPLES = 1000
WARMUP_LEVELS = 4
CLASSIC = "classic"
SKIP = "skip"


class ConfigurationError(ValueError):
    pass


def qoi(x, v=None):
    """Squared displacement, the default quantity of interest."""
    return square(x, v)


def steps_in(t_star: float, dt: float) -> int:
    n = t_star / dt
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ConfigurationError(f"time horizon {t_star} is not an integer multiple of dt={dt}")
    return k


@dataclass(frozen=True)
class LevelSpec:
    dt: float
    prev_dt: float | None = None
    coupling: str | None = None
    theta: float = 1.0
    fast_level0: bool = False
    # fine step whose run-length statistics the fast level-0 sampler mimics
    fast_dt: float | None = None

    def __post_init__(self):
        if self.prev_dt is None and self.coupling is not None:
            raise ConfigurationError("level 0 has no coupling")
        if self.prev_dt is not None:
            if self.coupling not in (TERM_BY_TERM, COMBINED):
                raise ConfigurationError(f"unknown coupling {self.coupling!r}")
            ratio = self.prev_dt / self.dt
            if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
                raise ConfigurationError(f"dt={self.dt} does not divide prev_dt={self.prev_dt}")

    @property
    def M(self) -> int:
        return 1 if self.prev_dt is None else int(round(self.prev_dt / self.dt))


@dataclass
class LevelStats:
    P: int = 0
    sum_diff: float = 0.0
    sumsq_diff: float = 0.0
    cost: float = 0.0
    probe_cost: float = 0.0
    unit_cost: float = 0.0

    def merge(self, other: LevelStats) -> LevelStats:
        return LevelStats(self.P + other.P, self.sum_diff + other.sum_diff, self.sumsq_diff + other.sumsq_diff,
                          self.cost + other.cost, self.probe_cost + other.probe_cost,
                          self.unit_cost or other.unit_cost)

    @property
    def mean(self) -> float:
        return self.sum_diff / self.P if self.P else 0.0

    @property
    def variance(self) -> float:
        if self.P < 2:
            return float("nan")
        return max((self.sumsq_diff - self.sum_diff**2 / self.P) / (self.P - 1), 0.0)

    @property
    def estimator_variance(self) -> float:
        return self.variance / self.P if self.P else float("nan")


@dataclass(frozen=True)
class SimulationContext:
    epsilon: float
    model: VelocityModel = field(default_factory=VelocityModel)
    t_star: float = 0.5
    qoi: Callable = square
    init_velocity: str = "scaled"
    lambda_max: int = DEFAULT_LAMBDA
    seed: int = 0
    workers: int | None = None

    @property
    def init_speed(self) -> float | None:
        if self.init_velocity == "scaled":
            return None
        if self.init_velocity == "kinetic":
            return self.model.v_char / self.epsilon
        raise ConfigurationError(f"init_velocity must be 'scaled' or 'kinetic', got {self.init_velocity!r}")


def level_unit_cost(spec: LevelSpec, t_star: float) -> float:
    steps = steps_in(t_star, spec.dt)
    if spec.prev_dt is not None:
        steps += steps_in(t_star, spec.prev_dt)
    return steps / (t_star / REFERENCE_DT)


def _fast_sampler(spec: LevelSpec, ctx: SimulationContext):
    """xi sampler for level 0, or None when plain normals are already consistent."""
    if not spec.fast_level0 or spec.theta >= 1.0 or ctx.model.is_gaussian or spec.fast_dt is None:
        return None, 0.0
    M = int(round(spec.dt / spec.fast_dt))
    if M < 2:
        return None, 0.0
    fine = SchemeParams(ctx.epsilon, spec.fast_dt, ctx.model.v_char)
    lam = min(ctx.lambda_max, M)
    tables = build_tables(M, fine.p_nc, lam)
    sums = _sum_table(ctx.model, M)
    var_sum = var_velocity_sum(fine.p_nc, M)
    lost = expected_truncated_runs(M, fine.p_nc, lam)
    if lost > 0.01 and (M, fine.p_nc, lam) not in _WARNED:
        _WARNED.add((M, fine.p_nc, lam))
        logger.warning("fast level-0 sampler: %.3g runs per coarse step exceed Lambda=%d (M=%d); "
                       "the increments are biased", lost, lam, M)

    def sample(g, n):
        return fast_level0_xi(ctx.model, tables, sums, spec.theta, var_sum, g, n)

    return sample, lam / M


_SUM_TABLES: dict = {}
_WARNED: set = set()


def _sum_table(model: VelocityModel, max_phi: int):
    key = (model, max_phi)
    if key not in _SUM_TABLES:
        _SUM_TABLES[key] = build_velocity_sum_table(model, max_phi)
    return _SUM_TABLES[key]


def run_level(spec: LevelSpec, P: int, ctx: SimulationContext, level: int = 0, batch: int = 0) -> LevelStats:
    """Sample ``P`` level differences (plain values at level 0)."""
    unit = level_unit_cost(spec, ctx.t_star)
    if P <= 0:
        return LevelStats(unit_cost=unit)
    n_fine = steps_in(ctx.t_star, spec.dt)
    if spec.prev_dt is None:
        sampler, probe = _fast_sampler(spec, ctx)

        def chunk(g, n):
            return simulate_single(ctx.epsilon, spec.dt, n_fine, n, ctx.model, g, ctx.qoi,
                                   ctx.init_speed, sampler)
    else:
        probe = 0.0
        cfg = CouplingConfig(spec.M, spec.coupling, spec.theta)
        n_coarse = steps_in(ctx.t_star, spec.prev_dt)

        def chunk(g, n):
            f, c = simulate_pairs(ctx.epsilon, spec.dt, cfg, n_coarse, n, ctx.model, g, ctx.qoi, ctx.init_speed)
            return f - c

    def summarize(g, n):
        d = chunk(g, n)
        return n, float(np.sum(d)), float(np.sum(d * d))

    parts = streams.map_chunks(summarize, P, ctx.seed, (level, batch), ctx.workers)
    out = LevelStats(unit_cost=unit)
    probe_total = P * probe * n_fine / (ctx.t_star / REFERENCE_DT)
    for n, s, s2 in parts:
        out = out.merge(LevelStats(n, s, s2))
    out.cost = P * unit + probe_total
    out.probe_cost = probe_total
    return out


@dataclass(frozen=True)
class LevelStrategy:
    dt0: float
    dt1: float
    coupling: str = COMBINED
    theta: float | str = "auto"
    m_tail: int = 2
    fast_level0: bool = True
    max_levels: int = 12

    @classmethod
    def named(cls, name: str, epsilon: float, dt0: float, **kw) -> LevelStrategy:
        if name == CLASSIC:
            return cls(dt0, epsilon**2, **kw)
        if name == SKIP:
            return cls(dt0, epsilon**2 / 100.0, **kw)
        raise ConfigurationError(f"unknown level strategy {name!r}")

    def theta1(self, epsilon: float, v_char: float = 1.0) -> float:
        if self.coupling == TERM_BY_TERM:
            return 1.0
        if self.theta == "auto":
            M = int(round(self.dt0 / self.dt1))
            return optimal_theta(pair_params(epsilon, self.dt1, M, 1, v_char)) if M > 1 else 1.0
        return float(self.theta)

    def dt(self, level: int) -> float:
        if level == 0:
            return self.dt0
        return self.dt1 * float(self.m_tail) ** (1 - level)

    def spec(self, level: int, epsilon: float, v_char: float = 1.0) -> LevelSpec:
        th = self.theta1(epsilon, v_char)
        if level == 0:
            return LevelSpec(self.dt0, theta=th, fast_level0=self.fast_level0, fast_dt=self.dt1)
        theta = th if level == 1 else 1.0
        return LevelSpec(self.dt(level), self.dt(level - 1), self.coupling, theta)


@dataclass
class MlmcResult:
    levels: list[LevelStats]
    specs: list[LevelSpec]
    rmse_target: float
    converged: bool = True
    alpha: float = float("nan")
    message: str = ""

    @property
    def estimate(self) -> float:
        return sum(s.mean for s in self.levels)

    @property
    def total_cost(self) -> float:
        return sum(s.cost for s in self.levels)

    @property
    def estimator_variance(self) -> float:
        return sum(s.estimator_variance for s in self.levels)


def optimal_samples(variances, costs, rmse: float, floor: int = MIN_SAMPLES) -> np.ndarray:
    V = np.asarray(variances, dtype=float)
    C = np.asarray(costs, dtype=float)
    total = np.sum(np.sqrt(V * C))
    P = np.ceil(2.0 / rmse**2 * np.sqrt(V / C) * total)
    return np.maximum(P, floor).astype(np.int64)


def weak_rate(means, variances, samples, ratio: int) -> float:
    """Weak order alpha from |mean_l| ~ ratio^(-alpha l), fitted by weighted least squares."""
    m = np.abs(np.asarray(means, dtype=float))
    if len(m) < 2 or np.any(m == 0):
        return 1.0
    y = np.log(m)
    # var(log|mean|) ~ V / (P mean^2)
    w = np.asarray(samples) * m**2 / np.maximum(np.asarray(variances), 1e-300)
    x = np.arange(len(m), dtype=float)
    coef = np.polyfit(x, y, 1, w=np.sqrt(w))
    return float(np.clip(-coef[0] / math.log(ratio), 0.5, 4.0))


def bias_converged(stats: list[LevelStats], rmse: float, ratio: int) -> tuple[bool, float]:
    tail = stats[2:][-3:] if len(stats) > 2 else stats[-1:]
    alpha = weak_rate([s.mean for s in tail], [s.variance for s in tail], [s.P for s in tail], ratio)
    scaled = [abs(s.mean) / ratio ** (alpha * k) for k, s in enumerate(reversed(tail))]
    return max(scaled) <= (ratio**alpha - 1.0) * rmse / math.sqrt(2.0), alpha


def adaptive_mlmc(strategy: LevelStrategy, rmse: float, ctx: SimulationContext) -> MlmcResult:
    if not rmse > 0:
        raise ConfigurationError("rmse must be positive")
    eps, v = ctx.epsilon, ctx.model.v_char
    L = min(WARMUP_LEVELS, strategy.max_levels) - 1
    specs = [strategy.spec(l, eps, v) for l in range(L + 1)]
    stats = [LevelStats(unit_cost=level_unit_cost(s, ctx.t_star)) for s in specs]
    batches = [0] * (L + 1)
    todo = np.full(L + 1, WARMUP_SAMPLES, dtype=np.int64)
    alpha = float("nan")
    while True:
        for l, n in enumerate(todo):
            if n > 0:
                stats[l] = stats[l].merge(run_level(specs[l], int(n), ctx, l, batches[l]))
                batches[l] += 1
        V = [max(s.variance, 1e-14) for s in stats]
        C = [s.cost / s.P for s in stats]
        target = optimal_samples(V, C, rmse)
        P = np.array([s.P for s in stats])
        todo = np.maximum(target - P, 0)
        todo[todo <= 0.01 * P] = 0
        logger.info("levels=%d P=%s extra=%s", L + 1, P.tolist(), todo.tolist())
        if todo.any():
            continue
        ok, alpha = bias_converged(stats, rmse, strategy.m_tail)
        if ok:
            return MlmcResult(stats, specs, rmse, True, alpha)
        if L + 1 >= strategy.max_levels:
            msg = f"bias not converged after {L + 1} levels"
            logger.warning(msg)
            return MlmcResult(stats, specs, rmse, False, alpha, msg)
        L += 1
        specs.append(strategy.spec(L, eps, v))
        stats.append(LevelStats(unit_cost=level_unit_cost(specs[-1], ctx.t_star)))
        batches.append(0)
        todo = np.append(np.zeros(L, dtype=np.int64), WARMUP_SAMPLES)


def leave_out_score(stats_l: LevelStats, stats_next: LevelStats, merged_cost: float,
                    merged_variance: float) -> float:
    """sqrt(V_l C_l) + sqrt(V_{l+1} C_{l+1}) - sqrt(V' C'); positive favours dropping level l.

    Costs are per sample.
    """
    return (math.sqrt(stats_l.variance * stats_l.unit_cost)
            + math.sqrt(stats_next.variance * stats_next.unit_cost)
            - math.sqrt(merged_variance * merged_cost))


def merged_level_stats(strategy: LevelStrategy, ctx: SimulationContext, P: int, level: int = 1,
                       batch: int = 0) -> LevelStats:
    """Stats of the pairing that skips ``level``: dt_{level+1} coupled directly to dt_{level-1}."""
    fine, coarse = strategy.dt(level + 1), strategy.dt(level - 1)
    theta = 1.0
    if strategy.coupling == COMBINED and level == 1:
        M = int(round(coarse / fine))
        theta = optimal_theta(pair_params(ctx.epsilon, fine, M, 1, ctx.model.v_char))
    spec = LevelSpec(fine, coarse, strategy.coupling, theta)
    # keep these streams apart from the adaptive run's
    return run_level(spec, P, replace(ctx), level=1000 + level, batch=batch)
