"""Correlated simulation of a coarse/fine particle pair.

One coarse step of size M * dt_fine is driven by the randomness of the M
fine sub-steps it spans.  Two couplings are available:

* term-by-term: the coarse Brownian increment is the rescaled sum of the
  fine ones, the coarse collision is derived from the fine uniforms and the
  coarse post-collision velocity is the fine velocity at the end of the step;
* combined: the coarse Brownian increment additionally absorbs the fine
  transport through a weighted sum with weight theta.

The ``FineStepRecord`` functions below operate on one coarse step and serve
as a readable reference.  :func:`simulate_pairs` is the ensemble engine; it
streams the same quantities through per-particle accumulators so memory
stays O(P) for P pairs regardless of M.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt
from typing import Callable, Sequence

import numpy as np

from .scheme import ParticleState, SchemeParams
from .velocity import VelocityModel, sample_unit_velocity
from .variance import LevelPairParams, var_velocity_sum

TERM_BY_TERM = "term-by-term"
COMBINED = "combined"
_MODES = (TERM_BY_TERM, COMBINED)


def square(x, v):
    return x * x


@dataclass(frozen=True)
class CouplingConfig:
    M: int
    mode: str = COMBINED
    theta: float = 1.0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.mode not in _MODES:
            raise ValueError(f"unknown coupling mode {self.mode!r}, expected one of {_MODES}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")

    @property
    def effective_theta(self) -> float:
        return 1.0 if self.mode == TERM_BY_TERM else self.theta


@dataclass(frozen=True)
class FineStepRecord:
    """Draws of one fine sub-step.

    ``vbar`` is the unit velocity transported during the sub-step, i.e.
    before this sub-step's collision applies; ``vbar_after`` is the unit
    velocity after it.
    """

    xi: float
    u: float
    vbar: float
    collided: bool
    vbar_after: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.u < 1.0:
            raise ValueError("u must lie in [0, 1)")
        if not np.isfinite(self.xi):
            raise ValueError("xi must be finite")


def coarse_xi_term_by_term(records: Sequence[FineStepRecord]) -> float:
    return sum(r.xi for r in records) / sqrt(len(records))


def coarse_collision(records: Sequence[FineStepRecord], coarse_params: SchemeParams) -> tuple[bool, float]:
    u_coarse = max(r.u for r in records) ** len(records)
    return u_coarse >= coarse_params.p_nc, u_coarse


def coarse_velocity(records: Sequence[FineStepRecord], collided: bool, prev_vbar_coarse: float) -> float:
    if not collided:
        return prev_vbar_coarse
    last = records[-1]
    return last.vbar_after if last.vbar_after is not None else last.vbar


def substituted_velocity_sum(records: Sequence[FineStepRecord], b_first: float, b_last: float) -> float:
    """Sum of the sub-step unit velocities with both boundary runs replaced by fresh draws."""
    hits = [m for m, r in enumerate(records) if r.collided]
    M = len(records)
    if not hits:
        return M * b_first
    first, last = hits[0], hits[-1]
    inner = sum(r.vbar for r in records[first + 1:last + 1])
    return inner + (first + 1) * b_first + (M - 1 - last) * b_last


def coarse_xi_combined(records: Sequence[FineStepRecord], fine_params: SchemeParams,
                       coarse_params: SchemeParams, theta: float, model: VelocityModel,
                       rng: np.random.Generator) -> float:
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    xi_w = coarse_xi_term_by_term(records)
    if theta == 1.0:
        return xi_w
    b1 = sample_unit_velocity(model, rng)
    b2 = sample_unit_velocity(model, rng)
    s = substituted_velocity_sum(records, b1, b2)
    xi_t = s / sqrt(var_velocity_sum(fine_params.p_nc, len(records)))
    return sqrt(theta) * xi_w + sqrt(1.0 - theta) * xi_t


@dataclass
class CoupledPair:
    fine: ParticleState
    coarse: ParticleState
    fine_params: SchemeParams
    coarse_params: SchemeParams
    config: CouplingConfig

    def __post_init__(self):
        if not np.isclose(self.coarse_params.dt, self.config.M * self.fine_params.dt, rtol=1e-12, atol=0):
            raise ValueError("coarse dt must equal M * fine dt")


def new_pair(epsilon: float, dt_fine: float, config: CouplingConfig, model: VelocityModel,
             rng: np.random.Generator) -> CoupledPair:
    """Scalar pair at x=0 sharing one initial unit velocity draw."""
    fp = SchemeParams(epsilon, dt_fine, model.v_char)
    cp = SchemeParams(epsilon, config.M * dt_fine, model.v_char)
    b = sample_unit_velocity(model, rng)
    return CoupledPair(ParticleState(0.0, fp.v_scaled * b), ParticleState(0.0, cp.v_scaled * b), fp, cp, config)


def paired_coarse_step(pair: CoupledPair, model: VelocityModel, rng: np.random.Generator,
                       return_records: bool = False):
    """One coarse step of the pair, built from M recorded fine sub-steps."""
    fp, cp, cfg = pair.fine_params, pair.coarse_params, pair.config
    x, vbar = pair.fine.x, pair.fine.v / fp.v_scaled
    records = []
    for _ in range(cfg.M):
        xi = rng.standard_normal()
        u = rng.random()
        fresh = sample_unit_velocity(model, rng)
        x = x + fp.dt * fp.v_scaled * vbar + fp.diffusion_amplitude * xi
        hit = u >= fp.p_nc
        after = fresh if hit else vbar
        records.append(FineStepRecord(xi, u, vbar, hit, after))
        vbar = after
    if cfg.mode == COMBINED:
        xi_c = coarse_xi_combined(records, fp, cp, cfg.theta, model, rng)
    else:
        xi_c = coarse_xi_term_by_term(records)
    hit_c, _ = coarse_collision(records, cp)
    vbar_c = pair.coarse.v / cp.v_scaled
    xc = pair.coarse.x + cp.dt * cp.v_scaled * vbar_c + cp.diffusion_amplitude * xi_c
    vbar_c = coarse_velocity(records, hit_c, vbar_c)
    out = CoupledPair(ParticleState(x, fp.v_scaled * vbar), ParticleState(xc, cp.v_scaled * vbar_c),
                      fp, cp, cfg)
    return (out, records) if return_records else out


def simulate_pairs(epsilon: float, dt_fine: float, config: CouplingConfig, n_coarse_steps: int,
                   n_pairs: int, model: VelocityModel, rng: np.random.Generator,
                   qoi: Callable = square, init_speed: float | None = None,
                   trace: list | None = None, coarse_xi_out: list | None = None):
    """Simulate ``n_pairs`` independent coupled pairs from x=0 over ``n_coarse_steps``.

    Returns (F(X_fine, V_fine), F(X_coarse, V_coarse)) as arrays.  Both paths
    start from one shared unit draw, scaled by each level's own velocity
    unless ``init_speed`` fixes the initial speed for both.

    When ``trace`` is a list, pair 0 appends one tuple ("fine" or "coarse",
    t, x, x_diffusion, x_transport) per step.  When ``coarse_xi_out`` is a
    list, the coarse increments of every coarse step are appended to it.
    """
    M = config.M
    theta = config.effective_theta
    fp = SchemeParams(epsilon, dt_fine, model.v_char)
    cp = SchemeParams(epsilon, M * dt_fine, model.v_char)
    P = n_pairs
    p_f, p_c = fp.p_nc, cp.p_nc
    a_f, a_c = fp.dt * fp.v_scaled, cp.dt * cp.v_scaled
    s_f, s_c = fp.diffusion_amplitude, cp.diffusion_amplitude
    combined = theta < 1.0
    norm = sqrt(var_velocity_sum(p_f, M)) if combined else 1.0
    w_w, w_t = sqrt(theta), sqrt(1.0 - theta)

    vbar = sample_unit_velocity(model, rng, P)
    vbar_c = vbar.copy()
    # transport coefficient dt * speed; per particle only while the initial speed differs
    if init_speed is None:
        coef_f, coef_c = a_f, a_c
    else:
        coef_f = np.full(P, fp.dt * init_speed)
        coef_c = np.full(P, cp.dt * init_speed)
    x = np.zeros(P)
    xc = np.zeros(P)
    if trace is not None:
        parts = {"fine": [0.0, 0.0], "coarse": [0.0, 0.0]}
        trace.append(("fine", 0.0, 0.0, 0.0, 0.0))
        trace.append(("coarse", 0.0, 0.0, 0.0, 0.0))
    for n in range(n_coarse_steps):
        sum_xi = np.zeros(P)
        u_max = np.zeros(P)
        if combined:
            seen = np.zeros(P, dtype=bool)
            first_len = np.zeros(P)
            interior = np.zeros(P)
            run_len = np.zeros(P)
        for m in range(M):
            xi = rng.standard_normal(P)
            u = rng.random(P)
            fresh = sample_unit_velocity(model, rng, P)
            step_t = coef_f * vbar
            x += step_t + s_f * xi
            sum_xi += xi
            np.maximum(u_max, u, out=u_max)
            hit = u >= p_f
            if combined:
                # vbar is the velocity of this sub-step; classify it by the
                # collisions seen before it
                interior += np.where(seen, vbar, 0.0)
                first_len += ~seen
                run_len = np.where(hit, 0.0, run_len + 1.0)
                seen |= hit
            vbar = np.where(hit, fresh, vbar)
            if init_speed is not None:
                coef_f = np.where(hit, a_f, coef_f)
            if trace is not None:
                parts["fine"][0] += s_f * xi[0]
                parts["fine"][1] += step_t[0] if np.ndim(step_t) else step_t
                trace.append(("fine", (n * M + m + 1) * fp.dt, float(x[0]), *parts["fine"]))
        xi_c = sum_xi / sqrt(M)
        if combined:
            b1 = sample_unit_velocity(model, rng, P)
            b2 = sample_unit_velocity(model, rng, P)
            # the last run_len sub-steps follow the last collision; they are
            # in interior and share the current velocity
            last_len = np.where(seen, run_len, 0.0)
            s_sub = interior - last_len * vbar + first_len * b1 + last_len * b2
            xi_c = w_w * xi_c + w_t * s_sub / norm
        if coarse_xi_out is not None:
            coarse_xi_out.append(xi_c)
        step_c = coef_c * vbar_c
        xc += step_c + s_c * xi_c
        hit_c = u_max**M >= p_c
        vbar_c = np.where(hit_c, vbar, vbar_c)
        if init_speed is not None:
            coef_c = np.where(hit_c, a_c, coef_c)
        if trace is not None:
            parts["coarse"][0] += s_c * xi_c[0]
            parts["coarse"][1] += step_c[0] if np.ndim(step_c) else step_c
            trace.append(("coarse", (n + 1) * cp.dt, float(xc[0]), *parts["coarse"]))
    return qoi(x, coef_f / fp.dt * vbar), qoi(xc, coef_c / cp.dt * vbar_c)


def simulate_single(epsilon: float, dt: float, n_steps: int, n_particles: int, model: VelocityModel,
                    rng: np.random.Generator, qoi: Callable = square, init_speed: float | None = None,
                    xi_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None):
    """Uncoupled AP ensemble; ``xi_sampler`` replaces the standard normal increments."""
    p = SchemeParams(epsilon, dt, model.v_char)
    P = n_particles
    vbar = sample_unit_velocity(model, rng, P)
    x = np.zeros(P)
    a, s = p.dt * p.v_scaled, p.diffusion_amplitude
    coef = a if init_speed is None else np.full(P, dt * init_speed)
    for _ in range(n_steps):
        xi = rng.standard_normal(P) if xi_sampler is None else xi_sampler(rng, P)
        u = rng.random(P)
        fresh = sample_unit_velocity(model, rng, P)
        x += coef * vbar + s * xi
        hit = u >= p.p_nc
        vbar = np.where(hit, fresh, vbar)
        if init_speed is not None:
            coef = np.where(hit, a, coef)
    return qoi(x, coef / dt * vbar)


def pair_params(epsilon: float, dt_fine: float, M: int, n_coarse_steps: int = 1, v_char: float = 1.0):
    return LevelPairParams(SchemeParams(epsilon, dt_fine, v_char), SchemeParams(epsilon, M * dt_fine, v_char),
                           M, n_coarse_steps)
