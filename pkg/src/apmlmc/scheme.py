"""Single-particle time stepping: the standard kinetic scheme and the AP scheme.

Step functions are written on arrays so the same code advances one particle
or a whole ensemble.  A state's ``v`` is the already-scaled velocity, i.e. the
value that multiplies ``dt`` in the transport update.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .velocity import VelocityModel, sample_unit_velocity

STANDARD = "standard"
AP = "ap"


@dataclass(frozen=True)
class SchemeParams:
    epsilon: float
    dt: float
    v_char: float = 1.0

    def __post_init__(self):
        if not (self.epsilon > 0 and self.dt > 0 and self.v_char > 0):
            raise ValueError("epsilon, dt and v_char must all be positive")

    @property
    def p_c(self) -> float:
        """AP collision probability dt / (eps^2 + dt)."""
        return self.dt / (self.epsilon**2 + self.dt)

    @property
    def p_nc(self) -> float:
        return self.epsilon**2 / (self.epsilon**2 + self.dt)

    @property
    def diffusion(self) -> float:
        """D_dt = v^2 dt / (eps^2 + dt)."""
        return self.v_char**2 * self.dt / (self.epsilon**2 + self.dt)

    @property
    def v_scaled(self) -> float:
        """Characteristic velocity eps v / (eps^2 + dt) of the AP post-collision law."""
        return self.epsilon * self.v_char / (self.epsilon**2 + self.dt)

    @property
    def diffusion_amplitude(self) -> float:
        return sqrt(2.0 * self.dt * self.diffusion)

    # standard kinetic scheme
    @property
    def p_c_standard(self) -> float:
        return self.dt / self.epsilon**2

    @property
    def v_standard(self) -> float:
        return self.v_char / self.epsilon

    def one_step_second_moment(self) -> float:
        """E[X^2] after one AP step from x=0 with a stationary velocity."""
        return 2 * self.dt * self.diffusion + self.dt**2 * self.v_scaled**2


@dataclass
class ParticleState:
    x: float | np.ndarray
    v: float | np.ndarray


def initial_state(model: VelocityModel, params: SchemeParams, rng, size=None,
                  scheme: str = AP) -> ParticleState:
    """Point source at x=0 with v drawn from the scheme's post-collision law."""
    scale = params.v_scaled if scheme == AP else params.v_standard
    vbar = sample_unit_velocity(model, rng, size)
    x = 0.0 if size is None else np.zeros(size)
    return ParticleState(x=x, v=scale * vbar)


def _collide(v, p_c, scale, model, rng):
    size = np.shape(v) or None
    u = rng.random(size)
    fresh = scale * sample_unit_velocity(model, rng, size)
    # u >= p_nc is the collision convention used by the coupling
    return np.where(u >= 1.0 - p_c, fresh, v) if size else (fresh if u >= 1.0 - p_c else v)


def standard_step(state: ParticleState, params: SchemeParams, model: VelocityModel,
                  rng: np.random.Generator) -> ParticleState:
    if params.dt > params.epsilon**2 * (1 + 1e-12):
        raise ValueError(f"standard scheme needs dt <= eps^2 (dt={params.dt}, eps^2={params.epsilon**2})")
    x = state.x + params.dt * state.v
    p_c = min(params.p_c_standard, 1.0)
    v = _collide(state.v, p_c, params.v_standard, model, rng)
    return ParticleState(x=x, v=v)


def ap_step(state: ParticleState, params: SchemeParams, model: VelocityModel,
            rng: np.random.Generator) -> ParticleState:
    size = np.shape(state.x) or None
    xi = rng.standard_normal(size)
    x = state.x + params.dt * state.v + params.diffusion_amplitude * xi
    v = _collide(state.v, params.p_c, params.v_scaled, model, rng)
    return ParticleState(x=x, v=v)


def simulate_path(initial: ParticleState, params: SchemeParams, n_steps: int,
                  model: VelocityModel, rng: np.random.Generator,
                  scheme: str = AP) -> ParticleState:
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    step = ap_step if scheme == AP else standard_step
    state = initial
    for _ in range(n_steps):
        state = step(state, params, model, rng)
    return state
