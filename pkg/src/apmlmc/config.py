"""Flat ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .coupling import COMBINED, TERM_BY_TERM
from .mlmc import CLASSIC, SKIP, ConfigurationError, LevelStrategy, SimulationContext, steps_in
from .velocity import GAUSSIAN, TWO_SPEED, VelocityModel

REQUIRED = ("epsilon",)
_COUPLINGS = {"term": TERM_BY_TERM, "term-by-term": TERM_BY_TERM, "combined": COMBINED}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    epsilon: float
    model: str = TWO_SPEED
    v_char: float = 1.0
    t_end: float = 0.5
    rmse: float = 0.01
    dt0: float = 0.5
    dt1: float | None = None
    strategy: str = CLASSIC
    m_tail: int = 2
    coupling: str = "combined"
    theta: str = "auto"
    lambda_max: int = 20
    fast_level0: bool = True
    init_velocity: str = "scaled"
    seed: int = 0
    max_levels: int = 12
    leave_out_samples: int = 2000
    output_dir: str = "."

    def __post_init__(self):
        if self.model not in (TWO_SPEED, GAUSSIAN):
            raise ConfigurationError(f"invalid value for model: {self.model!r}")
        for key in ("epsilon", "v_char", "t_end", "rmse", "dt0"):
            if not getattr(self, key) > 0:
                raise ConfigurationError(f"invalid value for {key}: must be positive")
        if self.dt1 is not None and not self.dt1 > 0:
            raise ConfigurationError("invalid value for dt1: must be positive")
        if self.strategy not in (CLASSIC, SKIP):
            raise ConfigurationError(f"invalid value for strategy: {self.strategy!r}")
        if self.coupling not in _COUPLINGS:
            raise ConfigurationError(f"invalid value for coupling: {self.coupling!r}")
        if self.theta != "auto":
            try:
                th = float(self.theta)
            except ValueError:
                raise ConfigurationError(f"invalid value for theta: {self.theta!r}") from None
            if not 0.0 <= th <= 1.0:
                raise ConfigurationError("invalid value for theta: must lie in [0, 1]")
        if self.init_velocity not in ("scaled", "kinetic"):
            raise ConfigurationError(f"invalid value for init_velocity: {self.init_velocity!r}")
        if self.m_tail < 2 or self.lambda_max < 2 or self.max_levels < 2:
            raise ConfigurationError("m_tail, lambda_max and max_levels must be at least 2")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("invalid value for seed: must be an unsigned 64-bit integer")
        try:
            steps_in(self.t_end, self.dt0)
        except ConfigurationError:
            raise ConfigurationError("invalid value for dt0: t_end/dt0 must be a positive integer") from None
        try:
            steps_in(self.dt0, self.fine_dt1)
        except ConfigurationError:
            raise ConfigurationError("invalid value for dt1: dt0/dt1 must be a positive integer") from None

    @property
    def fine_dt1(self) -> float:
        if self.dt1 is not None:
            return self.dt1
        return self.epsilon**2 if self.strategy == CLASSIC else self.epsilon**2 / 100.0

    def velocity_model(self) -> VelocityModel:
        return VelocityModel(self.model, self.v_char)

    def level_strategy(self, dt1: float | None = None) -> LevelStrategy:
        theta = self.theta if self.theta == "auto" else float(self.theta)
        return LevelStrategy(self.dt0, dt1 or self.fine_dt1, _COUPLINGS[self.coupling], theta,
                             self.m_tail, self.fast_level0, self.max_levels)

    def context(self, workers: int | None = None) -> SimulationContext:
        return SimulationContext(self.epsilon, self.velocity_model(), self.t_end, init_velocity=self.init_velocity,
                                 lambda_max=self.lambda_max, seed=self.seed, workers=workers)

    def items(self) -> list[tuple[str, str]]:
        out = []
        for k, v in asdict(self).items():
            out.append((k, "" if v is None else (str(v).lower() if isinstance(v, bool) else str(v))))
        return out


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if kind is int:
            return int(raw, 0)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"invalid value for {key}: {raw!r}") from None


_TYPES = {"epsilon": float, "v_char": float, "t_end": float, "rmse": float, "dt0": float, "dt1": float,
          "m_tail": int, "lambda_max": int, "fast_level0": bool, "seed": int, "max_levels": int,
          "leave_out_samples": int}


def parse_config(text: str, **overrides) -> RunConfig:
    values = {}
    names = {f.name for f in fields(RunConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigurationError(f"unknown key: {key}")
        values[key] = _convert(key, raw, _TYPES.get(key, str))
    values.update({k: v for k, v in overrides.items() if v is not None})
    for key in REQUIRED:
        if key not in values:
            raise ConfigurationError(f"missing key: {key}")
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)


def with_dt1(cfg: RunConfig, dt1: float) -> RunConfig:
    return replace(cfg, dt1=dt1)
