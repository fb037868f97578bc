"""Controller tuning by particle swarm optimization.

The objective simulates a candidate gain vector against a scenario and scores
it as a log barrier on the band outage plus the standard deviation of the
regulation error; candidates whose simulation diverges get a large finite
penalty so the swarm arithmetic never sees infinities. The swarm is the
plain global-best topology with inertia weight, per-axis velocity clamping
and box clipping.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import GAIN_VECTOR_FIELDS, gains_from_vector
from .converter import ConverterParams, LoadProfile
from .errors import ConfigError
from .simulation import SimConfig, SimMetrics, simulate

__all__ = [
    "PsoConfig",
    "Swarm",
    "Scenario",
    "SweepResult",
    "DIVERGENCE_PENALTY",
    "objective",
    "pso_minimize",
    "robustness_sweep",
]

DIVERGENCE_PENALTY = 1e9


@dataclass(frozen=True)
class Scenario:
    """Everything the objective needs: plant, disturbance, run setup, band."""

    params: ConverterParams
    profile: LoadProfile
    sim: SimConfig
    u_ref: float
    u_min_limit: float
    u_max_limit: float
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.u_min_limit < self.u_max_limit:
            raise ConfigError("u_min_limit must be below u_max_limit")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not self.u_ref > 0:
            raise ConfigError("u_ref must be > 0")


@dataclass(frozen=True)
class PsoConfig:
    """Swarm setup; x_min/x_max bound the gain vector in the order
    (k_p, k_d, k_dd, k_i, t_d, t_dd)."""

    x_min: np.ndarray
    x_max: np.ndarray
    swarm_size: int = 16
    max_iterations: int = 40
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp_fraction: float = 0.5
    seed: int = 0
    freeze_t_d: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_min", np.asarray(self.x_min, dtype=float))
        object.__setattr__(self, "x_max", np.asarray(self.x_max, dtype=float))
        if self.x_min.shape != (6,) or self.x_max.shape != (6,):
            raise ConfigError("x_min and x_max must be 6-vectors")
        if not np.all(self.x_min < self.x_max):
            raise ConfigError("x_min must be strictly below x_max")
        if self.swarm_size < 2:
            raise ConfigError("swarm_size must be >= 2")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not 0.0 < self.velocity_clamp_fraction <= 1.0:
            raise ConfigError("velocity_clamp_fraction must be in (0, 1]")
        t_d_idx = GAIN_VECTOR_FIELDS.index("t_d")
        t_dd_idx = GAIN_VECTOR_FIELDS.index("t_dd")
        if self.x_min[t_d_idx] <= 0 or self.x_min[t_dd_idx] <= 0:
            raise ConfigError("lower bounds of t_d and t_dd must be > 0")
        if self.freeze_t_d is not None and not self.freeze_t_d > 0:
            raise ConfigError("freeze_t_d must be > 0 when set")


@dataclass
class Swarm:
    """Positions, velocities and bests of all particles."""

    positions: np.ndarray
    velocities: np.ndarray
    best_positions: np.ndarray
    best_values: np.ndarray
    gbest_position: np.ndarray
    gbest_value: float


def objective(gains_vector, scenario: Scenario) -> float:
    """Band-outage barrier plus error spread for one candidate gain vector.

    ln(max(outage, 0) + eps) - ln(eps) + stddev(error). Candidates whose run
    leaves the band pay logarithmically for the excursion; candidates inside
    the band compete purely on error spread. Diverged runs return the fixed
    penalty.
    """
    gains = gains_from_vector(gains_vector, scenario.u_ref)
    _, metrics = simulate(
        scenario.params, gains, scenario.profile, scenario.sim,
        u_min_limit=scenario.u_min_limit, u_max_limit=scenario.u_max_limit,
        epsilon=scenario.epsilon,
    )
    if metrics.diverged:
        return DIVERGENCE_PENALTY
    eps = scenario.epsilon
    value = (math.log(max(metrics.outage, 0.0) + eps) - math.log(eps)
             + metrics.error_stddev)
    if not math.isfinite(value):
        return DIVERGENCE_PENALTY
    return value


def _evaluate(fn, positions, pool):
    if pool is None:
        return np.array([fn(x) for x in positions], dtype=float)
    return np.array(list(pool.map(fn, [x for x in positions])), dtype=float)


def pso_minimize(fn, config: PsoConfig, workers: int = 1
                 ) -> tuple[np.ndarray, float, np.ndarray]:
    """Minimize fn over the box and return (best_x, best_value, history).

    history has one row per iteration (including the initial evaluation as
    iteration 0): column 0 is the global best value, columns 1..6 the global
    best position. Evaluations within an iteration are independent, so
    workers > 1 fans them out over processes without changing the result;
    fn must then be picklable.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = config.x_min, config.x_max
    width = hi - lo
    v_max = config.velocity_clamp_fraction * width
    s = config.swarm_size
    t_d_idx = GAIN_VECTOR_FIELDS.index("t_d")

    x = rng.uniform(lo, hi, size=(s, 6))
    v = rng.uniform(-v_max, v_max, size=(s, 6))
    if config.freeze_t_d is not None:
        x[:, t_d_idx] = config.freeze_t_d
        v[:, t_d_idx] = 0.0

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        values = _evaluate(fn, x, pool)
        swarm = Swarm(
            positions=x, velocities=v,
            best_positions=x.copy(), best_values=values.copy(),
            gbest_position=x[int(np.argmin(values))].copy(),
            gbest_value=float(values.min()),
        )
        history = [(swarm.gbest_value, swarm.gbest_position.copy())]

        for _ in range(config.max_iterations):
            r1 = rng.random((s, 6))
            r2 = rng.random((s, 6))
            v = (config.inertia * swarm.velocities
                 + config.cognitive * r1 * (swarm.best_positions - swarm.positions)
                 + config.social * r2 * (swarm.gbest_position - swarm.positions))
            np.clip(v, -v_max, v_max, out=v)
            x = swarm.positions + v
            below = x < lo
            above = x > hi
            x = np.where(below, lo, np.where(above, hi, x))
            v[below | above] = 0.0
            if config.freeze_t_d is not None:
                x[:, t_d_idx] = config.freeze_t_d
                v[:, t_d_idx] = 0.0
            swarm.positions = x
            swarm.velocities = v

            values = _evaluate(fn, x, pool)
            improved = values < swarm.best_values
            swarm.best_values[improved] = values[improved]
            swarm.best_positions[improved] = x[improved]
            i_best = int(np.argmin(swarm.best_values))
            if swarm.best_values[i_best] < swarm.gbest_value:
                swarm.gbest_value = float(swarm.best_values[i_best])
                swarm.gbest_position = swarm.best_positions[i_best].copy()
            history.append((swarm.gbest_value, swarm.gbest_position.copy()))
    finally:
        if pool is not None:
            pool.shutdown()

    hist = np.array([[val, *pos] for val, pos in history])
    return swarm.gbest_position.copy(), swarm.gbest_value, hist


@dataclass(frozen=True)
class SweepResult:
    """Metrics of one scaled-disturbance variant."""

    kind: str  # "magnitude" or "rate"
    factor: float
    metrics: SimMetrics


def robustness_sweep(best_gains, scenario: Scenario,
                     scale_factors) -> list[SweepResult]:
    """Re-simulate tuned gains under scaled disturbances.

    For each factor the load excursion magnitude is scaled (same footprint,
    shallower swing) and, separately, the ramp rate is scaled (same swing,
    slower). Returns one result per variant, magnitude variants first.
    """
    factors = [float(f) for f in scale_factors]
    if any(not 0.0 < f <= 1.0 for f in factors):
        raise ConfigError("scale factors must lie in (0, 1]")
    gains = gains_from_vector(best_gains, scenario.u_ref)
    results = []
    for kind in ("magnitude", "rate"):
        for f in factors:
            if kind == "magnitude":
                profile = scenario.profile.scaled_magnitude(f)
            else:
                profile = scenario.profile.scaled_rate(f)
            _, metrics = simulate(
                scenario.params, gains, profile, scenario.sim,
                u_min_limit=scenario.u_min_limit,
                u_max_limit=scenario.u_max_limit,
                epsilon=scenario.epsilon,
            )
            results.append(SweepResult(kind=kind, factor=f, metrics=metrics))
    return results
