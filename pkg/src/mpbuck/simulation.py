"""Closed-loop simulation driver, trace recording and transient metrics.

The plant integrates with classical fixed-step RK4 between control-cycle
boundaries; the controller and balancer run exactly once per PWM period, at
its start, and the resulting per-phase duties are frozen for the whole period
(the familiar stair-stepped duty). The hot loop lives in a compiled extension
when available, with a pure-Python fallback selected at import time; set
MPBUCK_KERNEL=python or MPBUCK_KERNEL=compiled to force a backend.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .control import ControllerGains
from .converter import ConverterParams, LoadProfile, PlantState, load_resistance
from .errors import ConfigError, EmptyTraceError, NonFiniteStateError

__all__ = [
    "SimConfig",
    "SimTrace",
    "SimMetrics",
    "simulate",
    "compute_metrics",
    "write_trace_csv",
    "kernel_backend",
    "count_sign_alternations",
]

_forced = os.environ.get("MPBUCK_KERNEL", "").strip().lower()
if _forced == "python":
    from . import _kernel_py as _kernel
elif _forced == "compiled":
    from . import _kernel  # type: ignore[attr-defined]
else:
    try:
        from . import _kernel  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernel_py as _kernel


def kernel_backend() -> str:
    """Name of the active closed-loop kernel: 'compiled' or 'python'."""
    return _kernel.BACKEND


@dataclass(frozen=True)
class SimConfig:
    """Run setup for one closed-loop simulation.

    t_end rounds up to a whole number of PWM periods. initial_state accepts a
    PlantState, "zero" (everything at rest) or "warm" (capacitor preloaded to
    the reference and the load current split equally across phases, i.e. the
    run starts in regulation).
    """

    t_end: float
    steps_per_pwm_period: int = 64
    record_decimation: int = 1
    initial_state: PlantState | str = "zero"
    second_derivative_source: str = "model_based"
    balancing: str = "arithmetic"
    balancer_beta: float = 0.1

    def __post_init__(self):
        if not self.t_end > 0:
            raise ConfigError("t_end must be > 0")
        if self.steps_per_pwm_period < 16:
            raise ConfigError("steps_per_pwm_period must be >= 16 to resolve "
                              "switching edges")
        if self.record_decimation < 1:
            raise ConfigError("record_decimation must be >= 1")
        if self.second_derivative_source not in ("model_based", "finite_difference"):
            raise ConfigError("second_derivative_source must be model_based or "
                              "finite_difference")
        if self.balancing not in ("off", "arithmetic"):
            raise ConfigError("balancing must be off or arithmetic")
        if not 0.0 < self.balancer_beta <= 1.0:
            raise ConfigError("balancer_beta must be in (0, 1]")
        if isinstance(self.initial_state, str):
            if self.initial_state not in ("zero", "warm"):
                raise ConfigError('initial_state must be "zero", "warm" or a '
                                  "PlantState")
        elif not isinstance(self.initial_state, PlantState):
            raise ConfigError("initial_state must be a PlantState or a string")


@dataclass
class SimTrace:
    """Recorded time series of one run; all arrays share the sample axis."""

    times: np.ndarray
    u_o: np.ndarray
    u_c: np.ndarray
    phase_currents: np.ndarray  # (samples, n_phases)
    duty_total: np.ndarray
    duty_per_phase: np.ndarray  # (samples, n_phases)
    r_load: np.ndarray
    error: np.ndarray

    def __len__(self):
        return len(self.times)


@dataclass
class SimMetrics:
    """Transient-quality summary of a recorded trace."""

    u_min: float
    u_max: float
    error_stddev: float
    outage: float
    settled: bool
    phase_current_spread_final: float
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "u_min": self.u_min,
            "u_max": self.u_max,
            "error_stddev": self.error_stddev,
            "outage": self.outage,
            "settled": self.settled,
            "phase_current_spread_final": self.phase_current_spread_final,
            "diverged": self.diverged,
        }


def _initial_arrays(params: ConverterParams, gains: ControllerGains,
                    profile: LoadProfile, config: SimConfig):
    n = params.n_phases
    init = config.initial_state
    if isinstance(init, PlantState):
        if init.phase_currents.shape != (n,):
            raise ConfigError("initial state has wrong phase count")
        i0 = init.phase_currents.astype(float, copy=True)
        uc0 = float(init.capacitor_voltage)
    elif init == "warm":
        r0 = load_resistance(profile, 0.0)
        i0 = np.full(n, gains.u_ref / (r0 * n), dtype=float)
        uc0 = gains.u_ref
    else:  # "zero"
        i0 = np.zeros(n, dtype=float)
        uc0 = 0.0
    if not (np.all(np.isfinite(i0)) and math.isfinite(uc0)):
        raise NonFiniteStateError("initial plant state is not finite")
    return i0, uc0


def simulate(params: ConverterParams, gains: ControllerGains,
             profile: LoadProfile, config: SimConfig, *,
             u_min_limit: float | None = None,
             u_max_limit: float | None = None,
             epsilon: float = 1e-6) -> tuple[SimTrace, SimMetrics]:
    """Run the closed loop and return the trace plus its metrics.

    The voltage band for the outage metric defaults to +/-5 percent around
    the reference when no explicit limits are given.
    """
    if u_min_limit is None:
        u_min_limit = 0.95 * gains.u_ref
    if u_max_limit is None:
        u_max_limit = 1.05 * gains.u_ref
    if not u_min_limit < u_max_limit:
        raise ConfigError("u_min_limit must be below u_max_limit")

    n = params.n_phases
    n_periods = max(1, math.ceil(config.t_end / params.pwm_period - 1e-9))
    spp = config.steps_per_pwm_period
    decim = config.record_decimation
    m_total = n_periods * spp
    max_samples = (m_total - 1) // decim + 2

    times = np.empty(max_samples)
    u_o = np.empty(max_samples)
    u_c = np.empty(max_samples)
    currents = np.empty((max_samples, n))
    d0 = np.empty(max_samples)
    duties = np.empty((max_samples, n))
    r_load = np.empty(max_samples)
    error = np.empty(max_samples)
    filtered = np.empty(n)

    i0, uc0 = _initial_arrays(params, gains, profile, config)
    seg_start, seg_r, seg_rate = profile.arrays()

    samples, diverged = _kernel.run_closed_loop(
        n, params.inductance, params.capacitance, params.r_winding,
        params.r_esr, params.u_source, params.pwm_period,
        gains.k_p, gains.k_i, gains.k_d, gains.k_dd, gains.t_d, gains.t_dd,
        gains.u_ref,
        seg_start, seg_r, seg_rate, profile.r_min,
        n_periods, spp, decim,
        1 if config.second_derivative_source == "model_based" else 0,
        1 if config.balancing == "arithmetic" else 0,
        config.balancer_beta,
        i0, uc0,
        times, u_o, u_c, currents, d0, duties, r_load, error,
        filtered,
    )

    trace = SimTrace(
        times=times[:samples], u_o=u_o[:samples], u_c=u_c[:samples],
        phase_currents=currents[:samples], duty_total=d0[:samples],
        duty_per_phase=duties[:samples], r_load=r_load[:samples],
        error=error[:samples],
    )
    metrics = compute_metrics(trace, u_min_limit, u_max_limit, epsilon)
    metrics = replace(
        metrics,
        phase_current_spread_final=float(filtered.max() - filtered.min()),
        diverged=bool(diverged),
        settled=bool(metrics.settled) and not diverged,
    )
    return trace, metrics


def compute_metrics(trace: SimTrace, u_min_limit: float, u_max_limit: float,
                    epsilon: float) -> SimMetrics:
    """Band outage, extrema and error spread of a recorded trace.

    The outage is the worst excursion beyond [u_min_limit, u_max_limit] with
    margin epsilon; it is negative when the trace stays strictly inside the
    band. "Settled" means the final tenth of the horizon stays inside the
    band. The error spread is the population standard deviation over all
    recorded samples.
    """
    if len(trace) == 0:
        raise EmptyTraceError("trace has no samples")
    u_min = float(trace.u_o.min())
    u_max = float(trace.u_o.max())
    outage = max(u_min_limit + epsilon - u_min, u_max - u_max_limit - epsilon)
    error_stddev = float(np.std(trace.error))

    t_final = trace.times[-1]
    tail = trace.u_o[trace.times >= t_final - 0.1 * (t_final - trace.times[0])]
    settled = bool(tail.size > 0
                   and tail.min() >= u_min_limit and tail.max() <= u_max_limit)

    spread = float(trace.phase_currents[-1].max() - trace.phase_currents[-1].min())
    return SimMetrics(
        u_min=u_min, u_max=u_max, error_stddev=error_stddev, outage=outage,
        settled=settled, phase_current_spread_final=spread,
    )


def write_trace_csv(trace: SimTrace, path) -> None:
    """Write a trace as CSV with the documented column order.

    Header: time_s,u_o_V,u_c_V,i_1_A,...,i_N_A,d0,d_1,...,d_N,r_load_ohm,error_V
    """
    n = trace.phase_currents.shape[1]
    header = (["time_s", "u_o_V", "u_c_V"]
              + [f"i_{j + 1}_A" for j in range(n)]
              + ["d0"] + [f"d_{j + 1}" for j in range(n)]
              + ["r_load_ohm", "error_V"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in range(len(trace)):
            row = ([trace.times[s], trace.u_o[s], trace.u_c[s]]
                   + list(trace.phase_currents[s])
                   + [trace.duty_total[s]] + list(trace.duty_per_phase[s])
                   + [trace.r_load[s], trace.error[s]])
            writer.writerow([repr(float(v)) for v in row])


def count_sign_alternations(values, deadband: float = 0.0) -> int:
    """Number of sign flips in a series, ignoring samples inside the deadband.

    Useful for deciding whether an error trace is oscillatory: samples with
    |v| <= deadband carry no sign and are skipped.
    """
    count = 0
    last = 0
    for v in np.asarray(values, dtype=float):
        if abs(v) <= deadband:
            continue
        sign = 1 if v > 0 else -1
        if last != 0 and sign != last:
            count += 1
        last = sign
    return count
