"""Voltage controller and arithmetic phase-current balancer.

The controller is a PID law extended with a filtered second-derivative term:
a first-order-filtered derivative correction, a plain integral correction,
and a first-order-filtered second-derivative correction are summed with the
proportional term to produce the total duty cycle. Both filters are stepped
with backward Euler so any filter time constant is stable at the control rate.

The balancer redistributes the total duty across phases in inverse proportion
to each phase's share of the current spread, without adding control delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .converter import ConverterParams
from .errors import ValidationError

__all__ = [
    "ControllerGains",
    "ControllerState",
    "BalancerState",
    "GAIN_VECTOR_FIELDS",
    "controller_step",
    "estimate_d2uc",
    "update_balancer",
    "balance_duties",
    "gains_from_vector",
    "gains_to_vector",
    "CURRENT_EPSILON",
]

# Spread below this (amperes) is treated as perfectly balanced phases.
CURRENT_EPSILON = 1e-9

# Order of the tunable constants wherever gains travel as a flat vector.
GAIN_VECTOR_FIELDS = ("k_p", "k_d", "k_dd", "k_i", "t_d", "t_dd")


@dataclass(frozen=True)
class ControllerGains:
    """Tunable controller constants plus the voltage reference.

    k_p: proportional gain (V/V)
    k_i: integral gain (V/(V*s))
    k_d: derivative gain (V*s/V)
    k_dd: second-derivative gain (V*s^2/V)
    t_d: derivative filter time constant (s)
    t_dd: second-derivative filter time constant (s)
    u_ref: output voltage reference (V)
    """

    k_p: float
    k_i: float
    k_d: float
    k_dd: float
    t_d: float
    t_dd: float
    u_ref: float

    def __post_init__(self):
        if not (self.t_d > 0 and self.t_dd > 0):
            raise ValidationError("filter time constants t_d and t_dd must be > 0")
        if min(self.k_p, self.k_i, self.k_d, self.k_dd) < 0:
            raise ValidationError("gains must be >= 0")
        if not self.u_ref > 0:
            raise ValidationError("u_ref must be > 0")


@dataclass(frozen=True)
class ControllerState:
    """Per-cycle controller memory.

    u_ad / u_ai / u_dd are the filtered-derivative, integral and filtered
    second-derivative corrections; e_prev and de_prev hold the previous
    cycle's error and error slope for the finite-difference paths. The
    saturated flag records whether the last duty output hit the [0, 1] clamp.
    """

    u_ad: float = 0.0
    u_ai: float = 0.0
    u_dd: float = 0.0
    e_prev: float = 0.0
    de_prev: float = 0.0
    initialized: bool = False
    saturated: bool = False


@dataclass(frozen=True)
class BalancerState:
    """Low-pass estimates of the phase currents used for duty balancing."""

    filtered_currents: np.ndarray
    filter_coefficient: float = 0.1

    def __post_init__(self):
        object.__setattr__(
            self, "filtered_currents",
            np.asarray(self.filtered_currents, dtype=float),
        )
        if not 0.0 < self.filter_coefficient <= 1.0:
            raise ValidationError("filter_coefficient must be in (0, 1]")


def controller_step(state: ControllerState, gains: ControllerGains, u_o: float,
                    d2u_estimate: float | None, dt: float, u_source: float
                    ) -> tuple[ControllerState, float]:
    """Advance the controller one control cycle and return the total duty.

    d2u_estimate, when given, is the model-based second derivative of the
    capacitor voltage; the error's second derivative is its negation. Without
    it the second derivative falls back to differencing the error slope. The
    first cycle runs with zero derivatives since no history exists yet. The
    duty (u_ref + correction sum) / u_source saturates silently at [0, 1];
    the clamp event is reported through the returned state's flag.
    """
    e = gains.u_ref - u_o
    if state.initialized:
        de = (e - state.e_prev) / dt
    else:
        de = 0.0
    if d2u_estimate is not None:
        d2e = -d2u_estimate
    elif state.initialized:
        d2e = (de - state.de_prev) / dt
    else:
        d2e = 0.0

    u_ad = (gains.t_d * state.u_ad + gains.k_d * de * dt) / (gains.t_d + dt)
    u_ai = state.u_ai + gains.k_i * e * dt
    u_dd = (gains.t_dd * state.u_dd + gains.k_dd * d2e * dt) / (gains.t_dd + dt)

    u_a = u_ad + u_ai + gains.k_p * e + u_dd
    duty = (gains.u_ref + u_a) / u_source
    saturated = duty < 0.0 or duty > 1.0
    if duty < 0.0:
        duty = 0.0
    elif duty > 1.0:
        duty = 1.0

    new_state = ControllerState(
        u_ad=u_ad, u_ai=u_ai, u_dd=u_dd,
        e_prev=e, de_prev=de,
        initialized=True, saturated=saturated,
    )
    return new_state, duty


def estimate_d2uc(params: ConverterParams, r_load: float, dI_sum: float,
                  dU_C: float) -> float:
    """Model-based second derivative of the capacitor voltage.

    Differentiating the capacitor equation gives
    d2u_c/dt2 = (sum(di_j/dt) - du_c/dt / r_load) / capacitance.
    """
    return (dI_sum - dU_C / r_load) / params.capacitance


def update_balancer(state: BalancerState, phase_currents) -> BalancerState:
    """One low-pass step of the per-phase current estimates."""
    currents = np.asarray(phase_currents, dtype=float)
    if currents.shape != state.filtered_currents.shape:
        raise ValidationError("phase_currents length must match balancer state")
    beta = state.filter_coefficient
    filtered = (1.0 - beta) * state.filtered_currents + beta * currents
    return replace(state, filtered_currents=filtered)


def balance_duties(state: BalancerState, d0: float, n_phases: int) -> np.ndarray:
    """Per-phase duty cycles redistributing d0 against the current spread.

    Phases carrying more of the (minimum-referenced) current spread get
    proportionally less duty; the N/(N-1) factor restores the mean. Falls
    back to the uniform duty when the spread is negligible.
    """
    if n_phases == 1:
        return np.array([d0], dtype=float)
    filtered = state.filtered_currents
    if filtered.shape != (n_phases,):
        raise ValidationError("balancer state does not match n_phases")
    relative = filtered - filtered.min()
    spread_sum = float(np.sum(relative))
    if spread_sum < CURRENT_EPSILON:
        return np.full(n_phases, d0, dtype=float)
    duties = (1.0 - relative / spread_sum) * d0 * n_phases / (n_phases - 1)
    return np.clip(duties, 0.0, 1.0)


def gains_from_vector(vec, u_ref: float) -> ControllerGains:
    """Build ControllerGains from a flat vector in GAIN_VECTOR_FIELDS order."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (6,):
        raise ValidationError("gains vector must have 6 entries")
    kwargs = dict(zip(GAIN_VECTOR_FIELDS, (float(v) for v in vec)))
    return ControllerGains(u_ref=u_ref, **kwargs)


def gains_to_vector(gains: ControllerGains) -> np.ndarray:
    """Flatten ControllerGains to the GAIN_VECTOR_FIELDS order."""
    return np.array([getattr(gains, f) for f in GAIN_VECTOR_FIELDS], dtype=float)
