"""Multiphase buck converter plant model.

The plant is a set of N parallel inductor branches feeding one equivalent
output capacitor. Each branch is chopped by an ideal switch driven from a
shared PWM; the switch-on instants of the branches are staggered by T/N to
interleave the phase currents. All quantities are SI base units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "ConverterParams",
    "PlantState",
    "LoadProfile",
    "switch_state",
    "output_voltage",
    "plant_derivatives",
    "load_resistance",
]


@dataclass(frozen=True)
class ConverterParams:
    """Physical constants of the converter.

    n_phases: number of parallel branches (N >= 1)
    inductance: per-branch inductance in henries (identical across branches)
    capacitance: equivalent output capacitance in farads
    r_winding: series resistance of each branch circuit in ohms
    r_esr: total series resistance of the output capacitor in ohms
    u_source: input source voltage in volts
    pwm_period: switching period in seconds (also the control cycle)
    """

    n_phases: int
    inductance: float
    capacitance: float
    r_winding: float
    r_esr: float
    u_source: float
    pwm_period: float

    def __post_init__(self):
        if self.n_phases < 1:
            raise ValidationError("n_phases must be >= 1")
        if not self.inductance > 0:
            raise ValidationError("inductance must be > 0")
        if not self.capacitance > 0:
            raise ValidationError("capacitance must be > 0")
        if not self.pwm_period > 0:
            raise ValidationError("pwm_period must be > 0")
        if not self.u_source > 0:
            raise ValidationError("u_source must be > 0")
        if self.r_winding < 0:
            raise ValidationError("r_winding must be >= 0")
        if self.r_esr < 0:
            raise ValidationError("r_esr must be >= 0")


@dataclass
class PlantState:
    """Continuous-time state: branch currents (A), capacitor voltage (V), time (s)."""

    phase_currents: np.ndarray
    capacitor_voltage: float
    time: float = 0.0

    def __post_init__(self):
        self.phase_currents = np.asarray(self.phase_currents, dtype=float)
        if self.phase_currents.ndim != 1:
            raise ValidationError("phase_currents must be a 1-D vector")
        if not (np.all(np.isfinite(self.phase_currents))
                and math.isfinite(self.capacitor_voltage)):
            raise ValidationError("plant state must be finite")

    def __eq__(self, other):
        if not isinstance(other, PlantState):
            return NotImplemented
        return (np.array_equal(self.phase_currents, other.phase_currents)
                and self.capacitor_voltage == other.capacitor_voltage
                and self.time == other.time)


@dataclass(frozen=True)
class LoadProfile:
    """Piecewise-linear load resistance over time, clamped below at r_min.

    Each segment is (start_time s, resistance_start ohm, ramp_rate ohm/s) and
    holds its rate until the next segment starts. Before the first segment the
    resistance is constant at the first start value; the r_min clamp provides
    the constant tail once a downward ramp bottoms out.
    """

    segments: tuple[tuple[float, float, float], ...]
    r_min: float

    def __post_init__(self):
        segs = tuple(
            (float(t), float(r), float(rate)) for t, r, rate in self.segments
        )
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValidationError("LoadProfile needs at least one segment")
        if not self.r_min > 0:
            raise ValidationError("r_min must be > 0")
        starts = [s[0] for s in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("segments must be sorted strictly by start_time")
        if any(s[1] < self.r_min for s in segs):
            raise ValidationError("segment start resistance below r_min")

    def arrays(self):
        """Segment columns as float64 arrays (start, resistance, rate)."""
        a = np.asarray(self.segments, dtype=float)
        return a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy()

    def scaled_magnitude(self, factor: float) -> "LoadProfile":
        """Shrink the resistance excursion around the initial value by `factor`.

        Start resistances and the floor move toward the t=0 resistance, ramp
        rates scale with them, so the disturbance keeps its time footprint but
        covers `factor` times the resistance swing.
        """
        if factor == 1.0:
            return self
        r0 = self.segments[0][1]
        segs = tuple(
            (t, r0 + factor * (r - r0), factor * rate)
            for t, r, rate in self.segments
        )
        return LoadProfile(segments=segs, r_min=r0 + factor * (self.r_min - r0))

    def scaled_rate(self, factor: float) -> "LoadProfile":
        """Scale every ramp rate by `factor`, keeping endpoints and the floor."""
        if factor == 1.0:
            return self
        segs = tuple((t, r, factor * rate) for t, r, rate in self.segments)
        return LoadProfile(segments=segs, r_min=self.r_min)


def switch_state(t: float, phase_index: int, params: ConverterParams,
                 duty: float) -> int:
    """Ideal switch drive for one branch: 1 while the branch is connected.

    The branch switches on at offsets phase_index*T/N into every period and
    stays on for duty*T. The boundary sample exactly at duty*T is on. Negative
    arguments fold into [0, T) as if the pulse train extended backward.
    """
    t_period = params.pwm_period
    offset = phase_index * t_period / params.n_phases
    local = math.fmod(t - offset, t_period)
    if local < 0.0:
        local += t_period
    return 1 if local <= duty * t_period else 0


def output_voltage(state: PlantState, params: ConverterParams,
                   r_load: float) -> float:
    """Output voltage including the ESR drop of the capacitor branch.

    Solves u_o = u_c + r_esr*(sum(i) - u_o/r_load) in closed form; with zero
    ESR this is just the capacitor voltage.
    """
    total_current = float(np.sum(state.phase_currents))
    return (state.capacitor_voltage + params.r_esr * total_current) / (
        1.0 + params.r_esr / r_load
    )


def plant_derivatives(state: PlantState, params: ConverterParams,
                      r_load: float, switch_states) -> tuple[np.ndarray, float]:
    """Right-hand sides of the branch-current and capacitor-voltage ODEs.

    di_j/dt = (alpha_j*u_source - i_j*r_winding - u_o) / inductance
    du_c/dt = (sum(i) - u_o/r_load) / capacitance
    """
    alpha = np.asarray(switch_states, dtype=float)
    if alpha.shape != (params.n_phases,):
        raise ValidationError("switch_states must have n_phases entries")
    u_o = output_voltage(state, params, r_load)
    di = (alpha * params.u_source - state.phase_currents * params.r_winding
          - u_o) / params.inductance
    du_c = (float(np.sum(state.phase_currents)) - u_o / r_load) / params.capacitance
    return di, du_c


def load_resistance(profile: LoadProfile, t: float) -> float:
    """Load resistance at time t per the piecewise-linear profile."""
    segs = profile.segments
    if t < segs[0][0]:
        return max(segs[0][1], profile.r_min)
    active = segs[0]
    for seg in segs:
        if seg[0] <= t:
            active = seg
        else:
            break
    start, r_start, rate = active
    return max(r_start + rate * (t - start), profile.r_min)
