import numpy as np
import pytest

from mpbuck import (
    ConverterParams,
    LoadProfile,
    PlantState,
    ValidationError,
    load_resistance,
    output_voltage,
    plant_derivatives,
    switch_state,
)


def make_params(**overrides):
    base = dict(n_phases=4, inductance=1e-6, capacitance=1e-3, r_winding=0.01,
                r_esr=0.1, u_source=12.0, pwm_period=1e-5)
    base.update(overrides)
    return ConverterParams(**base)


class TestConverterParams:
    def test_invariants_rejected(self):
        with pytest.raises(ValidationError):
            make_params(n_phases=0)
        with pytest.raises(ValidationError):
            make_params(inductance=0.0)
        with pytest.raises(ValidationError):
            make_params(capacitance=-1e-6)
        with pytest.raises(ValidationError):
            make_params(pwm_period=0.0)
        with pytest.raises(ValidationError):
            make_params(u_source=0.0)
        with pytest.raises(ValidationError):
            make_params(r_winding=-0.1)
        with pytest.raises(ValidationError):
            make_params(r_esr=-0.1)

    def test_zero_resistances_are_the_ideal_model(self):
        params = make_params(r_winding=0.0, r_esr=0.0)
        assert params.r_winding == 0.0 and params.r_esr == 0.0


class TestSwitchState:
    def test_start_of_period_is_on(self):
        params = make_params(n_phases=1)
        assert switch_state(0.0, 0, params, 0.5) == 1

    def test_past_pulse_is_off(self):
        params = make_params(n_phases=1)
        assert switch_state(6e-6, 0, params, 0.5) == 0

    def test_offset_phase_within_pulse(self):
        # phase 1 of 4 switches on at 2.5 us; (6-2.5) us = 3.5 us <= 5 us
        params = make_params(n_phases=4)
        assert switch_state(6e-6, 1, params, 0.5) == 1

    def test_boundary_tie_is_on(self):
        params = make_params(n_phases=1)
        assert switch_state(5e-6, 0, params, 0.5) == 1

    def test_periodicity(self):
        params = make_params()
        rng = np.random.default_rng(7)
        for _ in range(200):
            t = float(rng.uniform(0, 10 * params.pwm_period))
            duty = float(rng.uniform(0, 1))
            phase = int(rng.integers(0, params.n_phases))
            assert switch_state(t, phase, params, duty) == \
                switch_state(t + params.pwm_period, phase, params, duty)

    def test_duty_one_always_on(self):
        params = make_params()
        rng = np.random.default_rng(8)
        for t in rng.uniform(0, 5e-4, size=100):
            for j in range(params.n_phases):
                assert switch_state(float(t), j, params, 1.0) == 1

    def test_duty_zero_off_away_from_offsets(self):
        params = make_params()
        rng = np.random.default_rng(9)
        t_cycle = params.pwm_period
        for _ in range(200):
            t = float(rng.uniform(0, 5e-4))
            for j in range(params.n_phases):
                local = (t - j * t_cycle / params.n_phases) % t_cycle
                if local != 0.0:
                    assert switch_state(t, j, params, 0.0) == 0

    def test_negative_time_folds_into_period(self):
        # phases with positive offsets see negative arguments on cycle 0
        params = make_params(n_phases=4)
        assert switch_state(0.0, 3, params, 0.5) == 0  # local = 2.5 us? no: 10-7.5
        assert switch_state(0.0, 3, params, 0.8) == 1  # local 2.5 us <= 8 us


class TestOutputVoltage:
    def test_zero_esr_returns_capacitor_voltage(self):
        params = make_params(r_esr=0.0)
        state = PlantState(phase_currents=np.ones(4), capacitor_voltage=1.0)
        assert output_voltage(state, params, 1.0) == 1.0

    def test_unit_balance_case(self):
        # u_c=1, sum(i)=1, r_esr=0.1, r_load=1: (1 + 0.1)/(1.1) = 1
        params = make_params(n_phases=2, r_esr=0.1)
        state = PlantState(phase_currents=np.array([0.6, 0.4]),
                           capacitor_voltage=1.0)
        assert output_voltage(state, params, 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_residual_of_defining_equation(self):
        # oracle: substitute the result back into the constraint
        params = make_params(n_phases=2, r_esr=0.1)
        state = PlantState(phase_currents=np.array([1.5, 0.5]),
                           capacitor_voltage=1.0)
        u_o = output_voltage(state, params, 1.0)
        residual = u_o - (1.0 + 0.1 * (2.0 - u_o / 1.0))
        assert abs(residual) < 1e-12
        assert u_o == pytest.approx(1.090909090909, rel=1e-9)

    def test_randomized_residuals(self):
        rng = np.random.default_rng(12)
        for _ in range(500):
            n = int(rng.integers(1, 9))
            params = make_params(n_phases=n, r_esr=float(rng.uniform(0, 1)))
            state = PlantState(phase_currents=rng.uniform(-10, 10, size=n),
                               capacitor_voltage=float(rng.uniform(0.1, 100)))
            r_load = float(rng.uniform(0.01, 1e4))
            u_o = output_voltage(state, params, r_load)
            total = float(np.sum(state.phase_currents))
            lhs = u_o
            rhs = state.capacitor_voltage + params.r_esr * (total - u_o / r_load)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


class TestPlantDerivatives:
    def test_unpowered_zero_state_is_equilibrium(self):
        params = make_params(r_esr=0.0)
        state = PlantState(phase_currents=np.zeros(4), capacitor_voltage=0.0)
        di, du_c = plant_derivatives(state, params, 100.0, np.zeros(4))
        assert np.all(di == 0.0) and du_c == 0.0

    def test_single_phase_arithmetic(self):
        # independent arithmetic check: (12 - 0.01 - 1)/1e-6
        params = make_params(n_phases=1, r_esr=0.0, r_winding=0.01,
                             inductance=1e-6)
        state = PlantState(phase_currents=np.array([1.0]), capacitor_voltage=1.0)
        di, _ = plant_derivatives(state, params, 1e9, np.array([1]))
        assert di[0] == pytest.approx((12.0 - 0.01 - 1.0) / 1e-6, rel=1e-12)
        assert di[0] == pytest.approx(1.099e7, rel=1e-4)

    def test_steady_state_current_derivative_vanishes(self):
        # alpha*u_s == i*r_w + u_o makes the current derivative zero
        params = make_params(n_phases=1, r_esr=0.0, r_winding=2.0,
                             u_source=12.0)
        u_o = 4.0
        i = (12.0 - u_o) / 2.0
        state = PlantState(phase_currents=np.array([i]), capacitor_voltage=u_o)
        di, _ = plant_derivatives(state, params, 1e6, np.array([1]))
        assert abs(di[0]) < 1e-9

    def test_averaged_duty_fixed_point_ideal(self):
        # with r_w = r_esr = 0, u_o = d*u_s and i summing to u_o/r_load is an
        # equilibrium of the averaged dynamics (alpha treated as its mean d)
        params = make_params(r_winding=0.0, r_esr=0.0)
        duty = 0.4
        r_load = 5.0
        u_o = duty * params.u_source
        n = params.n_phases
        state = PlantState(phase_currents=np.full(n, u_o / r_load / n),
                           capacitor_voltage=u_o)
        di, du_c = plant_derivatives(state, params, r_load, np.full(n, duty))
        assert np.allclose(di, 0.0, atol=1e-12)
        assert abs(du_c) < 1e-12

    def test_wrong_switch_vector_length_rejected(self):
        params = make_params()
        state = PlantState(phase_currents=np.zeros(4), capacitor_voltage=0.0)
        with pytest.raises(ValidationError):
            plant_derivatives(state, params, 10.0, np.zeros(3))


class TestLoadProfile:
    def test_constant_profile(self):
        profile = LoadProfile(segments=((0.0, 2000.0, 0.0),), r_min=1.0)
        for t in (0.0, 1e-6, 1.0, 1e3):
            assert load_resistance(profile, t) == 2000.0

    def test_reference_ramp_hits_floor(self):
        # -0.9*2000 ohm/us drops 1800 ohm in 1 us; hand-integrated ramp
        profile = LoadProfile(
            segments=((0.0, 2000.0, 0.0), (100e-6, 2000.0, -1.8e9)),
            r_min=200.0,
        )
        assert load_resistance(profile, 100e-6) == 2000.0
        mid = load_resistance(profile, 100.5e-6)
        assert mid == pytest.approx(2000.0 - 1.8e9 * 0.5e-6, rel=1e-12)
        assert load_resistance(profile, 101e-6) == pytest.approx(200.0, abs=1e-9)
        assert load_resistance(profile, 1.0) == 200.0

    def test_constant_extrapolation_before_first_segment(self):
        profile = LoadProfile(segments=((1e-3, 50.0, -1e6),), r_min=5.0)
        assert load_resistance(profile, 0.0) == 50.0

    def test_never_below_floor(self):
        profile = LoadProfile(
            segments=((0.0, 100.0, -1e9), (1e-3, 100.0, -1e12)), r_min=7.0)
        rng = np.random.default_rng(3)
        for t in rng.uniform(0, 2e-3, size=300):
            assert load_resistance(profile, float(t)) >= 7.0

    def test_invariants(self):
        with pytest.raises(ValidationError):
            LoadProfile(segments=(), r_min=1.0)
        with pytest.raises(ValidationError):
            LoadProfile(segments=((0.0, 10.0, 0.0),), r_min=0.0)
        with pytest.raises(ValidationError):
            LoadProfile(segments=((0.0, 10.0, 0.0), (0.0, 5.0, 0.0)), r_min=1.0)
        with pytest.raises(ValidationError):
            LoadProfile(segments=((0.0, 0.5, 0.0),), r_min=1.0)

    def test_magnitude_scaling(self):
        profile = LoadProfile(
            segments=((0.0, 10.0, 0.0), (2e-4, 10.0, -9e6)), r_min=1.0)
        scaled = profile.scaled_magnitude(0.5)
        assert scaled.r_min == pytest.approx(10.0 + 0.5 * (1.0 - 10.0))
        assert scaled.segments[1][2] == pytest.approx(-4.5e6)
        assert profile.scaled_magnitude(1.0) is profile

    def test_rate_scaling(self):
        profile = LoadProfile(
            segments=((0.0, 10.0, 0.0), (2e-4, 10.0, -9e6)), r_min=1.0)
        scaled = profile.scaled_rate(0.1)
        assert scaled.r_min == 1.0
        assert scaled.segments[1][2] == pytest.approx(-9e5)
        # ramp now takes 10x longer to reach the floor
        assert load_resistance(scaled, 2e-4 + 1e-6) > 1.0
        assert load_resistance(scaled, 2e-4 + 1e-5) == pytest.approx(1.0)
        assert profile.scaled_rate(1.0) is profile
