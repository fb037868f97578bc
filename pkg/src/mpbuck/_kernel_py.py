"""Pure-Python closed-loop kernel.

Fallback used when the compiled extension is unavailable. The compiled kernel
(_kernel.pyx) mirrors this function statement for statement; keep the two in
sync, including operation order, so their outputs stay bit-identical.
"""

from math import fmod, isfinite

BACKEND = "python"

_STATE_LIMIT = 1e6
_CURRENT_EPSILON = 1e-9


def run_closed_loop(
    n_phases, inductance, capacitance, r_winding, r_esr, u_source, pwm_period,
    k_p, k_i, k_d, k_dd, t_d, t_dd, u_ref,
    seg_start, seg_r, seg_rate, r_min,
    n_periods, steps_per_period, record_decimation,
    use_model_d2, balancing_on, balancer_beta,
    i_init, uc_init,
    out_times, out_u_o, out_u_c, out_currents,
    out_d0, out_duties, out_r_load, out_error,
    filtered_out,
):
    """Run the switched closed loop and fill the preallocated trace arrays.

    Returns (samples_written, diverged_flag). The duty is recomputed at every
    period start and frozen across the period's substeps; the plant advances
    with fixed-step RK4, sampling the switch drive at each stage time.
    """
    n = n_phases
    spp = steps_per_period
    decim = record_decimation
    dt = pwm_period / spp
    t_cycle = pwm_period
    half_dt = dt * 0.5
    dt6 = dt / 6.0
    nf = float(n)
    inv_spp = 1.0 / spp
    beta = balancer_beta

    starts = [float(x) for x in seg_start]
    rs = [float(x) for x in seg_r]
    rates = [float(x) for x in seg_rate]
    n_seg = len(starts)
    floor_r = float(r_min)

    offs = [j * t_cycle / n for j in range(n)]

    cur = [float(i_init[j]) for j in range(n)]
    u_c = float(uc_init)
    filt = [float(i_init[j]) for j in range(n)]
    acc = [0.0] * n
    duties = [0.0] * n
    prev_duties = [0.0] * n

    c_u_ad = 0.0
    c_u_ai = 0.0
    c_u_dd = 0.0
    c_e_prev = 0.0
    c_de_prev = 0.0
    initialized = False

    cur2 = [0.0] * n
    di1 = [0.0] * n
    di2 = [0.0] * n
    di3 = [0.0] * n
    di4 = [0.0] * n

    def load_r(t):
        if t < starts[0]:
            r = rs[0]
        else:
            idx = 0
            for s in range(n_seg):
                if starts[s] <= t:
                    idx = s
                else:
                    break
            r = rs[idx] + rates[idx] * (t - starts[idx])
        if r < floor_r:
            r = floor_r
        return r

    sample = 0
    diverged = 0
    d0 = 0.0

    for k in range(n_periods):
        t_k = (k * spp) * dt
        r_k = load_r(t_k)

        s_i = 0.0
        for j in range(n):
            s_i += cur[j]
        u_o = (u_c + r_esr * s_i) / (1.0 + r_esr / r_k)

        e = u_ref - u_o
        if initialized:
            de = (e - c_e_prev) / t_cycle
        else:
            de = 0.0
        if use_model_d2 and initialized:
            s_di = 0.0
            for j in range(n):
                local = fmod(t_k - offs[j], t_cycle)
                if local < 0.0:
                    local += t_cycle
                alpha = 1.0 if local <= prev_duties[j] * t_cycle else 0.0
                s_di += (alpha * u_source - cur[j] * r_winding - u_o) / inductance
            du_c_now = (s_i - u_o / r_k) / capacitance
            d2uc = (s_di - du_c_now / r_k) / capacitance
            d2e = -d2uc
        elif initialized:
            d2e = (de - c_de_prev) / t_cycle
        else:
            d2e = 0.0

        c_u_ad = (t_d * c_u_ad + k_d * de * t_cycle) / (t_d + t_cycle)
        c_u_ai = c_u_ai + k_i * e * t_cycle
        c_u_dd = (t_dd * c_u_dd + k_dd * d2e * t_cycle) / (t_dd + t_cycle)
        u_a = c_u_ad + c_u_ai + k_p * e + c_u_dd
        d0 = (u_ref + u_a) / u_source
        if d0 < 0.0:
            d0 = 0.0
        elif d0 > 1.0:
            d0 = 1.0
        c_e_prev = e
        c_de_prev = de
        initialized = True

        if k > 0:
            for j in range(n):
                filt[j] = (1.0 - beta) * filt[j] + beta * (acc[j] * inv_spp)
        for j in range(n):
            acc[j] = 0.0

        if balancing_on and n >= 2:
            fmin = filt[0]
            for j in range(1, n):
                if filt[j] < fmin:
                    fmin = filt[j]
            ssum = 0.0
            for j in range(n):
                ssum += filt[j] - fmin
            if ssum < _CURRENT_EPSILON:
                for j in range(n):
                    duties[j] = d0
            else:
                for j in range(n):
                    dj = (1.0 - (filt[j] - fmin) / ssum) * d0 * nf / (nf - 1.0)
                    if dj < 0.0:
                        dj = 0.0
                    elif dj > 1.0:
                        dj = 1.0
                    duties[j] = dj
        else:
            for j in range(n):
                duties[j] = d0

        for i in range(spp):
            m = k * spp + i
            t_m = m * dt

            if m % decim == 0:
                r_m = load_r(t_m)
                s_i = 0.0
                for j in range(n):
                    s_i += cur[j]
                u_o = (u_c + r_esr * s_i) / (1.0 + r_esr / r_m)
                out_times[sample] = t_m
                out_u_o[sample] = u_o
                out_u_c[sample] = u_c
                out_d0[sample] = d0
                out_r_load[sample] = r_m
                out_error[sample] = u_ref - u_o
                for j in range(n):
                    out_currents[sample, j] = cur[j]
                    out_duties[sample, j] = duties[j]
                sample += 1

            for j in range(n):
                acc[j] += cur[j]

            # RK4 stage 1 at t_m
            r = load_r(t_m)
            s_i = 0.0
            for j in range(n):
                s_i += cur[j]
            u_o = (u_c + r_esr * s_i) / (1.0 + r_esr / r)
            for j in range(n):
                local = fmod(t_m - offs[j], t_cycle)
                if local < 0.0:
                    local += t_cycle
                alpha = 1.0 if local <= duties[j] * t_cycle else 0.0
                di1[j] = (alpha * u_source - cur[j] * r_winding - u_o) / inductance
            duc1 = (s_i - u_o / r) / capacitance

            # stage 2 at t_m + dt/2
            t_s = t_m + half_dt
            r = load_r(t_s)
            s_i = 0.0
            for j in range(n):
                cur2[j] = cur[j] + half_dt * di1[j]
                s_i += cur2[j]
            u_c_s = u_c + half_dt * duc1
            u_o = (u_c_s + r_esr * s_i) / (1.0 + r_esr / r)
            for j in range(n):
                local = fmod(t_s - offs[j], t_cycle)
                if local < 0.0:
                    local += t_cycle
                alpha = 1.0 if local <= duties[j] * t_cycle else 0.0
                di2[j] = (alpha * u_source - cur2[j] * r_winding - u_o) / inductance
            duc2 = (s_i - u_o / r) / capacitance

            # stage 3 at t_m + dt/2
            s_i = 0.0
            for j in range(n):
                cur2[j] = cur[j] + half_dt * di2[j]
                s_i += cur2[j]
            u_c_s = u_c + half_dt * duc2
            u_o = (u_c_s + r_esr * s_i) / (1.0 + r_esr / r)
            for j in range(n):
                local = fmod(t_s - offs[j], t_cycle)
                if local < 0.0:
                    local += t_cycle
                alpha = 1.0 if local <= duties[j] * t_cycle else 0.0
                di3[j] = (alpha * u_source - cur2[j] * r_winding - u_o) / inductance
            duc3 = (s_i - u_o / r) / capacitance

            # stage 4 at t_m + dt
            t_s = t_m + dt
            r = load_r(t_s)
            s_i = 0.0
            for j in range(n):
                cur2[j] = cur[j] + dt * di3[j]
                s_i += cur2[j]
            u_c_s = u_c + dt * duc3
            u_o = (u_c_s + r_esr * s_i) / (1.0 + r_esr / r)
            for j in range(n):
                local = fmod(t_s - offs[j], t_cycle)
                if local < 0.0:
                    local += t_cycle
                alpha = 1.0 if local <= duties[j] * t_cycle else 0.0
                di4[j] = (alpha * u_source - cur2[j] * r_winding - u_o) / inductance
            duc4 = (s_i - u_o / r) / capacitance

            bad = 0
            for j in range(n):
                cur[j] = cur[j] + dt6 * (di1[j] + 2.0 * di2[j] + 2.0 * di3[j] + di4[j])
                if not isfinite(cur[j]) or abs(cur[j]) > _STATE_LIMIT:
                    bad = 1
            u_c = u_c + dt6 * (duc1 + 2.0 * duc2 + 2.0 * duc3 + duc4)
            if not isfinite(u_c) or abs(u_c) > _STATE_LIMIT:
                bad = 1
            if bad:
                diverged = 1
                break

        if diverged:
            break
        for j in range(n):
            prev_duties[j] = duties[j]

    if not diverged:
        m = n_periods * spp
        t_m = m * dt
        r_m = load_r(t_m)
        s_i = 0.0
        for j in range(n):
            s_i += cur[j]
        u_o = (u_c + r_esr * s_i) / (1.0 + r_esr / r_m)
        out_times[sample] = t_m
        out_u_o[sample] = u_o
        out_u_c[sample] = u_c
        out_d0[sample] = d0
        out_r_load[sample] = r_m
        out_error[sample] = u_ref - u_o
        for j in range(n):
            out_currents[sample, j] = cur[j]
            out_duties[sample, j] = duties[j]
        sample += 1

    for j in range(n):
        filtered_out[j] = filt[j]
    return sample, diverged
