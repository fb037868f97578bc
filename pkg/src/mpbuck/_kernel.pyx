# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled closed-loop kernel.

Mirror of _kernel_py.run_closed_loop, statement for statement; the build
disables FP contraction so results stay bit-identical to the fallback.
"""

from libc.math cimport fmod, fabs, isfinite
from libc.stdlib cimport malloc, free

BACKEND = "compiled"

cdef double _STATE_LIMIT = 1e6
cdef double _CURRENT_EPSILON = 1e-9


cdef inline double _load_r(double t, const double* starts, const double* rs,
                           const double* rates, int n_seg, double floor_r) noexcept nogil:
    cdef double r
    cdef int s, idx
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


def run_closed_loop(
    int n_phases, double inductance, double capacitance, double r_winding,
    double r_esr, double u_source, double pwm_period,
    double k_p, double k_i, double k_d, double k_dd, double t_d, double t_dd,
    double u_ref,
    double[::1] seg_start, double[::1] seg_r, double[::1] seg_rate,
    double r_min,
    long n_periods, int steps_per_period, long record_decimation,
    int use_model_d2, int balancing_on, double balancer_beta,
    double[::1] i_init, double uc_init,
    double[::1] out_times, double[::1] out_u_o, double[::1] out_u_c,
    double[:, ::1] out_currents,
    double[::1] out_d0, double[:, ::1] out_duties, double[::1] out_r_load,
    double[::1] out_error,
    double[::1] filtered_out,
):
    cdef int n = n_phases
    cdef int spp = steps_per_period
    cdef long decim = record_decimation
    cdef double dt = pwm_period / spp
    cdef double t_cycle = pwm_period
    cdef double half_dt = dt * 0.5
    cdef double dt6 = dt / 6.0
    cdef double nf = <double> n
    cdef double inv_spp = 1.0 / spp
    cdef double beta = balancer_beta

    cdef int n_seg = seg_start.shape[0]
    cdef const double* starts = &seg_start[0]
    cdef const double* rs = &seg_r[0]
    cdef const double* rates = &seg_rate[0]
    cdef double floor_r = r_min

    cdef double* buf = <double*> malloc(11 * n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* offs = buf
    cdef double* cur = buf + n
    cdef double* filt = buf + 2 * n
    cdef double* acc = buf + 3 * n
    cdef double* duties = buf + 4 * n
    cdef double* prev_duties = buf + 5 * n
    cdef double* cur2 = buf + 6 * n
    cdef double* di1 = buf + 7 * n
    cdef double* di2 = buf + 8 * n
    cdef double* di3 = buf + 9 * n
    cdef double* di4 = buf + 10 * n

    cdef int j, i
    cdef long k, m, sample
    cdef int diverged = 0, bad, initialized = 0
    cdef double u_c = uc_init
    cdef double c_u_ad = 0.0, c_u_ai = 0.0, c_u_dd = 0.0
    cdef double c_e_prev = 0.0, c_de_prev = 0.0
    cdef double t_k, r_k, s_i, u_o, e, de, d2e, s_di, du_c_now, d2uc, u_a, d0
    cdef double fmin, ssum, dj, t_m, t_s, r_m, r, local, alpha
    cdef double duc1, duc2, duc3, duc4, u_c_s

    for j in range(n):
        offs[j] = j * t_cycle / n
        cur[j] = i_init[j]
        filt[j] = i_init[j]
        acc[j] = 0.0
        duties[j] = 0.0
        prev_duties[j] = 0.0

    sample = 0
    d0 = 0.0

    for k in range(n_periods):
        t_k = (k * spp) * dt
        r_k = _load_r(t_k, starts, rs, rates, n_seg, floor_r)

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
        initialized = 1

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
                r_m = _load_r(t_m, starts, rs, rates, n_seg, floor_r)
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
            r = _load_r(t_m, starts, rs, rates, n_seg, floor_r)
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
            r = _load_r(t_s, starts, rs, rates, n_seg, floor_r)
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
            r = _load_r(t_s, starts, rs, rates, n_seg, floor_r)
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
                if not isfinite(cur[j]) or fabs(cur[j]) > _STATE_LIMIT:
                    bad = 1
            u_c = u_c + dt6 * (duc1 + 2.0 * duc2 + 2.0 * duc3 + duc4)
            if not isfinite(u_c) or fabs(u_c) > _STATE_LIMIT:
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
        r_m = _load_r(t_m, starts, rs, rates, n_seg, floor_r)
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
    free(buf)
    return sample, diverged
