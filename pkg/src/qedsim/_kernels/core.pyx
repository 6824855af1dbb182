# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled simulation kernels.

Twin of ``core_py.py``: same algorithms, same random-draw order, reading
the same ``numpy.random.Generator`` stream through numpy's C API, so the
two lanes produce bit-for-bit identical trajectories.  Keep in sync with
the Python lane.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, floor, pow, sqrt, INFINITY
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_standard_exponential,
    random_standard_normal,
    random_standard_uniform,
)

import numpy as np

BACKEND = "c"

cdef long _EXP = 0
cdef long _ERLANG = 1
cdef long _HYPER = 2

cdef long _POL_STATIC = 0
cdef long _POL_MODIFIED = 1
cdef long _POL_MARKOV_FIELD = 2
cdef long _POL_CAPPED_STATIC = 3

POL_STATIC = 0
POL_MODIFIED = 1
POL_MARKOV_FIELD = 2
POL_CAPPED_STATIC = 3

EV_ENV_DOWN = 0
EV_ENV_UP = 1


cdef inline double _sample_dist(long kind, long k, long nph,
                                const double *probs, const double *rates,
                                bitgen_t *bg) noexcept nogil:
    cdef double acc, u
    cdef long j, jj
    if kind == _EXP:
        return random_standard_exponential(bg)
    if kind == _ERLANG:
        acc = 0.0
        for jj in range(k):
            acc += random_standard_exponential(bg)
        return acc / k
    u = random_standard_uniform(bg)
    acc = 0.0
    j = nph - 1
    for jj in range(nph):
        acc += probs[jj]
        if u < acc:
            j = jj
            break
    return random_standard_exponential(bg) / rates[j]


cdef inline double _field_eval_u1(double xt0, double xt1, double R,
                                  double gx0, double gh, long nx, long ny,
                                  const double *u1) noexcept nogil:
    cdef double s, smax, fx, fy, v00, v10, v01, v11, v
    cdef long ix, iy
    if sqrt(xt0 * xt0 + xt1 * xt1) > R:
        return 0.0
    s = (xt0 - gx0) / gh
    if s < 0.0:
        s = 0.0
    smax = nx - 1.000000000001
    if s > smax:
        s = smax
    ix = <long> s
    fx = s - ix
    s = (xt1 - gx0) / gh
    if s < 0.0:
        s = 0.0
    smax = ny - 1.000000000001
    if s > smax:
        s = smax
    iy = <long> s
    fy = s - iy
    v00 = u1[ix * ny + iy]
    v10 = u1[(ix + 1) * ny + iy]
    v01 = u1[ix * ny + iy + 1]
    v11 = u1[(ix + 1) * ny + iy + 1]
    v = (1 - fx) * ((1 - fy) * v00 + fy * v01) + fx * ((1 - fy) * v10 + fy * v11)
    if v < 0.0:
        v = 0.0
    if v > 1.0:
        v = 1.0
    return v


cdef inline void _static_priority(const long *x, long *z, const long *order,
                                  long d, long budget) noexcept nogil:
    cdef long pos, i, zi
    for pos in range(d):
        i = order[pos]
        zi = x[i] if x[i] < budget else budget
        z[i] = zi
        budget -= zi


cdef inline void _modified_priority(const long *x, long *z, long d, long n,
                                    long i0, const long *cap,
                                    const double *share,
                                    const long *order) noexcept nogil:
    cdef long totx = 0, sum_min = 0, prefix_excess = 0, prefix_x = 0
    cdef long i, pos, xi, spill, zi, exc, budget, target, s, cut, add, room
    for i in range(d):
        totx += x[i]
    for pos in range(i0):
        xi = x[order[pos]]
        sum_min += xi if xi < cap[pos] else cap[pos]
    for pos in range(i0):
        i = order[pos]
        spill = n - sum_min - prefix_excess
        if spill < 0:
            spill = 0
        zi = <long> floor(share[pos] + spill)
        if zi > x[i]:
            zi = x[i]
        z[i] = zi
        exc = x[i] - cap[pos]
        if exc > 0:
            prefix_excess += exc
    for pos in range(i0):
        prefix_x += x[order[pos]]
    for pos in range(i0, d):
        i = order[pos]
        budget = n - prefix_x
        if budget < 0:
            budget = 0
        z[i] = x[i] if x[i] < budget else budget
        prefix_x += x[i]
    target = totx if totx < n else n
    s = 0
    for i in range(d):
        s += z[i]
    if s > target:
        for pos in range(d - 1, -1, -1):
            i = order[pos]
            cut = s - target
            if z[i] < cut:
                cut = z[i]
            z[i] -= cut
            s -= cut
            if s == target:
                break
    elif s < target:
        for pos in range(d):
            i = order[pos]
            add = target - s
            room = x[i] - z[i]
            if room < add:
                add = room
            z[i] += add
            s += add
            if s == target:
                break


cdef inline void _policy_eval_c(long pol_kind, long d, long n,
                                const long *pol_order, long pol_i0,
                                const long *pol_cap, const double *pol_share,
                                long pol_neff, const double *nrho,
                                double sqrt_n, double pol_thr, double pol_R,
                                double gx0, double gh, long gnx, long gny,
                                const double *gu1,
                                const long *x, long *z) noexcept nogil:
    cdef double supx, v, xt0, xt1, u1
    cdef long i, totx, qtot, q0, q1, rem, room, add
    if pol_kind == _POL_STATIC:
        _static_priority(x, z, pol_order, d, n)
        return
    if pol_kind == _POL_CAPPED_STATIC:
        _static_priority(x, z, pol_order, d, pol_neff)
        return
    if pol_kind == _POL_MODIFIED:
        _modified_priority(x, z, d, n, pol_i0, pol_cap, pol_share, pol_order)
        return
    supx = 0.0
    for i in range(d):
        v = (x[i] - nrho[i]) / sqrt_n
        if v < 0.0:
            v = -v
        if v > supx:
            supx = v
    if supx > pol_thr:
        _modified_priority(x, z, d, n, pol_i0, pol_cap, pol_share, pol_order)
        return
    totx = 0
    for i in range(d):
        totx += x[i]
    qtot = totx - n
    if qtot <= 0:
        for i in range(d):
            z[i] = x[i]
        return
    xt0 = (x[0] - nrho[0]) / sqrt_n
    xt1 = (x[1] - nrho[1]) / sqrt_n
    u1 = _field_eval_u1(xt0, xt1, pol_R, gx0, gh, gnx, gny, gu1)
    q0 = <long> floor(qtot * u1)
    q1 = qtot - q0
    if q0 > x[0]:
        q0 = x[0]
    if q1 > x[1]:
        q1 = x[1]
    rem = qtot - q0 - q1
    if rem > 0:
        room = x[1] - q1
        add = rem if rem < room else room
        q1 += add
        rem -= add
        if rem > 0:
            q0 += rem
    z[0] = x[0] - q0
    z[1] = x[1] - q1


cdef bitgen_t *_get_bitgen(rng):
    return <bitgen_t *> PyCapsule_GetPointer(rng.bit_generator.capsule,
                                             "BitGenerator")


def policy_eval(plan, x):
    """Debug entry point: evaluate the plan's policy at integer counts x."""
    cdef long d = plan.d
    xs = np.ascontiguousarray(np.asarray(x, dtype=np.int64))
    zs = np.zeros(d, dtype=np.int64)
    cdef long[::1] xv = xs
    cdef long[::1] zv = zs
    cdef long[::1] pol_order = plan.pol_order
    cdef long[::1] pol_cap = plan.pol_cap
    cdef double[::1] pol_share = plan.pol_share
    cdef double[::1] nrho = plan.nrho
    cdef double[::1] gu1 = plan.grid_u1
    _policy_eval_c(plan.pol_kind, d, plan.n, &pol_order[0], plan.pol_i0,
                   &pol_cap[0], &pol_share[0], plan.pol_neff, &nrho[0],
                   plan.sqrt_n, plan.pol_thr, plan.pol_R, plan.grid_x0,
                   plan.grid_h, plan.grid_nx, plan.grid_ny, &gu1[0],
                   &xv[0], &zv[0])
    return zs


def run_queue(plan, rng):
    """Compiled twin of core_py.run_queue; see that docstring."""
    cdef long d = plan.d
    cdef long n = plan.n
    cdef double[::1] lam = plan.lam
    cdef double[::1] mu = plan.mu
    cdef double[::1] gam = plan.gam
    cdef long[::1] arr_kind = plan.arr_kind
    cdef long[::1] arr_k = plan.arr_k
    cdef long[::1] arr_nph = plan.arr_nph
    cdef double[:, ::1] arr_p = plan.arr_p
    cdef double[:, ::1] arr_r = plan.arr_r
    cdef long has_env = plan.has_env
    cdef double beta_u = plan.beta_u
    cdef long dt_kind = plan.dt_kind
    cdef long dt_k = plan.dt_k
    cdef long dt_nph = plan.dt_nph
    cdef double[::1] dt_p = plan.dt_p
    cdef double[::1] dt_r = plan.dt_r
    cdef double theta_n = plan.theta_n

    cdef long pol_kind = plan.pol_kind
    cdef long[::1] pol_order = plan.pol_order
    cdef long pol_i0 = plan.pol_i0
    cdef long[::1] pol_cap = plan.pol_cap
    cdef double[::1] pol_share = plan.pol_share
    cdef long pol_neff = plan.pol_neff
    cdef double[::1] nrho = plan.nrho
    cdef double sqrt_n = plan.sqrt_n
    cdef double pol_thr = plan.pol_thr
    cdef double pol_R = plan.pol_R
    cdef double grid_x0 = plan.grid_x0
    cdef double grid_h = plan.grid_h
    cdef long grid_nx = plan.grid_nx
    cdef long grid_ny = plan.grid_ny
    cdef double[::1] grid_u1 = plan.grid_u1

    cdef double t_end = plan.t_end
    cdef double burn_in = plan.burn_in
    cdef long n_batches = plan.n_batches
    cdef double alpha = plan.alpha
    cdef double half_m = 0.5 * plan.cost_m
    cdef long hist_max = plan.hist_max
    cdef long max_events = plan.max_events

    x_arr = np.ascontiguousarray(np.asarray(plan.x0, dtype=np.int64)).copy()
    z_arr = np.zeros(d, dtype=np.int64)
    q_arr = np.zeros(d, dtype=np.int64)
    last_arr_a = np.zeros(d)
    next_arr_a = np.zeros(d)
    cdef long[::1] x = x_arr
    cdef long[::1] z = z_arr
    cdef long[::1] q = q_arr
    cdef double[::1] last_arr = last_arr_a
    cdef double[::1] next_arr = next_arr_a

    cdef double t = 0.0
    cdef long psi = 1
    cdef double down_start = 0.0
    cdef double cum_down = 0.0
    cdef double env_next, t_sa, tnew, seg_end, rtot, g, u, acc, dur
    cdef double qn2, cost_rate, lo, hi, w, s
    cdef long i, ev, b, totx, hb, kind_code, n_events = 0, truncated = 0

    cdef bitgen_t *bg = _get_bitgen(rng)

    cdef double batch_w = 0.0
    if n_batches > 0:
        batch_w = (t_end - burn_in) / n_batches
    batch_dur_a = np.zeros(n_batches)
    batch_sx_a = np.zeros((n_batches, d))
    batch_sxx_a = np.zeros((n_batches, d))
    batch_sq_a = np.zeros((n_batches, d))
    batch_cost_a = np.zeros(n_batches)
    batch_down_a = np.zeros(n_batches)
    cdef double[::1] batch_dur = batch_dur_a
    cdef double[:, ::1] batch_sx = batch_sx_a
    cdef double[:, ::1] batch_sxx = batch_sxx_a
    cdef double[:, ::1] batch_sq = batch_sq_a
    cdef double[::1] batch_cost = batch_cost_a
    cdef double[::1] batch_down = batch_down_a
    cdef double disc_cost = 0.0
    hist_a = np.zeros(hist_max + 1 if hist_max > 0 else 1)
    cdef double[::1] hist = hist_a
    count_arr_a = np.zeros(d, dtype=np.int64)
    count_svc_a = np.zeros(d, dtype=np.int64)
    count_abd_a = np.zeros(d, dtype=np.int64)
    count_env_a = np.zeros(2, dtype=np.int64)
    cdef long[::1] count_arr = count_arr_a
    cdef long[::1] count_svc = count_svc_a
    cdef long[::1] count_abd = count_abd_a
    cdef long[::1] count_env = count_env_a

    cdef long rec_on = plan.record_events
    cdef long max_rec = plan.max_records if rec_on else 1
    ev_t_a = np.zeros(max_rec)
    ev_kind_a = np.zeros(max_rec, dtype=np.int32)
    ev_x_a = np.zeros((max_rec, d), dtype=np.int64)
    ev_q_a = np.zeros((max_rec, d), dtype=np.int64)
    ev_psi_a = np.zeros(max_rec, dtype=np.int8)
    cdef double[::1] ev_t = ev_t_a
    cdef int[::1] ev_kind = ev_kind_a
    cdef long[:, ::1] ev_x = ev_x_a
    cdef long[:, ::1] ev_q = ev_q_a
    cdef signed char[::1] ev_psi = ev_psi_a
    cdef long n_rec = 0

    snap_times_a = plan.snap_times
    cdef double[::1] snap_times = snap_times_a
    cdef long n_snap = snap_times.shape[0]
    cdef long snap_idx = 0
    snap_x_a = np.zeros((n_snap, d), dtype=np.int64)
    snap_z_a = np.zeros((n_snap, d), dtype=np.int64)
    snap_psi_a = np.zeros(n_snap, dtype=np.int8)
    snap_k_a = np.zeros(n_snap)
    snap_r_a = np.zeros(n_snap)
    snap_h_a = np.zeros((n_snap, d))
    snap_cdown_a = np.zeros(n_snap)
    cdef long[:, ::1] snap_x = snap_x_a
    cdef long[:, ::1] snap_z = snap_z_a
    cdef signed char[::1] snap_psi = snap_psi_a
    cdef double[::1] snap_k = snap_k_a
    cdef double[::1] snap_r = snap_r_a
    cdef double[:, ::1] snap_h = snap_h_a
    cdef double[::1] snap_cdown = snap_cdown_a
    cdef double snap_s

    with rng.bit_generator.lock:
        for i in range(d):
            if lam[i] > 0.0:
                g = _sample_dist(arr_kind[i], arr_k[i], arr_nph[i],
                                 &arr_p[i, 0], &arr_r[i, 0], bg)
                next_arr[i] = g / lam[i]
            else:
                next_arr[i] = INFINITY
        if has_env:
            env_next = random_standard_exponential(bg) / beta_u
        else:
            env_next = INFINITY

        _policy_eval_c(pol_kind, d, n, &pol_order[0], pol_i0, &pol_cap[0],
                       &pol_share[0], pol_neff, &nrho[0], sqrt_n, pol_thr,
                       pol_R, grid_x0, grid_h, grid_nx, grid_ny, &grid_u1[0],
                       &x[0], &z[0])
        for i in range(d):
            q[i] = x[i] - z[i]

        if rec_on:
            ev_t[0] = 0.0
            ev_kind[0] = -1
            for i in range(d):
                ev_x[0, i] = x[i]
                ev_q[0, i] = q[i]
            ev_psi[0] = <signed char> psi
            n_rec = 1

        while True:
            rtot = 0.0
            if psi == 1:
                for i in range(d):
                    rtot += mu[i] * z[i]
            for i in range(d):
                rtot += gam[i] * q[i]
            if rtot > 0.0:
                t_sa = t + random_standard_exponential(bg) / rtot
            else:
                t_sa = INFINITY

            tnew = env_next
            ev = -2
            for i in range(d):
                if next_arr[i] < tnew:
                    tnew = next_arr[i]
                    ev = i
            if t_sa < tnew:
                tnew = t_sa
                ev = -1
            if ev == -2 and env_next == INFINITY:
                tnew = INFINITY

            seg_end = tnew if tnew < t_end else t_end

            if seg_end > t:
                if psi == 0:
                    cum_down += seg_end - t
                if alpha > 0.0:
                    qn2 = 0.0
                    for i in range(d):
                        qn2 += q[i] * q[i]
                    if qn2 > 0.0:
                        disc_cost += pow(qn2, half_m) * (
                            exp(-alpha * t) - exp(-alpha * seg_end)) / alpha
                lo = t if t > burn_in else burn_in
                if seg_end > lo and n_batches > 0:
                    qn2 = 0.0
                    for i in range(d):
                        qn2 += q[i] * q[i]
                    cost_rate = pow(qn2, half_m) if qn2 > 0.0 else 0.0
                    totx = 0
                    for i in range(d):
                        totx += x[i]
                    while lo < seg_end:
                        b = <long> ((lo - burn_in) / batch_w)
                        if b >= n_batches:
                            b = n_batches - 1
                        hi = burn_in + (b + 1) * batch_w
                        if hi > seg_end:
                            hi = seg_end
                        if hi <= lo:
                            hi = seg_end
                        w = hi - lo
                        batch_dur[b] += w
                        for i in range(d):
                            batch_sx[b, i] += w * x[i]
                            batch_sxx[b, i] += w * x[i] * x[i]
                            batch_sq[b, i] += w * q[i]
                        batch_cost[b] += w * cost_rate
                        if psi == 0:
                            batch_down[b] += w
                        if hist_max > 0:
                            hb = totx if totx < hist_max else hist_max
                            hist[hb] += w
                        lo = hi
                while snap_idx < n_snap and snap_times[snap_idx] <= seg_end:
                    snap_s = snap_times[snap_idx]
                    if snap_s >= t:
                        for i in range(d):
                            snap_x[snap_idx, i] = x[i]
                            snap_z[snap_idx, i] = z[i]
                            snap_h[snap_idx, i] = snap_s - last_arr[i]
                        snap_psi[snap_idx] = <signed char> psi
                        if psi == 0:
                            snap_k[snap_idx] = snap_s - down_start
                            snap_r[snap_idx] = env_next - snap_s
                            snap_cdown[snap_idx] = cum_down - (seg_end - snap_s)
                        else:
                            snap_k[snap_idx] = 0.0
                            snap_r[snap_idx] = 0.0
                            snap_cdown[snap_idx] = cum_down
                        snap_idx += 1
                    else:
                        snap_idx += 1

            if tnew >= t_end:
                t = t_end
                break
            t = tnew

            if ev == -2:
                if psi == 1:
                    psi = 0
                    down_start = t
                    dur = _sample_dist(dt_kind, dt_k, dt_nph, &dt_p[0],
                                       &dt_r[0], bg) / theta_n
                    env_next = t + dur
                    count_env[0] += 1
                    kind_code = 0
                else:
                    psi = 1
                    env_next = t + random_standard_exponential(bg) / beta_u
                    count_env[1] += 1
                    kind_code = 1
            elif ev >= 0:
                i = ev
                x[i] += 1
                last_arr[i] = t
                g = _sample_dist(arr_kind[i], arr_k[i], arr_nph[i],
                                 &arr_p[i, 0], &arr_r[i, 0], bg)
                next_arr[i] = t + g / lam[i]
                count_arr[i] += 1
                kind_code = 2 + i
            else:
                u = random_standard_uniform(bg) * rtot
                acc = 0.0
                kind_code = -9
                if psi == 1:
                    for i in range(d):
                        acc += mu[i] * z[i]
                        if u < acc:
                            x[i] -= 1
                            count_svc[i] += 1
                            kind_code = 2 + d + i
                            break
                if kind_code == -9:
                    for i in range(d):
                        acc += gam[i] * q[i]
                        if u < acc:
                            x[i] -= 1
                            count_abd[i] += 1
                            kind_code = 2 + 2 * d + i
                            break
                    if kind_code == -9:
                        for i in range(d - 1, -1, -1):
                            if q[i] > 0 or (psi == 1 and z[i] > 0):
                                x[i] -= 1
                                count_abd[i] += 1
                                kind_code = 2 + 2 * d + i
                                break

            _policy_eval_c(pol_kind, d, n, &pol_order[0], pol_i0, &pol_cap[0],
                           &pol_share[0], pol_neff, &nrho[0], sqrt_n, pol_thr,
                           pol_R, grid_x0, grid_h, grid_nx, grid_ny,
                           &grid_u1[0], &x[0], &z[0])
            for i in range(d):
                q[i] = x[i] - z[i]

            n_events += 1
            if rec_on and n_rec < max_rec:
                ev_t[n_rec] = t
                ev_kind[n_rec] = kind_code
                for i in range(d):
                    ev_x[n_rec, i] = x[i]
                    ev_q[n_rec, i] = q[i]
                ev_psi[n_rec] = <signed char> psi
                n_rec += 1
            if n_events >= max_events:
                truncated = 1
                break

    h_out = np.empty(d)
    for i in range(d):
        h_out[i] = t - last_arr[i]
    k_out = (t - down_start) if psi == 0 else 0.0
    r_out = (env_next - t) if psi == 0 else 0.0
    return {
        "t": t,
        "X": x_arr,
        "Z": z_arr,
        "psi": psi,
        "K": k_out,
        "R": r_out,
        "H": h_out,
        "cum_down": cum_down,
        "n_events": n_events,
        "truncated": truncated,
        "batch_dur": batch_dur_a,
        "batch_sx": batch_sx_a,
        "batch_sxx": batch_sxx_a,
        "batch_sq": batch_sq_a,
        "batch_cost": batch_cost_a,
        "batch_down": batch_down_a,
        "disc_cost": disc_cost,
        "hist": hist_a,
        "count_arr": count_arr_a,
        "count_svc": count_svc_a,
        "count_abd": count_abd_a,
        "count_env": count_env_a,
        "ev_t": ev_t_a[:n_rec],
        "ev_kind": ev_kind_a[:n_rec],
        "ev_X": ev_x_a[:n_rec],
        "ev_Q": ev_q_a[:n_rec],
        "ev_psi": ev_psi_a[:n_rec],
        "snap_X": snap_x_a,
        "snap_Z": snap_z_a,
        "snap_psi": snap_psi_a,
        "snap_K": snap_k_a,
        "snap_R": snap_r_a,
        "snap_H": snap_h_a,
        "snap_cdown": snap_cdown_a,
    }


def run_diffusion(plan, rng):
    """Compiled twin of core_py.run_diffusion; see that docstring."""
    cdef long d = plan.d
    cdef double[::1] ell = plan.ell
    cdef double[::1] mu = plan.mu
    cdef double[::1] gam = plan.gam
    cdef double[::1] sig = plan.sig
    cdef double[::1] jdir = plan.jump_dir
    cdef long has_jumps = plan.has_jumps
    cdef double beta = plan.beta
    cdef long dt_kind = plan.dt_kind
    cdef long dt_k = plan.dt_k
    cdef long dt_nph = plan.dt_nph
    cdef double[::1] dt_p = plan.dt_p
    cdef double[::1] dt_r = plan.dt_r
    cdef double theta = plan.theta

    cdef long ctrl_kind = plan.ctrl_kind
    if ctrl_kind == 2:
        raise ValueError("callable controls are only supported by the python lane")
    cdef double[::1] ctrl_u = plan.ctrl_u
    cdef double pol_R = plan.pol_R
    cdef double grid_x0 = plan.grid_x0
    cdef double grid_h = plan.grid_h
    cdef long grid_nx = plan.grid_nx
    cdef long grid_ny = plan.grid_ny
    cdef double[::1] grid_u1 = plan.grid_u1

    cdef double t_end = plan.t_end
    cdef double dt = plan.dt
    cdef double burn_in = plan.burn_in
    cdef long n_batches = plan.n_batches
    cdef double alpha = plan.alpha
    cdef double cost_m = plan.cost_m

    x_arr = np.ascontiguousarray(np.asarray(plan.x0, dtype=np.float64)).copy()
    u_arr = np.ascontiguousarray(np.asarray(plan.ctrl_u, dtype=np.float64)).copy()
    cdef double[::1] x = x_arr
    cdef double[::1] u = u_arr
    cdef double t = 0.0
    cdef double t_jump, dt_step, ex, un, rate, exp_pos, sdt, bi, y, u1
    cdef long i, b, hit, n_jumps = 0, step_no = 0

    cdef bitgen_t *bg = _get_bitgen(rng)

    cdef double batch_w = 0.0
    if n_batches > 0:
        batch_w = (t_end - burn_in) / n_batches
    batch_dur_a = np.zeros(n_batches)
    batch_sx_a = np.zeros((n_batches, d))
    batch_sxx_a = np.zeros((n_batches, d))
    batch_cost_a = np.zeros(n_batches)
    cdef double[::1] batch_dur = batch_dur_a
    cdef double[:, ::1] batch_sx = batch_sx_a
    cdef double[:, ::1] batch_sxx = batch_sxx_a
    cdef double[::1] batch_cost = batch_cost_a
    cdef double disc_cost = 0.0

    cdef long max_jlog = plan.max_jumps_log
    jump_t_a = np.zeros(max_jlog)
    jump_y_a = np.zeros(max_jlog)
    cdef double[::1] jump_t = jump_t_a
    cdef double[::1] jump_y = jump_y_a

    cdef long stride = plan.record_stride
    cdef long rec_on = 1 if stride > 0 else 0
    cdef long max_rec = plan.max_records if rec_on else 1
    rec_t_a = np.zeros(max_rec)
    rec_x_a = np.zeros((max_rec, d))
    rec_u_a = np.zeros((max_rec, d))
    cdef double[::1] rec_t = rec_t_a
    cdef double[:, ::1] rec_x = rec_x_a
    cdef double[:, ::1] rec_u = rec_u_a
    cdef long n_rec = 0

    with rng.bit_generator.lock:
        if has_jumps:
            t_jump = random_standard_exponential(bg) / beta
        else:
            t_jump = INFINITY

        while t < t_end - 1e-14:
            if ctrl_kind == 1:
                u1 = _field_eval_u1(x[0], x[1], pol_R, grid_x0, grid_h,
                                    grid_nx, grid_ny, &grid_u1[0])
                u[0] = u1
                u[1] = 1.0 - u1

            if rec_on and step_no % stride == 0 and n_rec < max_rec:
                rec_t[n_rec] = t
                for i in range(d):
                    rec_x[n_rec, i] = x[i]
                    rec_u[n_rec, i] = u[i]
                n_rec += 1

            hit = 0
            dt_step = dt
            if t_end - t < dt_step:
                dt_step = t_end - t
            if t_jump - t <= dt_step:
                dt_step = t_jump - t
                hit = 1

            ex = 0.0
            for i in range(d):
                ex += x[i]
            if ex > 0.0:
                un = 0.0
                for i in range(d):
                    un += u[i] * u[i]
                rate = pow(ex * sqrt(un), cost_m)
            else:
                rate = 0.0
            if alpha > 0.0:
                disc_cost += rate * (exp(-alpha * t)
                                     - exp(-alpha * (t + dt_step))) / alpha
            if n_batches > 0 and t >= burn_in:
                b = <long> ((t - burn_in) / batch_w)
                if b >= n_batches:
                    b = n_batches - 1
                batch_dur[b] += dt_step
                for i in range(d):
                    batch_sx[b, i] += dt_step * x[i]
                    batch_sxx[b, i] += dt_step * x[i] * x[i]
                batch_cost[b] += dt_step * rate

            exp_pos = ex if ex > 0.0 else 0.0
            sdt = sqrt(dt_step)
            for i in range(d):
                bi = ell[i] - mu[i] * (x[i] - exp_pos * u[i]) - exp_pos * gam[i] * u[i]
                x[i] += bi * dt_step + sig[i] * sdt * random_standard_normal(bg)
            t += dt_step
            step_no += 1

            if hit:
                y = _sample_dist(dt_kind, dt_k, dt_nph, &dt_p[0], &dt_r[0],
                                 bg) / theta
                for i in range(d):
                    x[i] += jdir[i] * y
                if n_jumps < max_jlog:
                    jump_t[n_jumps] = t
                    jump_y[n_jumps] = y
                n_jumps += 1
                t_jump = t + random_standard_exponential(bg) / beta

    nj = n_jumps if n_jumps < max_jlog else max_jlog
    return {
        "t": t,
        "X": x_arr,
        "batch_dur": batch_dur_a,
        "batch_sx": batch_sx_a,
        "batch_sxx": batch_sxx_a,
        "batch_cost": batch_cost_a,
        "disc_cost": disc_cost,
        "n_jumps": n_jumps,
        "jump_t": jump_t_a[:nj],
        "jump_y": jump_y_a[:nj],
        "rec_t": rec_t_a[:n_rec],
        "rec_X": rec_x_a[:n_rec],
        "rec_U": rec_u_a[:n_rec],
    }
