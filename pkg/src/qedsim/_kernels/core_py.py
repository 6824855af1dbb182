"""Pure-Python simulation kernels.

Reference implementations of the discrete-event queue loop and the
Euler jump-diffusion loop.  The compiled twin in ``core.pyx`` follows the
same algorithm and the same random-draw order, so given one
``numpy.random.Generator`` both lanes produce bit-for-bit identical
trajectories.  Keep the two files in sync.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

# distribution kind codes (match qedsim.renewal); 3 = sampler callback
_EXP, _ERLANG, _HYPER, _USER = 0, 1, 2, 3

# policy kind codes; POL_CALLABLE runs only on this lane
POL_STATIC = 0
POL_MODIFIED = 1
POL_MARKOV_FIELD = 2
POL_CAPPED_STATIC = 3
POL_CALLABLE = 4

# event kind codes: 0 env_down, 1 env_up, 2+i arrival(i),
# 2+d+i service(i), 2+2d+i abandonment(i)
EV_ENV_DOWN = 0
EV_ENV_UP = 1


def _sample_dist(kind, k, nph, probs, rates, rng):
    """One mean-1 draw; the canonical draw order shared with the C lane."""
    if kind == _EXP:
        return rng.standard_exponential()
    if kind == _ERLANG:
        acc = 0.0
        for _ in range(k):
            acc += rng.standard_exponential()
        return acc / k
    u = rng.random()
    acc = 0.0
    j = nph - 1
    for jj in range(nph):
        acc += probs[jj]
        if u < acc:
            j = jj
            break
    return rng.standard_exponential() / rates[j]


def _field_eval_u1(xt0, xt1, R, gx0, gh, nx, ny, u1):
    """First control coordinate by bilinear interpolation (d=2 grids)."""
    if math.sqrt(xt0 * xt0 + xt1 * xt1) > R:
        return 0.0
    s = (xt0 - gx0) / gh
    if s < 0.0:
        s = 0.0
    smax = nx - 1.000000000001
    if s > smax:
        s = smax
    ix = int(s)
    fx = s - ix
    s = (xt1 - gx0) / gh
    if s < 0.0:
        s = 0.0
    smax = ny - 1.000000000001
    if s > smax:
        s = smax
    iy = int(s)
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


def _static_priority(x, z, order, d, budget):
    for pos in range(d):
        i = order[pos]
        zi = x[i] if x[i] < budget else budget
        z[i] = zi
        budget -= zi


def _modified_priority(x, z, d, n, i0, cap, share, order):
    """Caps for the zero-abandonment prefix, static priority for the rest.

    ``order`` maps allocation position -> class index; cap/share are
    indexed by position.
    """
    totx = 0
    for i in range(d):
        totx += x[i]
    sum_min = 0
    for pos in range(i0):
        xi = x[order[pos]]
        sum_min += xi if xi < cap[pos] else cap[pos]
    prefix_excess = 0
    for pos in range(i0):
        i = order[pos]
        spill = n - sum_min - prefix_excess
        if spill < 0:
            spill = 0
        zi = int(math.floor(share[pos] + spill))
        if zi > x[i]:
            zi = x[i]
        z[i] = zi
        exc = x[i] - cap[pos]
        if exc > 0:
            prefix_excess += exc
    prefix_x = 0
    for pos in range(i0):
        prefix_x += x[order[pos]]
    for pos in range(i0, d):
        i = order[pos]
        budget = n - prefix_x
        if budget < 0:
            budget = 0
        z[i] = x[i] if x[i] < budget else budget
        prefix_x += x[i]
    # repair: enforce <e,z> = <e,x> ^ n exactly
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


def _policy_eval(plan, x, z):
    """Fill z given counts x.  Mirrors the compiled lane exactly."""
    d = plan.d
    kind = plan.pol_kind
    if kind == POL_STATIC:
        _static_priority(x, z, plan.pol_order, d, plan.n)
        return
    if kind == POL_CAPPED_STATIC:
        _static_priority(x, z, plan.pol_order, d, plan.pol_neff)
        return
    if kind == POL_MODIFIED:
        _modified_priority(x, z, d, plan.n, plan.pol_i0, plan.pol_cap,
                           plan.pol_share, plan.pol_order)
        return
    # markov control field: quantized split inside the inner region,
    # modified priority outside
    supx = 0.0
    for i in range(d):
        v = (x[i] - plan.nrho[i]) / plan.sqrt_n
        if v < 0.0:
            v = -v
        if v > supx:
            supx = v
    if supx > plan.pol_thr:
        _modified_priority(x, z, d, plan.n, plan.pol_i0, plan.pol_cap,
                           plan.pol_share, plan.pol_order)
        return
    totx = 0
    for i in range(d):
        totx += x[i]
    qtot = totx - plan.n
    if qtot <= 0:
        for i in range(d):
            z[i] = x[i]
        return
    xt0 = (x[0] - plan.nrho[0]) / plan.sqrt_n
    xt1 = (x[1] - plan.nrho[1]) / plan.sqrt_n
    u1 = _field_eval_u1(xt0, xt1, plan.pol_R, plan.grid_x0, plan.grid_h,
                        plan.grid_nx, plan.grid_ny, plan.grid_u1)
    q0 = int(math.floor(qtot * u1))
    q1 = qtot - q0
    # clamp to x, then push the shortfall back, last class first
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


def policy_eval(plan, x):
    """Debug entry point: evaluate the plan's policy at integer counts x."""
    xl = [int(v) for v in x]
    z = [0] * plan.d
    _policy_eval(plan, xl, z)
    return np.array(z, dtype=np.int64)


def run_queue(plan, rng):
    """Simulate the d-class many-server queue with service interruptions.

    Event loop with one pending renewal arrival per class, aggregated
    exponential races for services/abandonments (re-sampled after every
    event), and scheduled environment switches.  Service is frozen while
    the environment is down.  The policy is re-applied after every event.
    """
    d = plan.d
    n = plan.n
    lam = plan.lam
    mu = plan.mu
    gam = plan.gam
    t_end = plan.t_end
    burn_in = plan.burn_in
    n_batches = plan.n_batches
    alpha = plan.alpha
    cost_m = plan.cost_m
    half_m = 0.5 * plan.cost_m
    hist_max = plan.hist_max

    x = [int(v) for v in plan.x0]
    z = [0] * d
    q = [0] * d
    last_arr = [0.0] * d
    next_arr = [0.0] * d
    t = 0.0
    psi = 1
    down_start = 0.0
    cum_down = 0.0

    for i in range(d):
        if lam[i] > 0.0:
            if plan.arr_kind[i] == _USER:
                g = plan.arr_samplers[i](rng)
            else:
                g = _sample_dist(plan.arr_kind[i], plan.arr_k[i], plan.arr_nph[i],
                                 plan.arr_p[i], plan.arr_r[i], rng)
            next_arr[i] = g / lam[i]
        else:
            next_arr[i] = math.inf
    if plan.has_env:
        env_next = rng.standard_exponential() / plan.beta_u
    else:
        env_next = math.inf

    pol_callable = plan.pol_kind == POL_CALLABLE

    def _apply_policy():
        if pol_callable:
            h = [t - last_arr[i] for i in range(d)]
            kage = (t - down_start) if psi == 0 else 0.0
            zv = plan.pol_fn(x, h, psi, kage)
            for i in range(d):
                z[i] = int(zv[i])
        else:
            _policy_eval(plan, x, z)
        for i in range(d):
            q[i] = x[i] - z[i]

    _apply_policy()

    batch_w = (t_end - burn_in) / n_batches if n_batches > 0 else 0.0
    batch_dur = np.zeros(n_batches)
    batch_sx = np.zeros((n_batches, d))
    batch_sxx = np.zeros((n_batches, d))
    batch_sq = np.zeros((n_batches, d))
    batch_cost = np.zeros(n_batches)
    batch_down = np.zeros(n_batches)
    disc_cost = 0.0
    hist = np.zeros(hist_max + 1) if hist_max > 0 else np.zeros(1)
    count_arr = np.zeros(d, dtype=np.int64)
    count_svc = np.zeros(d, dtype=np.int64)
    count_abd = np.zeros(d, dtype=np.int64)
    count_env = np.zeros(2, dtype=np.int64)

    rec_on = bool(plan.record_events)
    max_rec = plan.max_records if rec_on else 1
    ev_t = np.zeros(max_rec)
    ev_kind = np.zeros(max_rec, dtype=np.int32)
    ev_x = np.zeros((max_rec, d), dtype=np.int64)
    ev_q = np.zeros((max_rec, d), dtype=np.int64)
    ev_psi = np.zeros(max_rec, dtype=np.int8)
    n_rec = 0
    if rec_on:
        ev_t[0] = 0.0
        ev_kind[0] = -1
        for i in range(d):
            ev_x[0, i] = x[i]
            ev_q[0, i] = q[i]
        ev_psi[0] = psi
        n_rec = 1

    snap_times = plan.snap_times
    n_snap = len(snap_times)
    snap_idx = 0
    snap_x = np.zeros((n_snap, d), dtype=np.int64)
    snap_z = np.zeros((n_snap, d), dtype=np.int64)
    snap_psi = np.zeros(n_snap, dtype=np.int8)
    snap_k = np.zeros(n_snap)
    snap_r = np.zeros(n_snap)
    snap_h = np.zeros((n_snap, d))
    snap_cdown = np.zeros(n_snap)

    n_events = 0
    truncated = 0
    max_events = plan.max_events

    while True:
        # exponential race over all service/abandonment channels
        rtot = 0.0
        if psi == 1:
            for i in range(d):
                rtot += mu[i] * z[i]
        for i in range(d):
            rtot += gam[i] * q[i]
        if rtot > 0.0:
            t_sa = t + rng.standard_exponential() / rtot
        else:
            t_sa = math.inf

        # next event: env beats arrivals beats service/abandonment on ties
        tnew = env_next
        ev = -2  # -2 env, -1 service/abandon, >=0 arrival class
        for i in range(d):
            if next_arr[i] < tnew:
                tnew = next_arr[i]
                ev = i
        if t_sa < tnew:
            tnew = t_sa
            ev = -1
        if ev == -2 and env_next == math.inf:
            tnew = math.inf

        seg_end = tnew if tnew < t_end else t_end

        # accumulate statistics over [t, seg_end)
        if seg_end > t:
            if psi == 0:
                cum_down += seg_end - t
            if alpha > 0.0:
                qn2 = 0.0
                for i in range(d):
                    qn2 += q[i] * q[i]
                if qn2 > 0.0:
                    disc_cost += qn2 ** half_m * (
                        math.exp(-alpha * t) - math.exp(-alpha * seg_end)) / alpha
            lo = t if t > burn_in else burn_in
            if seg_end > lo and n_batches > 0:
                qn2 = 0.0
                for i in range(d):
                    qn2 += q[i] * q[i]
                cost_rate = qn2 ** half_m if qn2 > 0.0 else 0.0
                totx = 0
                for i in range(d):
                    totx += x[i]
                while lo < seg_end:
                    b = int((lo - burn_in) / batch_w)
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
            # snapshots inside (t, seg_end]
            while snap_idx < n_snap and snap_times[snap_idx] <= seg_end:
                s = snap_times[snap_idx]
                if s >= t:
                    for i in range(d):
                        snap_x[snap_idx, i] = x[i]
                        snap_z[snap_idx, i] = z[i]
                        snap_h[snap_idx, i] = s - last_arr[i]
                    snap_psi[snap_idx] = psi
                    if psi == 0:
                        snap_k[snap_idx] = s - down_start
                        snap_r[snap_idx] = env_next - s
                        snap_cdown[snap_idx] = cum_down - (seg_end - s)
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

        # dispatch
        if ev == -2:
            if psi == 1:
                psi = 0
                down_start = t
                if plan.dt_kind == _USER:
                    dur = plan.dt_sampler(rng) / plan.theta_n
                else:
                    dur = _sample_dist(plan.dt_kind, plan.dt_k, plan.dt_nph,
                                       plan.dt_p, plan.dt_r, rng) / plan.theta_n
                env_next = t + dur
                count_env[0] += 1
                kind_code = EV_ENV_DOWN
            else:
                psi = 1
                env_next = t + rng.standard_exponential() / plan.beta_u
                count_env[1] += 1
                kind_code = EV_ENV_UP
        elif ev >= 0:
            i = ev
            x[i] += 1
            last_arr[i] = t
            if plan.arr_kind[i] == _USER:
                g = plan.arr_samplers[i](rng)
            else:
                g = _sample_dist(plan.arr_kind[i], plan.arr_k[i], plan.arr_nph[i],
                                 plan.arr_p[i], plan.arr_r[i], rng)
            next_arr[i] = t + g / lam[i]
            count_arr[i] += 1
            kind_code = 2 + i
        else:
            u = rng.random() * rtot
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
                else:
                    # numerically impossible unless rates degenerate
                    for i in range(d - 1, -1, -1):
                        if q[i] > 0 or (psi == 1 and z[i] > 0):
                            x[i] -= 1
                            count_abd[i] += 1
                            kind_code = 2 + 2 * d + i
                            break

        _apply_policy()

        n_events += 1
        if rec_on and n_rec < max_rec:
            ev_t[n_rec] = t
            ev_kind[n_rec] = kind_code
            for i in range(d):
                ev_x[n_rec, i] = x[i]
                ev_q[n_rec, i] = q[i]
            ev_psi[n_rec] = psi
            n_rec += 1
        if n_events >= max_events:
            truncated = 1
            break

    h_out = np.array([t - last_arr[i] for i in range(d)])
    k_out = (t - down_start) if psi == 0 else 0.0
    r_out = (env_next - t) if psi == 0 else 0.0
    return {
        "t": t,
        "X": np.array(x, dtype=np.int64),
        "Z": np.array(z, dtype=np.int64),
        "psi": psi,
        "K": k_out,
        "R": r_out,
        "H": h_out,
        "cum_down": cum_down,
        "n_events": n_events,
        "truncated": truncated,
        "batch_dur": batch_dur,
        "batch_sx": batch_sx,
        "batch_sxx": batch_sxx,
        "batch_sq": batch_sq,
        "batch_cost": batch_cost,
        "batch_down": batch_down,
        "disc_cost": disc_cost,
        "hist": hist,
        "count_arr": count_arr,
        "count_svc": count_svc,
        "count_abd": count_abd,
        "count_env": count_env,
        "ev_t": ev_t[:n_rec],
        "ev_kind": ev_kind[:n_rec],
        "ev_X": ev_x[:n_rec],
        "ev_Q": ev_q[:n_rec],
        "ev_psi": ev_psi[:n_rec],
        "snap_X": snap_x,
        "snap_Z": snap_z,
        "snap_psi": snap_psi,
        "snap_K": snap_k,
        "snap_R": snap_r,
        "snap_H": snap_h,
        "snap_cdown": snap_cdown,
    }


def run_diffusion(plan, rng):
    """Euler scheme for the controlled jump diffusion.

    Jump epochs are inserted into the time grid exactly; between jumps the
    state follows the Euler recursion with exact Brownian increments.
    """
    d = plan.d
    ell = plan.ell
    mu = plan.mu
    gam = plan.gam
    sig = plan.sig
    jdir = plan.jump_dir
    t_end = plan.t_end
    dt = plan.dt
    burn_in = plan.burn_in
    n_batches = plan.n_batches
    alpha = plan.alpha
    cost_m = plan.cost_m

    x = [float(v) for v in plan.x0]
    u = [float(v) for v in plan.ctrl_u]
    t = 0.0

    if plan.has_jumps:
        t_jump = rng.standard_exponential() / plan.beta
    else:
        t_jump = math.inf

    batch_w = (t_end - burn_in) / n_batches if n_batches > 0 else 0.0
    batch_dur = np.zeros(n_batches)
    batch_sx = np.zeros((n_batches, d))
    batch_sxx = np.zeros((n_batches, d))
    batch_cost = np.zeros(n_batches)
    disc_cost = 0.0
    n_jumps = 0
    max_jlog = plan.max_jumps_log
    jump_t = np.zeros(max_jlog)
    jump_y = np.zeros(max_jlog)

    stride = plan.record_stride
    rec_on = stride > 0
    max_rec = plan.max_records if rec_on else 1
    rec_t = np.zeros(max_rec)
    rec_x = np.zeros((max_rec, d))
    rec_u = np.zeros((max_rec, d))
    n_rec = 0
    step_no = 0

    callable_ctrl = plan.ctrl_kind == 2

    while t < t_end - 1e-14:
        # control at the current state
        if callable_ctrl:
            uvec = plan.ctrl_fn(np.array(x))
            for i in range(d):
                u[i] = float(uvec[i])
        elif plan.ctrl_kind == 1:
            u1 = _field_eval_u1(x[0], x[1], plan.pol_R, plan.grid_x0, plan.grid_h,
                                plan.grid_nx, plan.grid_ny, plan.grid_u1)
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

        # running cost with the pre-step state
        ex = 0.0
        for i in range(d):
            ex += x[i]
        if ex > 0.0:
            un = 0.0
            for i in range(d):
                un += u[i] * u[i]
            rate = (ex * math.sqrt(un)) ** cost_m
        else:
            rate = 0.0
        if alpha > 0.0:
            disc_cost += rate * (math.exp(-alpha * t)
                                 - math.exp(-alpha * (t + dt_step))) / alpha
        if n_batches > 0 and t >= burn_in:
            b = int((t - burn_in) / batch_w)
            if b >= n_batches:
                b = n_batches - 1
            batch_dur[b] += dt_step
            for i in range(d):
                batch_sx[b, i] += dt_step * x[i]
                batch_sxx[b, i] += dt_step * x[i] * x[i]
            batch_cost[b] += dt_step * rate

        # Euler step: b(x,u) = ell - M(x - <e,x>^+ u) - <e,x>^+ Gamma u
        exp_pos = ex if ex > 0.0 else 0.0
        sdt = math.sqrt(dt_step)
        for i in range(d):
            bi = ell[i] - mu[i] * (x[i] - exp_pos * u[i]) - exp_pos * gam[i] * u[i]
            x[i] += bi * dt_step + sig[i] * sdt * rng.standard_normal()
        t += dt_step
        step_no += 1

        if hit:
            if plan.dt_kind == _USER:
                y = plan.dt_sampler(rng) / plan.theta
            else:
                y = _sample_dist(plan.dt_kind, plan.dt_k, plan.dt_nph, plan.dt_p,
                                 plan.dt_r, rng) / plan.theta
            for i in range(d):
                x[i] += jdir[i] * y
            if n_jumps < max_jlog:
                jump_t[n_jumps] = t
                jump_y[n_jumps] = y
            n_jumps += 1
            t_jump = t + rng.standard_exponential() / plan.beta

    return {
        "t": t,
        "X": np.array(x),
        "batch_dur": batch_dur,
        "batch_sx": batch_sx,
        "batch_sxx": batch_sxx,
        "batch_cost": batch_cost,
        "disc_cost": disc_cost,
        "n_jumps": n_jumps,
        "jump_t": jump_t[:min(n_jumps, max_jlog)],
        "jump_y": jump_y[:min(n_jumps, max_jlog)],
        "rec_t": rec_t[:n_rec],
        "rec_X": rec_x[:n_rec],
        "rec_U": rec_u[:n_rec],
    }
