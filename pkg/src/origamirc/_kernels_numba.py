"""Compiled inner loops: force assembly, RK4 stepping, and sim drivers.

All functions here are ``@njit`` and operate on plain arrays unpacked from an
``OrigamiMesh``.  A pure-numpy twin with identical signatures lives in
``_kernels_numpy``; the active lane is chosen in ``backend``.

Per-hinge ``target``/``kper`` arrays already include actuated-crease
overrides, so passive bending and actuation share one loop.  Constraint
codes per node: 0 free, 1 pinned (fully fixed), 2 anchored (x-y velocity
pinned, z free).
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True, fastmath=True, error_model="numpy")
def _assemble(pos, vel, masses, tn0, tn1, rest, ea,
              hp, hq, hr, hv, kper, target,
              nbr_indptr, nbr_idx, inc_indptr, inc_idx,
              zeta, gx, gy, gz, grav_on, k_ground, c_ground,
              F, ks_cur):
    n = pos.shape[0]
    for p in range(n):
        F[p, 0] = 0.0
        F[p, 1] = 0.0
        F[p, 2] = 0.0

    # bar stretching; axial stiffness EA/l updated from the current length
    for t in range(tn0.shape[0]):
        i = tn0[t]
        j = tn1[t]
        dx = pos[i, 0] - pos[j, 0]
        dy = pos[i, 1] - pos[j, 1]
        dz = pos[i, 2] - pos[j, 2]
        l = math.sqrt(dx * dx + dy * dy + dz * dz)
        ks = ea[t] / l
        ks_cur[t] = ks
        c = -ks * (l - rest[t]) / l
        fx = c * dx
        fy = c * dy
        fz = c * dz
        F[i, 0] += fx
        F[i, 1] += fy
        F[i, 2] += fz
        F[j, 0] -= fx
        F[j, 1] -= fy
        F[j, 2] -= fz

    # hinge bending (passive creases, facets, and actuated creases alike)
    for h in range(hp.shape[0]):
        p = hp[h]
        q = hq[h]
        r = hr[h]
        v = hv[h]
        ex = pos[p, 0] - pos[q, 0]
        ey = pos[p, 1] - pos[q, 1]
        ez = pos[p, 2] - pos[q, 2]
        rqx = pos[r, 0] - pos[q, 0]
        rqy = pos[r, 1] - pos[q, 1]
        rqz = pos[r, 2] - pos[q, 2]
        pvx = pos[p, 0] - pos[v, 0]
        pvy = pos[p, 1] - pos[v, 1]
        pvz = pos[p, 2] - pos[v, 2]
        mx = rqy * ez - rqz * ey
        my = rqz * ex - rqx * ez
        mz = rqx * ey - rqy * ex
        nx = ey * pvz - ez * pvy
        ny = ez * pvx - ex * pvz
        nz = ex * pvy - ey * pvx
        m2 = mx * mx + my * my + mz * mz
        n2 = nx * nx + ny * ny + nz * nz
        L2 = ex * ex + ey * ey + ez * ez
        L = math.sqrt(L2)
        c = (mx * nx + my * ny + mz * nz) / math.sqrt(m2 * n2)
        if c > 1.0:
            c = 1.0
        elif c < -1.0:
            c = -1.0
        d = mx * pvx + my * pvy + mz * pvz
        phi = math.acos(c)
        if d < 0.0:
            phi = -phi
        if phi < 0.0:
            phi += TWO_PI
        coef = -kper[h] * L * (phi - target[h])
        sr = L / m2
        sv = -L / n2
        grx = sr * mx
        gry = sr * my
        grz = sr * mz
        gvx = sv * nx
        gvy = sv * ny
        gvz = sv * nz
        A = (pvx * ex + pvy * ey + pvz * ez) / L2 - 1.0
        B = -(rqx * ex + rqy * ey + rqz * ez) / L2
        gpx = A * gvx + B * grx
        gpy = A * gvy + B * gry
        gpz = A * gvz + B * grz
        gqx = -(gpx + grx + gvx)
        gqy = -(gpy + gry + gvy)
        gqz = -(gpz + grz + gvz)
        F[p, 0] += coef * gpx
        F[p, 1] += coef * gpy
        F[p, 2] += coef * gpz
        F[q, 0] += coef * gqx
        F[q, 1] += coef * gqy
        F[q, 2] += coef * gqz
        F[r, 0] += coef * grx
        F[r, 1] += coef * gry
        F[r, 2] += coef * grz
        F[v, 0] += coef * gvx
        F[v, 1] += coef * gvy
        F[v, 2] += coef * gvz

    # damping against the mean neighbor velocity (rigid motion undamped)
    if zeta > 0.0:
        for p in range(n):
            i0 = nbr_indptr[p]
            i1 = nbr_indptr[p + 1]
            if i1 <= i0:
                continue
            vax = 0.0
            vay = 0.0
            vaz = 0.0
            for k in range(i0, i1):
                q = nbr_idx[k]
                vax += vel[q, 0]
                vay += vel[q, 1]
                vaz += vel[q, 2]
            cnt = i1 - i0
            vax /= cnt
            vay /= cnt
            vaz /= cnt
            ksm = 0.0
            j0 = inc_indptr[p]
            j1 = inc_indptr[p + 1]
            for k in range(j0, j1):
                ksm += ks_cur[inc_idx[k]]
            ksm /= j1 - j0
            cd = 2.0 * zeta * math.sqrt(ksm * masses[p])
            F[p, 0] -= cd * (vel[p, 0] - vax)
            F[p, 1] -= cd * (vel[p, 1] - vay)
            F[p, 2] -= cd * (vel[p, 2] - vaz)

    if grav_on:
        for p in range(n):
            F[p, 0] += masses[p] * gx
            F[p, 1] += masses[p] * gy
            F[p, 2] += masses[p] * gz

    # penalty ground contact at z = 0: vertical spring-damper plus viscous
    # tangential friction while penetrating
    if k_ground > 0.0:
        for p in range(n):
            if pos[p, 2] < 0.0:
                F[p, 2] += -k_ground * pos[p, 2] - c_ground * vel[p, 2]
                F[p, 0] += -c_ground * vel[p, 0]
                F[p, 1] += -c_ground * vel[p, 1]


@njit(cache=True, fastmath=True, error_model="numpy")
def _accel(pos, vel, masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
           nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
           gx, gy, gz, grav_on, k_ground, c_ground, constraint, F, ks_cur,
           acc):
    _assemble(pos, vel, masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper,
              target, nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
              gx, gy, gz, grav_on, k_ground, c_ground, F, ks_cur)
    for p in range(pos.shape[0]):
        c = constraint[p]
        if c == 1:
            acc[p, 0] = 0.0
            acc[p, 1] = 0.0
            acc[p, 2] = 0.0
        else:
            inv = 1.0 / masses[p]
            acc[p, 0] = F[p, 0] * inv
            acc[p, 1] = F[p, 1] * inv
            acc[p, 2] = F[p, 2] * inv
            if c == 2:
                acc[p, 0] = 0.0
                acc[p, 1] = 0.0


@njit(cache=True, fastmath=True, error_model="numpy")
def _rk4_step(pos, vel, dt, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
              kper, target, nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
              gx, gy, gz, grav_on, k_ground, c_ground, constraint,
              F, ks_cur, a1, a2, a3, a4, xs, vs):
    n = pos.shape[0]
    half = 0.5 * dt
    _accel(pos, vel, masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
           nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta, gx, gy, gz,
           grav_on, k_ground, c_ground, constraint, F, ks_cur, a1)
    for p in range(n):
        for k in range(3):
            xs[p, k] = pos[p, k] + half * vel[p, k]
            vs[p, k] = vel[p, k] + half * a1[p, k]
    # stash stage velocities va, vb in a-slots once consumed
    va = np.empty_like(vel)
    vb = np.empty_like(vel)
    for p in range(n):
        for k in range(3):
            va[p, k] = vs[p, k]
    _accel(xs, vs, masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
           nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta, gx, gy, gz,
           grav_on, k_ground, c_ground, constraint, F, ks_cur, a2)
    for p in range(n):
        for k in range(3):
            xs[p, k] = pos[p, k] + half * va[p, k]
            vs[p, k] = vel[p, k] + half * a2[p, k]
            vb[p, k] = vs[p, k]
    _accel(xs, vs, masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
           nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta, gx, gy, gz,
           grav_on, k_ground, c_ground, constraint, F, ks_cur, a3)
    for p in range(n):
        for k in range(3):
            xs[p, k] = pos[p, k] + dt * vb[p, k]
            vs[p, k] = vel[p, k] + dt * a3[p, k]
    _accel(xs, vs, masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
           nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta, gx, gy, gz,
           grav_on, k_ground, c_ground, constraint, F, ks_cur, a4)
    sixth = dt / 6.0
    for p in range(n):
        if constraint[p] == 1:
            continue
        for k in range(3):
            pos[p, k] += sixth * (vel[p, k] + 2.0 * va[p, k]
                                  + 2.0 * vb[p, k] + vs[p, k])
            vel[p, k] += sixth * (a1[p, k] + 2.0 * a2[p, k]
                                  + 2.0 * a3[p, k] + a4[p, k])
        if constraint[p] == 2:
            vel[p, 0] = 0.0
            vel[p, 1] = 0.0


@njit(cache=True, fastmath=True, error_model="numpy")
def _phis_into(pos, hp, hq, hr, hv, idx, out):
    for k in range(idx.shape[0]):
        h = idx[k]
        p = hp[h]
        q = hq[h]
        r = hr[h]
        v = hv[h]
        ex = pos[p, 0] - pos[q, 0]
        ey = pos[p, 1] - pos[q, 1]
        ez = pos[p, 2] - pos[q, 2]
        rqx = pos[r, 0] - pos[q, 0]
        rqy = pos[r, 1] - pos[q, 1]
        rqz = pos[r, 2] - pos[q, 2]
        pvx = pos[p, 0] - pos[v, 0]
        pvy = pos[p, 1] - pos[v, 1]
        pvz = pos[p, 2] - pos[v, 2]
        mx = rqy * ez - rqz * ey
        my = rqz * ex - rqx * ez
        mz = rqx * ey - rqy * ex
        nx = ey * pvz - ez * pvy
        ny = ez * pvx - ex * pvz
        nz = ex * pvy - ey * pvx
        m2 = mx * mx + my * my + mz * mz
        n2 = nx * nx + ny * ny + nz * nz
        c = (mx * nx + my * ny + mz * nz) / math.sqrt(m2 * n2)
        if c > 1.0:
            c = 1.0
        elif c < -1.0:
            c = -1.0
        d = mx * pvx + my * pvy + mz * pvz
        phi = math.acos(c)
        if d < 0.0:
            phi = -phi
        if phi < 0.0:
            phi += TWO_PI
        out[k] = phi


@njit(cache=True, fastmath=True, error_model="numpy")
def advance(pos, vel, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
            kper, target, nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
            gx, gy, gz, grav_on, k_ground, c_ground, constraint,
            dt, n_sub):
    """Advance ``n_sub`` RK4 steps in place with fixed per-hinge targets."""
    n = pos.shape[0]
    F = np.empty((n, 3))
    ks_cur = np.empty(tn0.shape[0])
    a1 = np.empty((n, 3))
    a2 = np.empty((n, 3))
    a3 = np.empty((n, 3))
    a4 = np.empty((n, 3))
    xs = np.empty((n, 3))
    vs = np.empty((n, 3))
    for _ in range(n_sub):
        _rk4_step(pos, vel, dt, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
                  kper, target, nbr_indptr, nbr_idx, inc_indptr, inc_idx,
                  zeta, gx, gy, gz, grav_on, k_ground, c_ground, constraint,
                  F, ks_cur, a1, a2, a3, a4, xs, vs)


@njit(cache=True, fastmath=True, error_model="numpy")
def run_open(pos0, vel0, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
             kper0, hrest, nbr_indptr, nbr_idx, inc_indptr, inc_idx,
             constraint, zeta, gx, gy, gz, grav_on, k_ground, c_ground,
             dt, n_steps, stride, act_idx, act_kper, act_targets, sensor_idx):
    """Open-loop run: per-step actuation targets are given up front.

    Returns (times, phi, pos, vel, diverged_step); diverged_step is -1 on a
    clean run.
    """
    n = pos0.shape[0]
    pos = pos0.copy()
    vel = vel0.copy()
    kper = kper0.copy()
    target = hrest.copy()
    for k in range(act_idx.shape[0]):
        kper[act_idx[k]] = act_kper[k]
    n_rec = n_steps // stride + 1
    n_sens = sensor_idx.shape[0]
    times = np.empty(n_rec)
    phi = np.empty((n_rec, n_sens))
    F = np.empty((n, 3))
    ks_cur = np.empty(tn0.shape[0])
    a1 = np.empty((n, 3))
    a2 = np.empty((n, 3))
    a3 = np.empty((n, 3))
    a4 = np.empty((n, 3))
    xs = np.empty((n, 3))
    vs = np.empty((n, 3))
    times[0] = 0.0
    _phis_into(pos, hp, hq, hr, hv, sensor_idx, phi[0])
    row = 1
    for s in range(n_steps):
        for k in range(act_idx.shape[0]):
            target[act_idx[k]] = act_targets[s, k]
        _rk4_step(pos, vel, dt, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
                  kper, target, nbr_indptr, nbr_idx, inc_indptr, inc_idx,
                  zeta, gx, gy, gz, grav_on, k_ground, c_ground, constraint,
                  F, ks_cur, a1, a2, a3, a4, xs, vs)
        if (s + 1) % stride == 0:
            ok = True
            for p in range(n):
                for k in range(3):
                    if not math.isfinite(pos[p, k]):
                        ok = False
            if not ok:
                return times, phi, pos, vel, s
            times[row] = (s + 1) * dt
            _phis_into(pos, hp, hq, hr, hv, sensor_idx, phi[row])
            row += 1
    return times, phi, pos, vel, -1


@njit(cache=True, fastmath=True, error_model="numpy")
def run_closed(pos0, vel0, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
               kper0, hrest, nbr_indptr, nbr_idx, inc_indptr, inc_idx,
               constraint0, zeta, gx, gy, gz, grav_on, k_ground, c_ground,
               dt, n_steps, stride,
               in_idx, in_kper, in_targets,
               fb_idx, fb_w, fb_group, fb_kper,
               w_bias, w_out, sensor_idx,
               outage_s0, outage_s1, bound,
               anc_hinge, anc_sign, anc_p, anc_q, anc_thresh, anc_hyst,
               engaged0):
    """Closed-loop run: outputs are read out from the sensor creases each
    control step and fed back through tanh to the feedback creases.

    Supports an optional precomputed input-crease schedule, a sensor/actuator
    outage window [outage_s0, outage_s1) in steps, and fold-activated ground
    anchors.  Returns (times, phi, z, centroid, anchor_mask, pos, vel,
    engaged, diverged_step).
    """
    n = pos0.shape[0]
    pos = pos0.copy()
    vel = vel0.copy()
    constraint = constraint0.copy()
    engaged = engaged0.copy()
    kper = kper0.copy()
    target = hrest.copy()
    for k in range(in_idx.shape[0]):
        kper[in_idx[k]] = in_kper[k]
    for k in range(fb_idx.shape[0]):
        kper[fb_idx[k]] = fb_kper[k]
    n_ch = w_bias.shape[0]
    n_sens = sensor_idx.shape[0]
    n_anc = anc_hinge.shape[0]
    n_rec = n_steps // stride + 1
    times = np.empty(n_rec)
    phi = np.empty((n_rec, n_sens))
    zrec = np.empty((n_rec, n_ch))
    centroid = np.empty((n_rec, 3))
    anc_mask = np.zeros(n_rec, dtype=np.int64)
    sens_buf = np.empty(n_sens)
    anc_buf = np.empty(n_anc)
    z = np.empty(n_ch)
    F = np.empty((n, 3))
    ks_cur = np.empty(tn0.shape[0])
    a1 = np.empty((n, 3))
    a2 = np.empty((n, 3))
    a3 = np.empty((n, 3))
    a4 = np.empty((n, 3))
    xs = np.empty((n, 3))
    vs = np.empty((n, 3))
    anchor_count = np.zeros(n, dtype=np.int64)
    for a in range(n_anc):
        if engaged[a]:
            anchor_count[anc_p[a]] += 1
            anchor_count[anc_q[a]] += 1
    for p in range(n):
        if constraint[p] == 0 and anchor_count[p] > 0:
            constraint[p] = 2

    # record row 0
    _phis_into(pos, hp, hq, hr, hv, sensor_idx, sens_buf)
    in_outage = outage_s0 <= 0 < outage_s1
    for c in range(n_ch):
        acc = 0.0
        if not in_outage:
            acc = w_bias[c]
            for i in range(n_sens):
                acc += w_out[c, i] * sens_buf[i]
        zrec[0, c] = acc
    times[0] = 0.0
    for i in range(n_sens):
        phi[0, i] = sens_buf[i]
    cx = 0.0
    cy = 0.0
    cz = 0.0
    for p in range(n):
        cx += pos[p, 0]
        cy += pos[p, 1]
        cz += pos[p, 2]
    centroid[0, 0] = cx / n
    centroid[0, 1] = cy / n
    centroid[0, 2] = cz / n
    row = 1

    for s in range(n_steps):
        if s % stride == 0:
            in_outage = outage_s0 <= s < outage_s1
            _phis_into(pos, hp, hq, hr, hv, sensor_idx, sens_buf)
            for c in range(n_ch):
                acc = 0.0
                if not in_outage:
                    acc = w_bias[c]
                    for i in range(n_sens):
                        acc += w_out[c, i] * sens_buf[i]
                z[c] = acc
                if abs(acc) > bound or not math.isfinite(acc):
                    return (times, phi, zrec, centroid, anc_mask, pos, vel,
                            engaged, s)
            for k in range(fb_idx.shape[0]):
                h = fb_idx[k]
                if in_outage:
                    target[h] = hrest[h]
                else:
                    target[h] = hrest[h] + fb_w[k] * math.tanh(z[fb_group[k]])
            # fold-activated anchors engage/release with hysteresis
            if n_anc > 0:
                _phis_into(pos, hp, hq, hr, hv, anc_hinge, anc_buf)
                for a in range(n_anc):
                    depth = (hrest[anc_hinge[a]] - anc_buf[a]) * anc_sign[a]
                    if engaged[a]:
                        if depth < anc_thresh - anc_hyst:
                            engaged[a] = False
                            anchor_count[anc_p[a]] -= 1
                            anchor_count[anc_q[a]] -= 1
                    else:
                        if depth > anc_thresh:
                            engaged[a] = True
                            anchor_count[anc_p[a]] += 1
                            anchor_count[anc_q[a]] += 1
                for p in range(n):
                    if constraint[p] == 1:
                        continue
                    if anchor_count[p] > 0:
                        if constraint[p] != 2:
                            constraint[p] = 2
                            vel[p, 0] = 0.0
                            vel[p, 1] = 0.0
                    else:
                        constraint[p] = 0
        for k in range(in_idx.shape[0]):
            target[in_idx[k]] = in_targets[s, k]
        _rk4_step(pos, vel, dt, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
                  kper, target, nbr_indptr, nbr_idx, inc_indptr, inc_idx,
                  zeta, gx, gy, gz, grav_on, k_ground, c_ground, constraint,
                  F, ks_cur, a1, a2, a3, a4, xs, vs)
        if (s + 1) % stride == 0:
            ok = True
            for p in range(n):
                for k in range(3):
                    if not math.isfinite(pos[p, k]):
                        ok = False
            if not ok:
                return (times, phi, zrec, centroid, anc_mask, pos, vel,
                        engaged, s)
            times[row] = (s + 1) * dt
            _phis_into(pos, hp, hq, hr, hv, sensor_idx, sens_buf)
            rec_outage = outage_s0 <= s + 1 < outage_s1
            for c in range(n_ch):
                acc = 0.0
                if not rec_outage:
                    acc = w_bias[c]
                    for i in range(n_sens):
                        acc += w_out[c, i] * sens_buf[i]
                zrec[row, c] = acc
            for i in range(n_sens):
                phi[row, i] = sens_buf[i]
            cx = 0.0
            cy = 0.0
            cz = 0.0
            for p in range(n):
                cx += pos[p, 0]
                cy += pos[p, 1]
                cz += pos[p, 2]
            centroid[row, 0] = cx / n
            centroid[row, 1] = cy / n
            centroid[row, 2] = cz / n
            mask = 0
            for a in range(n_anc):
                if engaged[a]:
                    mask |= 1 << a
            anc_mask[row] = mask
            row += 1
    return times, phi, zrec, centroid, anc_mask, pos, vel, engaged, -1
