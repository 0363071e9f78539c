"""Pure-numpy fallback for the compiled kernels.

Mirrors the public functions of ``_kernels_numba`` (``advance``,
``run_open``, ``run_closed``) with identical signatures and semantics, using
vectorized force assembly and a Python time loop.  Slower, but dependency-free
beyond numpy; selected with ``ORIGAMIRC_BACKEND=numpy``.
"""

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def _phis(pos, hp, hq, hr, hv, idx):
    p = pos[hp[idx]]
    q = pos[hq[idx]]
    r = pos[hr[idx]]
    v = pos[hv[idx]]
    e = p - q
    m = np.cross(r - q, e)
    nv = np.cross(e, p - v)
    c = np.einsum("ij,ij->i", m, nv) / np.sqrt(
        np.einsum("ij,ij->i", m, m) * np.einsum("ij,ij->i", nv, nv))
    np.clip(c, -1.0, 1.0, out=c)
    d = np.einsum("ij,ij->i", m, p - v)
    eta = np.where(d < 0.0, -1.0, 1.0)
    return (eta * np.arccos(c)) % TWO_PI


def _assemble(pos, vel, masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper,
              target, nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
              gx, gy, gz, grav_on, k_ground, c_ground):
    n = pos.shape[0]
    F = np.zeros((n, 3))

    d = pos[tn0] - pos[tn1]
    l = np.linalg.norm(d, axis=1)
    ks_cur = ea / l
    f = (-ks_cur * (l - rest) / l)[:, None] * d
    np.add.at(F, tn0, f)
    np.add.at(F, tn1, -f)

    p = pos[hp]
    q = pos[hq]
    r = pos[hr]
    v = pos[hv]
    e = p - q
    rq = r - q
    pv = p - v
    m = np.cross(rq, e)
    nv = np.cross(e, pv)
    m2 = np.einsum("ij,ij->i", m, m)
    n2 = np.einsum("ij,ij->i", nv, nv)
    L2 = np.einsum("ij,ij->i", e, e)
    L = np.sqrt(L2)
    c = np.einsum("ij,ij->i", m, nv) / np.sqrt(m2 * n2)
    np.clip(c, -1.0, 1.0, out=c)
    sd = np.einsum("ij,ij->i", m, pv)
    eta = np.where(sd < 0.0, -1.0, 1.0)
    phi = (eta * np.arccos(c)) % TWO_PI
    coef = -kper * L * (phi - target)
    g_r = (L / m2)[:, None] * m
    g_v = -(L / n2)[:, None] * nv
    A = np.einsum("ij,ij->i", pv, e) / L2 - 1.0
    B = -np.einsum("ij,ij->i", rq, e) / L2
    g_p = A[:, None] * g_v + B[:, None] * g_r
    g_q = -(g_p + g_r + g_v)
    cc = coef[:, None]
    np.add.at(F, hp, cc * g_p)
    np.add.at(F, hq, cc * g_q)
    np.add.at(F, hr, cc * g_r)
    np.add.at(F, hv, cc * g_v)

    if zeta > 0.0:
        deg = np.diff(nbr_indptr)
        v_avg = np.add.reduceat(vel[nbr_idx], nbr_indptr[:-1], axis=0) \
            / deg[:, None]
        inc_deg = np.diff(inc_indptr)
        ks_node = np.add.reduceat(ks_cur[inc_idx], inc_indptr[:-1]) / inc_deg
        cd = 2.0 * zeta * np.sqrt(ks_node * masses)
        F -= cd[:, None] * (vel - v_avg)

    if grav_on:
        F += masses[:, None] * np.array([gx, gy, gz])

    if k_ground > 0.0:
        pen = pos[:, 2] < 0.0
        F[pen, 2] += -k_ground * pos[pen, 2] - c_ground * vel[pen, 2]
        # viscous tangential friction while in contact
        F[pen, 0:2] += -c_ground * vel[pen, 0:2]
    return F


def _accel(pos, vel, args, constraint):
    F = _assemble(pos, vel, *args)
    acc = F / args[0][:, None]
    acc[constraint == 1] = 0.0
    acc[constraint == 2, 0:2] = 0.0
    return acc


def _rk4_step(pos, vel, dt, args, constraint):
    half = 0.5 * dt
    a1 = _accel(pos, vel, args, constraint)
    va = vel + half * a1
    a2 = _accel(pos + half * vel, va, args, constraint)
    vb = vel + half * a2
    a3 = _accel(pos + half * va, vb, args, constraint)
    vc = vel + dt * a3
    a4 = _accel(pos + dt * vb, vc, args, constraint)
    free = constraint != 1
    pos[free] += (dt / 6.0) * (vel + 2.0 * va + 2.0 * vb + vc)[free]
    vel[free] += (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)[free]
    vel[constraint == 2, 0:2] = 0.0


def advance(pos, vel, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
            kper, target, nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
            gx, gy, gz, grav_on, k_ground, c_ground, constraint,
            dt, n_sub):
    """Advance ``n_sub`` RK4 steps in place with fixed per-hinge targets."""
    args = (masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
            nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
            gx, gy, gz, grav_on, k_ground, c_ground)
    for _ in range(n_sub):
        _rk4_step(pos, vel, dt, args, constraint)


def run_open(pos0, vel0, masses, tn0, tn1, rest, ea, hp, hq, hr, hv,
             kper0, hrest, nbr_indptr, nbr_idx, inc_indptr, inc_idx,
             constraint, zeta, gx, gy, gz, grav_on, k_ground, c_ground,
             dt, n_steps, stride, act_idx, act_kper, act_targets, sensor_idx):
    pos = pos0.copy()
    vel = vel0.copy()
    kper = kper0.copy()
    target = hrest.copy()
    kper[act_idx] = act_kper
    args = (masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
            nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
            gx, gy, gz, grav_on, k_ground, c_ground)
    n_rec = n_steps // stride + 1
    times = np.empty(n_rec)
    phi = np.empty((n_rec, sensor_idx.shape[0]))
    times[0] = 0.0
    phi[0] = _phis(pos, hp, hq, hr, hv, sensor_idx)
    row = 1
    for s in range(n_steps):
        target[act_idx] = act_targets[s]
        _rk4_step(pos, vel, dt, args, constraint)
        if (s + 1) % stride == 0:
            if not np.all(np.isfinite(pos)):
                return times, phi, pos, vel, s
            times[row] = (s + 1) * dt
            phi[row] = _phis(pos, hp, hq, hr, hv, sensor_idx)
            row += 1
    return times, phi, pos, vel, -1


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
    pos = pos0.copy()
    vel = vel0.copy()
    constraint = constraint0.copy()
    engaged = engaged0.copy()
    kper = kper0.copy()
    target = hrest.copy()
    kper[in_idx] = in_kper
    kper[fb_idx] = fb_kper
    args = (masses, tn0, tn1, rest, ea, hp, hq, hr, hv, kper, target,
            nbr_indptr, nbr_idx, inc_indptr, inc_idx, zeta,
            gx, gy, gz, grav_on, k_ground, c_ground)
    n = pos.shape[0]
    n_ch = w_bias.shape[0]
    n_anc = anc_hinge.shape[0]
    n_rec = n_steps // stride + 1
    times = np.empty(n_rec)
    phi = np.empty((n_rec, sensor_idx.shape[0]))
    zrec = np.empty((n_rec, n_ch))
    centroid = np.empty((n_rec, 3))
    anc_mask = np.zeros(n_rec, dtype=np.int64)
    anchor_count = np.zeros(n, dtype=np.int64)
    for a in np.flatnonzero(engaged):
        anchor_count[anc_p[a]] += 1
        anchor_count[anc_q[a]] += 1
    constraint[(constraint == 0) & (anchor_count > 0)] = 2

    def readout(in_outage):
        sens = _phis(pos, hp, hq, hr, hv, sensor_idx)
        if in_outage:
            return sens, np.zeros_like(w_bias)
        return sens, w_bias + w_out @ sens

    sens, z = readout(outage_s0 <= 0 < outage_s1)
    times[0] = 0.0
    phi[0] = sens
    zrec[0] = z
    centroid[0] = pos.mean(axis=0)
    row = 1
    for s in range(n_steps):
        if s % stride == 0:
            in_outage = outage_s0 <= s < outage_s1
            sens, z = readout(in_outage)
            if np.any(~np.isfinite(z)) or np.any(np.abs(z) > bound):
                return (times, phi, zrec, centroid, anc_mask, pos, vel,
                        engaged, s)
            if in_outage:
                target[fb_idx] = hrest[fb_idx]
            else:
                target[fb_idx] = hrest[fb_idx] \
                    + fb_w * np.tanh(z[fb_group])
            if n_anc > 0:
                anc_phi = _phis(pos, hp, hq, hr, hv, anc_hinge)
                depth = (hrest[anc_hinge] - anc_phi) * anc_sign
                release = engaged & (depth < anc_thresh - anc_hyst)
                engage = (~engaged) & (depth > anc_thresh)
                for a in np.flatnonzero(release):
                    engaged[a] = False
                    anchor_count[anc_p[a]] -= 1
                    anchor_count[anc_q[a]] -= 1
                for a in np.flatnonzero(engage):
                    engaged[a] = True
                    anchor_count[anc_p[a]] += 1
                    anchor_count[anc_q[a]] += 1
                newly = (constraint != 1) & (anchor_count > 0) \
                    & (constraint != 2)
                vel[newly, 0:2] = 0.0
                constraint[(constraint != 1) & (anchor_count > 0)] = 2
                constraint[(constraint == 2) & (anchor_count == 0)] = 0
        target[in_idx] = in_targets[s]
        _rk4_step(pos, vel, dt, args, constraint)
        if (s + 1) % stride == 0:
            if not np.all(np.isfinite(pos)):
                return (times, phi, zrec, centroid, anc_mask, pos, vel,
                        engaged, s)
            times[row] = (s + 1) * dt
            sens, z = readout(outage_s0 <= s + 1 < outage_s1)
            phi[row] = sens
            zrec[row] = z
            centroid[row] = pos.mean(axis=0)
            mask = 0
            for a in np.flatnonzero(engaged):
                mask |= 1 << int(a)
            anc_mask[row] = mask
            row += 1
    return times, phi, zrec, centroid, anc_mask, pos, vel, engaged, -1
