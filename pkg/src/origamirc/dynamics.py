"""Nodal force assembly, boundary conditions, and time integration.

Equations of motion m_p x''_p = F_p with F_p summing bar stretching, hinge
bending, relative-velocity damping, crease actuation, and gravity.  Time
integration is fixed-step classical RK4 (dt configurable, 1e-3 s default).
"""

from __future__ import annotations

import weakref
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np

from .backend import kernels
from .errors import GeometryError, SimulationDiverged, DesignError
from .mesh import OrigamiMesh, all_dihedrals

PackedMesh = namedtuple("PackedMesh", [
    "masses", "tn0", "tn1", "rest", "ea", "hp", "hq", "hr", "hv",
    "kper", "hrest", "nbr_indptr", "nbr_idx", "inc_indptr", "inc_idx"])

_pack_cache = weakref.WeakKeyDictionary()


def pack_mesh(mesh: OrigamiMesh) -> PackedMesh:
    """Unpack a mesh into the contiguous arrays the kernels consume.

    Also builds CSR adjacency (truss neighbors per node, incident trusses per
    node) used by the damping model.  Cached per mesh instance.
    """
    packed = _pack_cache.get(mesh)
    if packed is not None:
        return packed
    n = mesh.n_nodes
    tn = mesh.truss_nodes
    deg = np.bincount(tn.ravel(), minlength=n)
    if np.any(deg == 0):
        raise GeometryError("mesh has nodes with no incident trusses")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    nbr_idx = np.empty(2 * tn.shape[0], dtype=np.int64)
    inc_idx = np.empty(2 * tn.shape[0], dtype=np.int64)
    fill = indptr[:-1].copy()
    for t, (i, j) in enumerate(tn):
        nbr_idx[fill[i]] = j
        inc_idx[fill[i]] = t
        fill[i] += 1
        nbr_idx[fill[j]] = i
        inc_idx[fill[j]] = t
        fill[j] += 1
    packed = PackedMesh(
        masses=np.ascontiguousarray(mesh.masses),
        tn0=np.ascontiguousarray(tn[:, 0]),
        tn1=np.ascontiguousarray(tn[:, 1]),
        rest=np.ascontiguousarray(mesh.truss_rest),
        ea=np.ascontiguousarray(mesh.truss_ea),
        hp=np.ascontiguousarray(mesh.hinge_nodes[:, 0]),
        hq=np.ascontiguousarray(mesh.hinge_nodes[:, 1]),
        hr=np.ascontiguousarray(mesh.hinge_nodes[:, 2]),
        hv=np.ascontiguousarray(mesh.hinge_nodes[:, 3]),
        kper=np.ascontiguousarray(mesh.hinge_k_per_len),
        hrest=np.ascontiguousarray(mesh.hinge_rest),
        nbr_indptr=indptr, nbr_idx=nbr_idx,
        inc_indptr=indptr.copy(), inc_idx=inc_idx)
    _pack_cache[mesh] = packed
    return packed


@dataclass(frozen=True, eq=False)
class SimState:
    """Node positions and velocities at one time instant."""

    t: float
    positions: np.ndarray
    velocities: np.ndarray

    def validate(self, mesh=None):
        if self.positions.shape != self.velocities.shape:
            raise DesignError("state position/velocity shapes differ")
        if mesh is not None and self.positions.shape != (mesh.n_nodes, 3):
            raise DesignError("state arrays do not match mesh node count")
        if not (np.all(np.isfinite(self.positions))
                and np.all(np.isfinite(self.velocities))):
            raise SimulationDiverged("non-finite state", t=self.t)


def rest_state(mesh) -> SimState:
    """The mesh at rest: built positions, zero velocity, t = 0."""
    return SimState(0.0, mesh.positions.copy(),
                    np.zeros((mesh.n_nodes, 3)))


@dataclass(frozen=True)
class SimConfig:
    """Integration settings and boundary conditions."""

    dt: float = 1e-3
    zeta: float = 0.2
    gravity: tuple = (0.0, 0.0, -9.81)
    gravity_on: bool = False
    pinned_nodes: tuple = ()
    record_stride: int = 1
    ground_stiffness: float = 0.0   # N/m; 0 disables the ground plane
    ground_damping: float = 0.0

    def validate(self):
        if not self.dt > 0:
            raise DesignError(f"config.dt must be > 0, got {self.dt}")
        if self.zeta < 0:
            raise DesignError(f"config.zeta must be >= 0, got {self.zeta}")
        if self.record_stride < 1:
            raise DesignError(
                f"config.record_stride must be >= 1, got {self.record_stride}")


def corner_pins(mesh):
    """Default boundary condition: pin the three nodes of one corner facet
    triangle, removing the six rigid-body modes."""
    ny = mesh.design.n_cols
    return (0, 1, ny)


@dataclass(frozen=True, eq=False)
class ActuationCommand:
    """Target equilibrium angles for the actuated creases."""

    hinges: np.ndarray          # hinge indices
    targets: np.ndarray         # commanded equilibrium angles (rad)

    def validate(self, mesh=None):
        if self.hinges.shape != self.targets.shape:
            raise DesignError("actuation hinge/target shapes differ")
        if np.any(self.targets < 0) or np.any(self.targets > 2 * np.pi):
            raise DesignError("actuation targets must lie in [0, 2*pi]")
        if mesh is not None and np.any(mesh.hinge_is_facet[self.hinges]):
            raise DesignError("actuation command addresses a facet hinge")


@dataclass(frozen=True, eq=False)
class ReservoirTrace:
    """Time-indexed matrix of recorded hinge dihedral angles."""

    times: np.ndarray           # (R,)
    phi: np.ndarray             # (R, n_recorded)
    hinge_ids: np.ndarray       # (n_recorded,) hinge indices into the mesh

    def to_csv(self, path):
        header = "t," + ",".join(f"phi_{int(h)}" for h in self.hinge_ids)
        data = np.column_stack([self.times, self.phi])
        np.savetxt(path, data, delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            cols = fh.readline().strip().split(",")
        if cols[0] != "t" or not all(c.startswith("phi_") for c in cols[1:]):
            raise DesignError(f"unexpected trace columns in {path}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        ids = np.asarray([int(c[4:]) for c in cols[1:]], dtype=np.int64)
        return cls(times=data[:, 0], phi=data[:, 1:], hinge_ids=ids)


# --- individual force terms (reference implementations used by tests and
# --- kept independent of the fused kernels)

def stretch_forces(mesh, state):
    """Per-node bar stretching forces, with EA/l stiffness at current length."""
    pos = state.positions
    tn = mesh.truss_nodes
    d = pos[tn[:, 0]] - pos[tn[:, 1]]
    l = np.linalg.norm(d, axis=1)
    if np.any(l <= 0.0):
        raise GeometryError(
            f"zero-length truss {int(np.flatnonzero(l <= 0)[0])}")
    f = (-(mesh.truss_ea / l) * (l - mesh.truss_rest) / l)[:, None] * d
    F = np.zeros_like(pos)
    np.add.at(F, tn[:, 0], f)
    np.add.at(F, tn[:, 1], -f)
    return F


def _hinge_forces(mesh, positions, hinge_idx, k_per_len, targets):
    hn = mesh.hinge_nodes[hinge_idx]
    p = positions[hn[:, 0]]
    q = positions[hn[:, 1]]
    r = positions[hn[:, 2]]
    v = positions[hn[:, 3]]
    e = p - q
    rq = r - q
    pv = p - v
    m = np.cross(rq, e)
    nv = np.cross(e, pv)
    m2 = np.einsum("ij,ij->i", m, m)
    n2 = np.einsum("ij,ij->i", nv, nv)
    L2 = np.einsum("ij,ij->i", e, e)
    L = np.sqrt(L2)
    if np.any(m2 <= 0) or np.any(n2 <= 0):
        bad = int(np.flatnonzero((m2 <= 0) | (n2 <= 0))[0])
        raise GeometryError(
            f"degenerate wing triangle at hinge {int(hinge_idx[bad])}")
    c = np.clip(np.einsum("ij,ij->i", m, nv) / np.sqrt(m2 * n2), -1.0, 1.0)
    sd = np.einsum("ij,ij->i", m, pv)
    eta = np.where(sd < 0.0, -1.0, 1.0)
    phi = (eta * np.arccos(c)) % (2.0 * np.pi)
    coef = (-k_per_len * L * (phi - targets))[:, None]
    g_r = (L / m2)[:, None] * m
    g_v = -(L / n2)[:, None] * nv
    A = (np.einsum("ij,ij->i", pv, e) / L2 - 1.0)[:, None]
    B = (-np.einsum("ij,ij->i", rq, e) / L2)[:, None]
    g_p = A * g_v + B * g_r
    g_q = -(g_p + g_r + g_v)
    F = np.zeros_like(positions)
    np.add.at(F, hn[:, 0], coef * g_p)
    np.add.at(F, hn[:, 1], coef * g_q)
    np.add.at(F, hn[:, 2], coef * g_r)
    np.add.at(F, hn[:, 3], coef * g_v)
    return F


def bend_forces(mesh, state, exclude=None):
    """Passive hinge bending forces toward each hinge's rest angle.

    ``exclude`` lists actuated hinge indices to leave out (they are handled
    by :func:`actuation_forces` instead, replacing the passive term).
    """
    idx = np.arange(mesh.n_hinges)
    if exclude is not None and len(exclude):
        idx = np.setdiff1d(idx, np.asarray(exclude))
    return _hinge_forces(mesh, state.positions, idx,
                         mesh.hinge_k_per_len[idx], mesh.hinge_rest[idx])


def actuation_forces(mesh, state, cmd: ActuationCommand):
    """Hinge forces pulling actuated creases toward their commanded angles."""
    cmd.validate(mesh)
    k = np.full(cmd.hinges.shape[0], mesh.material.k_c_a)
    return _hinge_forces(mesh, state.positions, np.asarray(cmd.hinges),
                         k, np.asarray(cmd.targets))


def damping_forces(mesh, state, zeta):
    """Damping against each node's mean truss-neighbor velocity.

    The damping coefficient is 2*zeta*sqrt(Ks*m_p) with Ks the mean current
    stiffness of the trusses incident to the node.
    """
    packed = pack_mesh(mesh)
    pos, vel = state.positions, state.velocities
    d = pos[packed.tn0] - pos[packed.tn1]
    ks = packed.ea / np.linalg.norm(d, axis=1)
    deg = np.diff(packed.nbr_indptr)
    v_avg = np.add.reduceat(vel[packed.nbr_idx], packed.nbr_indptr[:-1],
                            axis=0) / deg[:, None]
    ks_node = np.add.reduceat(ks[packed.inc_idx], packed.inc_indptr[:-1]) \
        / deg
    cd = 2.0 * zeta * np.sqrt(ks_node * packed.masses)
    return -cd[:, None] * (vel - v_avg)


def mechanical_energy(mesh, state):
    """Kinetic plus elastic energy (bars and hinges).

    The bar potential EA*((l - l0) - l0*log(l / l0)) matches the
    length-updated EA/l stiffness; hinge energy uses the torsional stiffness
    at the current axis length.
    """
    pos, vel = state.positions, state.velocities
    kin = 0.5 * np.sum(mesh.masses * np.einsum("ij,ij->i", vel, vel))
    tn = mesh.truss_nodes
    l = np.linalg.norm(pos[tn[:, 0]] - pos[tn[:, 1]], axis=1)
    l0 = mesh.truss_rest
    e_bar = np.sum(mesh.truss_ea * ((l - l0) - l0 * np.log(l / l0)))
    phi = all_dihedrals(pos, mesh.hinge_nodes)
    axis = np.linalg.norm(pos[mesh.hinge_nodes[:, 0]]
                          - pos[mesh.hinge_nodes[:, 1]], axis=1)
    e_hinge = 0.5 * np.sum(mesh.hinge_k_per_len * axis
                           * (phi - mesh.hinge_rest) ** 2)
    return kin + e_bar + e_hinge


def _constraint_array(mesh, config):
    constraint = np.zeros(mesh.n_nodes, dtype=np.uint8)
    for p in config.pinned_nodes:
        constraint[p] = 1
    return constraint


def _full_actuation_arrays(mesh, cmd):
    kper = np.ascontiguousarray(mesh.hinge_k_per_len)
    target = np.ascontiguousarray(mesh.hinge_rest)
    if cmd is not None:
        cmd.validate(mesh)
        kper = kper.copy()
        target = target.copy()
        kper[cmd.hinges] = mesh.material.k_c_a
        target[cmd.hinges] = cmd.targets
    return kper, target


def step(mesh, state, config, cmd=None) -> SimState:
    """Advance one RK4 step of size ``config.dt``; returns the new state."""
    config.validate()
    packed = pack_mesh(mesh)
    kper, target = _full_actuation_arrays(mesh, cmd)
    pos = state.positions.copy()
    vel = state.velocities.copy()
    constraint = _constraint_array(mesh, config)
    vel[constraint == 1] = 0.0
    gx, gy, gz = config.gravity
    kernels.advance(
        pos, vel, packed.masses, packed.tn0, packed.tn1, packed.rest,
        packed.ea, packed.hp, packed.hq, packed.hr, packed.hv, kper, target,
        packed.nbr_indptr, packed.nbr_idx, packed.inc_indptr, packed.inc_idx,
        config.zeta, gx, gy, gz, config.gravity_on,
        config.ground_stiffness, config.ground_damping, constraint,
        config.dt, 1)
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
        disp = np.linalg.norm(pos - state.positions, axis=1)
        with np.errstate(invalid="ignore"):
            worst = float(np.nanmax(disp))
        raise SimulationDiverged(
            f"integration diverged at t={state.t + config.dt:.6g} s "
            f"(max displacement {worst:.3g} m)", t=state.t + config.dt)
    return SimState(state.t + config.dt, pos, vel)


def simulate(mesh, config, control_fn=None, duration=0.0,
             record_hinges=None, initial=None) -> tuple:
    """Run the dynamics for ``duration`` seconds with an optional controller.

    ``control_fn(t, phi_recorded) -> ActuationCommand | None`` is evaluated
    once per recorded sample and held (zero-order) in between.  Returns
    ``(trace, final_state)`` where the trace holds the recorded hinge angles
    (all crease hinges by default).
    """
    if not duration > 0:
        raise DesignError(f"duration must be > 0, got {duration}")
    config.validate()
    packed = pack_mesh(mesh)
    if record_hinges is None:
        record_hinges = mesh.crease_indices
    record_hinges = np.ascontiguousarray(record_hinges, dtype=np.int64)
    state = initial if initial is not None else rest_state(mesh)
    state.validate(mesh)
    pos = state.positions.copy()
    vel = state.velocities.copy()
    constraint = _constraint_array(mesh, config)
    vel[constraint == 1] = 0.0
    stride = config.record_stride
    n_steps = int(round(duration / config.dt))
    n_rec = n_steps // stride
    times = np.empty(n_rec + 1)
    phi = np.empty((n_rec + 1, record_hinges.shape[0]))
    gx, gy, gz = config.gravity
    kper0 = np.ascontiguousarray(mesh.hinge_k_per_len)
    target0 = np.ascontiguousarray(mesh.hinge_rest)
    for r in range(n_rec + 1):
        t = state.t + r * stride * config.dt
        times[r] = t
        phi[r] = all_dihedrals(pos, mesh.hinge_nodes[record_hinges])
        if r == n_rec:
            break
        cmd = control_fn(t, phi[r]) if control_fn is not None else None
        if cmd is None:
            kper, target = kper0, target0
        else:
            kper, target = _full_actuation_arrays(mesh, cmd)
        kernels.advance(
            pos, vel, packed.masses, packed.tn0, packed.tn1, packed.rest,
            packed.ea, packed.hp, packed.hq, packed.hr, packed.hv, kper,
            target, packed.nbr_indptr, packed.nbr_idx, packed.inc_indptr,
            packed.inc_idx, config.zeta, gx, gy, gz, config.gravity_on,
            config.ground_stiffness, config.ground_damping, constraint,
            config.dt, stride)
        if not np.all(np.isfinite(pos)):
            raise SimulationDiverged(
                f"integration diverged near t={t:.6g} s", t=t)
    trace = ReservoirTrace(times=times, phi=phi, hinge_ids=record_hinges)
    final = SimState(state.t + n_steps * config.dt, pos, vel)
    return trace, final


def run_open_loop(mesh, config, act_idx, act_targets, sensor_idx,
                  act_kper=None, initial=None, duration=None):
    """Kernel-level open-loop run with a per-step actuation schedule.

    ``act_targets`` has one row per time step.  Returns (trace, final_state).
    """
    config.validate()
    packed = pack_mesh(mesh)
    state = initial if initial is not None else rest_state(mesh)
    n_steps = act_targets.shape[0] if duration is None \
        else int(round(duration / config.dt))
    act_idx = np.ascontiguousarray(act_idx, dtype=np.int64)
    sensor_idx = np.ascontiguousarray(sensor_idx, dtype=np.int64)
    if act_kper is None:
        act_kper = np.full(act_idx.shape[0], mesh.material.k_c_a)
    constraint = _constraint_array(mesh, config)
    vel0 = state.velocities.copy()
    vel0[constraint == 1] = 0.0
    gx, gy, gz = config.gravity
    times, phi, pos, vel, bad = kernels.run_open(
        state.positions.copy(), vel0, packed.masses, packed.tn0, packed.tn1,
        packed.rest, packed.ea, packed.hp, packed.hq, packed.hr, packed.hv,
        packed.kper, packed.hrest, packed.nbr_indptr, packed.nbr_idx,
        packed.inc_indptr, packed.inc_idx, constraint, config.zeta,
        gx, gy, gz, config.gravity_on, config.ground_stiffness,
        config.ground_damping, config.dt, n_steps, config.record_stride,
        act_idx, np.ascontiguousarray(act_kper),
        np.ascontiguousarray(act_targets), sensor_idx)
    if bad >= 0:
        raise SimulationDiverged(
            f"integration diverged at t={state.t + (bad + 1) * config.dt:.6g} s",
            t=state.t + (bad + 1) * config.dt)
    trace = ReservoirTrace(times=times + state.t, phi=phi,
                           hinge_ids=sensor_idx)
    final = SimState(state.t + n_steps * config.dt, pos, vel)
    return trace, final


ClosedLoopResult = namedtuple(
    "ClosedLoopResult",
    ["trace", "outputs", "centroid", "anchor_mask", "final_state",
     "engaged", "diverged_step"])


def run_closed_loop(mesh, config, fb_idx, fb_w, fb_group, w_bias, w_out,
                    sensor_idx, duration, initial=None,
                    in_idx=None, in_targets=None,
                    outage=None, bound=1e3, anchors=None,
                    raise_on_divergence=True):
    """Kernel-level autonomous closed loop (readout wired to feedback).

    ``anchors``, when given, is a dict with keys ``hinges``, ``signs``,
    ``threshold``, ``hysteresis`` describing fold-activated ground anchors.
    ``outage`` is a (t_on, t_off) window during which sensor readings and
    feedback commands are forced to zero.
    """
    config.validate()
    packed = pack_mesh(mesh)
    state = initial if initial is not None else rest_state(mesh)
    n_steps = int(round(duration / config.dt))
    fb_idx = np.ascontiguousarray(fb_idx, dtype=np.int64)
    fb_w = np.ascontiguousarray(fb_w, dtype=float)
    fb_group = np.ascontiguousarray(fb_group, dtype=np.int64)
    sensor_idx = np.ascontiguousarray(sensor_idx, dtype=np.int64)
    if in_idx is None:
        in_idx = np.empty(0, dtype=np.int64)
        in_targets = np.empty((n_steps, 0))
    else:
        in_idx = np.ascontiguousarray(in_idx, dtype=np.int64)
        in_targets = np.ascontiguousarray(in_targets)
    if outage is None:
        s0, s1 = -1, -1
    else:
        s0 = int(round(outage[0] / config.dt))
        s1 = int(round(outage[1] / config.dt))
    if anchors is None:
        anc_hinge = np.empty(0, dtype=np.int64)
        anc_sign = np.empty(0, dtype=np.int8)
        anc_p = np.empty(0, dtype=np.int64)
        anc_q = np.empty(0, dtype=np.int64)
        thresh, hyst = 0.0, 0.0
        engaged0 = np.zeros(0, dtype=np.bool_)
    else:
        anc_hinge = np.ascontiguousarray(anchors["hinges"], dtype=np.int64)
        anc_sign = np.ascontiguousarray(anchors["signs"], dtype=np.int8)
        anc_p = np.ascontiguousarray(mesh.hinge_nodes[anc_hinge, 0])
        anc_q = np.ascontiguousarray(mesh.hinge_nodes[anc_hinge, 1])
        thresh = float(anchors["threshold"])
        hyst = float(anchors["hysteresis"])
        engaged0 = np.asarray(
            anchors.get("engaged", np.zeros(anc_hinge.shape[0], dtype=bool)),
            dtype=np.bool_)
    constraint = _constraint_array(mesh, config)
    vel0 = state.velocities.copy()
    vel0[constraint == 1] = 0.0
    gx, gy, gz = config.gravity
    in_kper = np.full(in_idx.shape[0], mesh.material.k_c_a)
    fb_kper = np.full(fb_idx.shape[0], mesh.material.k_c_a)
    (times, phi, z, centroid, anc_mask, pos, vel, engaged,
     bad) = kernels.run_closed(
        state.positions.copy(), vel0, packed.masses, packed.tn0, packed.tn1,
        packed.rest, packed.ea, packed.hp, packed.hq, packed.hr, packed.hv,
        packed.kper, packed.hrest, packed.nbr_indptr, packed.nbr_idx,
        packed.inc_indptr, packed.inc_idx, constraint, config.zeta,
        gx, gy, gz, config.gravity_on, config.ground_stiffness,
        config.ground_damping, config.dt, n_steps, config.record_stride,
        in_idx, in_kper, in_targets,
        fb_idx, fb_w, fb_group, fb_kper,
        np.ascontiguousarray(w_bias, dtype=float),
        np.ascontiguousarray(w_out, dtype=float), sensor_idx,
        s0, s1, float(bound),
        anc_hinge, anc_sign, anc_p, anc_q, thresh, hyst, engaged0)
    if bad >= 0 and raise_on_divergence:
        raise SimulationDiverged(
            f"closed loop diverged at t={state.t + bad * config.dt:.6g} s "
            f"(|output| exceeded {bound:g} or state non-finite)",
            t=state.t + bad * config.dt)
    if bad >= 0:
        # truncate records to completed rows
        rows = bad // config.record_stride + 1
        times, phi, z = times[:rows], phi[:rows], z[:rows]
        centroid, anc_mask = centroid[:rows], anc_mask[:rows]
    trace = ReservoirTrace(times=times + state.t, phi=phi,
                           hinge_ids=sensor_idx)
    final = SimState(state.t + n_steps * config.dt, pos, vel)
    return ClosedLoopResult(trace, z, centroid, anc_mask, final, engaged,
                            bad)
