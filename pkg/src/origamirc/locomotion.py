"""Crawling robot: two folded strips, fold-activated anchors, harmonic gait.

The crawler couples two narrow folded strips through a stiff bridge, rests
on a penalty-force ground plane under gravity, and anchors itself through
creases that pin their axis nodes in-plane while folded past a threshold.
Four feedback-crease groups arranged front to back receive a quarter-period
phase ladder, producing a peristaltic wave that the anchors rectify into
net forward motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import SimConfig, rest_state
from .errors import ConfigError, DesignError
from .mesh import MiuraDesign, OrigamiMesh, all_dihedrals, build_miura
from .reservoir import (RoleAssignment, TrainSpec, closed_loop,
                        teacher_force, train_readout)
from .tasks import harmonic_gait

N_GAIT_GROUPS = 4
DEFAULT_GAIT_FREQUENCY = 0.5        # Hz
ANCHOR_THRESHOLD = 0.05             # rad folded past rest, toward closed
ANCHOR_HYSTERESIS = 0.02            # rad


@dataclass(frozen=True, eq=False)
class CrawlerDesign:
    """Composite crawler: strip geometry plus anchor and feedback wiring."""

    strip: MiuraDesign
    bridge_trusses: np.ndarray      # (k, 2) node pairs joining the strips
    bridge_factor: float            # bridge EA multiple of the strip bars
    feedback_groups: tuple          # group -> hinge indices (composite mesh)
    feedback_weights: tuple         # group -> signed weights (rad)
    anchor_hinges: np.ndarray       # crease hinges acting as anchors
    anchor_signs: np.ndarray        # +1 valley folds close downward, -1 mtn
    n_strip_nodes: int

    def roles(self, mesh, sensors=None):
        """Reservoir role view: four feedback groups, all-crease sensors."""
        if sensors is None:
            sensors = mesh.crease_indices
        return RoleAssignment(
            input_hinges=np.empty(0, dtype=np.int64),
            input_weights=np.empty(0),
            feedback_hinges=tuple(self.feedback_groups),
            feedback_weights=tuple(self.feedback_weights),
            sensor_hinges=np.asarray(sensors, dtype=np.int64))

    def anchors(self, threshold=ANCHOR_THRESHOLD,
                hysteresis=ANCHOR_HYSTERESIS, engaged=None):
        """Anchor description consumed by the closed-loop kernel."""
        return {"hinges": self.anchor_hinges, "signs": self.anchor_signs,
                "threshold": threshold, "hysteresis": hysteresis,
                **({"engaged": engaged} if engaged is not None else {})}


def _grounded(positions):
    out = positions.copy()
    out[:, 2] -= out[:, 2].min()
    return out


def build_crawler(strip=None, material=None, gap=None, bridge_factor=100.0,
                  weight_scale=0.7):
    """Two mirrored strips joined by stiff bridge bars, resting on z = 0.

    ``gap`` is the lateral spacing between the strips' facing edges
    (default: one crease length ``a``).  ``bridge_factor`` scales the bridge
    bars' axial stiffness relative to the strip bars.  Feedback creases are
    every interior crease, split into four groups by body quarter along the
    travel (x) axis; within each group the weight magnitude is
    ``weight_scale`` of the hinge's command-range bound, with the sign
    alternating between the front and back half of the quarter's span.
    Returns ``(mesh, CrawlerDesign)``.
    """
    strip = strip or MiuraDesign(n_rows=9, n_cols=3)
    if strip.n_rows < 5 or strip.n_cols < 2:
        raise DesignError(
            f"crawler strip needs >= 5 x 2 nodes, got "
            f"{strip.n_rows} x {strip.n_cols}")
    if not bridge_factor >= 1.0:
        raise DesignError(
            f"bridge_factor must be >= 1, got {bridge_factor}")
    one = build_miura(strip, material)
    n = one.n_nodes
    if gap is None:
        gap = strip.a
    if not gap > 0:
        raise DesignError(f"gap must be > 0, got {gap}")
    width = one.positions[:, 1].max() - one.positions[:, 1].min()
    shift = np.array([0.0, width + gap, 0.0])

    positions = _grounded(np.vstack([one.positions, one.positions + shift]))
    masses = np.concatenate([one.masses, one.masses])
    truss_nodes = np.vstack([one.truss_nodes, one.truss_nodes + n])
    truss_rest = np.concatenate([one.truss_rest, one.truss_rest])
    truss_ea = np.concatenate([one.truss_ea, one.truss_ea])
    hinge_nodes = np.vstack([one.hinge_nodes, one.hinge_nodes + n])
    hinge_k = np.concatenate([one.hinge_k_per_len, one.hinge_k_per_len])
    hinge_rest = np.concatenate([one.hinge_rest, one.hinge_rest])
    hinge_is_facet = np.concatenate([one.hinge_is_facet, one.hinge_is_facet])
    hinge_sign = np.concatenate([one.hinge_fold_sign, one.hinge_fold_sign])

    # bridge: join each strip's facing edge nodes row by row
    cols = strip.n_cols
    inner_one = np.arange(strip.n_rows) * cols + (cols - 1)
    inner_two = np.arange(strip.n_rows) * cols + n
    bridge = np.column_stack([inner_one, inner_two])
    b_rest = np.linalg.norm(positions[bridge[:, 0]]
                            - positions[bridge[:, 1]], axis=1)
    k_s = one.material.k_s
    b_ea = bridge_factor * k_s * b_rest
    truss_nodes = np.vstack([truss_nodes, bridge])
    truss_rest = np.concatenate([truss_rest, b_rest])
    truss_ea = np.concatenate([truss_ea, b_ea])

    mesh = OrigamiMesh(
        positions=positions, masses=masses, truss_nodes=truss_nodes,
        truss_rest=truss_rest, truss_ea=truss_ea, hinge_nodes=hinge_nodes,
        hinge_k_per_len=hinge_k, hinge_rest=hinge_rest,
        hinge_is_facet=hinge_is_facet, hinge_fold_sign=hinge_sign,
        design=strip, material=one.material)

    creases = mesh.crease_indices
    axis_mid_x = 0.5 * (positions[hinge_nodes[creases, 0], 0]
                        + positions[hinge_nodes[creases, 1], 0])
    order = np.argsort(axis_mid_x, kind="stable")
    chunks = np.array_split(order, N_GAIT_GROUPS)
    groups, weights = [], []
    for g, chunk in enumerate(chunks):
        if chunk.shape[0] == 0:
            raise DesignError(
                f"gait group {g} selects no creases; strip too short")
        hinges = np.sort(creases[chunk])
        rest = mesh.hinge_rest[hinges]
        wmax = np.minimum(rest, 2.0 * math.pi - rest)
        pos_in_group = np.searchsorted(creases, hinges)
        x = axis_mid_x[pos_in_group]
        front = x <= np.median(x)
        sign = np.where(front, 1.0, -1.0)
        groups.append(hinges.astype(np.int64))
        weights.append(weight_scale * wmax * sign)

    z_axis = 0.5 * (positions[hinge_nodes[creases, 0], 2]
                    + positions[hinge_nodes[creases, 1], 2])
    bottom = z_axis <= z_axis.min() + 1e-9
    anchor_hinges = creases[bottom].astype(np.int64)
    anchor_signs = np.where(mesh.hinge_rest[anchor_hinges] <= math.pi,
                            1, -1).astype(np.int8)

    design = CrawlerDesign(
        strip=strip, bridge_trusses=bridge, bridge_factor=bridge_factor,
        feedback_groups=tuple(groups), feedback_weights=tuple(weights),
        anchor_hinges=anchor_hinges, anchor_signs=anchor_signs,
        n_strip_nodes=n)
    return mesh, design


def crawler_config(dt=1e-3, zeta=0.2, ground_stiffness=1e4,
                   ground_damping=10.0, record_stride=1):
    """Simulation settings for crawling: gravity on, penalty ground plane."""
    return SimConfig(dt=dt, zeta=zeta, gravity_on=True,
                     ground_stiffness=ground_stiffness,
                     ground_damping=ground_damping,
                     record_stride=record_stride)


def update_anchors(mesh, positions, design: CrawlerDesign, engaged,
                   threshold=ANCHOR_THRESHOLD, hysteresis=ANCHOR_HYSTERESIS):
    """One anchor-automaton update from the current fold state.

    A disengaged anchor engages when its crease has folded more than
    ``threshold`` past the rest angle toward closed; an engaged anchor
    releases once the fold depth retreats below ``threshold - hysteresis``.
    Returns ``(engaged, anchored_nodes)`` where the nodes are the axis
    endpoints of the engaged creases (to be pinned in-plane).
    """
    engaged = np.asarray(engaged, dtype=bool).copy()
    phi = all_dihedrals(positions, mesh.hinge_nodes[design.anchor_hinges])
    depth = (mesh.hinge_rest[design.anchor_hinges] - phi) \
        * design.anchor_signs
    engaged[engaged & (depth < threshold - hysteresis)] = False
    engaged[~engaged & (depth > threshold)] = True
    nodes = np.unique(
        mesh.hinge_nodes[design.anchor_hinges[engaged], :2])
    return engaged, nodes


def ground_contact(positions, velocities, ground_stiffness=1e4,
                   ground_damping=10.0):
    """Per-node penalty force from the z = 0 ground plane.

    Penetrating nodes get a vertical spring-damper reaction plus viscous
    tangential friction; nodes above the plane feel nothing.
    """
    forces = np.zeros_like(positions)
    pen = positions[:, 2] < 0.0
    forces[pen, 2] = (-ground_stiffness * positions[pen, 2]
                      - ground_damping * velocities[pen, 2])
    forces[pen, 0:2] = -ground_damping * velocities[pen, 0:2]
    return forces


def settle(mesh, config=None, duration=2.0):
    """Let the crawler come to rest on the ground; returns the state."""
    from .dynamics import simulate
    config = config or crawler_config()
    _, final = simulate(mesh, config, duration=duration)
    return final


@dataclass(frozen=True, eq=False)
class GaitResult:
    """Trained gait readout plus its training diagnostics."""

    weights: object
    train_mse: float
    roles: object
    final_state: object
    targets: np.ndarray


def train_gait(mesh, design: CrawlerDesign, duration=100.0, washout=15.0,
               frequency=DEFAULT_GAIT_FREQUENCY, amplitude=1.0,
               teacher_noise=1e-2, clean_tail=5.0, config=None,
               initial=None, seed=0):
    """Teacher-force the four-phase harmonic gait and fit the readout.

    The teacher is perturbed by Gaussian noise except over the trailing
    ``clean_tail`` seconds (see the pattern pipeline for why); regression
    targets stay clean.  Returns a :class:`GaitResult`.
    """
    config = config or crawler_config()
    roles = design.roles(mesh)
    _, targets = harmonic_gait(duration + 1.0, dt=config.dt,
                               n_channels=N_GAIT_GROUPS,
                               frequency=frequency, amplitude=amplitude)
    n_steps = int(round(duration / config.dt))
    teacher = targets[:n_steps].copy()
    if teacher_noise > 0:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6A17)))
        n_noisy = max(0, n_steps - int(round(clean_tail / config.dt)))
        teacher[:n_noisy] += teacher_noise * rng.standard_normal(
            (n_noisy, N_GAIT_GROUPS))
    if initial is None:
        initial = settle(mesh, config)
    trace, final = teacher_force(mesh, roles, teacher=teacher,
                                 duration=duration, config=config,
                                 initial=initial)
    weights = train_readout(
        trace, targets[:trace.phi.shape[0]],
        TrainSpec(washout=washout, noise_amplitude=0.0, seed=seed))
    return GaitResult(weights=weights,
                      train_mse=float(np.max(weights.train_mse)),
                      roles=roles, final_state=final, targets=targets)


@dataclass(frozen=True, eq=False)
class CrawlResult:
    """Closed-loop crawl telemetry."""

    times: np.ndarray
    outputs: np.ndarray
    centroid: np.ndarray
    anchor_mask: np.ndarray
    displacement: float
    diverged_step: int

    @property
    def failed(self):
        return self.diverged_step >= 0


def run_crawl(mesh, design: CrawlerDesign, gait: GaitResult, duration=20.0,
              use_anchors=True, threshold=ANCHOR_THRESHOLD,
              hysteresis=ANCHOR_HYSTERESIS, config=None, initial=None,
              bound=1e2):
    """Autonomous crawl: the readout drives the gait, anchors rectify it.

    Returns a :class:`CrawlResult`; ``displacement`` is the net centroid
    travel along x.
    """
    config = config or crawler_config()
    roles = design.roles(mesh)
    anchors = design.anchors(threshold, hysteresis) if use_anchors else None
    result = closed_loop(mesh, roles, gait.weights, duration=duration,
                         initial=initial or gait.final_state, config=config,
                         bound=bound, anchors=anchors,
                         raise_on_divergence=False)
    disp = float(result.centroid[-1, 0] - result.centroid[0, 0])
    return CrawlResult(times=result.trace.times, outputs=result.outputs,
                       centroid=result.centroid,
                       anchor_mask=result.anchor_mask,
                       displacement=disp, diverged_step=result.diverged_step)


def crawl_log_to_csv(result: CrawlResult, path):
    """Write `t, centroid_xyz, gait channels, anchor bitmask` telemetry."""
    n_ch = result.outputs.shape[1]
    header = ("t,centroid_x,centroid_y,centroid_z,"
              + ",".join(f"ch{k}" for k in range(n_ch))
              + ",anchors_engaged_bitmask")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(result.times.shape[0]):
            row = [repr(float(result.times[i]))]
            row += [repr(float(v)) for v in result.centroid[i]]
            row += [repr(float(v)) for v in result.outputs[i]]
            row.append(str(int(result.anchor_mask[i])))
            fh.write(",".join(row) + "\n")
