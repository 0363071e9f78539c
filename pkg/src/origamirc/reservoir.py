"""Reservoir-computing layer on top of the folding dynamics.

Randomly assigned crease roles (input / feedback / sensor), teacher-forced
open-loop training, linear readout solved by pseudo-inverse or ridge
regression, and the autonomous closed loop where the readout drives the
feedback creases through tanh saturation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (ReservoirTrace, SimConfig, rest_state, run_closed_loop,
                       run_open_loop)
from .errors import ConfigError, TrainingError

PINV_RCOND = 1e-10


@dataclass(frozen=True, eq=False)
class RoleAssignment:
    """Which crease hinges act as inputs, feedback channels, and sensors.

    ``feedback_hinges``/``feedback_weights`` hold one array per output
    channel.  Weights are in radians; they scale tanh-saturated signals, so
    each hinge's commanded angle stays inside [0, 2*pi].
    """

    input_hinges: np.ndarray
    input_weights: np.ndarray
    feedback_hinges: tuple
    feedback_weights: tuple
    sensor_hinges: np.ndarray
    seed: int = 0

    @property
    def n_groups(self):
        return len(self.feedback_hinges)

    def validate(self, mesh=None):
        if self.input_hinges.shape != self.input_weights.shape:
            raise ConfigError("input hinge/weight shapes differ")
        for h, w in zip(self.feedback_hinges, self.feedback_weights):
            if h.shape != w.shape:
                raise ConfigError("feedback hinge/weight shapes differ")
        actuated = [self.input_hinges] + list(self.feedback_hinges)
        flat = np.concatenate(actuated) if actuated else np.empty(0)
        if flat.shape[0] != np.unique(flat).shape[0]:
            raise ConfigError("actuated role sets overlap")
        if mesh is not None:
            for arr in actuated + [self.sensor_hinges]:
                if np.any(mesh.hinge_is_facet[arr]):
                    raise ConfigError("role set includes a facet hinge")
            for arr, w in zip(actuated,
                              [self.input_weights] + list(self.feedback_weights)):
                rest = mesh.hinge_rest[arr]
                wmax = np.minimum(rest, 2.0 * math.pi - rest)
                if np.any(np.abs(w) > wmax + 1e-12):
                    raise ConfigError(
                        "weight magnitude exceeds the commanded-angle bound")

    def flat_feedback(self):
        """Concatenated (hinges, weights, group index) across channels."""
        if not self.feedback_hinges:
            return (np.empty(0, dtype=np.int64), np.empty(0),
                    np.empty(0, dtype=np.int64))
        hinges = np.concatenate(self.feedback_hinges)
        weights = np.concatenate(self.feedback_weights)
        groups = np.concatenate([
            np.full(h.shape[0], g, dtype=np.int64)
            for g, h in enumerate(self.feedback_hinges)])
        return hinges, weights, groups


def assign_roles(mesh, input_frac=0.0, feedback_fracs=(), sensor_frac=1.0,
                 seed=0):
    """Randomly pick disjoint input and feedback creases plus sensors.

    Fractions are of the crease count N.  Actuated roles (input + feedback
    groups) are drawn without replacement from a seeded shuffle; sensors are
    drawn independently and may overlap actuated creases (``sensor_frac=1``
    senses every crease).  Weights are uniform in [-w_max, +w_max] with
    w_max = min(phi0, 2*pi - phi0) per hinge.
    """
    fracs = [input_frac, *feedback_fracs, sensor_frac]
    if any(f < 0 or f > 1 for f in fracs):
        raise ConfigError(f"role fractions must lie in [0, 1], got {fracs}")
    if input_frac + sum(feedback_fracs) > 1.0 + 1e-12:
        raise ConfigError("actuated fractions sum to more than 1")
    creases = mesh.crease_indices
    n = creases.shape[0]
    rng = np.random.default_rng(seed)
    order = rng.permutation(creases)

    def take(frac, role):
        count = int(round(frac * n))
        if frac > 0 and count == 0:
            raise ConfigError(
                f"{role} fraction {frac} selects zero of {n} creases")
        return count

    pos = 0
    n_in = take(input_frac, "input")
    input_hinges = np.sort(order[pos:pos + n_in])
    pos += n_in
    fb_hinges = []
    for g, frac in enumerate(feedback_fracs):
        cnt = take(frac, f"feedback group {g}")
        fb_hinges.append(np.sort(order[pos:pos + cnt]))
        pos += cnt
    n_sens = take(sensor_frac, "sensor")
    sensor_hinges = np.sort(rng.permutation(creases)[:n_sens])

    def weights(hinges):
        rest = mesh.hinge_rest[hinges]
        wmax = np.minimum(rest, 2.0 * math.pi - rest)
        return rng.uniform(-wmax, wmax)

    roles = RoleAssignment(
        input_hinges=input_hinges, input_weights=weights(input_hinges),
        feedback_hinges=tuple(fb_hinges),
        feedback_weights=tuple(weights(h) for h in fb_hinges),
        sensor_hinges=sensor_hinges, seed=seed)
    roles.validate(mesh)
    return roles


def _command_targets(mesh, hinges, weights, signal):
    """Commanded angles phi0 + W * tanh(signal) per step, clipped to range."""
    rest = mesh.hinge_rest[hinges]
    raw = rest[None, :] + weights[None, :] * np.tanh(signal)
    return np.clip(raw, 0.0, 2.0 * math.pi)


def teacher_force(mesh, roles, teacher=None, input_u=None, duration=None,
                  config=None, initial=None):
    """Open-loop training run with reference signals on the feedback creases.

    ``teacher`` is an (n_steps, n_groups) array of reference outputs (or
    None when there are no feedback groups); ``input_u`` an (n_steps,) input
    signal for the input creases.  Returns the sensor trace.
    """
    if config is None:
        config = SimConfig()
    n_steps = int(round(duration / config.dt))
    pieces_idx, pieces_tgt = [], []
    if roles.input_hinges.shape[0]:
        if input_u is None:
            input_u = np.zeros(n_steps)
        u = np.asarray(input_u)[:n_steps, None]
        pieces_idx.append(roles.input_hinges)
        pieces_tgt.append(_command_targets(
            mesh, roles.input_hinges, roles.input_weights, u))
    if roles.n_groups:
        if teacher is None:
            teacher = np.zeros((n_steps, roles.n_groups))
        teacher = np.atleast_2d(np.asarray(teacher))
        if teacher.shape[0] < n_steps:
            raise ConfigError(
                f"teacher covers {teacher.shape[0]} steps, need {n_steps}")
        for g in range(roles.n_groups):
            pieces_idx.append(roles.feedback_hinges[g])
            pieces_tgt.append(_command_targets(
                mesh, roles.feedback_hinges[g], roles.feedback_weights[g],
                teacher[:n_steps, g:g + 1]))
    if pieces_idx:
        act_idx = np.concatenate(pieces_idx)
        act_targets = np.concatenate(pieces_tgt, axis=1)
    else:
        act_idx = np.empty(0, dtype=np.int64)
        act_targets = np.empty((n_steps, 0))
    trace, final = run_open_loop(mesh, config, act_idx, act_targets,
                                 roles.sensor_hinges, initial=initial)
    return trace, final


@dataclass(frozen=True)
class TrainSpec:
    """Readout-training windows and regularization."""

    washout: float = 0.0
    train_window: float = 0.0       # 0 = use everything after washout
    test_window: float = 0.0
    noise_amplitude: float = 1e-3
    ridge: float = 0.0
    seed: int = 0

    def validate(self):
        for name in ("washout", "train_window", "test_window",
                     "noise_amplitude", "ridge"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")


@dataclass(frozen=True, eq=False)
class ReadoutWeights:
    """Affine readout z* = bias + weights @ phi_sensors per channel."""

    bias: np.ndarray                # (channels,)
    weights: np.ndarray             # (channels, sensors)
    sensor_ids: np.ndarray          # (sensors,)
    train_mse: np.ndarray = None    # per-channel training MSE

    def predict(self, phi):
        return self.bias[None, :] + np.asarray(phi) @ self.weights.T

    def to_json(self, path=None):
        doc = {
            "sensor_ids": [int(i) for i in self.sensor_ids],
            "channels": [
                {"bias": float(b), "weights": [float(w) for w in row]}
                for b, row in zip(self.bias, self.weights)
            ],
        }
        if self.train_mse is not None:
            doc["train_mse"] = [float(m) for m in self.train_mse]
        text = json.dumps(doc, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, source):
        if isinstance(source, (str, bytes)) \
                and not str(source).lstrip().startswith("{"):
            with open(source) as fh:
                doc = json.load(fh)
        else:
            doc = json.loads(source)
        mse_doc = doc.get("train_mse")
        return cls(
            bias=np.asarray([c["bias"] for c in doc["channels"]]),
            weights=np.asarray([c["weights"] for c in doc["channels"]]),
            sensor_ids=np.asarray(doc["sensor_ids"], dtype=np.int64),
            train_mse=None if mse_doc is None else np.asarray(mse_doc))


def train_readout(trace, targets, spec: TrainSpec):
    """Solve the static linear readout over the training window.

    Rows before ``washout`` (trace-relative time) are discarded; when
    ``train_window`` > 0, only that much data after washout is used.  Seeded
    Gaussian noise of std ``noise_amplitude`` is added to the sensor matrix
    before solving W = [1 Phi]+ Z (or the ridge-regularized normal
    equations).
    """
    spec.validate()
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if targets.shape[0] != trace.times.shape[0]:
        raise TrainingError(
            f"target rows ({targets.shape[0]}) do not match trace rows "
            f"({trace.times.shape[0]})")
    if not np.all(np.isfinite(trace.phi)):
        raise TrainingError("trace contains non-finite sensor angles")
    if not np.all(np.isfinite(targets)):
        raise TrainingError("targets contain non-finite values")
    rel = trace.times - trace.times[0]
    keep = rel >= spec.washout
    if spec.train_window > 0:
        keep &= rel < spec.washout + spec.train_window
    if np.count_nonzero(keep) <= trace.phi.shape[1] + 1:
        raise TrainingError(
            "training window leaves fewer rows than readout unknowns")
    phi = trace.phi[keep]
    z = targets[keep]
    if spec.noise_amplitude > 0:
        rng = np.random.default_rng(spec.seed)
        phi = phi + spec.noise_amplitude * rng.standard_normal(phi.shape)
    X = np.column_stack([np.ones(phi.shape[0]), phi])
    if spec.ridge > 0:
        G = X.T @ X + spec.ridge * np.eye(X.shape[1])
        W = np.linalg.solve(G, X.T @ z)
    else:
        W, _, rank, _ = np.linalg.lstsq(X, z, rcond=PINV_RCOND)
        if rank == 0:
            raise TrainingError("sensor matrix has rank zero")
    resid = X @ W - z
    train_mse = np.mean(resid ** 2, axis=0)
    return ReadoutWeights(bias=W[0], weights=W[1:].T,
                          sensor_ids=trace.hinge_ids.copy(),
                          train_mse=train_mse)


def closed_loop(mesh, roles, weights: ReadoutWeights, input_u=None,
                duration=None, initial=None, config=None, bound=1e3,
                outage=None, anchors=None, raise_on_divergence=True):
    """Autonomous run: the readout output drives the feedback creases.

    Returns the kernel-level result with the sensor trace, per-record
    outputs z*, body centroid, and anchor state.
    """
    if config is None:
        config = SimConfig()
    roles.validate(mesh)
    if not np.array_equal(weights.sensor_ids, roles.sensor_hinges):
        raise ConfigError("readout weights were trained on other sensors")
    if weights.bias.shape[0] != roles.n_groups and roles.n_groups:
        raise ConfigError(
            f"readout has {weights.bias.shape[0]} channels for "
            f"{roles.n_groups} feedback groups")
    fb_idx, fb_w, fb_group = roles.flat_feedback()
    n_steps = int(round(duration / config.dt))
    in_idx = in_targets = None
    if roles.input_hinges.shape[0]:
        if input_u is None:
            input_u = np.zeros(n_steps)
        in_idx = roles.input_hinges
        in_targets = _command_targets(
            mesh, roles.input_hinges, roles.input_weights,
            np.asarray(input_u)[:n_steps, None])
    return run_closed_loop(
        mesh, config, fb_idx, fb_w, fb_group, weights.bias, weights.weights,
        roles.sensor_hinges, duration, initial=initial,
        in_idx=in_idx, in_targets=in_targets, outage=outage, bound=bound,
        anchors=anchors, raise_on_divergence=raise_on_divergence)


def mse_per_channel(reference, output, window=None):
    """Per-channel mean squared error over the first ``window`` samples."""
    reference = np.atleast_2d(np.asarray(reference, dtype=float).T).T
    output = np.atleast_2d(np.asarray(output, dtype=float).T).T
    if reference.shape != output.shape:
        raise ConfigError(
            f"signal shapes differ: {reference.shape} vs {output.shape}")
    m = reference.shape[0] if window is None else int(window)
    if m > reference.shape[0]:
        raise ConfigError(
            f"window {m} exceeds signal length {reference.shape[0]}")
    d = reference[:m] - output[:m]
    return np.mean(d ** 2, axis=0)


def mse(reference, output, window=None):
    """Combined MSE: Euclidean norm of the per-channel MSEs."""
    per = mse_per_channel(reference, output, window)
    return float(np.linalg.norm(per))


def failure_test(mesh, roles, weights, outage, duration, reference=None,
                 config=None, initial=None, recovery_window=None,
                 threshold=1e-2, bound=1e3):
    """Closed loop with a sensing/actuation outage; checks recovery.

    During the ``(t_on, t_off)`` window sensor readings and feedback
    commands are zeroed (feedback creases fall back to their rest angles).
    ``recovered`` compares the trailing post-outage output with
    ``reference`` (same record grid) when given, else just requires a
    bounded finish.
    """
    if config is None:
        config = SimConfig()
    if not 0 <= outage[0] <= outage[1] <= duration:
        raise ConfigError(f"outage {outage} outside [0, {duration}]")
    res = closed_loop(mesh, roles, weights, duration=duration,
                      initial=initial, config=config, bound=bound,
                      outage=outage, raise_on_divergence=False)
    if res.diverged_step >= 0:
        return res, False
    if reference is None:
        recovered = bool(np.all(np.isfinite(res.outputs)))
    else:
        reference = np.atleast_2d(np.asarray(reference, dtype=float).T).T
        rel = res.trace.times - res.trace.times[0]
        if recovery_window is None:
            recovery_window = (duration - outage[1]) / 2.0
        tail = rel >= duration - recovery_window
        recovered = mse(reference[tail], res.outputs[tail]) < threshold
    return res, recovered
