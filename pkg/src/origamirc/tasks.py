"""Reference and input signal generators for the computing tasks.

Covers the emulation input and its three nonlinear filter targets, the three
limit-cycle patterns, the amplitude-modulated quadratic limit cycle, and the
phase-shifted harmonic set driving the crawler gait.  All generators are
deterministic pure functions on a fixed time grid (dt = 1e-3 s by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SimulationDiverged

DT = 1e-3
EMU_FREQS = (2.11, 3.73, 4.33)
DIVERGENCE_BOUND = 1e6


def emu_input(j, dt=DT, amplitude=0.2, freqs=EMU_FREQS):
    """Triple-sine product input u(j) evaluated at t = j*dt.

    ``j`` may be a scalar step index or an array of indices.
    """
    t = np.asarray(j) * dt
    u = amplitude * np.ones_like(t, dtype=float)
    for f in freqs:
        u = u * np.sin(2.0 * math.pi * f * t)
    return float(u) if np.isscalar(j) else u


def _guard(z, j):
    if not np.isfinite(z) or abs(z) > DIVERGENCE_BOUND:
        raise SimulationDiverged(
            f"filter output exceeded {DIVERGENCE_BOUND:g} at step {j}")


def order2_filter(u):
    """Second-order nonlinear recurrence driven by ``u``.

    z(j+1) = 0.4 z(j) + 0.4 z(j) z(j-1) + 0.6 u(j)^3 + 0.1, zero initial
    history; returns z aligned with u (z[0] = 0).
    """
    u = np.asarray(u, dtype=float)
    z = np.zeros(u.shape[0])
    prev = 0.0
    for j in range(u.shape[0] - 1):
        z[j + 1] = (0.4 * z[j] + 0.4 * z[j] * prev
                    + 0.6 * u[j] ** 3 + 0.1)
        _guard(z[j + 1], j + 1)
        prev = z[j]
    return z


def order10_filter(u):
    """Tenth-order nonlinear recurrence driven by ``u``.

    z(j+1) = 0.3 z(j-1) + 0.05 z(j-1) * sum_{i=1..10} z(j-i)
             + 1.5 u(j-10) u(j-1) + 0.1, with zero-padded history.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    z = np.zeros(n)

    def zat(k):
        return z[k] if k >= 0 else 0.0

    def uat(k):
        return u[k] if k >= 0 else 0.0

    for j in range(n - 1):
        hist = sum(zat(j - i) for i in range(1, 11))
        z[j + 1] = (0.3 * zat(j - 1) + 0.05 * zat(j - 1) * hist
                    + 1.5 * uat(j - 10) * uat(j - 1) + 0.1)
        _guard(z[j + 1], j + 1)
    return z


def volterra_kernel_1d(window=300, dt=DT, mu=0.1, sigma=0.05):
    """Gaussian kernel factor g(tau) = exp(-(tau*dt - mu)^2 / (2 sigma^2))."""
    tau = np.arange(window + 1) * dt
    return np.exp(-((tau - mu) ** 2) / (2.0 * sigma ** 2))


def volterra_series(u, window=300, dt=DT, mu=0.1, sigma=0.05, gain=100.0,
                    method="separable"):
    """Discrete second-order Volterra series with a separable Gaussian kernel.

    z(j+1) = gain * sum_{t1, t2 = 0..window} g(t1) g(t2) u(j-t1) u(j-t2)
           = gain * (sum_t g(t) u(j-t))^2.

    ``method`` 'separable' uses the factorized form (O(window) per step via
    convolution); 'direct' evaluates the double sum and exists to cross-check.
    """
    if window < 1:
        raise ConfigError(f"volterra window must be >= 1, got {window}")
    u = np.asarray(u, dtype=float)
    g = volterra_kernel_1d(window, dt, mu, sigma)
    n = u.shape[0]
    if method == "separable":
        padded = np.concatenate([np.zeros(window), u])
        inner = np.convolve(padded, g, mode="full")[window:window + n]
        z = np.zeros(n)
        z[1:] = gain * inner[:-1] ** 2
        return z
    if method == "direct":
        z = np.zeros(n)
        for j in range(n - 1):
            acc = 0.0
            for t1 in range(window + 1):
                if j - t1 < 0:
                    break
                u1 = u[j - t1]
                for t2 in range(window + 1):
                    if j - t2 < 0:
                        break
                    acc += g[t1] * g[t2] * u1 * u[j - t2]
            z[j + 1] = gain * acc
        return z
    raise ConfigError(f"unknown volterra method {method!r}")


def _rk4_ode(f, x0, dt, n_steps):
    """Fixed-step RK4 for a small ODE system; returns (n_steps+1, dim)."""
    x = np.asarray(x0, dtype=float)
    out = np.empty((n_steps + 1, x.shape[0]))
    out[0] = x
    t = 0.0
    for k in range(n_steps):
        k1 = f(t, x)
        k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = f(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_BOUND:
            raise SimulationDiverged(
                f"trajectory diverged at t={t + dt:.6g} s", t=t + dt)
        t += dt
        out[k + 1] = x
    return out


def quad_lc(duration, dt=DT, eps=1.0, x0=(0.1, 0.0)):
    """Quadratic limit cycle trajectory.

    x1' = x1 + x2 - eps(t) x1 (x1^2 + x2^2)
    x2' = -2 x1 + x2 - x2 (x1^2 + x2^2)

    ``eps`` is a constant or a callable eps(t); it shapes the cycle
    (amplitude shrinks as eps grows).  Returns (times, (n, 2) trajectory).
    """
    eps_fn = eps if callable(eps) else (lambda t: eps)

    def f(t, x):
        r2 = x[0] * x[0] + x[1] * x[1]
        return np.array([x[0] + x[1] - eps_fn(t) * x[0] * r2,
                         -2.0 * x[0] + x[1] - x[1] * r2])

    n = int(round(duration / dt))
    return np.arange(n + 1) * dt, _rk4_ode(f, x0, dt, n)


def vdp_lc(duration, dt=DT, x0=(0.1, 0.0)):
    """Van der Pol limit cycle: x1' = x2, x2' = -x1 + (1 - x1^2) x2."""

    def f(t, x):
        return np.array([x[1], -x[0] + (1.0 - x[0] * x[0]) * x[1]])

    n = int(round(duration / dt))
    return np.arange(n + 1) * dt, _rk4_ode(f, x0, dt, n)


def lissajous(duration, dt=DT, f1=0.5, f2=1.0, delta=math.pi / 2):
    """Lissajous curve x1 = sin(f1 t + delta), x2 = sin(f2 t)."""
    if not f2 > 0:
        raise ConfigError(f"lissajous f2 must be > 0, got {f2}")
    n = int(round(duration / dt))
    t = np.arange(n + 1) * dt
    return t, np.column_stack([np.sin(f1 * t + delta), np.sin(f2 * t)])


def harmonic_gait(duration, dt=DT, n_channels=2, frequency=1.0,
                  amplitude=1.0, phase_step=math.pi / 2):
    """Harmonic channel set, channel k = A sin(2 pi f t - k * phase_step)."""
    if n_channels < 2:
        raise ConfigError(
            f"harmonic set needs >= 2 channels, got {n_channels}")
    n = int(round(duration / dt))
    t = np.arange(n + 1) * dt
    cols = [amplitude * np.sin(2.0 * math.pi * frequency * t - k * phase_step)
            for k in range(n_channels)]
    return t, np.column_stack(cols)


def modulation_schedule(segments):
    """Piecewise-constant eps(t) from [(t_start, value), ...] pairs."""
    starts = np.asarray([s[0] for s in segments])
    values = np.asarray([s[1] for s in segments])
    if np.any(np.diff(starts) <= 0):
        raise ConfigError("modulation segment times must increase")

    def eps(t):
        return float(values[np.searchsorted(starts, t, side="right") - 1])

    return eps


@dataclass(frozen=True)
class SignalSpec:
    """Declarative description of one generated signal set."""

    kind: str
    params: dict = field(default_factory=dict)
    dt: float = DT

    KINDS = ("emu_input", "order2", "order10", "volterra", "quad_lc",
             "vdp_lc", "lissajous", "harmonic_set", "modulated_quad")

    def validate(self):
        if self.kind not in self.KINDS:
            raise ConfigError(
                f"unknown signal kind {self.kind!r}; expected one of "
                f"{', '.join(self.KINDS)}")
        if not self.dt > 0:
            raise ConfigError(f"signal dt must be > 0, got {self.dt}")


def generate(spec: SignalSpec, duration):
    """Materialize a SignalSpec on [0, duration] -> (times, (n, k) columns)."""
    spec.validate()
    n = int(round(duration / spec.dt))
    t = np.arange(n + 1) * spec.dt
    p = dict(spec.params)
    if spec.kind == "emu_input":
        return t, emu_input(np.arange(n + 1), dt=spec.dt, **p)[:, None]
    if spec.kind in ("order2", "order10", "volterra"):
        u = emu_input(np.arange(n + 1), dt=spec.dt)
        fn = {"order2": order2_filter, "order10": order10_filter,
              "volterra": volterra_series}[spec.kind]
        if spec.kind == "volterra":
            return t, fn(u, dt=spec.dt, **p)[:, None]
        return t, fn(u, **p)[:, None]
    if spec.kind == "quad_lc":
        return quad_lc(duration, dt=spec.dt, **p)
    if spec.kind == "modulated_quad":
        eps = modulation_schedule(p.pop("segments"))
        return quad_lc(duration, dt=spec.dt, eps=eps, **p)
    if spec.kind == "vdp_lc":
        return vdp_lc(duration, dt=spec.dt, **p)
    if spec.kind == "lissajous":
        return lissajous(duration, dt=spec.dt, **p)
    return harmonic_gait(duration, dt=spec.dt, **p)


def signals_to_csv(times, channels, path):
    """Write `t, ch0, ch1, ...` CSV for cross-checking and plotting."""
    channels = np.atleast_2d(np.asarray(channels))
    if channels.shape[0] != times.shape[0]:
        channels = channels.T
    header = "t," + ",".join(f"ch{k}" for k in range(channels.shape[1]))
    np.savetxt(path, np.column_stack([times, channels]), delimiter=",",
               header=header, comments="")
