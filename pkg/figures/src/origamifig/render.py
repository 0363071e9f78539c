"""Figure builders for the five supported kinds.

``render`` reads and validates every input before any drawing happens, so
a schema error never leaves a partial image behind.  The same inputs and
options always produce byte-identical PNG output.
"""

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LogNorm  # noqa: E402

from .io import (SchemaError, read_aggregates, read_crawl, read_landscape,
                 read_outputs, read_results, read_trace)

FIGURE_KINDS = ("overlay", "phase_portrait", "mse_bars", "landscape",
                "crawl")

_OUT_COLOR = "tab:blue"
_REF_COLOR = "tab:red"
_FAIL_COLOR = "white"


@dataclass(frozen=True)
class FigureJob:
    """One figure to render: input files, kind, options, output path."""

    kind: str
    inputs: tuple = ()
    output: str = "figure.png"
    stride: int = 1
    title: str = None
    dpi: int = 150

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; "
                              f"expected one of {', '.join(FIGURE_KINDS)}")
        if isinstance(self.inputs, str):
            object.__setattr__(self, "inputs", (self.inputs,))
        else:
            object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.inputs:
            raise SchemaError("at least one input file is required")
        if self.kind != "mse_bars" and len(self.inputs) != 1:
            raise SchemaError(f"kind {self.kind!r} takes exactly one "
                              f"input file, got {len(self.inputs)}")
        if self.stride < 1:
            raise SchemaError("stride must be >= 1")


def render(job):
    """Render ``job`` and write its image; returns the output path."""
    builder = _BUILDERS[job.kind]
    fig = builder(job)
    try:
        if job.title:
            fig.suptitle(job.title)
        fig.savefig(job.output, dpi=job.dpi,
                    metadata={"Software": "origamifig"})
    finally:
        plt.close(fig)
    return job.output


# ---------------------------------------------------------------------------
# builders (one per kind)


def _label(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    return stem


def build_overlay(job):
    """Time series of each output channel over its reference."""
    t, out, ref, eps = read_outputs(job.inputs[0])
    s = slice(None, None, job.stride)
    t, out = t[s], out[s]
    ref = ref[s] if ref is not None else None
    eps = eps[s] if eps is not None else None
    n_ch = out.shape[1]
    n_rows = n_ch + (1 if eps is not None else 0)
    fig, axes = plt.subplots(n_rows, 1, sharex=True,
                             figsize=(8.0, 2.0 * n_rows), squeeze=False)
    axes = axes[:, 0]
    for k in range(n_ch):
        ax = axes[k]
        if ref is not None:
            ax.plot(t, ref[:, k], color=_REF_COLOR, lw=1.8, alpha=0.6,
                    label=f"ref{k}")
        ax.plot(t, out[:, k], color=_OUT_COLOR, lw=0.9, label=f"out{k}")
        ax.set_ylabel(f"channel {k}")
        ax.legend(loc="upper right", fontsize="small")
    if eps is not None:
        axes[-1].plot(t, eps, color="tab:green", lw=1.2)
        axes[-1].set_ylabel("eps")
    axes[-1].set_xlabel("time (s)")
    fig.tight_layout()
    return fig


def build_phase_portrait(job):
    """First two channels against each other, with reference overlay.

    Accepts either a closed-loop outputs file (``out*``/``ref*``) or a
    crease-angle trace (first two ``phi_<id>`` columns).
    """
    path = job.inputs[0]
    try:
        _, out, ref, _ = read_outputs(path)
        names = ("out0", "out1")
    except SchemaError as outputs_err:
        try:
            _, phi, phi_names = read_trace(path)
        except SchemaError:
            raise outputs_err
        out, ref, names = phi, None, tuple(phi_names[:2])
    if out.shape[1] < 2:
        raise SchemaError(f"{path}: phase portrait needs at least two "
                          f"channels, found {out.shape[1]}")
    s = slice(None, None, job.stride)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    if ref is not None:
        ax.plot(ref[s, 0], ref[s, 1], color=_REF_COLOR, lw=2.2, alpha=0.5,
                label="reference")
    ax.plot(out[s, 0], out[s, 1], color=_OUT_COLOR, lw=0.9,
            label="output")
    ax.set_xlabel(names[0])
    ax.set_ylabel(names[1])
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    return fig


def _bar_stats(path):
    if path.endswith(".json"):
        agg = read_aggregates(path)
        if agg["mean"] is None:
            raise SchemaError(f"{path}: every design failed; no "
                              "statistics to plot")
        return (agg["mean"], agg["std"], agg["min"], agg["max"],
                agg["n_failed"])
    mse, failed = read_results(path)
    ok = mse[~failed & np.isfinite(mse)]
    if ok.size == 0:
        raise SchemaError(f"{path}: every design failed; no statistics "
                          "to plot")
    return (float(ok.mean()), float(ok.std()), float(ok.min()),
            float(ok.max()), int(failed.sum()))


def build_mse_bars(job):
    """One bar per input file: mean MSE, std circles, extreme whiskers."""
    stats = [_bar_stats(p) for p in job.inputs]
    labels = [_label(p) for p in job.inputs]
    x = np.arange(len(stats))
    means = np.array([s[0] for s in stats])
    stds = np.array([s[1] for s in stats])
    lows = np.array([s[2] for s in stats])
    highs = np.array([s[3] for s in stats])
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(stats), 4.5))
    ax.bar(x, means, width=0.6, color="lightsteelblue",
           edgecolor="black", zorder=2, label="mean")
    ax.vlines(x, lows, highs, color="black", lw=1.2, zorder=3)
    caps = 0.12
    ax.hlines(lows, x - caps, x + caps, color="black", lw=1.2, zorder=3)
    ax.hlines(highs, x - caps, x + caps, color="black", lw=1.2, zorder=3)
    upper = means + stds
    lower = np.maximum(means - stds, np.minimum(lows, means) * 0.5)
    ax.scatter(x, upper, facecolor="white", edgecolor="black", zorder=4,
               label="mean ± std")
    ax.scatter(x, lower, facecolor="white", edgecolor="black", zorder=4)
    for xi, s in zip(x, stats):
        if s[4]:
            ax.annotate(f"{s[4]} failed", (xi, highs[xi]),
                        textcoords="offset points", xytext=(0, 6),
                        ha="center", fontsize="small")
    if means.min() > 0:
        ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("closed-loop MSE")
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    return fig


def build_landscape(job):
    """Gamma versus a/b ratio heatmap; failed designs render white."""
    gammas, ratios, grid = read_landscape(job.inputs[0])
    masked = np.ma.masked_invalid(grid)
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad(_FAIL_COLOR)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.set_facecolor(_FAIL_COLOR)
    finite = masked.compressed()
    norm = (LogNorm(vmin=finite.min(), vmax=finite.max())
            if finite.size and finite.min() > 0
            and finite.min() < finite.max() else None)
    gammas_deg = np.degrees(gammas)
    mesh = ax.pcolormesh(ratios, gammas_deg, masked, cmap=cmap, norm=norm,
                         shading="nearest", edgecolors="0.85", lw=0.3)
    fig.colorbar(mesh, ax=ax, label="closed-loop MSE")
    ax.set_xlabel("a/b ratio")
    ax.set_ylabel("gamma (deg)")
    fig.tight_layout()
    return fig


def _popcount(values):
    return np.array([bin(int(v)).count("1") for v in values])


def build_crawl(job):
    """Centroid trajectory, anchor engagement, and gait channels."""
    t, centroid, channels, anchors = read_crawl(job.inputs[0])
    s = slice(None, None, job.stride)
    t, centroid, anchors = t[s], centroid[s], anchors[s]
    channels = channels[s]
    fig, (ax_x, ax_ch) = plt.subplots(2, 1, sharex=True,
                                      figsize=(8.0, 5.5))
    dx = (centroid[:, 0] - centroid[0, 0]) * 1e3
    ax_x.plot(t, dx, color=_OUT_COLOR, lw=1.4, label="centroid x")
    ax_x.set_ylabel("displacement (mm)")
    engaged = _popcount(anchors)
    ax_anchor = ax_x.twinx()
    ax_anchor.fill_between(t, engaged, step="mid", color="tab:orange",
                           alpha=0.25, lw=0)
    ax_anchor.set_ylabel("anchors engaged", color="tab:orange")
    ax_x.legend(loc="upper left", fontsize="small")
    if channels.shape[1]:
        for k in range(channels.shape[1]):
            ax_ch.plot(t, channels[:, k], lw=0.9, label=f"ch{k}")
        ax_ch.legend(loc="upper right", fontsize="small",
                     ncol=max(1, channels.shape[1] // 2))
    ax_ch.set_ylabel("gait command")
    ax_ch.set_xlabel("time (s)")
    fig.tight_layout()
    return fig


_BUILDERS = {
    "overlay": build_overlay,
    "phase_portrait": build_phase_portrait,
    "mse_bars": build_mse_bars,
    "landscape": build_landscape,
    "crawl": build_crawl,
}
