"""Command-line entry point: every workflow behind one reproducible CLI.

Each command resolves its configuration (shipped defaults <- YAML config
file <- command-line flags), runs the corresponding pipeline, and writes a
run directory containing the output files plus a ``manifest.json`` that
records the fully resolved configuration.  ``origamirc rerun --manifest``
re-executes any manifest and reproduces the data files bit-identically.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 every design in a search failed.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .backend import backend_name
from .dynamics import SimConfig, corner_pins, simulate
from .errors import (ConfigError, DesignError, OrigamiError,
                     SimulationDiverged, TrainingError)
from .locomotion import (build_crawler, crawl_log_to_csv, crawler_config,
                         run_crawl, train_gait)
from .mesh import Material, MiuraDesign, build_miura
from .sweep import (DEFAULT_MODULATION_SEGMENTS, MODULATION_PROTOCOL,
                    EmulationProtocol,
                    PatternProtocol, aligned_mse, feedback_search,
                    fraction_study, geometry_landscape, grid_to_csv,
                    perturbation_sweep, run_emulation, run_modulation,
                    run_pattern)
from .tasks import lissajous, quad_lc, vdp_lc

PATTERN_TASKS = ("quad_lc", "vdp_lc", "lissajous")

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ALL_FAILED = 4

# every configurable knob with its shipped default; a config file or flag
# may override any leaf, unknown keys are rejected with their field path
DEFAULTS = {
    "seed": 0,
    "task": "quad_lc",
    "duration": 100.0,
    "jobs": 1,
    "outage": None,             # [start, end] s, closed-loop relative
    "use_anchors": True,
    "design": {f.name: f.default for f in dataclasses.fields(MiuraDesign)},
    "material": {f.name: f.default for f in dataclasses.fields(Material)},
    "sim": {
        "dt": 1e-3,
        "zeta": 0.2,
        "gravity_on": False,
        "record_stride": 1,
        "pinned": "corners",        # "corners" | "none" | [node ids]
        "ground_stiffness": 0.0,
        "ground_damping": 0.0,
    },
    "pattern": {f.name: f.default
                for f in dataclasses.fields(PatternProtocol)},
    "emulation": {f.name: f.default
                  for f in dataclasses.fields(EmulationProtocol)},
    "modulation": {
        "segments": [list(s) for s in DEFAULT_MODULATION_SEGMENTS],
        # the modulated loop needs much longer training than the plain
        # pattern task; these override the pattern windows for `modulate`
        "teacher_duration": MODULATION_PROTOCOL.teacher_duration,
        "washout": MODULATION_PROTOCOL.washout,
        "train_window": MODULATION_PROTOCOL.train_window,
        "eval_duration": MODULATION_PROTOCOL.eval_duration,
        "eval_window": MODULATION_PROTOCOL.eval_window,
    },
    "sweep": {
        "kind": "feedback",
        "n_designs": 72,
        "base_seed": 0,
        "mass_range": [0.001, 0.050],
        "stiffness_range": [0.005, 0.5],
        "ab_ratios": [1.0, 1.5, 2.0, 2.5, 3.0],
        "gammas_deg": [40.0, 45.0, 50.0, 55.0, 60.0],
        "thetas_deg": [50.0, 60.0, 70.0],
        "fractions": [0.2, 0.3, 0.4, 0.5],
        "sensing": "all",
    },
    "crawler": {
        "n_rows": 9,
        "n_cols": 3,
        "gap": None,
        "bridge_factor": 100.0,
        "weight_scale": 0.7,
        "frequency": 0.5,
        "amplitude": 1.0,
        "train_duration": 100.0,
        "washout": 15.0,
        "teacher_noise": 1e-2,
        "clean_tail": 5.0,
        "ground_stiffness": 1e4,
        "ground_damping": 10.0,
    },
    "outputs": {
        "trace_stride": 10,         # row decimation for written trace CSVs
    },
}


# ---------------------------------------------------------------------------
# configuration resolution


def _merge(base, override, path=""):
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def resolve_config(config_path=None, overrides=None):
    """Shipped defaults, overlaid with a YAML file, then flag overrides."""
    cfg = DEFAULTS
    if config_path:
        with open(config_path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_path}: config must be a mapping")
        cfg = _merge(cfg, loaded)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def _build_mesh(cfg):
    design = MiuraDesign(**cfg["design"])
    material = Material(**cfg["material"])
    return build_miura(design, material)


def _sim_config(cfg, mesh):
    sim = cfg["sim"]
    pinned = sim["pinned"]
    if pinned == "corners":
        pins = corner_pins(mesh)
    elif pinned == "none" or pinned is None:
        pins = ()
    elif isinstance(pinned, (list, tuple)):
        pins = tuple(int(p) for p in pinned)
    else:
        raise ConfigError(
            f"sim.pinned must be 'corners', 'none', or a node list, "
            f"got {pinned!r}")
    return SimConfig(dt=sim["dt"], zeta=sim["zeta"],
                     gravity_on=sim["gravity_on"],
                     pinned_nodes=pins,
                     record_stride=sim["record_stride"],
                     ground_stiffness=sim["ground_stiffness"],
                     ground_damping=sim["ground_damping"])


def _pattern_protocol(cfg):
    return PatternProtocol(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in cfg["pattern"].items()})


def _pattern_target(task, duration, dt):
    if task not in PATTERN_TASKS:
        raise ConfigError(
            f"task: expected one of {', '.join(PATTERN_TASKS)}, got {task!r}")
    fn = {"quad_lc": quad_lc, "vdp_lc": vdp_lc, "lissajous": lissajous}[task]
    _, target = fn(duration, dt=dt)
    return target


def _parse_outage(text):
    """'start,end' in seconds; a single value means a 10 s outage."""
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        return (parts[0], parts[0] + 10.0)
    if len(parts) == 2:
        return (parts[0], parts[1])
    raise ConfigError(f"outage: expected 'start[,end]', got {text!r}")


# ---------------------------------------------------------------------------
# output writers


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_trace(trace, path, stride):
    if stride <= 1:
        trace.to_csv(path)
        return
    decimated = dataclasses.replace(
        trace, times=trace.times[::stride], phi=trace.phi[::stride])
    decimated.to_csv(path)


def _write_outputs_csv(path, times, outputs, reference, extra=None):
    n_ch = outputs.shape[1]
    cols = [times, outputs, reference[:, :n_ch]]
    header = ("t," + ",".join(f"out{k}" for k in range(n_ch)) + ","
              + ",".join(f"ref{k}" for k in range(n_ch)))
    if extra is not None:
        name, values = extra
        header += f",{name}"
        cols.append(np.asarray(values)[:, None])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
               comments="")


def _write_manifest(command, cfg, out_dir, files):
    _write_json(out_dir / "manifest.json", {
        "tool": "origamirc",
        "version": __version__,
        "backend": backend_name(),
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": cfg,
        "outputs": sorted(files),
    })


# ---------------------------------------------------------------------------
# command bodies (shared by the click wrappers and `rerun`)


def _exec_simulate(cfg, out_dir):
    mesh = _build_mesh(cfg)
    config = _sim_config(cfg, mesh)
    trace, _ = simulate(mesh, config, duration=cfg["duration"])
    _write_trace(trace, out_dir / "trace.csv",
                 cfg["outputs"]["trace_stride"])
    return ["trace.csv"], 0


def _exec_emulate(cfg, out_dir):
    mesh = _build_mesh(cfg)
    config = _sim_config(cfg, mesh)
    protocol = EmulationProtocol(**cfg["emulation"])
    result = run_emulation(mesh, seed=cfg["seed"], protocol=protocol,
                           config=config)
    files = []
    for task, weights in result.weights.items():
        name = f"weights_{task}.json"
        weights.to_json(out_dir / name)
        files.append(name)
    _write_trace(result.trace, out_dir / "trace.csv",
                 cfg["outputs"]["trace_stride"])
    files.append("trace.csv")
    _write_json(out_dir / "mse_report.json", {
        "seed": result.seed,
        "train_mse": result.train_mse,
        "test_mse": result.test_mse,
    })
    files.append("mse_report.json")
    return files, 0


def _pattern_report(result, task, outage=None, recovery_mse=None):
    report = {
        "task": task,
        "seed": result.seed,
        "train_mse": result.train_mse,
        "closed_mse": result.closed_mse,
        "failed": bool(result.failed),
        "diverged_step": int(result.diverged_step),
    }
    if outage is not None:
        report["outage"] = list(outage)
        report["recovery_mse"] = recovery_mse
    return report


def _recovery_mse(result, protocol, outage, dt):
    """Phase-free MSE of the trailing window after the outage ends."""
    if result.outputs is None:
        return None
    tail_start = int(round(outage[1] / dt))
    tail = result.outputs[tail_start:]
    window = min(protocol.eval_window, tail.shape[0])
    if window < 2:
        return None
    return float(aligned_mse(result.reference, tail[-window:],
                             window=window))


def _exec_pattern(cfg, out_dir):
    mesh = _build_mesh(cfg)
    config = _sim_config(cfg, mesh)
    outage = tuple(cfg["outage"]) if cfg["outage"] else None
    protocol = _pattern_protocol(cfg).for_task(cfg["task"])
    total = protocol.teacher_duration + protocol.eval_duration
    target = _pattern_target(cfg["task"], total, config.dt)
    result = run_pattern(mesh, target, cfg["seed"], protocol=protocol,
                         config=config, outage=outage)
    files = ["weights.json", "mse_report.json"]
    result.weights.to_json(out_dir / "weights.json")
    recovery = None
    if outage is not None:
        recovery = _recovery_mse(result, protocol, outage, config.dt)
    _write_json(out_dir / "mse_report.json",
                _pattern_report(result, cfg["task"], outage, recovery))
    if result.outputs is not None:
        times = np.arange(result.outputs.shape[0]) * config.dt
        _write_outputs_csv(out_dir / "outputs.csv", times, result.outputs,
                           result.reference)
        files.append("outputs.csv")
    return files, (EXIT_DIVERGED if result.failed else 0)


def _exec_modulate(cfg, out_dir):
    mesh = _build_mesh(cfg)
    config = _sim_config(cfg, mesh)
    mod = cfg["modulation"]
    protocol = dataclasses.replace(
        _pattern_protocol(cfg),
        teacher_duration=mod["teacher_duration"], washout=mod["washout"],
        train_window=mod["train_window"],
        eval_duration=mod["eval_duration"],
        eval_window=mod["eval_window"])
    segments = tuple(tuple(s) for s in mod["segments"])
    result, eps = run_modulation(mesh, cfg["seed"], segments=segments,
                                 protocol=protocol, config=config)
    files = ["weights.json", "mse_report.json"]
    result.weights.to_json(out_dir / "weights.json")
    _write_json(out_dir / "mse_report.json",
                _pattern_report(result, "modulated_quad"))
    if result.outputs is not None:
        n = result.outputs.shape[0]
        times = np.arange(n) * config.dt
        n_teach = int(round(protocol.for_task("modulated_quad")
                            .teacher_duration / config.dt))
        _write_outputs_csv(out_dir / "outputs.csv", times, result.outputs,
                           result.reference,
                           extra=("eps", eps[n_teach:n_teach + n]))
        files.append("outputs.csv")
    return files, (EXIT_DIVERGED if result.failed else 0)


def _exec_sweep(cfg, out_dir):
    mesh = _build_mesh(cfg)
    sweep = cfg["sweep"]
    protocol = _pattern_protocol(cfg).for_task(cfg["task"])
    total = protocol.teacher_duration + protocol.eval_duration
    target = _pattern_target(cfg["task"], total, cfg["sim"]["dt"])
    kind = sweep["kind"]
    jobs = cfg["jobs"]
    files = []
    if kind == "feedback":
        result, best = feedback_search(
            mesh, target, n_designs=sweep["n_designs"],
            master_seed=cfg["seed"], protocol=protocol, jobs=jobs)
        best.weights.to_json(out_dir / "best_weights.json")
        files.append("best_weights.json")
        agg = result.aggregates()
        agg["best_seed"] = best.seed
        results = [(result, "results.csv", agg, "aggregates.json")]
    elif kind in ("mass", "stiffness", "imperfection"):
        result = perturbation_sweep(
            mesh, target, kind=kind, base_seed=sweep["base_seed"],
            n_samples=sweep["n_designs"], master_seed=cfg["seed"],
            protocol=protocol, jobs=jobs,
            mass_range=tuple(sweep["mass_range"]),
            stiffness_range=tuple(sweep["stiffness_range"]))
        results = [(result, "results.csv", result.aggregates(),
                    "aggregates.json")]
    elif kind == "geometry":
        gammas = [np.radians(g) for g in sweep["gammas_deg"]]
        thetas = [np.radians(t) for t in sweep["thetas_deg"]]
        result, grids = geometry_landscape(
            MiuraDesign(**cfg["design"]), target,
            ab_ratios=sweep["ab_ratios"], gammas=gammas, thetas=thetas,
            role_seed=cfg["seed"], material=Material(**cfg["material"]),
            protocol=protocol, jobs=jobs)
        for theta_deg, theta in zip(sweep["thetas_deg"], thetas):
            name = f"landscape_theta{int(round(theta_deg))}.csv"
            grid_to_csv(grids[theta], sweep["ab_ratios"], gammas,
                        out_dir / name)
            files.append(name)
        results = [(result, "results.csv", result.aggregates(),
                    "aggregates.json")]
    elif kind == "fraction":
        study = fraction_study(
            mesh, target, fractions=tuple(sweep["fractions"]),
            n_designs=sweep["n_designs"], master_seed=cfg["seed"],
            sensing=sweep["sensing"], protocol=protocol, jobs=jobs)
        results = [
            (res, f"results_frac{int(round(100 * frac))}.csv",
             res.aggregates(), f"aggregates_frac{int(round(100 * frac))}.json")
            for frac, res in study.items()]
    else:
        raise ConfigError(
            f"sweep.kind: expected feedback, mass, stiffness, imperfection, "
            f"geometry, or fraction, got {kind!r}")
    for result, csv_name, agg, json_name in results:
        result.to_csv(out_dir / csv_name)
        _write_json(out_dir / json_name, agg)
        files += [csv_name, json_name]
    return files, 0


def _exec_crawl(cfg, out_dir):
    use_anchors = cfg["use_anchors"]
    crawler = cfg["crawler"]
    strip = MiuraDesign(**{**cfg["design"],
                           "n_rows": crawler["n_rows"],
                           "n_cols": crawler["n_cols"]})
    mesh, design = build_crawler(
        strip=strip, material=Material(**cfg["material"]),
        gap=crawler["gap"], bridge_factor=crawler["bridge_factor"],
        weight_scale=crawler["weight_scale"])
    config = crawler_config(dt=cfg["sim"]["dt"], zeta=cfg["sim"]["zeta"],
                            ground_stiffness=crawler["ground_stiffness"],
                            ground_damping=crawler["ground_damping"],
                            record_stride=cfg["sim"]["record_stride"])
    gait = train_gait(mesh, design, duration=crawler["train_duration"],
                      washout=crawler["washout"],
                      frequency=crawler["frequency"],
                      amplitude=crawler["amplitude"],
                      teacher_noise=crawler["teacher_noise"],
                      clean_tail=crawler["clean_tail"], config=config,
                      seed=cfg["seed"])
    files = ["gait_weights.json", "crawl_report.json"]
    gait.weights.to_json(out_dir / "gait_weights.json")
    report = {"seed": cfg["seed"], "train_mse": gait.train_mse,
              "use_anchors": use_anchors}
    status = 0
    duration = cfg["duration"]
    if duration > 0:
        crawl = run_crawl(mesh, design, gait, duration=duration,
                          use_anchors=use_anchors, config=config)
        crawl_log_to_csv(crawl, out_dir / "crawl_log.csv")
        files.append("crawl_log.csv")
        n_cycles = duration * crawler["frequency"]
        report.update(
            duration=duration,
            displacement=crawl.displacement,
            displacement_per_cycle=crawl.displacement / n_cycles,
            n_cycles=n_cycles,
            failed=bool(crawl.failed),
            diverged_step=int(crawl.diverged_step))
        if crawl.failed:
            status = EXIT_DIVERGED
    _write_json(out_dir / "crawl_report.json", report)
    return files, status


# ---------------------------------------------------------------------------
# dispatch


def _run(command, cfg, out_dir):
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        body = {
            "simulate": _exec_simulate,
            "emulate": _exec_emulate,
            "pattern": _exec_pattern,
            "modulate": _exec_modulate,
            "sweep": _exec_sweep,
            "crawl": _exec_crawl,
        }[command]
        files, status = body(cfg, out_dir)
    except (ConfigError, DesignError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except SimulationDiverged as exc:
        click.echo(f"simulation diverged: {exc}", err=True)
        sys.exit(EXIT_DIVERGED)
    except TrainingError as exc:
        click.echo(f"training failed: {exc}", err=True)
        sys.exit(EXIT_ALL_FAILED)
    except OrigamiError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    _write_manifest(command, cfg, out_dir, files + ["manifest.json"])
    if status:
        click.echo("closed loop diverged; outputs flagged failed", err=True)
    sys.exit(status)


def _resolve_or_exit(config, overrides):
    try:
        return resolve_config(config, overrides)
    except (ConfigError, DesignError, OSError, yaml.YAMLError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _common(fn):
    fn = click.option("--config", type=click.Path(exists=True, dir_okay=False),
                      default=None, help="YAML config file.")(fn)
    fn = click.option("--out-dir", default=None,
                      help="Run output directory (default run_<command>).")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Master seed override.")(fn)
    fn = click.option("--dt", type=float, default=None,
                      help="Integration step override (s).")(fn)
    return fn


def _overrides(seed=None, dt=None, **extra):
    out = {}
    if seed is not None:
        out["seed"] = seed
    if dt is not None:
        out["sim"] = {"dt": dt}
    for key, value in extra.items():
        if value is not None:
            out[key] = value
    return out


@click.group()
@click.version_option(__version__)
def main():
    """Miura-ori folding dynamics as a physical reservoir computer."""


@main.command("simulate")
@_common
@click.option("--duration", type=float, default=None,
              help="Simulated time (s).")
def simulate_cmd(config, out_dir, seed, dt, duration):
    """Integrate the bar-and-hinge dynamics and export the hinge trace."""
    cfg = _resolve_or_exit(config, _overrides(seed, dt, duration=duration))
    _run("simulate", cfg, out_dir or "run_simulate")


@main.command()
@_common
def emulate(config, out_dir, seed, dt):
    """Train filter-emulation readouts on one open-loop run."""
    cfg = _resolve_or_exit(config, _overrides(seed, dt))
    _run("emulate", cfg, out_dir or "run_emulate")


@main.command()
@_common
@click.option("--task", type=click.Choice(PATTERN_TASKS), default=None)
@click.option("--outage", default=None,
              help="Sensing outage 'start[,end]' (s, closed-loop relative).")
def pattern(config, out_dir, seed, dt, task, outage):
    """Train a pattern generator and run it closed loop."""
    try:
        window = list(_parse_outage(outage)) if outage else None
    except (ConfigError, ValueError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    cfg = _resolve_or_exit(config, _overrides(seed, dt, task=task,
                                              outage=window))
    _run("pattern", cfg, out_dir or "run_pattern")


@main.command()
@_common
def modulate(config, out_dir, seed, dt):
    """Amplitude-modulated quadratic cycle driven by an input schedule."""
    cfg = _resolve_or_exit(config, _overrides(seed, dt))
    _run("modulate", cfg, out_dir or "run_modulate")


@main.command()
@_common
@click.option("--kind", default=None,
              type=click.Choice(["feedback", "mass", "stiffness",
                                 "imperfection", "geometry", "fraction"]))
@click.option("--n", "n_designs", type=int, default=None,
              help="Designs/samples per sweep.")
@click.option("--task", type=click.Choice(PATTERN_TASKS), default=None)
@click.option("--jobs", type=int, default=None,
              help="Parallel worker count.")
@click.option("--thetas", default=None,
              help="Comma-separated fold angles in degrees (geometry).")
def sweep(config, out_dir, seed, dt, kind, n_designs, task, jobs, thetas):
    """Parametric studies: design search, perturbations, landscapes."""
    sweep_over = {}
    if kind is not None:
        sweep_over["kind"] = kind
    if n_designs is not None:
        sweep_over["n_designs"] = n_designs
    if thetas is not None:
        sweep_over["thetas_deg"] = [float(t) for t in thetas.split(",")]
    cfg = _resolve_or_exit(config, _overrides(
        seed, dt, task=task, jobs=jobs,
        sweep=sweep_over or None))
    _run("sweep", cfg, out_dir or "run_sweep")


@main.command()
@_common
@click.option("--duration", type=float, default=None,
              help="Crawl time (s); 0 trains the gait only.")
@click.option("--no-anchors", is_flag=True, default=False,
              help="Disable the fold-activated anchors (control run).")
def crawl(config, out_dir, seed, dt, duration, no_anchors):
    """Train the peristaltic gait and run the autonomous crawler."""
    cfg = _resolve_or_exit(config, _overrides(
        seed, dt, duration=duration,
        use_anchors=False if no_anchors else None))
    _run("crawl", cfg, out_dir or "run_crawl")


@main.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="manifest.json of a previous run.")
@click.option("--out-dir", default=None,
              help="Output directory (default rerun_<command>).")
def rerun(manifest_path, out_dir):
    """Re-execute a run from its manifest, reproducing outputs exactly."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for key in ("command", "config"):
        if key not in manifest:
            click.echo(f"configuration error: manifest missing {key!r}",
                       err=True)
            sys.exit(EXIT_CONFIG)
    command = manifest["command"]
    _run(command, manifest["config"], out_dir or f"rerun_{command}")


if __name__ == "__main__":
    main()
