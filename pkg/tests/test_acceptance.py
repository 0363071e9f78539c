"""End-to-end acceptance checks.

Each test re-runs one headline experiment at full scale on the 9x9
baseline sheet and prints a single pass/fail line.  The whole module
takes roughly an hour single-core (the three 72-design searches dominate)
and is safe to run with ``pytest tests/test_acceptance.py -s`` to watch
the lines appear.
"""

import json
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from origamirc.cli import main as cli_main
from origamirc.dynamics import (SimConfig, SimState, corner_pins,
                                mechanical_energy, simulate)
from origamirc.mesh import (MiuraDesign, build_miura, dihedral_angle,
                            dihedral_gradient)
from origamirc.reservoir import closed_loop
from origamirc.sweep import (EmulationProtocol, PatternProtocol,
                             aligned_mse, feedback_search, fraction_study,
                             geometry_landscape, perturbation_sweep,
                             run_emulation, run_modulation, run_pattern)
from origamirc.tasks import lissajous, quad_lc, vdp_lc
from origamirc.locomotion import (build_crawler, crawler_config, run_crawl,
                                  settle, train_gait)

DT = 1e-3
EVAL_WINDOW = 10000
TASKS = {"quad_lc": quad_lc, "vdp_lc": vdp_lc, "lissajous": lissajous}
MSE_BARS = {"quad_lc": 1e-5, "vdp_lc": 1e-3, "lissajous": 1e-2}


def report(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"{status}: {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


@lru_cache(maxsize=None)
def baseline_mesh():
    return build_miura(MiuraDesign())


@lru_cache(maxsize=None)
def loop_config():
    return SimConfig(record_stride=1,
                     pinned_nodes=corner_pins(baseline_mesh()))


@lru_cache(maxsize=None)
def task_setup(task):
    proto = PatternProtocol().for_task(task)
    _, target = TASKS[task](proto.teacher_duration + proto.eval_duration)
    return proto, target


@lru_cache(maxsize=None)
def pattern_search(task):
    """Best-of-72 random feedback designs for one limit-cycle task."""
    proto, target = task_setup(task)
    result, best = feedback_search(baseline_mesh(), target, n_designs=72,
                                   master_seed=0, protocol=proto)
    return result, best


def loop_bound(proto, target):
    return proto.bound_factor * float(np.abs(target).max()) * proto.scale


def rest_start_tail_mse(best, proto, target, duration=1000.0):
    """Trailing-window MSE of a closed loop started from total rest."""
    res = closed_loop(baseline_mesh(), best.roles, best.weights,
                      duration=duration, config=loop_config(),
                      bound=loop_bound(proto, target),
                      raise_on_divergence=False)
    if res.diverged_step >= 0:
        return float("inf")
    outputs = res.outputs / proto.scale
    return aligned_mse(target, outputs[-EVAL_WINDOW:], EVAL_WINDOW)


# ---------------------------------------------------------------------------
# mechanics oracles


def test_dihedral_gradients_match_finite_differences():
    mesh = baseline_mesh()
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    checked = 0
    h = 1e-6
    for k in range(100):
        pos = mesh.positions + 2e-3 * rng.standard_normal(
            mesh.positions.shape)
        hinge = mesh.hinge_nodes[rng.integers(mesh.hinge_nodes.shape[0])]
        grad = dihedral_gradient(pos, hinge)
        for slot in range(4):
            for axis in range(3):
                bumped = pos.copy()
                bumped[hinge[slot], axis] += h
                fwd = dihedral_angle(bumped, hinge)
                bumped[hinge[slot], axis] -= 2 * h
                bwd = dihedral_angle(bumped, hinge)
                fd = (fwd - bwd) / (2 * h)
                denom = max(abs(fd), 1e-3)
                worst = max(worst, abs(grad[slot, axis] - fd) / denom)
        checked += 1
    elapsed = time.perf_counter() - start
    report("analytic dihedral gradients match finite differences",
           worst < 1e-5 and checked >= 100 and elapsed < 10.0,
           f"worst rel err {worst:.2e} on {checked} configs, "
           f"{elapsed:.2f} s")


def test_undamped_vibration_conserves_energy_and_momentum():
    mesh = build_miura(MiuraDesign(n_rows=5, n_cols=5))
    config = SimConfig(dt=1e-4, zeta=0.0, record_stride=10000)
    rng = np.random.default_rng(1)

    # small-amplitude free vibration around the folded state
    pos = mesh.positions + 2e-5 * rng.standard_normal(mesh.positions.shape)
    state = SimState(0.0, pos, np.zeros_like(pos))
    e0 = mechanical_energy(mesh, state)
    _, final = simulate(mesh, config, duration=1.0, initial=state)
    energy_drift = abs(mechanical_energy(mesh, final) - e0) / e0

    # uniform drift plus the same vibration carries net momentum
    vel = np.zeros_like(pos)
    vel[:, 0] = 5e-3
    state = SimState(0.0, pos.copy(), vel)
    p0 = (mesh.masses[:, None] * state.velocities).sum(axis=0)
    _, final = simulate(mesh, config, duration=1.0, initial=state)
    p1 = (mesh.masses[:, None] * final.velocities).sum(axis=0)
    momentum_drift = np.linalg.norm(p1 - p0) / np.linalg.norm(p0)

    report("undamped free vibration conserves energy and momentum",
           energy_drift < 0.005 and momentum_drift < 1e-6,
           f"energy drift {energy_drift:.2e} (< 0.5%), momentum drift "
           f"{momentum_drift:.2e} (< 1e-6)")


def test_seven_by_seven_sheet_exposes_sixty_creases():
    mesh = build_miura(MiuraDesign(n_rows=7, n_cols=7))
    n_creases = int(mesh.crease_indices.shape[0])
    report("7x7 sheet exposes exactly 60 crease dihedral angles",
           n_creases == 60, f"found {n_creases}")


# ---------------------------------------------------------------------------
# reservoir computing tasks


def test_emulation_error_grows_with_filter_complexity():
    results = {}
    for sensing in ("all", "actuated"):
        res = run_emulation(baseline_mesh(), seed=0,
                            protocol=EmulationProtocol(sensing=sensing))
        results[sensing] = res.test_mse
    full, part = results["all"], results["actuated"]
    ordered = full["order2"] < full["order10"] < full["volterra"]
    degradation = max(part[t] / full[t] for t in full)
    report("emulation MSE orders by filter complexity and survives "
           "actuated-only sensing",
           ordered and degradation < 10.0,
           f"2nd {full['order2']:.2e} < 10th {full['order10']:.2e} < "
           f"volterra {full['volterra']:.2e}; worst actuated-only "
           f"degradation {degradation:.1f}x (< 10x)")


def test_best_searched_design_reaches_pattern_error_bars():
    details = []
    ok = True
    for task, bar in MSE_BARS.items():
        _, best = pattern_search(task)
        ok = ok and best.closed_mse <= bar
        details.append(f"{task} {best.closed_mse:.2e} (<= {bar:g})")
    report("best-of-72 closed-loop MSE meets all three task bars", ok,
           "; ".join(details))


@lru_cache(maxsize=None)
def self_starting_design(task):
    """Best searched design whose closed loop also starts from rest.

    A design can track the cycle perfectly from a warm start yet have a
    stable fixed point at rest; the long-run stability check is an extra
    filter on the trained loop, so candidates are screened in warm-MSE
    order with a short rest-start run.
    """
    result, best = pattern_search(task)
    proto, target = task_setup(task)
    records = sorted((r for r in result.records if not r.failed),
                     key=lambda r: r.closed_mse)
    for rec in records[:10]:
        cand = (best if rec.seed == best.seed else
                run_pattern(baseline_mesh(), target, rec.seed,
                            protocol=proto))
        tail = rest_start_tail_mse(cand, proto, target, duration=60.0)
        if tail <= 10.0 * cand.closed_mse:
            return cand
    return None


def test_closed_loop_started_from_rest_holds_for_1000_s():
    details = []
    ok = True
    for task in ("quad_lc", "vdp_lc"):
        proto, target = task_setup(task)
        design = self_starting_design(task)
        if design is None:
            ok = False
            details.append(f"{task}: no self-starting design found")
            continue
        tail = rest_start_tail_mse(design, proto, target, duration=1000.0)
        good = tail <= 10.0 * design.closed_mse
        ok = ok and good
        details.append(f"{task} tail {tail:.2e} vs warm "
                       f"{design.closed_mse:.2e}")
    report("rest-started loops stay on target for 1000 s within 10x "
           "of warm MSE", ok, "; ".join(details))


def run_outage_recovery(design, proto, target):
    """Trailing aligned MSE 10-20 s after a 5-15 s sensing outage."""
    res = closed_loop(baseline_mesh(), design.roles, design.weights,
                      duration=35.0, initial=design.final_state,
                      config=loop_config(),
                      bound=loop_bound(proto, target), outage=(5.0, 15.0),
                      raise_on_divergence=False)
    if res.diverged_step >= 0:
        return float("inf")
    outputs = res.outputs / proto.scale
    window = outputs[int(25.0 / DT):int(35.0 / DT)]
    return aligned_mse(target, window, EVAL_WINDOW)


@lru_cache(maxsize=None)
def sparse_sensing_design():
    """Best searched vdp design reading only 30% of the creases."""
    proto, target = task_setup("vdp_lc")
    proto = replace(proto, sensor_frac=0.3, teacher_noise=1e-2)
    _, best = feedback_search(baseline_mesh(), target, n_designs=48,
                              master_seed=0, protocol=proto)
    return best, proto, target


def test_loop_recovers_within_20_s_of_a_10_s_outage():
    proto, target = task_setup("vdp_lc")
    details = []
    ok = True

    full = self_starting_design("vdp_lc")
    if full is None:
        ok = False
        details.append("full sensing: no self-starting design")
    else:
        post = run_outage_recovery(full, proto, target)
        good = post <= 10.0 * full.closed_mse
        ok = ok and good
        details.append(f"full sensing post {post:.2e} vs pre "
                       f"{full.closed_mse:.2e}")

    sparse, sp_proto, sp_target = sparse_sensing_design()
    post = run_outage_recovery(sparse, sp_proto, sp_target)
    good = post <= 10.0 * sparse.closed_mse
    ok = ok and good
    details.append(f"30% sensing post {post:.2e} vs pre "
                   f"{sparse.closed_mse:.2e}")

    report("loops recover from a 10 s sensor+actuator outage within "
           "20 s to 10x pre-outage MSE", ok, "; ".join(details))


def test_output_amplitude_tracks_the_modulation_input():
    # eps levels covered by the evaluation window of the default schedule
    eval_levels = ((0.0, 1.0), (10.0, 0.5), (20.0, 2.0))
    refs = {lvl: quad_lc(40.0, eps=lvl)[1] for _, lvl in eval_levels}
    window = 5000
    best = None
    for seed in range(4):
        res, _ = run_modulation(baseline_mesh(), seed)
        if res.failed:
            continue
        seg_mse, amps = [], {}
        for t_on, lvl in eval_levels:
            lo = int((t_on + 3.0) / DT)
            seg = res.outputs[lo:lo + window]
            seg_mse.append(aligned_mse(refs[lvl], seg, window))
            amps[lvl] = float(np.sqrt((seg ** 2).sum(axis=1)).mean())
        combined = float(np.mean(seg_mse))
        if best is None or combined < best[0]:
            best = (combined, amps, seed)
    ok = best is not None
    detail = "every seed diverged"
    if ok:
        combined, amps, seed = best
        monotone = amps[0.5] > amps[1.0] > amps[2.0]
        ok = monotone and combined <= 1e-2
        detail = (f"seed {seed}: combined aligned MSE {combined:.2e} "
                  f"(<= 1e-2), amplitudes "
                  f"{amps[0.5]:.3f} > {amps[1.0]:.3f} > {amps[2.0]:.3f}")
    report("output amplitude tracks eps monotonically with combined "
           "MSE <= 1e-2", ok, detail)


# ---------------------------------------------------------------------------
# parametric trends


def test_mass_perturbations_spread_mse_more_than_stiffness():
    proto, target = task_setup("quad_lc")
    _, best = pattern_search("quad_lc")
    spreads = {}
    for kind in ("mass", "stiffness"):
        agg = perturbation_sweep(baseline_mesh(), target, kind, best.seed,
                                 n_samples=24, master_seed=0,
                                 protocol=proto).aggregates()
        spreads[kind] = (agg["std"], agg["max"] - agg["min"])
    (std_m, ext_m), (std_s, ext_s) = spreads["mass"], spreads["stiffness"]
    report("mass perturbations spread closed-loop MSE more than "
           "stiffness perturbations",
           std_m > std_s and ext_m > ext_s,
           f"std {std_m:.2e} > {std_s:.2e}, extremes span "
           f"{ext_m:.2e} > {ext_s:.2e} (24 designs each)")


def signal_power(target):
    """Mean squared norm of the reference over the evaluation window.

    A design whose closed-loop MSE reaches this level produces output
    carrying no information about the target — the task-failure threshold
    for the parametric studies (divergence also counts as failure).
    """
    return float((target[-EVAL_WINDOW:] ** 2).sum(axis=1).mean())


def test_feedback_fraction_sweet_spot_lies_at_thirty_percent():
    proto, target = task_setup("quad_lc")
    power = signal_power(target)
    study = fraction_study(baseline_mesh(), target, protocol=proto)
    fails, mins = {}, {}
    for frac, res in study.items():
        vals = [r.closed_mse for r in res.records]
        fails[frac] = sum(v >= power for v in vals)
        mins[frac] = min(vals)
    higher_ok = all(fails[f] < fails[0.2] for f in (0.3, 0.4, 0.5))
    best_rest = min(mins[0.4], mins[0.5])
    marginal = best_rest > 0.1 * mins[0.3]
    report("20% feedback fraction fails while >= 30% is stable with only "
           "marginal gains beyond 30%",
           fails[0.2] >= 1 and higher_ok and marginal,
           f"task failures {fails[0.2]}/24 at 20% vs "
           + "/".join(str(fails[f]) for f in (0.3, 0.4, 0.5))
           + f" at 30-50%; best MSE {mins[0.3]:.2e} at 30% vs "
           f"{best_rest:.2e} beyond (< 10x gain)")


def test_seventy_degree_fold_outperforms_fifty_degrees():
    proto, target = task_setup("quad_lc")
    _, best = pattern_search("quad_lc")
    _, grids = geometry_landscape(
        MiuraDesign(), target, ab_ratios=[1.0, 1.5, 2.0, 2.5, 3.0],
        gammas=np.radians([40, 45, 50, 55, 60]),
        thetas=np.radians([50, 70]), role_seed=best.seed, protocol=proto)
    power = signal_power(target)
    stats = {}
    for theta, grid in grids.items():
        g = np.where(np.isnan(grid), np.inf, np.asarray(grid))
        stats[round(float(np.degrees(theta)))] = (
            int((g >= power).sum()), float(np.median(g)))
    (f50, m50), (f70, m70) = stats[50], stats[70]
    report("theta=70deg geometry grid beats theta=50deg on failures and "
           "median MSE",
           f70 < f50 and m70 < m50,
           f"failed cells {f70} < {f50}, median {m70:.2e} < {m50:.2e} "
           f"over 25 cells each")


def test_crawler_advances_and_needs_its_anchors():
    mesh, design = build_crawler()
    config = crawler_config()
    initial = settle(mesh, config)
    gait = train_gait(mesh, design, config=config, initial=initial,
                      seed=0)
    anchored = run_crawl(mesh, design, gait, duration=20.0, config=config,
                         use_anchors=True)
    control = run_crawl(mesh, design, gait, duration=20.0, config=config,
                        use_anchors=False)
    cycles = 20.0 * 0.5                       # 0.5 Hz gait over 20 s
    ratio = (abs(control.displacement) / anchored.displacement
             if anchored.displacement > 0 else float("inf"))
    ok = (gait.train_mse <= 1e-2 and not anchored.failed
          and anchored.displacement > 0 and cycles >= 10
          and ratio < 0.05)
    report("crawler advances over >= 10 gait cycles and anchors-off "
           "control moves < 5% as far", ok,
           f"gait MSE {gait.train_mse:.2e} (<= 1e-2), displacement "
           f"{anchored.displacement * 1e3:.2f} mm over {cycles:.0f} "
           f"cycles, control ratio {ratio:.3f} (< 0.05)")


# ---------------------------------------------------------------------------
# determinism


def test_manifest_rerun_is_bit_identical_and_jobs_independent(tmp_path):
    runner = CliRunner()
    cfg = {"design": {"n_rows": 5, "n_cols": 5},
           "pattern": {"teacher_duration": 4.0, "washout": 1.0,
                       "train_window": 2.0, "eval_duration": 1.0,
                       "eval_window": 500, "clean_tail": 0.5}}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))

    first = tmp_path / "first"
    res = runner.invoke(cli_main, ["pattern", "--config", str(path),
                                   "--task", "quad_lc",
                                   "--out-dir", str(first)])
    assert res.exit_code == 0, res.output
    second = tmp_path / "second"
    res = runner.invoke(cli_main, ["rerun", "--manifest",
                                   str(first / "manifest.json"),
                                   "--out-dir", str(second)])
    assert res.exit_code == 0, res.output
    replayed = all((first / name).read_bytes() == (second / name).read_bytes()
                   for name in ("outputs.csv", "weights.json",
                                "mse_report.json"))

    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    for out, jobs in ((serial, "1"), (parallel, "2")):
        res = runner.invoke(cli_main, ["sweep", "--config", str(path),
                                       "--kind", "feedback", "--n", "4",
                                       "--jobs", jobs,
                                       "--out-dir", str(out)])
        assert res.exit_code == 0, res.output
    jobs_same = ((serial / "results.csv").read_bytes()
                 == (parallel / "results.csv").read_bytes())

    report("manifest rerun is bit-identical and sweeps are jobs-"
           "independent", replayed and jobs_same,
           f"rerun identical: {replayed}, jobs-independent: {jobs_same}")
