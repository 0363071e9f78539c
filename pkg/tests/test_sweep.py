import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from origamirc.errors import ConfigError, TrainingError
from origamirc.mesh import MiuraDesign, build_miura
from origamirc.sweep import (EMULATION_TASKS, EmulationProtocol,
                             PatternProtocol, SweepRecord, SweepResult,
                             aligned_mse, design_seed, emulation_targets,
                             feedback_search, fraction_study,
                             geometry_landscape, grid_to_csv,
                             perturbation_sweep, run_emulation, run_pattern)

DT = 1e-3

# short windows exercise the full pipeline in a fraction of the production
# protocol's runtime; MSE values are plumbing checks, not quality claims
FAST = PatternProtocol(teacher_duration=2.0, washout=0.5, train_window=1.0,
                       eval_duration=0.5, eval_window=100, clean_tail=0.2)

FAST_EMU = EmulationProtocol(duration=3.0, washout=1.0, train_window=1.5,
                             test_window=0.5)


@pytest.fixture(scope="module")
def small():
    return build_miura(MiuraDesign(n_rows=5, n_cols=5))


@pytest.fixture(scope="module")
def two_channel_target():
    t = np.arange(2600) * DT
    return 0.3 * np.column_stack([np.sin(2 * math.pi * t),
                                  np.cos(2 * math.pi * t)])


class TestPatternProtocol:
    def test_defaults_validate(self):
        PatternProtocol().validate()

    def test_presets_are_copies(self):
        base = PatternProtocol()
        tuned = base.for_task("vdp_lc")
        assert tuned is not base
        assert tuned.scale != base.scale
        assert base.for_task("no_such_task") is base

    def test_preset_keeps_windows(self):
        tuned = FAST.for_task("lissajous")
        assert tuned.teacher_duration == FAST.teacher_duration
        assert tuned.eval_window == FAST.eval_window

    @pytest.mark.parametrize("bad", [
        dict(sensing="some"), dict(scale=0.0), dict(scale=-1.0),
        dict(eval_window=0), dict(bound_factor=0.0),
        dict(teacher_noise=-1e-3), dict(washout=-1.0)])
    def test_invalid_fields_rejected(self, bad):
        with pytest.raises(ConfigError):
            replace(PatternProtocol(), **bad).validate()


class TestRunPattern:
    def test_deterministic_under_seed(self, small, two_channel_target):
        a = run_pattern(small, two_channel_target, seed=0, protocol=FAST)
        b = run_pattern(small, two_channel_target, seed=0, protocol=FAST)
        assert a.closed_mse == b.closed_mse
        assert a.train_mse == b.train_mse
        np.testing.assert_array_equal(a.outputs, b.outputs)

    def test_different_seeds_differ(self, small, two_channel_target):
        a = run_pattern(small, two_channel_target, seed=0, protocol=FAST)
        b = run_pattern(small, two_channel_target, seed=1, protocol=FAST)
        assert not np.array_equal(a.roles.feedback_hinges[0],
                                  b.roles.feedback_hinges[0]) \
            or a.closed_mse != b.closed_mse

    def test_successful_run_shape(self, small, two_channel_target):
        res = run_pattern(small, two_channel_target, seed=0, protocol=FAST)
        assert not res.failed
        assert res.diverged_step == -1
        assert np.isfinite(res.closed_mse)
        assert res.outputs.shape[1] == 2
        assert res.reference.shape == res.outputs.shape
        # reference is the unscaled target slice after the teacher window
        n_teach = int(round(FAST.teacher_duration / DT))
        np.testing.assert_array_equal(
            res.reference,
            two_channel_target[n_teach:n_teach + res.outputs.shape[0]])

    def test_channel_mismatch_rejected(self, small):
        with pytest.raises(ConfigError, match="channels"):
            run_pattern(small, np.zeros((2600, 3)), seed=0, protocol=FAST)

    def test_short_target_rejected(self, small):
        with pytest.raises(ConfigError, match="steps"):
            run_pattern(small, np.zeros((100, 2)), seed=0, protocol=FAST)

    def test_tight_bound_flags_failure(self, small, two_channel_target):
        tight = replace(FAST, bound_factor=1e-6)
        res = run_pattern(small, two_channel_target, seed=0, protocol=tight)
        assert res.failed
        assert res.closed_mse == math.inf
        assert res.outputs is None

    def test_actuated_sensing_restricts_sensors(self, small,
                                                two_channel_target):
        proto = replace(FAST, sensing="actuated")
        res = run_pattern(small, two_channel_target, seed=0, protocol=proto)
        fb = np.sort(np.concatenate(res.roles.feedback_hinges))
        np.testing.assert_array_equal(res.roles.sensor_hinges, fb)

    def test_single_channel_1d_target(self, small):
        t = np.arange(2600) * DT
        res = run_pattern(small, 0.3 * np.sin(2 * math.pi * t), seed=0,
                          protocol=replace(FAST, feedback_fracs=(0.2,)))
        assert res.outputs.shape[1] == 1


class TestAlignedMse:
    def test_equals_mse_when_lengths_match(self):
        rng = np.random.default_rng(0)
        ref = rng.standard_normal((200, 2))
        out = ref + 0.1
        from origamirc.reservoir import mse
        assert aligned_mse(ref, out, window=200) == mse(ref, out)

    def test_pure_phase_shift_scores_zero(self):
        t = np.arange(3000) * DT
        ref = np.sin(2 * math.pi * 2.0 * t)
        out = np.sin(2 * math.pi * 2.0 * (t + 0.13))   # 130-sample shift
        from origamirc.reservoir import mse
        assert mse(ref[:1000], out[:1000]) > 0.1
        assert aligned_mse(ref, out, window=1000, step=10) < 1e-12

    def test_amplitude_error_still_counts(self):
        t = np.arange(3000) * DT
        ref = np.sin(2 * math.pi * 2.0 * t)
        out = 0.5 * ref
        # best over shifts of 0.5*sin vs sin: MSE >= integral of
        # min-over-phase, well above zero
        assert aligned_mse(ref, out, window=1000, step=10) > 0.05

    def test_short_arrays_rejected(self):
        with pytest.raises(ConfigError, match="output"):
            aligned_mse(np.zeros(100), np.zeros(50), window=80)
        with pytest.raises(ConfigError, match="reference"):
            aligned_mse(np.zeros(50), np.zeros(100), window=80)


class TestEmulation:
    def test_targets_registry(self):
        u, targets = emulation_targets(1000)
        assert set(targets) == set(EMULATION_TASKS)
        assert all(v.shape == (1000,) for v in targets.values())
        assert u.shape == (1000,)

    def test_runs_all_tasks(self, small):
        res = run_emulation(small, seed=0, protocol=FAST_EMU)
        assert set(res.test_mse) == set(EMULATION_TASKS)
        for task in EMULATION_TASKS:
            assert np.isfinite(res.test_mse[task])
            assert res.test_mse[task] >= 0.0
            assert np.isfinite(res.train_mse[task])

    def test_deterministic(self, small):
        a = run_emulation(small, seed=3, protocol=FAST_EMU)
        b = run_emulation(small, seed=3, protocol=FAST_EMU)
        assert a.test_mse == b.test_mse
        assert a.train_mse == b.train_mse

    def test_unknown_task_rejected(self, small):
        with pytest.raises(ConfigError, match="unknown"):
            run_emulation(small, tasks=("order3",), protocol=FAST_EMU)

    def test_actuated_sensing_uses_actuated_creases(self, small):
        proto = replace(FAST_EMU, sensing="actuated")
        res = run_emulation(small, seed=0, protocol=proto)
        actuated = np.sort(np.concatenate(
            [res.roles.input_hinges, *res.roles.feedback_hinges]))
        np.testing.assert_array_equal(res.roles.sensor_hinges, actuated)

    def test_windows_exceeding_duration_rejected(self):
        with pytest.raises(ConfigError, match="exceed"):
            replace(FAST_EMU, washout=2.9).validate()


def fake_records(values, failed=()):
    return tuple(
        SweepRecord(index=i, seed=100 + i, closed_mse=v, failed=i in failed)
        for i, v in enumerate(values))


class TestSweepBookkeeping:
    def test_design_seed_deterministic_and_distinct(self):
        seeds = [design_seed(7, i) for i in range(100)]
        assert seeds == [design_seed(7, i) for i in range(100)]
        assert len(set(seeds)) == 100
        assert design_seed(8, 0) != design_seed(7, 0)

    def test_aggregates_skip_failures(self):
        res = SweepResult(kind="t", master_seed=0,
                          records=fake_records([1.0, math.inf, 3.0],
                                               failed={1}))
        agg = res.aggregates()
        assert agg["n_designs"] == 3
        assert agg["n_failed"] == 1
        assert agg["mean"] == 2.0
        assert agg["min"] == 1.0 and agg["max"] == 3.0

    def test_aggregates_all_failed(self):
        res = SweepResult(kind="t", master_seed=0,
                          records=fake_records([math.inf], failed={0}))
        assert res.aggregates()["mean"] is None
        assert res.best() is None

    def test_best_ignores_failed(self):
        res = SweepResult(kind="t", master_seed=0,
                          records=fake_records([0.5, 0.1, 2.0], failed={1}))
        assert res.best().index == 0

    def test_csv_round_trip(self, tmp_path):
        recs = tuple(replace(r, params={"fraction": 0.2})
                     for r in fake_records([0.5, 1.5], failed={1}))
        res = SweepResult(kind="t", master_seed=0, records=recs)
        path = tmp_path / "sweep.csv"
        res.to_csv(path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert float(rows[0]["closed_mse"]) == 0.5
        assert int(rows[1]["failed"]) == 1
        assert float(rows[0]["fraction"]) == 0.2

    def test_json_aggregates(self, tmp_path):
        res = SweepResult(kind="t", master_seed=9,
                          records=fake_records([1.0, 2.0]))
        path = tmp_path / "agg.json"
        res.to_json(path)
        with open(path) as fh:
            agg = json.load(fh)
        assert agg["kind"] == "t"
        assert agg["master_seed"] == 9
        assert agg["mean"] == 1.5


class TestFeedbackSearch:
    def test_matches_serial_and_parallel(self, small, two_channel_target):
        r1, best1 = feedback_search(small, two_channel_target, n_designs=2,
                                    master_seed=5, protocol=FAST, jobs=1)
        r2, best2 = feedback_search(small, two_channel_target, n_designs=2,
                                    master_seed=5, protocol=FAST, jobs=2)
        assert r1.records == r2.records
        assert best1.closed_mse == best2.closed_mse

    def test_best_matches_rerun(self, small, two_channel_target):
        result, best = feedback_search(small, two_channel_target,
                                       n_designs=2, master_seed=5,
                                       protocol=FAST)
        rec = result.best()
        assert best.seed == rec.seed
        assert best.closed_mse == rec.closed_mse
        assert best.outputs is not None

    def test_all_failed_raises(self, small, two_channel_target):
        tight = replace(FAST, bound_factor=1e-6)
        with pytest.raises(TrainingError, match="failed"):
            feedback_search(small, two_channel_target, n_designs=2,
                            master_seed=5, protocol=tight)

    def test_zero_designs_rejected(self, small, two_channel_target):
        with pytest.raises(ConfigError, match="n_designs"):
            feedback_search(small, two_channel_target, n_designs=0)


class TestPerturbationSweep:
    def test_degenerate_mass_range_matches_baseline(self, small,
                                                    two_channel_target):
        base = run_pattern(small, two_channel_target, seed=4, protocol=FAST)
        res = perturbation_sweep(
            small, two_channel_target, kind="mass", base_seed=4, n_samples=2,
            protocol=FAST, mass_range=(0.007, 0.007))
        for rec in res.records:
            assert rec.closed_mse == pytest.approx(base.closed_mse,
                                                   rel=1e-12)
            assert rec.params["kind"] == "mass"

    def test_degenerate_stiffness_range_matches_baseline(
            self, small, two_channel_target):
        base = run_pattern(small, two_channel_target, seed=4, protocol=FAST)
        res = perturbation_sweep(
            small, two_channel_target, kind="stiffness", base_seed=4,
            n_samples=1, protocol=FAST, stiffness_range=(0.2525, 0.2525))
        assert res.records[0].closed_mse == pytest.approx(base.closed_mse,
                                                          rel=1e-12)

    def test_spread_mass_changes_outcome(self, small, two_channel_target):
        base = run_pattern(small, two_channel_target, seed=4, protocol=FAST)
        res = perturbation_sweep(
            small, two_channel_target, kind="mass", base_seed=4, n_samples=2,
            protocol=FAST, mass_range=(0.004, 0.010))
        vals = [r.closed_mse for r in res.records]
        assert len(set(vals)) == 2                   # samples differ
        assert all(v != base.closed_mse for v in vals)

    def test_imperfection_kind_runs_and_is_deterministic(
            self, small, two_channel_target):
        a = perturbation_sweep(small, two_channel_target,
                               kind="imperfection", base_seed=4,
                               n_samples=1, protocol=FAST)
        b = perturbation_sweep(small, two_channel_target,
                               kind="imperfection", base_seed=4,
                               n_samples=1, protocol=FAST)
        assert a.records == b.records

    def test_unknown_kind_rejected(self, small, two_channel_target):
        with pytest.raises(ConfigError, match="kind"):
            perturbation_sweep(small, two_channel_target, kind="gravity",
                               base_seed=0, n_samples=1, protocol=FAST)


class TestGeometryLandscape:
    def test_single_cell_matches_direct_run(self, two_channel_target):
        design = MiuraDesign(n_rows=5, n_cols=5)
        result, grids = geometry_landscape(
            design, two_channel_target, ab_ratios=[1.6], gammas=[0.8],
            thetas=[1.0], role_seed=2, protocol=FAST)
        varied = build_miura(replace(design, b=design.a / 1.6, gamma=0.8,
                                     theta=1.0))
        direct = run_pattern(varied, two_channel_target, seed=2,
                             protocol=FAST)
        assert grids[1.0].shape == (1, 1)
        assert grids[1.0][0, 0] == pytest.approx(direct.closed_mse,
                                                 rel=1e-12)

    def test_invalid_geometry_marks_failed_cell(self, two_channel_target):
        design = MiuraDesign(n_rows=5, n_cols=5)
        result, grids = geometry_landscape(
            design, two_channel_target, ab_ratios=[1.6],
            gammas=[0.8, 2.0],           # 2.0 rad exceeds the sector bound
            thetas=[1.0], role_seed=2, protocol=FAST)
        grid = grids[1.0]
        assert np.isfinite(grid[0, 0])
        assert np.isnan(grid[1, 0])
        assert result.records[1].failed

    def test_empty_axis_rejected(self, two_channel_target):
        with pytest.raises(ConfigError, match="nonempty"):
            geometry_landscape(MiuraDesign(), two_channel_target,
                               ab_ratios=[], gammas=[0.8], thetas=[1.0])

    def test_grid_csv(self, tmp_path):
        grid = np.array([[1.0, np.nan], [3.0, 4.0]])
        path = tmp_path / "grid.csv"
        grid_to_csv(grid, ab_ratios=[1.0, 2.0], gammas=[0.7, 0.9],
                    path=path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3
        assert float(rows[1][1]) == 1.0
        assert math.isnan(float(rows[1][2]))
        assert float(rows[2][0]) == 0.9


class TestFractionStudy:
    def test_structure_and_params(self, small, two_channel_target):
        out = fraction_study(small, two_channel_target,
                             fractions=(0.2, 0.4), n_designs=2,
                             master_seed=1, protocol=FAST)
        assert set(out) == {0.2, 0.4}
        for frac, res in out.items():
            assert len(res.records) == 2
            assert all(r.params["fraction"] == frac for r in res.records)
        # each fraction draws independent designs
        s1 = {r.seed for r in out[0.2].records}
        s2 = {r.seed for r in out[0.4].records}
        assert not s1 & s2

    def test_fraction_sets_group_sizes(self, small, two_channel_target):
        out = fraction_study(small, two_channel_target, fractions=(0.4,),
                             n_designs=1, master_seed=1, protocol=FAST)
        rec = out[0.4].records[0]
        res = run_pattern(
            small, two_channel_target, rec.seed,
            protocol=replace(FAST, feedback_fracs=(0.2, 0.2),
                             feedback_gain=0.75))
        total = sum(h.shape[0] for h in res.roles.feedback_hinges)
        assert total == 2 * round(0.2 * small.n_creases)
        assert res.closed_mse == pytest.approx(rec.closed_mse, rel=1e-12)
