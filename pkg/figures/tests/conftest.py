import json

import numpy as np
import pytest


def write_outputs(path, n=400, channels=2, refs=True, eps=False):
    t = np.arange(n) * 1e-3
    rng = np.random.default_rng(0)
    out = np.column_stack([0.1 * np.sin(2 * np.pi * t + 0.3 * k)
                           for k in range(channels)])
    out += 1e-3 * rng.standard_normal(out.shape)
    header = ["t"] + [f"out{k}" for k in range(channels)]
    cols = [t] + [out[:, k] for k in range(channels)]
    if refs:
        header += [f"ref{k}" for k in range(channels)]
        cols += [0.1 * np.sin(2 * np.pi * t + 0.3 * k)
                 for k in range(channels)]
    if eps:
        header.append("eps")
        cols.append(np.where(t < t[n // 2], 1.0, 2.0))
    _write_csv(path, header, cols)
    return path


def write_trace(path, n=400, hinges=4):
    t = np.arange(n) * 1e-3
    header = ["t"] + [f"phi_{3 * k}" for k in range(hinges)]
    cols = [t] + [np.pi + 0.2 * np.sin(2 * np.pi * t + k)
                  for k in range(hinges)]
    _write_csv(path, header, cols)
    return path


def write_results(path, n=6, fail_every=None):
    rng = np.random.default_rng(1)
    mse = 10.0 ** rng.uniform(-5, -2, n)
    failed = np.zeros(n, dtype=int)
    if fail_every:
        failed[::fail_every] = 1
        mse[failed == 1] = np.nan
    with open(path, "w") as fh:
        fh.write("index,seed,closed_mse,failed\n")
        for i in range(n):
            fh.write(f"{i},{1000 + i},{float(mse[i])!r},{failed[i]}\n")
    return path


def write_aggregates(path):
    data = {"kind": "feedback", "master_seed": 0, "n_designs": 6,
            "n_failed": 1, "mean": 3e-4, "std": 2e-4, "min": 5e-5,
            "max": 8e-4, "best_seed": 1003}
    with open(path, "w") as fh:
        json.dump(data, fh)
    return path


def write_landscape(path, with_failures=True):
    ratios = [1.0, 1.5, 2.0, 2.5, 3.0]
    gammas = np.radians([40.0, 45.0, 50.0, 55.0, 60.0])
    rng = np.random.default_rng(2)
    grid = 10.0 ** rng.uniform(-5, -2, (len(gammas), len(ratios)))
    if with_failures:
        grid[0, 0] = np.nan
        grid[3, 4] = np.nan
    with open(path, "w") as fh:
        fh.write("gamma\\ab," + ",".join(repr(r) for r in ratios) + "\n")
        for g, row in zip(gammas, grid):
            fh.write(repr(float(g)) + ","
                     + ",".join(repr(float(v)) for v in row) + "\n")
    return path


def write_crawl(path, n=400, channels=4):
    t = 6.0 + np.arange(n) * 1e-3
    header = (["t", "centroid_x", "centroid_y", "centroid_z"]
              + [f"ch{k}" for k in range(channels)]
              + ["anchors_engaged_bitmask"])
    cols = [t, 1e-4 * (t - t[0]), np.zeros(n), 0.004 + 0 * t]
    cols += [np.sin(2 * np.pi * 0.5 * t - k * np.pi / 2)
             for k in range(channels)]
    cols.append(np.where(np.sin(2 * np.pi * 0.5 * t) > 0, 4095, 0))
    _write_csv(path, header, cols)
    return path


def _write_csv(path, header, cols):
    arr = np.column_stack(cols)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, arr, fmt="%.9g", delimiter=",")


@pytest.fixture()
def outputs_csv(tmp_path):
    return write_outputs(str(tmp_path / "outputs.csv"))


@pytest.fixture()
def trace_csv(tmp_path):
    return write_trace(str(tmp_path / "trace.csv"))


@pytest.fixture()
def results_csv(tmp_path):
    return write_results(str(tmp_path / "results.csv"))


@pytest.fixture()
def aggregates_json(tmp_path):
    return write_aggregates(str(tmp_path / "aggregates.json"))


@pytest.fixture()
def landscape_csv(tmp_path):
    return write_landscape(str(tmp_path / "landscape_theta60.csv"))


@pytest.fixture()
def crawl_csv(tmp_path):
    return write_crawl(str(tmp_path / "crawl_log.csv"))
