"""Readers for the documented origamirc file formats.

Each reader validates the column layout before returning numeric arrays
and raises :class:`SchemaError` naming the offending column when the
layout does not match.  Supported formats:

========================  =================================================
file                      columns
========================  =================================================
trace.csv                 ``t, phi_<id>, ...``
outputs.csv               ``t, out0..outN, ref0..refN[, eps]``
results.csv               ``index, seed, closed_mse, failed[, extras...]``
aggregates.json           ``mean, std, min, max, n_designs, n_failed, ...``
landscape_theta<d>.csv    ``gamma\\ab, <ratio>, ...`` (one row per gamma)
crawl_log.csv             ``t, centroid_x, centroid_y, centroid_z,
                          ch0..chN, anchors_engaged_bitmask``
========================  =================================================
"""

import json
import os
import re

import numpy as np
import pandas as pd


class SchemaError(ValueError):
    """An input file does not match its documented column layout."""


def _load_frame(path):
    if not os.path.exists(path):
        raise SchemaError(f"{path}: file not found")
    if os.path.getsize(path) == 0:
        raise SchemaError(f"{path}: empty input file")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError,
            UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: not a parsable CSV table ({exc})")
    if frame.shape[0] == 0:
        raise SchemaError(f"{path}: no data rows")
    return frame


def _numeric(frame, column, path):
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(float)
    if np.isnan(values).all() and frame[column].notna().any():
        raise SchemaError(f"{path}: column '{column}' is not numeric")
    return values


def read_trace(path):
    """Read a crease-angle trace; returns ``(t, phi, names)``."""
    frame = _load_frame(path)
    cols = list(frame.columns)
    if cols[0] != "t":
        raise SchemaError(f"{path}: first column is '{cols[0]}', "
                          "expected 't'")
    if len(cols) < 2:
        raise SchemaError(f"{path}: no 'phi_<id>' columns after 't'")
    for name in cols[1:]:
        if not re.fullmatch(r"phi_\d+", name):
            raise SchemaError(f"{path}: unexpected column '{name}' "
                              "(expected 'phi_<id>')")
    t = _numeric(frame, "t", path)
    phi = np.column_stack([_numeric(frame, c, path) for c in cols[1:]])
    return t, phi, cols[1:]


def read_outputs(path):
    """Read closed-loop outputs; returns ``(t, out, ref, eps)``.

    ``ref`` and ``eps`` are ``None`` when the file does not carry them.
    """
    frame = _load_frame(path)
    cols = list(frame.columns)
    if cols[0] != "t":
        raise SchemaError(f"{path}: first column is '{cols[0]}', "
                          "expected 't'")
    rest = cols[1:]
    has_eps = bool(rest) and rest[-1] == "eps"
    if has_eps:
        rest = rest[:-1]
    outs = [c for c in rest if re.fullmatch(r"out\d+", c)]
    refs = [c for c in rest if re.fullmatch(r"ref\d+", c)]
    for name in rest:
        if name not in outs and name not in refs:
            raise SchemaError(f"{path}: unexpected column '{name}' "
                              "(expected 'out<k>', 'ref<k>', or 'eps')")
    if not outs:
        raise SchemaError(f"{path}: no 'out<k>' columns")
    if rest != outs + refs:
        raise SchemaError(f"{path}: columns must be ordered "
                          "out0..outN then ref0..refN")
    if refs and len(refs) != len(outs):
        raise SchemaError(f"{path}: {len(outs)} 'out' columns but "
                          f"{len(refs)} 'ref' columns")
    t = _numeric(frame, "t", path)
    out = np.column_stack([_numeric(frame, c, path) for c in outs])
    ref = (np.column_stack([_numeric(frame, c, path) for c in refs])
           if refs else None)
    eps = _numeric(frame, "eps", path) if has_eps else None
    return t, out, ref, eps


RESULT_COLUMNS = ("index", "seed", "closed_mse", "failed")


def read_results(path):
    """Read one sweep results table; returns ``(closed_mse, failed)``."""
    frame = _load_frame(path)
    for name in RESULT_COLUMNS:
        if name not in frame.columns:
            raise SchemaError(f"{path}: missing column '{name}'")
    mse = _numeric(frame, "closed_mse", path)
    failed = _numeric(frame, "failed", path).astype(bool)
    return mse, failed


AGGREGATE_KEYS = ("mean", "std", "min", "max", "n_designs", "n_failed")


def read_aggregates(path):
    """Read a sweep aggregate summary; returns the stats dict."""
    if not os.path.exists(path):
        raise SchemaError(f"{path}: file not found")
    if os.path.getsize(path) == 0:
        raise SchemaError(f"{path}: empty input file")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})")
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    for key in AGGREGATE_KEYS:
        if key not in data:
            raise SchemaError(f"{path}: missing key '{key}'")
    return data


def read_landscape(path):
    """Read a geometry-landscape grid; returns ``(gammas, ratios, grid)``.

    Grid rows follow gamma, columns the a/b ratio; failed designs are NaN.
    """
    if not os.path.exists(path):
        raise SchemaError(f"{path}: file not found")
    if os.path.getsize(path) == 0:
        raise SchemaError(f"{path}: empty input file")
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty input file")
    header = lines[0].split(",")
    if header[0] != "gamma\\ab":
        raise SchemaError(f"{path}: first column is '{header[0]}', "
                          "expected 'gamma\\ab'")
    try:
        ratios = np.array([float(v) for v in header[1:]])
    except ValueError:
        raise SchemaError(f"{path}: non-numeric a/b ratio in header")
    if ratios.size == 0:
        raise SchemaError(f"{path}: no a/b ratio columns")
    gammas, rows = [], []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 1 + ratios.size:
            raise SchemaError(f"{path}: row '{cells[0]}' has "
                              f"{len(cells) - 1} cells, expected "
                              f"{ratios.size}")
        try:
            gammas.append(float(cells[0]))
            rows.append([float(v) for v in cells[1:]])
        except ValueError:
            raise SchemaError(f"{path}: non-numeric cell in row "
                              f"'{cells[0]}'")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return np.array(gammas), ratios, np.array(rows)


CRAWL_FIXED = ("t", "centroid_x", "centroid_y", "centroid_z")


def read_crawl(path):
    """Read a crawl log; returns ``(t, centroid, channels, anchors)``."""
    frame = _load_frame(path)
    cols = list(frame.columns)
    for k, name in enumerate(CRAWL_FIXED):
        if k >= len(cols) or cols[k] != name:
            found = cols[k] if k < len(cols) else "<missing>"
            raise SchemaError(f"{path}: column {k} is '{found}', "
                              f"expected '{name}'")
    if cols[-1] != "anchors_engaged_bitmask":
        raise SchemaError(f"{path}: last column is '{cols[-1]}', "
                          "expected 'anchors_engaged_bitmask'")
    chans = cols[len(CRAWL_FIXED):-1]
    for name in chans:
        if not re.fullmatch(r"ch\d+", name):
            raise SchemaError(f"{path}: unexpected column '{name}' "
                              "(expected 'ch<k>')")
    t = _numeric(frame, "t", path)
    centroid = np.column_stack([_numeric(frame, c, path)
                                for c in CRAWL_FIXED[1:]])
    channels = (np.column_stack([_numeric(frame, c, path) for c in chans])
                if chans else np.empty((t.size, 0)))
    anchors = _numeric(frame, "anchors_engaged_bitmask", path).astype(int)
    return t, centroid, channels, anchors
