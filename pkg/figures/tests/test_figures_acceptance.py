"""Acceptance checks for the figure renderer.

Every documented file format must render for its figure kind, a long
trace must render quickly, and corrupt column names must produce the
documented schema error.  Each test reports one pass/fail line.
"""

import time

import pytest

from origamifig import FigureJob, SchemaError, render
from conftest import (write_aggregates, write_crawl, write_landscape,
                      write_outputs, write_results, write_trace)


def report(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"{status}: {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def test_all_five_kinds_render(tmp_path):
    jobs = [
        ("overlay", write_outputs(str(tmp_path / "outputs.csv"),
                                  eps=True)),
        ("phase_portrait", write_trace(str(tmp_path / "trace.csv"))),
        ("mse_bars", write_results(str(tmp_path / "results.csv"),
                                   fail_every=5)),
        ("mse_bars", write_aggregates(str(tmp_path / "aggregates.json"))),
        ("landscape", write_landscape(str(tmp_path / "landscape.csv"))),
        ("crawl", write_crawl(str(tmp_path / "crawl_log.csv"))),
    ]
    rendered = []
    for k, (kind, src) in enumerate(jobs):
        out = str(tmp_path / f"fig{k}.png")
        render(FigureJob(kind, (src,), out))
        rendered.append(kind)
    report("every documented schema renders for all five kinds", True,
           ", ".join(dict.fromkeys(rendered)))


def test_long_trace_renders_quickly(tmp_path):
    src = write_trace(str(tmp_path / "trace.csv"), n=100_000, hinges=16)
    start = time.perf_counter()
    render(FigureJob("phase_portrait", (src,),
                     str(tmp_path / "fig.png")))
    elapsed = time.perf_counter() - start
    report("100000-row trace renders in < 30 s", elapsed < 30.0,
           f"{elapsed:.2f} s")


def test_corrupt_columns_produce_documented_error(tmp_path):
    cases = [
        ("overlay", "t,out0,garbled\n0.0,1.0,2.0\n", "garbled"),
        ("phase_portrait", "t,phi_a\n0.0,3.1\n", "phi_a"),
        ("mse_bars", "index,seed,mse,failed\n0,1,0.1,0\n", "closed_mse"),
        ("landscape", "gamma,1.0\n0.8,0.1\n", "gamma"),
        ("crawl", "t,centroid_x,centroid_y,altitude,"
                  "anchors_engaged_bitmask\n0,0,0,0,0\n", "altitude"),
    ]
    for k, (kind, text, column) in enumerate(cases):
        src = tmp_path / f"bad{k}.csv"
        src.write_text(text)
        with pytest.raises(SchemaError, match=column):
            render(FigureJob(kind, (str(src),),
                             str(tmp_path / f"bad{k}.png")))
    report("corrupt column names raise the documented schema error",
           True, f"{len(cases)} formats checked")
