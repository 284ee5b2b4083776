"""Shared fixtures: toy models, synthetic captures, and the golden fixture
directory (built once per session through the command-line entry point)."""

from __future__ import annotations

import contextlib
import io
import json
import os
import time

import numpy as np
import pytest

from avatarpipe.cli import main as cli_main
from avatarpipe.fixtures import synthetic_capture, toy_model


def run_cli(argv):
    """Invoke the CLI in-process; returns (exit_code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        try:
            code = cli_main([str(a) for a in argv])
        except SystemExit as exc:  # argparse errors
            code = int(exc.code or 0)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="session")
def toy_small():
    """Toy head with a 64x64 UV chart: cheap enough for fits and renders."""
    return toy_model(seed=0, uv_resolution=64)


@pytest.fixture(scope="session")
def capture_ambient(toy_small):
    """Three ambient-lit 64px views of a random head (texel >= pixel regime)."""
    return synthetic_capture(toy_small, seed=3, image_size=64, directional=False)


@pytest.fixture(scope="session")
def golden_dir(tmp_path_factory):
    """Full fixture set (model, views, reference pipeline outputs) produced by
    the make-fixtures command; the build wall time is recorded alongside."""
    out = tmp_path_factory.mktemp("golden")
    start = time.perf_counter()
    code, stdout, stderr = run_cli(["make-fixtures", "--out", str(out)])
    elapsed = time.perf_counter() - start
    assert code == 0, f"fixture build failed ({code}):\n{stdout}\n{stderr}"
    (out / "build_time.json").write_text(json.dumps({"seconds": elapsed}))
    return out


@pytest.fixture(scope="session")
def golden_manifest(golden_dir):
    with open(os.path.join(golden_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion verdicts after the capture ends."""
    try:
        from test_acceptance import REPORT_LINES
    except ImportError:
        return
    if REPORT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in REPORT_LINES:
            terminalreporter.write_line(line)
