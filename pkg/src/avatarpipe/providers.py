"""External provider protocol.

A provider is any command that reads one raster file path per line on stdin
and answers one whitespace-separated float vector per line on stdout, in
order. Nonzero exit or a malformed answer is a provider failure. Used for
identity embedders during fitting and for perceptual metrics.
"""

from __future__ import annotations

import shlex
import subprocess

import numpy as np

from .errors import ProviderError


def run_provider(command, paths, timeout=120) -> np.ndarray:
    """Invoke ``command`` on a batch of file paths; returns (len(paths), D).

    ``command`` may be an argv list or a shell-style string (split with
    shlex, not run through a shell).
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    if not argv:
        raise ProviderError("empty provider command")
    payload = "".join(str(p) + "\n" for p in paths)
    try:
        proc = subprocess.run(argv, input=payload, capture_output=True,
                              text=True, timeout=timeout)
    except FileNotFoundError:
        raise ProviderError(f"provider command not found: {argv[0]}")
    except subprocess.TimeoutExpired:
        raise ProviderError(f"provider timed out after {timeout}s: {argv[0]}")
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-3:]
        raise ProviderError(
            f"provider exited with status {proc.returncode}: " + " | ".join(tail)
        )
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if len(lines) != len(paths):
        raise ProviderError(
            f"provider answered {len(lines)} vectors for {len(paths)} paths"
        )
    rows = []
    for ln in lines:
        try:
            rows.append([float(tok) for tok in ln.split()])
        except ValueError:
            raise ProviderError(f"provider emitted a non-numeric vector: {ln[:80]!r}")
    widths = {len(r) for r in rows}
    if len(widths) != 1 or 0 in widths:
        raise ProviderError("provider emitted vectors of inconsistent length")
    return np.asarray(rows, dtype=np.float64)
