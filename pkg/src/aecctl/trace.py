"""Columnar on-disk layout for per-frame run diagnostics.

A trace directory holds one ``.npy`` file per column plus ``index.json``
describing dtype/shape per column and the run geometry, so analyses can
load single columns without rerunning the canceller.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

TRACE_FORMAT = "aecctl-trace"
TRACE_FORMAT_VERSION = 1


def _columns(trace) -> dict:
    cols = {
        "error_spec": trace.error_spec,
        "echo_est_spec": trace.echo_est_spec,
        "step_sizes": trace.step_sizes,
        "error_td": trace.error_td,
        "echo_est_td": trace.echo_est_td,
    }
    if trace.erle_framewise_db is not None:
        cols["erle_framewise_db"] = trace.erle_framewise_db
    for name, arr in trace.masks.items():
        cols[name] = arr
    for name, arr in trace.diagnostics.items():
        cols[name] = arr
    return cols


def write_trace(trace, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {
        "format": TRACE_FORMAT,
        "format_version": TRACE_FORMAT_VERSION,
        "num_frames": int(trace.num_frames),
        "num_bands": int(trace.error_spec.shape[0]),
        "filter_length": int(trace.filter_length),
        "sample_rate": int(trace.stft.sample_rate),
        "hop": int(trace.stft.hop),
        "dft_length": int(trace.stft.dft_length),
        "columns": {},
    }
    for name, arr in _columns(trace).items():
        fname = f"{name}.npy"
        np.save(directory / fname, arr)
        index["columns"][name] = {
            "file": fname,
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
        }
    with open(directory / "index.json", "w") as f:
        json.dump(index, f, indent=1, sort_keys=True)


def read_trace(directory) -> tuple[dict, dict]:
    """Load a trace directory; returns ``(index, columns)``."""
    directory = Path(directory)
    with open(directory / "index.json") as f:
        index = json.load(f)
    if index.get("format") != TRACE_FORMAT:
        raise ValueError(f"{directory} is not a trace directory")
    columns = {name: np.load(directory / meta["file"])
               for name, meta in index["columns"].items()}
    return index, columns


def write_frame_csv(trace, path) -> None:
    """Per-frame CSV: ERLE and broadband step-size statistics."""
    hop_s = trace.stft.hop / trace.stft.sample_rate
    mask_cols = sorted(trace.masks)
    with open(path, "w") as f:
        header = ["frame", "time_s", "erle_db", "mu_mean", "mu_max"]
        header += [f"{m}_mean" for m in mask_cols]
        f.write(",".join(header) + "\n")
        for t in range(trace.num_frames):
            row = [str(t), f"{t * hop_s:.6f}"]
            erle_t = trace.erle_framewise_db[t] \
                if trace.erle_framewise_db is not None else np.nan
            row.append(f"{erle_t:.6f}")
            row.append(f"{np.mean(trace.step_sizes[t]):.9g}")
            row.append(f"{np.max(trace.step_sizes[t]):.9g}")
            for m in mask_cols:
                row.append(f"{np.mean(trace.masks[m][t]):.9g}")
            f.write(",".join(row) + "\n")
