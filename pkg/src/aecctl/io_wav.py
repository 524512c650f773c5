"""Mono WAV input/output.

Accepts 16-bit integer and 32-bit float PCM; samples are handled internally
as floats in ``[-1, 1]``.  Files are written as 32-bit float by default so
that component signals survive a round trip without quantization.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile


def read_wav(path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Load a mono WAV file as float samples in [-1, 1].

    Returns ``(samples, sample_rate)``.  Multi-channel input is rejected.
    """
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.ndim} channels")
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} != expected {expected_rate}")
    if data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(float)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}; "
                         "use 16-bit PCM or 32-bit float")
    return samples, int(rate)


def write_wav(path, samples: np.ndarray, sample_rate: int,
              dtype: str = "float32") -> None:
    """Write float samples to a mono WAV file (float32 or int16)."""
    samples = np.asarray(samples, dtype=float)
    if dtype == "float32":
        wavfile.write(path, sample_rate, samples.astype(np.float32))
    elif dtype == "int16":
        clipped = np.clip(samples, -1.0, 32767.0 / 32768.0)
        wavfile.write(path, sample_rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise ValueError(f"unsupported output format {dtype!r}")
