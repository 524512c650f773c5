"""STFT analysis/synthesis with weighted overlap-add reconstruction.

Spectra are stored one-sided: ``F = dft_length // 2 + 1`` bins per frame,
real input assumed, Hermitian symmetry restored on synthesis.  A spectrogram
is a complex ndarray of shape ``(F, num_frames)``; column ``t`` covers the
samples ``[t * hop, t * hop + dft_length)``.

The synthesis window is the least-squares dual of the analysis window for
the configured hop, so ``synthesize(analyze(x))`` reproduces ``x`` exactly
on the interior (the first/last ``dft_length`` samples see partial overlap
and are excluded from metrics).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import get_window


@dataclass(frozen=True)
class StftConfig:
    """Frame geometry and analysis window of the transform."""

    dft_length: int = 512
    hop: int = 128
    window: str = "hamming"
    sample_rate: int = 16000
    analysis_window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.dft_length <= 0 or self.hop <= 0:
            raise ValueError("dft_length and hop must be positive")
        if self.dft_length % self.hop != 0:
            raise ValueError("hop must divide dft_length")
        win = self.analysis_window
        if win is None:
            win = get_window(self.window, self.dft_length, fftbins=True)
        win = np.asarray(win, dtype=float)
        if win.shape != (self.dft_length,):
            raise ValueError("analysis_window must have dft_length entries")
        if not np.all(np.isfinite(win)) or not np.any(win):
            raise ValueError("analysis_window must be finite and not all zero")
        object.__setattr__(self, "analysis_window", win)

    @property
    def num_bins(self) -> int:
        """Number of retained one-sided bins."""
        return self.dft_length // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return (num_samples - self.dft_length) // self.hop + 1

    def num_samples(self, num_frames: int) -> int:
        return (num_frames - 1) * self.hop + self.dft_length


def _synthesis_window(cfg: StftConfig) -> np.ndarray:
    return _synthesis_window_cached(cfg.dft_length, cfg.hop,
                                    cfg.analysis_window.tobytes())


@lru_cache(maxsize=8)
def _synthesis_window_cached(dft_length, hop, window_bytes):
    win = np.frombuffer(window_bytes, dtype=float)
    # Least-squares dual window: the overlap-add denominator is hop-periodic.
    denom = win.reshape(dft_length // hop, hop) ** 2
    denom = denom.sum(axis=0)
    if np.any(denom <= 0.0):
        raise ValueError("analysis window has zero overlap-add energy; "
                         "no dual synthesis window exists for this hop")
    return win / np.tile(denom, dft_length // hop)


def analyze(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Transform a sample stream into a one-sided complex spectrogram.

    Parameters
    ----------
    samples: real ndarray, at least ``cfg.dft_length`` samples long.
    cfg: frame geometry and analysis window.

    Returns
    -------
    Complex ndarray of shape ``(cfg.num_bins, num_frames)``.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1:
        raise ValueError("expected a mono sample stream")
    if samples.size < cfg.dft_length:
        raise ValueError(
            f"stream of {samples.size} samples is shorter than one frame "
            f"({cfg.dft_length} samples); nothing to analyze")
    num_frames = cfg.num_frames(samples.size)
    idx = (np.arange(cfg.dft_length)[None, :]
           + cfg.hop * np.arange(num_frames)[:, None])
    frames = samples[idx] * cfg.analysis_window
    return np.fft.rfft(frames, axis=1).T


def synthesize(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Reconstruct a sample stream by weighted overlap-add.

    Inverse of :func:`analyze` on the interior of the stream.  Output
    length is ``(num_frames - 1) * hop + dft_length``.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != cfg.num_bins:
        raise ValueError(
            f"expected spectrogram with {cfg.num_bins} bins per frame, "
            f"got shape {spec.shape}")
    swin = _synthesis_window(cfg)
    frames = np.fft.irfft(spec.T, n=cfg.dft_length, axis=1) * swin
    num_frames = spec.shape[1]
    out = np.zeros(cfg.num_samples(num_frames))
    for t in range(num_frames):
        start = t * cfg.hop
        out[start:start + cfg.dft_length] += frames[t]
    return out


def frame_energy(spec_column: np.ndarray, dft_length: int) -> float:
    """Energy of one spectral frame under the one-sided real-DFT convention.

    Hermitian-doubles the interior bins so that the result equals
    ``dft_length`` times the energy of the windowed time-domain segment
    (Parseval for ``numpy.fft.rfft``).
    """
    mags = np.abs(spec_column) ** 2
    interior = mags[1:-1] if dft_length % 2 == 0 else mags[1:]
    tail = mags[-1] if dft_length % 2 == 0 else 0.0
    return float(mags[0] + 2.0 * interior.sum() + tail)


def interior_slice(num_samples: int, cfg: StftConfig) -> slice:
    """Sample range unaffected by partial frame overlap at the stream edges.

    Metrics are computed on this region only; one full frame span is
    discarded at each edge.
    """
    return slice(cfg.dft_length, max(cfg.dft_length, num_samples - cfg.dft_length))
