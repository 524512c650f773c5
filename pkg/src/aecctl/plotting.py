"""Report figures, rendered straight to files next to the CSV output.

Convergence curves go to SVG; spectrogram-style images (component powers,
step-size masks) go to PNG.  No interactive display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "aecctl"

_SVG_METADATA = {"Date": None}


def save_convergence_plot(segment_series: dict, segment_s: float, path) -> None:
    """Mean segmental ERLE per controller over scene time."""
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    for name in sorted(segment_series):
        series = np.asarray(segment_series[name], dtype=float)
        t = (np.arange(series.size) + 0.5) * segment_s
        ax.plot(t, series, label=name, linewidth=1.4)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("ERLE [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_SVG_METADATA if str(path).endswith(".svg") else None)
    plt.close(fig)


def save_erle_bars(means: dict, stds: dict, path) -> None:
    """Mean/std ERLE summary per controller."""
    names = sorted(means)
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    x = np.arange(len(names))
    ax.bar(x, [means[n] for n in names], yerr=[stds[n] for n in names],
           capsize=3, color="#4878a8")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("ERLE [dB]")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata=_SVG_METADATA if str(path).endswith(".svg") else None)
    plt.close(fig)


def _imshow_time_freq(ax, values, hop_s: float, sample_rate: int, vmin=None,
                      vmax=None, cmap="viridis"):
    num_bands, num_frames = values.shape
    extent = [0.0, num_frames * hop_s, 0.0, sample_rate / 2000.0]
    im = ax.imshow(values, origin="lower", aspect="auto", extent=extent,
                   vmin=vmin, vmax=vmax, cmap=cmap, interpolation="nearest")
    ax.set_ylabel("freq [kHz]")
    return im


def save_mask_spectrogram(mask: np.ndarray, hop_s: float, sample_rate: int,
                          path, title: str = "step-size mask") -> None:
    """Step-size mask over time and frequency, ``mask`` shaped ``(T, F)``."""
    fig, ax = plt.subplots(figsize=(6.0, 2.8))
    im = _imshow_time_freq(ax, np.asarray(mask).T, hop_s, sample_rate,
                           vmin=0.0, vmax=1.0)
    ax.set_xlabel("time [s]")
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_component_spectrograms(spectra: dict, hop_s: float,
                                sample_rate: int, path,
                                floor_db: float = -60.0) -> None:
    """Log-power spectrograms of named complex spectrograms, stacked."""
    names = list(spectra)
    fig, axes = plt.subplots(len(names), 1, figsize=(6.0, 2.2 * len(names)),
                             squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        power = np.abs(spectra[name]) ** 2
        power = power / max(power.max(), 1e-30)
        level = 10.0 * np.log10(np.maximum(power, 10.0 ** (floor_db / 10.0)))
        im = _imshow_time_freq(ax, level, hop_s, sample_rate,
                               vmin=floor_db, vmax=0.0)
        ax.set_title(name, fontsize=9)
        fig.colorbar(im, ax=ax)
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
