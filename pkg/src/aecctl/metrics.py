"""Evaluation quantities: ERLE, echo-to-interference ratio, training losses,
and the recurrent-state clustering analysis.

All divisions are floored at ``LOSS_REG`` (1e-12); echo-cancellation ratios
are capped at 120 dB when the residual vanishes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from aecctl.stft import StftConfig, interior_slice

LOSS_REG = 1e-12
ERLE_CAP_DB = 120.0


def erle(echo: np.ndarray, echo_est: np.ndarray,
         cap_db: float = ERLE_CAP_DB) -> float:
    """Echo power over residual-echo power, in dB.

    Uses the true echo (not the microphone signal), so the value is
    meaningful during double-talk as well.
    """
    echo = np.asarray(echo, dtype=float)
    echo_est = np.asarray(echo_est, dtype=float)
    if echo.shape != echo_est.shape:
        raise ValueError("echo and estimate lengths differ")
    echo_power = np.sum(echo ** 2)
    if echo_power == 0.0:
        raise ValueError("echo component is identically zero; ERLE undefined")
    residual_power = np.sum((echo - echo_est) ** 2)
    if residual_power == 0.0:
        return cap_db
    return float(min(10.0 * np.log10(echo_power / residual_power), cap_db))


def segment_erle(echo: np.ndarray, echo_est: np.ndarray, sample_rate: int,
                 segment_s: float = 1.0) -> np.ndarray:
    """ERLE per consecutive segment, for convergence curves."""
    echo = np.asarray(echo, dtype=float)
    echo_est = np.asarray(echo_est, dtype=float)
    seg = int(round(segment_s * sample_rate))
    out = []
    for start in range(0, echo.size - seg + 1, seg):
        sl = slice(start, start + seg)
        if np.any(echo[sl]):
            out.append(erle(echo[sl], echo_est[sl]))
        else:
            out.append(np.nan)
    return np.asarray(out)


def eir(echo_spec: np.ndarray, interference_spec: np.ndarray,
        smoothing: float = 0.5, floor: float = LOSS_REG) -> np.ndarray:
    """Per-band echo-to-interference power ratio in dB, ``(F, T)``.

    Both powers are recursively smoothed along frames; the denominator is
    floored to keep silent bins finite.
    """
    if echo_spec.shape != interference_spec.shape:
        raise ValueError("spectrogram shapes differ")
    echo_pow = _smooth_frames(np.abs(echo_spec) ** 2, smoothing)
    intf_pow = _smooth_frames(np.abs(interference_spec) ** 2, smoothing)
    return 10.0 * np.log10(np.maximum(echo_pow, floor)
                           / np.maximum(intf_pow, floor))


def _smooth_frames(power: np.ndarray, smoothing: float) -> np.ndarray:
    out = np.empty_like(power)
    acc = np.zeros(power.shape[0])
    for t in range(power.shape[1]):
        acc = smoothing * acc + (1.0 - smoothing) * power[:, t]
        out[:, t] = acc
    return out


def losses(echo_td, echo_est_td, echo_spec, echo_est_spec,
           reg: float = LOSS_REG) -> dict:
    """Forward values of the four training losses.

    Mean-square-error losses average the squared residual over samples
    (time domain) or time-frequency bins (frequency domain); the ERLE-type
    losses are negated log ratios of mean echo power to mean residual
    power, regularized by ``reg``.  The time-domain variants operate on
    overlap-add resyntheses, which couples the bands.
    """
    echo_td = np.asarray(echo_td, dtype=float)
    echo_est_td = np.asarray(echo_est_td, dtype=float)
    if echo_td.shape != echo_est_td.shape:
        raise ValueError("time-domain signal lengths differ")
    if echo_spec.shape != echo_est_spec.shape:
        raise ValueError("spectrogram shapes differ")
    td_residual = np.mean((echo_td - echo_est_td) ** 2)
    td_power = np.mean(echo_td ** 2)
    fd_residual = np.mean(np.abs(echo_spec - echo_est_spec) ** 2)
    fd_power = np.mean(np.abs(echo_spec) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return {
            "fd_mse": float(fd_residual),
            "td_mse": float(td_residual),
            "fd_erle": float(-np.log10((reg + fd_power) / (reg + fd_residual))),
            "td_erle": float(-np.log10((reg + td_power) / (reg + td_residual))),
        }


def cluster_states(states: np.ndarray, num_clusters: int = 2) -> np.ndarray:
    """Group per-frame state vectors by agglomerative clustering.

    Bottom-up average linkage under the city-block (L1) metric, cut at
    ``num_clusters``.  Labels are renumbered so cluster 1 is the cluster of
    the earliest frame, cluster 2 the next new cluster to appear, and so on.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2:
        raise ValueError("expected a (frames, dims) state matrix")
    if states.shape[0] < num_clusters:
        raise ValueError(f"need at least {num_clusters} frames to form "
                         f"{num_clusters} clusters")
    merges = linkage(states, method="average", metric="cityblock")
    raw = fcluster(merges, t=num_clusters, criterion="maxclust")
    return _canonical_labels(raw)


def _canonical_labels(raw: np.ndarray) -> np.ndarray:
    mapping = {}
    out = np.empty(raw.shape, dtype=int)
    for i, label in enumerate(raw):
        if label not in mapping:
            mapping[label] = len(mapping) + 1
        out[i] = mapping[label]
    return out


@dataclass
class MetricReport:
    """Per-run evaluation summary.

    The per-band echo-to-interference series is optional; it is sizable,
    so callers request it explicitly.
    """

    erle_db: float
    erle_segments_db: list
    losses: dict
    eir_db: np.ndarray | None = None   # (F, T)
    controller: str = ""
    scene_seed: int | None = None

    def to_json_dict(self) -> dict:
        doc = {
            "controller": self.controller,
            "scene_seed": self.scene_seed,
            "erle_db": self.erle_db,
            "erle_segments_db": [None if np.isnan(v) else float(v)
                                 for v in self.erle_segments_db],
            "losses": self.losses,
        }
        if self.eir_db is not None:
            doc["eir_db"] = self.eir_db.tolist()
        return doc


def evaluate_run(trace, scene, controller_name: str = "",
                 scene_seed: int | None = None,
                 include_eir: bool = False) -> MetricReport:
    """Score one canceller run against the scene ground truth.

    Edge frames see partial window overlap, so one full frame span is
    discarded at each end of the stream before computing time-domain
    quantities.
    """
    from aecctl.stft import analyze  # local import to avoid cycles

    cfg: StftConfig = trace.stft
    n = trace.echo_est_td.size
    sl = interior_slice(n, cfg)
    echo = scene.echo[:n]
    echo_spec = analyze(scene.echo, cfg)
    loss_values = losses(echo[sl], trace.echo_est_td[sl],
                         echo_spec, trace.echo_est_spec)
    eir_db = eir(echo_spec, analyze(scene.interference, cfg)) \
        if include_eir else None
    return MetricReport(
        erle_db=erle(echo[sl], trace.echo_est_td[sl]),
        erle_segments_db=list(segment_erle(echo[sl], trace.echo_est_td[sl],
                                           cfg.sample_rate)),
        losses=loss_values,
        eir_db=eir_db,
        controller=controller_name,
        scene_seed=scene_seed,
    )


def save_report_json(reports: list, path) -> None:
    with open(path, "w") as f:
        json.dump([r.to_json_dict() for r in reports], f, indent=1,
                  sort_keys=True)
