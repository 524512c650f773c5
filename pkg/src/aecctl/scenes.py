"""Synthetic acoustic scene generation with per-component ground truth.

A scene is the quadruple of time-domain signals seen by the canceller: the
far-end (loudspeaker) signal, the echo it produces through the echo-path
impulse response, near-end speech and background noise.  The microphone
signal is their exact sum, and every component is retained so oracle
controllers and metrics can use ground truth.

Scenes follow a randomized protocol: most scenes switch the echo-path
impulse response mid-scene with a linear crossfade, sources are temporally
masked to mimic conversational turn-taking, and components are scaled to
randomized power ratios.  All randomness is driven by one seeded generator
per scene, so a scene is a pure function of its config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from aecctl.io_wav import read_wav, write_wav

# Activity detection for power ratios: a 20 ms frame counts as active when
# its RMS is within 40 dB of the component's peak sample magnitude.
ACTIVITY_FRAME_MS = 20.0
ACTIVITY_THRESHOLD_DB = -40.0


@dataclass(frozen=True)
class SceneConfig:
    """Everything needed to deterministically rebuild one scene."""

    duration_s: float = 8.0
    sample_rate: int = 16000
    ir_a: np.ndarray = None
    ir_b: np.ndarray | None = None
    change_time_s: float | None = None
    fade_duration_s: float = 0.0
    ser_db: float = 0.0
    senr_db: float | None = 30.0
    far_mask: tuple[tuple[float, float], ...] | None = None
    near_mask: tuple[tuple[float, float], ...] | None = None
    near_end_active: bool = True
    noise_active: bool = True
    far_source: str = "speech_like"
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.duration_s <= 8.0:
            raise ValueError("duration_s must be in (0, 8] seconds")
        if self.ir_a is None:
            raise ValueError("ir_a is required")
        object.__setattr__(self, "ir_a", np.asarray(self.ir_a, dtype=float))
        if self.ir_b is not None:
            object.__setattr__(self, "ir_b", np.asarray(self.ir_b, dtype=float))
        if self.change_time_s is not None:
            if not 0.0 < self.change_time_s < self.duration_s:
                raise ValueError("change_time_s must lie within the scene")
            if self.ir_b is None:
                raise ValueError("an echo-path change requires ir_b")
        if not 0.0 <= self.fade_duration_s <= 1.0:
            raise ValueError("fade_duration_s must be in [0, 1] seconds")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    def to_json_dict(self) -> dict:
        d = {
            "duration_s": self.duration_s,
            "sample_rate": self.sample_rate,
            "ir_a": self.ir_a.tolist(),
            "ir_b": None if self.ir_b is None else self.ir_b.tolist(),
            "change_time_s": self.change_time_s,
            "fade_duration_s": self.fade_duration_s,
            "ser_db": self.ser_db,
            "senr_db": self.senr_db,
            "far_mask": self.far_mask,
            "near_mask": self.near_mask,
            "near_end_active": self.near_end_active,
            "noise_active": self.noise_active,
            "far_source": self.far_source,
            "rng_seed": self.rng_seed,
        }
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for key in ("far_mask", "near_mask"):
            if d.get(key) is not None:
                d[key] = tuple(tuple(seg) for seg in d[key])
        return cls(**d)


@dataclass
class Scene:
    """Component signals of one scene; ``mic == echo + near_end + noise``."""

    far_end: np.ndarray
    echo: np.ndarray
    near_end: np.ndarray
    noise: np.ndarray
    mic: np.ndarray
    config: SceneConfig

    def __post_init__(self):
        n = self.far_end.size
        for name in ("echo", "near_end", "noise", "mic"):
            if getattr(self, name).size != n:
                raise ValueError(f"component {name} length differs from far_end")

    @property
    def interference(self) -> np.ndarray:
        """Near-end speech plus noise: everything the canceller cannot remove."""
        return self.near_end + self.noise


def render_echo(far_end: np.ndarray, cfg: SceneConfig) -> np.ndarray:
    """Convolve the far-end signal with the scene's echo path(s).

    Before an echo-path change the path is ``ir_a``; after the change plus
    fade it is ``ir_b``.  During the fade the output is a linear crossfade
    of both convolutions.
    """
    far_end = np.asarray(far_end, dtype=float)
    if cfg.ir_a.size == 0:
        raise ValueError("ir_a is empty")
    if cfg.ir_a.size > far_end.size:
        raise ValueError("impulse response longer than the signal")
    echo_a = fftconvolve(far_end, cfg.ir_a)[:far_end.size]
    if cfg.change_time_s is None:
        return echo_a
    if cfg.ir_b.size == 0 or cfg.ir_b.size > far_end.size:
        raise ValueError("ir_b is empty or longer than the signal")
    echo_b = fftconvolve(far_end, cfg.ir_b)[:far_end.size]
    alpha = _crossfade_ramp(far_end.size, cfg)
    return (1.0 - alpha) * echo_a + alpha * echo_b


def _crossfade_ramp(num_samples: int, cfg: SceneConfig) -> np.ndarray:
    start = int(round(cfg.change_time_s * cfg.sample_rate))
    fade_len = int(round(cfg.fade_duration_s * cfg.sample_rate))
    alpha = np.zeros(num_samples)
    if fade_len == 0:
        alpha[start:] = 1.0
        return alpha
    end = min(start + fade_len, num_samples)
    alpha[start:end] = np.arange(end - start) / fade_len
    alpha[end:] = 1.0
    return alpha


def active_sample_mask(x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Boolean mask of samples inside frames with considerable activity."""
    x = np.asarray(x, dtype=float)
    peak = np.max(np.abs(x))
    if peak == 0.0:
        return np.zeros(x.size, dtype=bool)
    frame = max(1, int(round(ACTIVITY_FRAME_MS * 1e-3 * sample_rate)))
    num_frames = int(np.ceil(x.size / frame))
    padded = np.zeros(num_frames * frame)
    padded[:x.size] = x
    rms = np.sqrt(np.mean(padded.reshape(num_frames, frame) ** 2, axis=1))
    active = rms > peak * 10.0 ** (ACTIVITY_THRESHOLD_DB / 20.0)
    return np.repeat(active, frame)[:x.size]


def active_power(x: np.ndarray, sample_rate: int) -> float:
    """Mean-square power over active segments only."""
    mask = active_sample_mask(x, sample_rate)
    if not mask.any():
        raise ValueError("component has no signal activity; cannot scale it")
    return float(np.mean(np.asarray(x, dtype=float)[mask] ** 2))


def apply_mask(x: np.ndarray, segments, sample_rate: int) -> np.ndarray:
    """Zero a signal outside the given on-intervals (seconds)."""
    if segments is None:
        return x
    gate = np.zeros(x.size)
    for start_s, end_s in segments:
        a = int(round(start_s * sample_rate))
        b = int(round(end_s * sample_rate))
        gate[max(0, a):max(0, b)] = 1.0
    return x * gate


def mix_scene(far_end: np.ndarray, near_raw: np.ndarray | None,
              noise_raw: np.ndarray | None, cfg: SceneConfig) -> Scene:
    """Assemble a scene from raw component signals.

    The far-end signal is masked and normalized to unit variance, the echo
    rendered through the configured paths, and near-end/noise scaled so the
    active-segment power ratios hit ``ser_db`` (near-end over echo) and
    ``senr_db`` (near-end over noise; see note below).  Finally all
    components are scaled jointly so the microphone signal has unit
    variance; the additive microphone decomposition holds exactly.

    Note: the second ratio is applied against the noise component alone.
    Demanding near-end over echo-plus-noise in [20, 40] dB together with
    near-end over echo in [-10, 10] dB is unsatisfiable (it would force a
    negative noise power), so the noise floor is set ``senr_db`` below the
    near-end component instead.
    """
    sr = cfg.sample_rate
    far_end = apply_mask(np.asarray(far_end, dtype=float), cfg.far_mask, sr)
    if not np.any(far_end):
        raise ValueError("far-end signal is identically zero")
    far_end = far_end / np.std(far_end)

    echo = render_echo(far_end, cfg)
    echo_power = active_power(echo, sr)

    if near_raw is not None and cfg.near_end_active:
        near = apply_mask(np.asarray(near_raw, dtype=float), cfg.near_mask, sr)
        near_power = active_power(near, sr)
        near = near * np.sqrt(10.0 ** (cfg.ser_db / 10.0) * echo_power / near_power)
        near_power = 10.0 ** (cfg.ser_db / 10.0) * echo_power
    else:
        near = np.zeros_like(far_end)
        near_power = None

    if noise_raw is not None and cfg.noise_active and cfg.senr_db is not None:
        if near_power is None:
            raise ValueError("noise scaling requires an active near-end component")
        noise = np.asarray(noise_raw, dtype=float)
        noise_power = active_power(noise, sr)
        noise = noise * np.sqrt(near_power / (10.0 ** (cfg.senr_db / 10.0) * noise_power))
    else:
        noise = np.zeros_like(far_end)

    mic = echo + near + noise
    mic_std = np.std(mic)
    if mic_std == 0.0:
        raise ValueError("microphone signal is identically zero")
    echo, near, noise = echo / mic_std, near / mic_std, noise / mic_std
    mic = echo + near + noise
    return Scene(far_end=far_end, echo=echo, near_end=near, noise=noise,
                 mic=mic, config=cfg)


# ---------------------------------------------------------------------------
# Source signal synthesis


def _speech_like(rng: np.random.Generator, num_samples: int,
                 sample_rate: int) -> np.ndarray:
    """Colored, syllabically modulated noise as a stand-in for speech."""
    pole = rng.uniform(0.85, 0.97)
    x = lfilter([1.0], [1.0, -pole], rng.standard_normal(num_samples))
    rate_hz = rng.uniform(2.0, 6.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(num_samples) / sample_rate
    envelope = 0.25 + 0.75 * 0.5 * (1.0 + np.sin(2.0 * np.pi * rate_hz * t + phase))
    return x * envelope


def _white(rng: np.random.Generator, num_samples: int, sample_rate: int) -> np.ndarray:
    return rng.standard_normal(num_samples)


_SOURCES = {"speech_like": _speech_like, "white": _white}


def _sample_mask(rng: np.random.Generator, duration_s: float):
    """Alternating on/off segments with durations uniform in [0.5, 2] s."""
    segments = []
    t = 0.0
    on = bool(rng.integers(0, 2))
    while t < duration_s:
        seg = float(rng.uniform(0.5, 2.0))
        if on:
            segments.append((t, min(t + seg, duration_s)))
        t += seg
        on = not on
    if not segments:  # ensure some activity
        segments.append((0.0, duration_s))
    return tuple(segments)


def synthetic_ir(rng: np.random.Generator, num_taps: int = 512,
                 rt60_s: float = 0.25, direct_delay: int = 8,
                 sample_rate: int = 16000) -> np.ndarray:
    """Exponentially decaying noise tail behind a unit direct path."""
    ir = np.zeros(num_taps)
    ir[direct_delay] = 1.0
    tail_len = num_taps - direct_delay - 1
    if tail_len > 0:
        t = np.arange(1, tail_len + 1) / sample_rate
        envelope = np.exp(-np.log(1000.0) * t / rt60_s)
        ir[direct_delay + 1:] = 0.5 * rng.standard_normal(tail_len) * envelope
    return ir


class IrPool:
    """Source of echo-path impulse responses.

    Either a directory of measured-IR WAV files or a synthetic generator
    (exponentially decaying noise tails with randomized decay and delay).
    """

    def __init__(self, directory=None, num_taps: int = 512,
                 sample_rate: int = 16000):
        self.num_taps = num_taps
        self.sample_rate = sample_rate
        self._irs = None
        if directory is not None:
            paths = sorted(Path(directory).glob("*.wav"))
            if not paths:
                raise ValueError(f"IR pool directory {directory} holds no WAV files")
            self._irs = [read_wav(p, expected_rate=sample_rate)[0] for p in paths]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self._irs is not None:
            return self._irs[int(rng.integers(len(self._irs)))].copy()
        return synthetic_ir(
            rng, num_taps=self.num_taps,
            rt60_s=float(rng.uniform(0.15, 0.45)),
            direct_delay=int(rng.integers(4, 33)),
            sample_rate=self.sample_rate)


# Scene randomization protocol: fraction of scenes with an echo-path change,
# the change-time and fade ranges, masking probability and ratio ranges.
CHANGE_PROBABILITY = 0.9
CHANGE_TIME_RANGE_S = (3.0, 6.0)
FADE_RANGE_S = (0.0, 1.0)
MASK_PROBABILITY = 2.0 / 3.0
SER_RANGE_DB = (-10.0, 10.0)
SENR_RANGE_DB = (20.0, 40.0)


def sample_scene_config(rng_seed: int, pool: IrPool | None = None,
                        duration_s: float = 8.0,
                        sample_rate: int = 16000) -> SceneConfig:
    """Draw one scene configuration from the randomized protocol."""
    if pool is None:
        pool = IrPool(sample_rate=sample_rate)
    rng = np.random.default_rng(rng_seed)
    ir_a = pool.sample(rng)
    change = rng.uniform() < CHANGE_PROBABILITY and duration_s > CHANGE_TIME_RANGE_S[0]
    ir_b = pool.sample(rng) if change else None
    change_time = None
    fade = 0.0
    if change:
        change_time = float(rng.uniform(*CHANGE_TIME_RANGE_S))
        change_time = min(change_time, 0.95 * duration_s)
        fade = float(rng.uniform(*FADE_RANGE_S))
    far_mask = _sample_mask(rng, duration_s) if rng.uniform() < MASK_PROBABILITY else None
    near_mask = _sample_mask(rng, duration_s) if rng.uniform() < MASK_PROBABILITY else None
    return SceneConfig(
        duration_s=duration_s,
        sample_rate=sample_rate,
        ir_a=ir_a,
        ir_b=ir_b,
        change_time_s=change_time,
        fade_duration_s=fade,
        ser_db=float(rng.uniform(*SER_RANGE_DB)),
        senr_db=float(rng.uniform(*SENR_RANGE_DB)),
        far_mask=far_mask,
        near_mask=near_mask,
        rng_seed=rng_seed,
    )


def build_scene(cfg: SceneConfig) -> Scene:
    """Render a scene from its config; pure function of the config."""
    rng = np.random.default_rng(cfg.rng_seed + (1 << 32))
    n = cfg.num_samples
    far = _SOURCES[cfg.far_source](rng, n, cfg.sample_rate)
    near = _speech_like(rng, n, cfg.sample_rate) if cfg.near_end_active else None
    noise = _white(rng, n, cfg.sample_rate) if cfg.noise_active else None
    return mix_scene(far, near, noise, cfg)


def sample_random_scene(rng_seed: int, pool: IrPool | None = None,
                        duration_s: float = 8.0,
                        sample_rate: int = 16000) -> Scene:
    """Draw a config and render it; deterministic given the seed."""
    return build_scene(sample_scene_config(rng_seed, pool, duration_s, sample_rate))


# ---------------------------------------------------------------------------
# Scene directories

_COMPONENT_FILES = {
    "far_end": "far.wav",
    "mic": "mic.wav",
    "echo": "echo.wav",
    "near_end": "near.wav",
    "noise": "noise.wav",
}


def write_scene(scene: Scene, directory) -> None:
    """Export a scene as a WAV set plus a JSON config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sr = scene.config.sample_rate
    for attr, fname in _COMPONENT_FILES.items():
        write_wav(directory / fname, getattr(scene, attr), sr)
    with open(directory / "scene.json", "w") as f:
        json.dump(scene.config.to_json_dict(), f, indent=1, sort_keys=True)


def load_scene(directory) -> Scene:
    """Load an exported scene.

    The microphone signal is recomputed as the sum of the stored components
    so the additive decomposition holds exactly after 32-bit quantization.
    """
    directory = Path(directory)
    with open(directory / "scene.json") as f:
        cfg = SceneConfig.from_json_dict(json.load(f))
    parts = {attr: read_wav(directory / fname, expected_rate=cfg.sample_rate)[0]
             for attr, fname in _COMPONENT_FILES.items()}
    mic = parts["echo"] + parts["near_end"] + parts["noise"]
    return Scene(far_end=parts["far_end"], echo=parts["echo"],
                 near_end=parts["near_end"], noise=parts["noise"],
                 mic=mic, config=cfg)
