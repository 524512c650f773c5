"""Per-band FIR echo canceller with externally controlled LMS updates.

The echo estimate in each frequency band is a length-``L`` FIR filter over
the current and past loudspeaker spectra of that band (the convolutive
transfer function model).  Coefficients adapt by the complex LMS rule

    ``h[l, f] += mu[l, f] * conj(u[f, tau - l]) * e[f]``

with a nonnegative per-band (and, for Kalman control, per-tap) step-size
field supplied by a pluggable controller.  The per-frame order is fixed:
push the new loudspeaker frame into the tap lines, predict with the prior
coefficients, form the prior error, query the controller, update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from aecctl.stft import StftConfig, analyze, synthesize


class ControllerError(RuntimeError):
    """Raised when a controller or update fails; carries the frame index."""

    def __init__(self, message: str, frame_index: int):
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


@dataclass
class CancellerConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    filter_length: int = 8

    def __post_init__(self):
        if self.filter_length < 1:
            raise ValueError("filter_length must be >= 1")


class CtfFilterState:
    """Coefficients and loudspeaker tap lines of all bands.

    ``coeffs[f, l]`` multiplies the loudspeaker spectrum ``l`` frames in the
    past; ``taps[f, 0]`` is the newest frame.
    """

    def __init__(self, num_bands: int, filter_length: int):
        self.num_bands = num_bands
        self.filter_length = filter_length
        self.coeffs = np.zeros((num_bands, filter_length), dtype=complex)
        self.taps = np.zeros((num_bands, filter_length), dtype=complex)

    def push(self, u_frame: np.ndarray) -> None:
        """Shift the tap lines by one frame and insert the new spectrum."""
        u_frame = np.asarray(u_frame)
        if u_frame.shape != (self.num_bands,):
            raise ValueError(
                f"expected {self.num_bands} bands, got shape {u_frame.shape}")
        self.taps[:, 1:] = self.taps[:, :-1]
        self.taps[:, 0] = u_frame

    def predict(self) -> np.ndarray:
        """Echo estimate from the prior coefficients and current tap lines."""
        return np.sum(self.coeffs * self.taps, axis=1)

    def update(self, step_sizes: np.ndarray, error: np.ndarray,
               frame_index: int = -1) -> None:
        """Apply the LMS update with the given step-size field."""
        step_sizes = np.asarray(step_sizes, dtype=float)
        if step_sizes.shape != self.coeffs.shape:
            raise ValueError(
                f"step-size field shape {step_sizes.shape} != "
                f"{self.coeffs.shape}")
        if np.any(step_sizes < 0.0) or not np.all(np.isfinite(step_sizes)):
            bad = np.argwhere(~np.isfinite(step_sizes) | (step_sizes < 0.0))[0]
            raise ControllerError(
                f"invalid step-size at band {bad[0]}, tap {bad[1]}", frame_index)
        with np.errstate(over="ignore", invalid="ignore"):
            self.coeffs += step_sizes * np.conj(self.taps) * error[:, None]
        if not np.all(np.isfinite(self.coeffs)):
            bad = np.argwhere(~np.isfinite(self.coeffs))[0]
            raise ControllerError(
                f"non-finite coefficient at band {bad[0]}, tap {bad[1]}",
                frame_index)


def predict_echo(state: CtfFilterState, u_frame: np.ndarray) -> np.ndarray:
    """Push a loudspeaker frame and predict the echo with prior coefficients."""
    state.push(u_frame)
    return state.predict()


def form_error(mic_frame: np.ndarray, echo_est: np.ndarray) -> np.ndarray:
    """Prior error: microphone spectrum minus echo estimate."""
    mic_frame = np.asarray(mic_frame)
    echo_est = np.asarray(echo_est)
    if mic_frame.shape != echo_est.shape:
        raise ValueError("mic frame and echo estimate shapes differ")
    return mic_frame - echo_est


@dataclass
class FrameContext:
    """Everything a controller may observe at one frame."""

    index: int
    taps: np.ndarray       # (F, L) loudspeaker tap lines, newest first
    mic: np.ndarray        # (F,)
    err: np.ndarray        # (F,) prior error
    echo_est: np.ndarray   # (F,)
    coeffs: np.ndarray     # (F, L) prior filter coefficients


@dataclass
class ControlOutput:
    """Step-size field plus optional gradient-error substitution."""

    step_sizes: np.ndarray                 # (F, L), nonnegative
    update_error: np.ndarray | None = None   # defaults to the prior error
    diagnostics: dict | None = None        # per-frame arrays to trace


class AdaptationController:
    """Base class; subclasses implement :meth:`step`."""

    name = "base"
    needs_ground_truth = False

    def prepare(self, num_bands: int, filter_length: int,
                stft_cfg: StftConfig, scene=None) -> None:
        """Size internal state for a stream; oracles receive the scene."""

    def step(self, frame: FrameContext) -> ControlOutput:
        raise NotImplementedError


@dataclass
class RunTrace:
    """Per-frame record of one canceller run."""

    stft: StftConfig
    filter_length: int
    error_spec: np.ndarray        # (F, T) complex
    echo_est_spec: np.ndarray     # (F, T) complex
    step_sizes: np.ndarray        # (T, F, L)
    masks: dict                   # name -> (T, F)
    diagnostics: dict             # name -> (T, ...) stacked controller extras
    error_td: np.ndarray          # synthesized time-domain error
    echo_est_td: np.ndarray       # synthesized time-domain echo estimate
    erle_framewise_db: np.ndarray | None  # (T,), needs scene truth
    scene: object = None

    @property
    def num_frames(self) -> int:
        return self.error_spec.shape[1]


def run_canceller(scene, controller: AdaptationController,
                  cfg: CancellerConfig) -> RunTrace:
    """Stream a scene through the canceller under the given controller."""
    U = analyze(scene.far_end, cfg.stft)
    Y = analyze(scene.mic, cfg.stft)
    D = analyze(scene.echo, cfg.stft)
    num_bands, num_frames = U.shape
    state = CtfFilterState(num_bands, cfg.filter_length)
    controller.prepare(num_bands, cfg.filter_length, cfg.stft, scene=scene)

    error_spec = np.empty((num_bands, num_frames), dtype=complex)
    echo_est_spec = np.empty((num_bands, num_frames), dtype=complex)
    step_sizes = np.empty((num_frames, num_bands, cfg.filter_length))
    mask_store: dict[str, list] = {}
    diag_store: dict[str, list] = {}

    for t in range(num_frames):
        echo_est = predict_echo(state, U[:, t])
        err = form_error(Y[:, t], echo_est)
        frame = FrameContext(index=t, taps=state.taps, mic=Y[:, t], err=err,
                             echo_est=echo_est, coeffs=state.coeffs)
        try:
            out = controller.step(frame)
        except ControllerError:
            raise
        except Exception as exc:
            raise ControllerError(f"controller {controller.name} failed: {exc}",
                                  t) from exc
        update_error = err if out.update_error is None else out.update_error
        mu = np.broadcast_to(np.asarray(out.step_sizes, dtype=float),
                             (num_bands, cfg.filter_length))
        state.update(mu, update_error, frame_index=t)
        error_spec[:, t] = err
        echo_est_spec[:, t] = echo_est
        step_sizes[t] = mu
        if out.diagnostics:
            for key, value in out.diagnostics.items():
                target = mask_store if key.endswith("_mask") else diag_store
                target.setdefault(key, []).append(np.asarray(value))

    residual = D - echo_est_spec
    with np.errstate(divide="ignore", invalid="ignore"):
        erle_fw = 10.0 * np.log10(
            np.sum(np.abs(D) ** 2, axis=0)
            / np.maximum(np.sum(np.abs(residual) ** 2, axis=0), 1e-30))

    trace = RunTrace(
        stft=cfg.stft,
        filter_length=cfg.filter_length,
        error_spec=error_spec,
        echo_est_spec=echo_est_spec,
        step_sizes=step_sizes,
        masks={k: np.stack(v) for k, v in mask_store.items()},
        diagnostics={k: np.stack(v) for k, v in diag_store.items()},
        error_td=synthesize(error_spec, cfg.stft),
        echo_est_td=synthesize(echo_est_spec, cfg.stft),
        erle_framewise_db=erle_fw,
    )
    trace.scene = scene
    return trace
