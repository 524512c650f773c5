"""Classical and oracle step-size controllers.

All controllers share the same recursive power estimators: the loudspeaker
power per band is the exponentially smoothed tap-line energy, and error and
interference powers are smoothed magnitude-squared spectra.  The step-size
laws themselves are exposed as pure functions so they can be checked against
hand-evaluated values, with the streaming state kept in controller classes.

Every controller clamps its output to ``MU_MAX``; the normalized laws are
unbounded when the loudspeaker falls silent, and a bounded step keeps those
frames harmless (the gradient is zero there anyway).
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from aecctl.canceller import AdaptationController, ControlOutput, FrameContext
from aecctl.stft import analyze

log = logging.getLogger(__name__)

# Shared defaults: loudspeaker power smoothing, error/interference smoothing,
# numerator regularization, and the global step-size cap (the reciprocal of
# the DNN output-layer regularization constant, see control.neural).
FAR_SMOOTHING = 0.9
ERROR_SMOOTHING = 0.5
NUMERATOR_REG = 1e-3
MU_MAX = 1e3


@dataclass
class PowerEstimates:
    """Recursive per-band power estimates driving the step-size laws."""

    far_power: np.ndarray       # smoothed tap-line energy per band
    error_power: np.ndarray     # smoothed |error|^2 per band
    interference_power: np.ndarray  # smoothed interference power per band
    far_smoothing: float = FAR_SMOOTHING
    error_smoothing: float = ERROR_SMOOTHING

    @classmethod
    def zeros(cls, num_bands: int, far_smoothing: float = FAR_SMOOTHING,
              error_smoothing: float = ERROR_SMOOTHING) -> "PowerEstimates":
        return cls(np.zeros(num_bands), np.zeros(num_bands),
                   np.zeros(num_bands), far_smoothing, error_smoothing)

    def update(self, taps: np.ndarray, err: np.ndarray,
               blind_interference: bool = True) -> "PowerEstimates":
        """Advance the recursions by one frame; returns self.

        Blind controllers track the interference power from the error
        spectrum; informed controllers pass ``blind_interference=False`` and
        feed :meth:`update_interference` from ground truth instead.
        """
        lam_u, lam_e = self.far_smoothing, self.error_smoothing
        self.far_power = lam_u * self.far_power \
            + (1.0 - lam_u) * np.sum(np.abs(taps) ** 2, axis=1)
        err_sq = np.abs(err) ** 2
        self.error_power = lam_e * self.error_power + (1.0 - lam_e) * err_sq
        if blind_interference:
            self.interference_power = (lam_e * self.interference_power
                                       + (1.0 - lam_e) * err_sq)
        return self

    def update_interference(self, interference_frame: np.ndarray) -> None:
        """Advance the interference recursion from a known interference frame."""
        lam = self.error_smoothing
        self.interference_power = (lam * self.interference_power
                                   + (1.0 - lam) * np.abs(interference_frame) ** 2)


# ---------------------------------------------------------------------------
# Pure step-size laws (per band; tap-uniform unless stated otherwise)


def stall_or_adapt_step(far_power: np.ndarray, adapt: float) -> np.ndarray:
    """Binary broadband gating: full NLMS step when adapting, zero otherwise."""
    far_power = np.asarray(far_power, dtype=float)
    out = np.full(far_power.shape, np.inf if adapt > 0.0 else 0.0)
    np.divide(adapt, far_power, out=out, where=far_power > 0.0)
    return out


def ea_nlms_step(far_power, error_power, raw_step: float = 0.2,
                 numerator_reg: float = NUMERATOR_REG) -> np.ndarray:
    """Error-power-aware NLMS: larger error power shrinks the step."""
    far_power = np.asarray(far_power, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(far_power + error_power > 0.0,
                        (raw_step + numerator_reg) / (far_power + error_power),
                        np.inf)


def min_system_distance_step(residual_power, interference_power,
                             far_power) -> np.ndarray:
    """Optimal NLMS scaling from the oracle misalignment output power."""
    residual_power = np.asarray(residual_power, dtype=float)
    total = residual_power + interference_power
    factor = np.divide(residual_power, total,
                       out=np.zeros_like(residual_power), where=total > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(far_power > 0.0, factor / far_power,
                      np.where(factor > 0.0, np.inf, 0.0))
    return mu


def kalman_step_size(variances: np.ndarray, taps: np.ndarray,
                     interference_power: np.ndarray,
                     numerator_reg: float = NUMERATOR_REG,
                     denominator_reg: float = 0.0) -> np.ndarray:
    """Per-tap Kalman gain as a step-size field.

    ``variances`` are the per-band, per-tap filter estimation variances;
    the denominator couples the taps of a band through the tap-line energy.
    A numerator offset keeps a collapsed filter variance from stalling the
    adaptation entirely; a denominator offset damps the whole gain.
    """
    taps_sq = np.abs(taps) ** 2
    denom = np.sum(variances * taps_sq, axis=1, keepdims=True) \
        + np.asarray(interference_power, dtype=float)[:, None] \
        + denominator_reg
    numer = variances + numerator_reg
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(denom > 0.0, numer / denom,
                      np.where(numer > 0.0, np.inf, 0.0))
    return mu


def _clamp(mu: np.ndarray, filter_length: int) -> np.ndarray:
    """Cap the step-size field and expand tap-uniform laws to (F, L)."""
    mu = np.minimum(np.asarray(mu, dtype=float), MU_MAX)
    if mu.ndim == 1:
        mu = np.repeat(mu[:, None], filter_length, axis=1)
    return mu


# ---------------------------------------------------------------------------
# Streaming controllers


class StallOrAdaptNlms(AdaptationController):
    """Full NLMS step gated off by a naive broadband double-talk detector.

    The detector compares peak microphone and loudspeaker magnitudes over a
    short frame window (Geigel-style); adaptation stalls whenever the mic
    peak exceeds half the loudspeaker peak.  Deliberately simple; it both
    mis-stalls on loud echo and misses moderate double-talk.
    """

    name = "stall_or_adapt"

    def __init__(self, detector_threshold: float = 0.5, window_frames: int = 2):
        self.detector_threshold = detector_threshold
        self.window_frames = window_frames

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        self.filter_length = filter_length
        self.powers = PowerEstimates.zeros(num_bands)
        self._mic_peaks = deque(maxlen=self.window_frames)
        self._far_peaks = deque(maxlen=self.window_frames)

    def step(self, frame: FrameContext) -> ControlOutput:
        self.powers.update(frame.taps, frame.err)
        self._mic_peaks.append(np.max(np.abs(frame.mic)))
        self._far_peaks.append(np.max(np.abs(frame.taps[:, 0])))
        double_talk = max(self._mic_peaks) > self.detector_threshold * max(self._far_peaks)
        adapt = 0.0 if double_talk else 1.0
        # The full unit step is only stable when the normalizer covers the
        # instantaneous tap-line energy, so the smoothed estimate is floored
        # by it (a smoothed-only normalizer overshoots on onsets).
        power = np.maximum(self.powers.far_power,
                           np.sum(np.abs(frame.taps) ** 2, axis=1))
        mu = stall_or_adapt_step(power, adapt)
        return ControlOutput(_clamp(mu, self.filter_length),
                             diagnostics={"adapt_flag": adapt})


class EaNlms(AdaptationController):
    """NLMS with the smoothed error power added to the normalization."""

    name = "ea_nlms"

    def __init__(self, raw_step: float = 0.2, numerator_reg: float = NUMERATOR_REG):
        self.raw_step = raw_step
        self.numerator_reg = numerator_reg

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        self.filter_length = filter_length
        self.powers = PowerEstimates.zeros(num_bands)

    def step(self, frame: FrameContext) -> ControlOutput:
        self.powers.update(frame.taps, frame.err)
        mu = ea_nlms_step(self.powers.far_power, self.powers.error_power,
                          self.raw_step, self.numerator_reg)
        return ControlOutput(_clamp(mu, self.filter_length))


class MinSystemDistanceNlms(AdaptationController):
    """Oracle NLMS scaling from the true misalignment output power.

    Needs scene ground truth twice: per-band least-squares reference filters
    fitted offline on the true echo (one per stationary echo-path segment),
    and the interference spectra for the noise-awareness term.  The expected
    misalignment output power is estimated by recursive averaging of the
    instantaneous misalignment output.
    """

    name = "min_system_distance"
    needs_ground_truth = True

    def __init__(self, residual_smoothing: float = 0.9):
        self.residual_smoothing = residual_smoothing

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        if scene is None:
            raise ValueError(f"{self.name} requires scene ground truth")
        self.filter_length = filter_length
        self.powers = PowerEstimates.zeros(num_bands)
        self._interference = analyze(scene.interference, stft_cfg)
        echo = analyze(scene.echo, stft_cfg)
        far = analyze(scene.far_end, stft_cfg)
        self._reference, self._switch_frame = _fit_reference_filters(
            far, echo, filter_length, scene.config, stft_cfg)
        self.residual_power = np.zeros(num_bands)

    def step(self, frame: FrameContext) -> ControlOutput:
        self.powers.update(frame.taps, frame.err, blind_interference=False)
        self.powers.update_interference(self._interference[:, frame.index])
        ref = self._reference[1] if frame.index >= self._switch_frame \
            else self._reference[0]
        misalign_out = np.sum((frame.coeffs - ref) * frame.taps, axis=1)
        lam = self.residual_smoothing
        self.residual_power = lam * self.residual_power \
            + (1.0 - lam) * np.abs(misalign_out) ** 2
        mu = min_system_distance_step(self.residual_power,
                                      self.powers.interference_power,
                                      self.powers.far_power)
        return ControlOutput(_clamp(mu, self.filter_length))


def _fit_reference_filters(far_spec, echo_spec, filter_length, scene_cfg,
                           stft_cfg):
    """Least-squares per-band FIR fits of the true echo, one per segment."""
    num_bands, num_frames = far_spec.shape
    taps = np.zeros((num_bands, num_frames, filter_length), dtype=complex)
    for l in range(filter_length):
        taps[:, l:, l] = far_spec[:, :num_frames - l]
    if scene_cfg.change_time_s is None:
        ref = _lstsq_per_band(taps, echo_spec, np.arange(num_frames))
        return (ref, ref), num_frames
    change_sample = scene_cfg.change_time_s * scene_cfg.sample_rate
    fade_samples = scene_cfg.fade_duration_s * scene_cfg.sample_rate
    frame_starts = np.arange(num_frames) * stft_cfg.hop
    pre = np.nonzero(frame_starts + stft_cfg.dft_length <= change_sample)[0]
    post = np.nonzero(frame_starts >= change_sample + fade_samples)[0]
    switch = int(np.searchsorted(frame_starts + 0.5 * stft_cfg.dft_length,
                                 change_sample + 0.5 * fade_samples))
    ref_a = _lstsq_per_band(taps, echo_spec, pre)
    ref_b = _lstsq_per_band(taps, echo_spec, post)
    return (ref_a, ref_b), switch


def _lstsq_per_band(taps, echo_spec, frames):
    num_bands, _, filter_length = taps.shape
    ref = np.zeros((num_bands, filter_length), dtype=complex)
    if frames.size < filter_length:
        return ref
    for f in range(num_bands):
        a = taps[f, frames, :]
        ref[f], *_ = np.linalg.lstsq(a, echo_spec[f, frames], rcond=None)
    return ref


class KalmanController(AdaptationController):
    """Diagonal per-band Kalman filter step-size (blind variant).

    The filter estimation variances follow a predict/correct recursion: the
    prediction leaks through the state-transition factor and adds process
    noise proportional to the temporally smoothed magnitude-squared filter
    coefficients; the correction shrinks each tap's variance by its applied
    step.  The interference power is estimated blindly from the error.
    """

    name = "kalman"
    blind_interference = True

    def __init__(self, transition: float = 0.99, initial_variance: float = 1.0,
                 process_noise_floor: float = 1e-3,
                 numerator_reg: float = NUMERATOR_REG,
                 denominator_reg: float = 0.0,
                 coeff_smoothing: float = 0.99):
        self.transition = transition
        self.initial_variance = initial_variance
        self.process_noise_floor = process_noise_floor
        self.numerator_reg = numerator_reg
        self.denominator_reg = denominator_reg
        self.coeff_smoothing = coeff_smoothing

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        self.filter_length = filter_length
        self.powers = PowerEstimates.zeros(num_bands)
        self.variances = np.full((num_bands, filter_length),
                                 float(self.initial_variance))
        self.smoothed_coeff_sq = np.zeros((num_bands, filter_length))

    def _interference(self, frame: FrameContext) -> np.ndarray:
        return self.powers.interference_power

    def step(self, frame: FrameContext) -> ControlOutput:
        self.powers.update(frame.taps, frame.err,
                           blind_interference=self.blind_interference)
        lam = self.coeff_smoothing
        self.smoothed_coeff_sq = lam * self.smoothed_coeff_sq \
            + (1.0 - lam) * np.abs(frame.coeffs) ** 2
        process_noise = np.maximum(
            (1.0 - self.transition ** 2) * self.smoothed_coeff_sq,
            self.process_noise_floor)
        predicted = self.transition ** 2 * self.variances + process_noise
        mu = kalman_step_size(predicted, frame.taps,
                              self._interference(frame), self.numerator_reg,
                              self.denominator_reg)
        mu = np.minimum(mu, MU_MAX)
        corrected = (1.0 - mu * np.abs(frame.taps) ** 2) * predicted
        if np.any(corrected < 0.0):
            log.debug("frame %d: negative filter variance clamped",
                      frame.index)
        self.variances = np.maximum(corrected, self.process_noise_floor)
        return ControlOutput(mu)


class OracleGradNlms(AdaptationController):
    """NLMS that adapts on the true echo error instead of the prior error.

    Substitutes the difference between the true and estimated echo for the
    microphone error in the coefficient update, making the gradient immune
    to near-end interference.  The step itself is a fixed NLMS step.
    """

    name = "oracle_grad_nlms"
    needs_ground_truth = True

    def __init__(self, raw_step: float = 0.2, numerator_reg: float = NUMERATOR_REG):
        self.raw_step = raw_step
        self.numerator_reg = numerator_reg

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        if scene is None:
            raise ValueError(f"{self.name} requires scene ground truth")
        self.filter_length = filter_length
        self.powers = PowerEstimates.zeros(num_bands)
        self._echo = analyze(scene.echo, stft_cfg)

    def step(self, frame: FrameContext) -> ControlOutput:
        self.powers.update(frame.taps, frame.err)
        with np.errstate(divide="ignore"):
            mu = np.where(self.powers.far_power > 0.0,
                          (self.raw_step + self.numerator_reg) / self.powers.far_power,
                          np.inf)
        true_error = self._echo[:, frame.index] - frame.echo_est
        return ControlOutput(_clamp(mu, self.filter_length),
                             update_error=true_error)


class OracleIpKalman(KalmanController):
    """Kalman step-size with the interference power taken from ground truth.

    The regularization constant of this variant damps the whole gain (it is
    added to the denominator): an additive numerator offset of comparable
    size would make the normalized step exceed one whenever the interference
    is quiet, which diverges by construction.
    """

    name = "oracle_ip_kalman"
    needs_ground_truth = True
    blind_interference = False

    def __init__(self, transition: float = 0.999, initial_variance: float = 0.1,
                 process_noise_floor: float = 1e-4, regularization: float = 1.0,
                 coeff_smoothing: float = 0.99):
        super().__init__(transition, initial_variance, process_noise_floor,
                         numerator_reg=0.0, denominator_reg=regularization,
                         coeff_smoothing=coeff_smoothing)

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        if scene is None:
            raise ValueError(f"{self.name} requires scene ground truth")
        super().prepare(num_bands, filter_length, stft_cfg)
        self._interference_spec = analyze(scene.interference, stft_cfg)

    def _interference(self, frame: FrameContext) -> np.ndarray:
        self.powers.update_interference(self._interference_spec[:, frame.index])
        return self.powers.interference_power
