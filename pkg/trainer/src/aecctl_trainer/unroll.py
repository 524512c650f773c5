"""Differentiable echo-canceller loop, unrolled over whole scenes.

Mirrors the inference-side semantics: per-band FIR prediction over the
loudspeaker tap lines, prior error, mask-structured step-size, LMS update;
losses per the four supported objectives.  Gradients flow through the
filter-state recursion across the full sequence (backpropagation through
time, no truncation); the loudspeaker-power recursion participates in the
graph unless configured otherwise.
"""

from __future__ import annotations

import numpy as np
import torch

from aecctl_trainer.config import TrainConfig

LOSS_REG = 1e-12
STEP_SIZE_REG = 1e-3
FEATURE_REG = 1e-12
FAR_SMOOTHING = 0.9


def hamming_window(n: int) -> np.ndarray:
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / n)


def dual_window(window: np.ndarray, hop: int) -> np.ndarray:
    denom = (window.reshape(-1, hop) ** 2).sum(axis=0)
    return window / np.tile(denom, window.size // hop)


class DifferentiableCanceller:
    def __init__(self, cfg: TrainConfig, dtype: torch.dtype = torch.float32):
        self.cfg = cfg
        self.dtype = dtype
        win = hamming_window(cfg.dft_length)
        self.window = torch.tensor(win, dtype=dtype)
        self.synthesis_window = torch.tensor(dual_window(win, cfg.hop),
                                             dtype=dtype)

    # -- transforms

    def stft(self, x: torch.Tensor) -> torch.Tensor:
        """(batch, samples) -> (batch, bands, frames), uncentered frames."""
        return torch.stft(x, n_fft=self.cfg.dft_length,
                          hop_length=self.cfg.hop,
                          win_length=self.cfg.dft_length,
                          window=self.window, center=False,
                          onesided=True, return_complex=True)

    def synthesize(self, spec: torch.Tensor) -> torch.Tensor:
        """Weighted overlap-add with the least-squares dual window."""
        cfg = self.cfg
        frames = torch.fft.irfft(spec.permute(0, 2, 1), n=cfg.dft_length,
                                 dim=2)
        frames = frames * self.synthesis_window
        num_frames = frames.shape[1]
        out_len = (num_frames - 1) * cfg.hop + cfg.dft_length
        folded = torch.nn.functional.fold(
            frames.permute(0, 2, 1), output_size=(1, out_len),
            kernel_size=(1, cfg.dft_length), stride=(1, cfg.hop))
        return folded.reshape(folded.shape[0], out_len)

    # -- features

    def band_features(self, frames: dict) -> torch.Tensor:
        """(batch, bands, band_dim) from one frame's complex spectra."""
        cols = []
        for name in self.cfg.signals:
            sig = frames[name]
            if self.cfg.transform == "reim":
                cols.extend([sig.real, sig.imag])
            elif self.cfg.transform == "mag":
                cols.append(sig.abs())
            else:
                cols.append(torch.log10(sig.abs() + FEATURE_REG))
        return torch.stack(cols, dim=-1)

    def summary_features(self, frames: dict) -> torch.Tensor | None:
        if not self.cfg.hybrid_signals:
            return None
        return torch.stack([frames[name].abs().mean(dim=1)
                            for name in self.cfg.hybrid_signals], dim=-1)

    def model_inputs(self, banded: torch.Tensor,
                     summary: torch.Tensor | None) -> torch.Tensor:
        """Arrange per-band features into the topology's unit batch."""
        batch, bands, _ = banded.shape
        if self.cfg.topology == "broadband":
            return banded.reshape(batch, -1)
        if self.cfg.topology == "hybrid":
            tiled = summary.unsqueeze(1).expand(batch, bands, -1)
            banded = torch.cat([banded, tiled], dim=-1)
        return banded.reshape(batch * bands, -1)

    def masks_to_bands(self, mask: torch.Tensor, batch: int,
                       bands: int) -> torch.Tensor:
        if self.cfg.topology == "broadband":
            return mask  # (batch, bands) straight from the head
        return mask.reshape(batch, bands)

    # -- the unrolled loop

    def run(self, model, far: torch.Tensor, mic: torch.Tensor,
            echo: torch.Tensor, error_mask_mode: str = "dnn",
            collect_masks: bool = False) -> dict:
        """Unroll the canceller over a batch of scenes; returns all losses.

        ``far``/``mic``/``echo`` are (batch, samples) tensors of equal
        length.  The returned dict holds the four loss scalars plus the
        echo-estimate spectrogram for diagnostics; with ``collect_masks``
        the per-frame mask sequences are included as (T, batch, bands).
        """
        cfg = self.cfg
        far_spec = self.stft(far)
        mic_spec = self.stft(mic)
        echo_spec = self.stft(echo)
        batch, bands, num_frames = far_spec.shape
        cdtype = (torch.complex128 if self.dtype == torch.float64
                  else torch.complex64)
        coeffs = torch.zeros(batch, bands, cfg.filter_length, dtype=cdtype)
        taps = torch.zeros(batch, bands, cfg.filter_length, dtype=cdtype)
        far_power = torch.zeros(batch, bands, dtype=self.dtype)
        units = batch if cfg.topology == "broadband" else batch * bands
        state = model.init_state(units, dtype=self.dtype)

        echo_estimates = []
        step_masks, error_masks = [], []
        for t in range(num_frames):
            taps = torch.cat([far_spec[:, :, t:t + 1], taps[:, :, :-1]], dim=2)
            echo_est = (coeffs * taps).sum(dim=2)
            err = mic_spec[:, :, t] - echo_est
            tap_energy = (taps.abs() ** 2).sum(dim=2)
            far_power = FAR_SMOOTHING * far_power \
                + (1.0 - FAR_SMOOTHING) * tap_energy
            if not cfg.backprop_through_power:
                far_power = far_power.detach()

            frames = {"far": taps[:, :, 0], "mic": mic_spec[:, :, t],
                      "err": err, "est": echo_est}
            banded = self.band_features(frames)
            summary = self.summary_features(frames)
            x = self.model_inputs(banded, summary)
            step_mask, error_mask, state = model(x, state)
            step_mask = self.masks_to_bands(step_mask, batch, bands)
            error_mask = self.masks_to_bands(error_mask, batch, bands)
            if error_mask_mode == "zero":
                error_mask = torch.zeros_like(error_mask)
            elif error_mask_mode == "one":
                error_mask = torch.ones_like(error_mask)

            masked_err = (error_mask * err.abs()) ** 2
            mu = step_mask / (far_power + masked_err + STEP_SIZE_REG)
            coeffs = coeffs + mu.unsqueeze(2) * taps.conj() \
                * err.unsqueeze(2)
            echo_estimates.append(echo_est)
            if collect_masks:
                step_masks.append(step_mask.detach())
                error_masks.append(error_mask.detach())

        est_spec = torch.stack(echo_estimates, dim=2)
        out = self.losses(echo_spec, est_spec, echo)
        out["echo_est_spec"] = est_spec
        if collect_masks:
            out["step_masks"] = torch.stack(step_masks)
            out["error_masks"] = torch.stack(error_masks)
        return out

    def losses(self, echo_spec: torch.Tensor, est_spec: torch.Tensor,
               echo_td: torch.Tensor) -> dict:
        cfg = self.cfg
        fd_residual = (echo_spec - est_spec).abs().pow(2).mean()
        fd_power = echo_spec.abs().pow(2).mean()
        est_td = self.synthesize(est_spec)
        target = echo_td[:, :est_td.shape[1]]
        sl = slice(cfg.dft_length, est_td.shape[1] - cfg.dft_length)
        td_residual = (target[:, sl] - est_td[:, sl]).pow(2).mean()
        td_power = target[:, sl].pow(2).mean()
        return {
            "fd_mse": fd_residual,
            "td_mse": td_residual,
            "fd_erle": -torch.log10((LOSS_REG + fd_power)
                                    / (LOSS_REG + fd_residual)),
            "td_erle": -torch.log10((LOSS_REG + td_power)
                                    / (LOSS_REG + td_residual)),
        }


def estimate_feature_stats(model, canceller: DifferentiableCanceller,
                           scenes: list, max_scenes: int = 32,
                           variance_floor: float = 1e-12) -> None:
    """Set the model's normalization buffers from a corpus pre-pass.

    Runs the untrained model over up to ``max_scenes`` scenes with
    normalization disabled (buffers at 0/1), collecting the raw feature
    vectors the unroll produces, and stores their per-dimension mean and
    variance.  Variances are floored so constant features stay loadable.
    """
    samples = []

    original = model.forward

    def capturing_forward(x, state):
        samples.append(x.detach().reshape(-1, x.shape[-1]))
        return original(x, state)

    model.forward = capturing_forward
    try:
        with torch.no_grad():
            chosen = scenes[:max_scenes]
            for start in range(0, len(chosen), 8):
                chunk = chosen[start:start + 8]
                canceller.run(
                    model,
                    torch.stack([s["far"] for s in chunk]),
                    torch.stack([s["mic"] for s in chunk]),
                    torch.stack([s["echo"] for s in chunk]))
    finally:
        model.forward = original
    stacked = torch.cat(samples, dim=0)
    model.norm_mean.copy_(stacked.mean(dim=0))
    model.norm_variance.copy_(
        stacked.var(dim=0, unbiased=False).clamp_min(variance_floor))
