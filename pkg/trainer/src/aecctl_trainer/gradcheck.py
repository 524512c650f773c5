"""Finite-difference verification of the unrolled gradients.

Runs the full differentiable loop on tiny synthetic tensors in double
precision and compares every parameter's backprop gradient against a
central finite difference.
"""

from __future__ import annotations

import torch

from aecctl_trainer.config import DatasetSpec, TrainConfig
from aecctl_trainer.model import MaskNet
from aecctl_trainer.train import build_model
from aecctl_trainer.unroll import DifferentiableCanceller


def tiny_config(loss: str, topology: str = "narrowband",
                hybrid: bool = False) -> TrainConfig:
    return TrainConfig(
        dataset=DatasetSpec(scene_dir="unused", val_fraction=0.5),
        topology=topology,
        loss=loss,
        signals=("far", "mic", "err"),
        transform="mag",
        hybrid_signals=("mic",) if hybrid or topology == "hybrid" else (),
        hidden_size=3,
        num_gru_layers=2,
        dft_length=6,
        hop=2,
        filter_length=2,
        batch_size=1,
        seed=0,
    )


def _loss_value(model, canceller, cfg, signals, error_mask_mode):
    out = canceller.run(model, *signals, error_mask_mode=error_mask_mode)
    return out[cfg.loss]


def gradient_check(cfg: TrainConfig, eps: float = 1e-4, frames: int = 12,
                   error_mask_mode: str = "dnn",
                   seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences."""
    torch.manual_seed(seed)
    model = build_model(cfg).double()
    canceller = DifferentiableCanceller(cfg, dtype=torch.float64)
    num_samples = (frames - 1) * cfg.hop + cfg.dft_length
    gen = torch.Generator().manual_seed(seed + 1)
    signals = tuple(torch.randn(1, num_samples, dtype=torch.float64,
                                generator=gen) for _ in range(3))

    model.zero_grad()
    loss = _loss_value(model, canceller, cfg, signals, error_mask_mode)
    loss.backward()

    worst = 0.0
    for param in model.parameters():
        grad = torch.zeros_like(param) if param.grad is None else param.grad
        flat = param.data.view(-1)
        for idx in range(flat.numel()):
            original = flat[idx].item()
            flat[idx] = original + eps
            with torch.no_grad():
                plus = _loss_value(model, canceller, cfg, signals,
                                   error_mask_mode).item()
            flat[idx] = original - eps
            with torch.no_grad():
                minus = _loss_value(model, canceller, cfg, signals,
                                    error_mask_mode).item()
            flat[idx] = original
            fd = (plus - minus) / (2.0 * eps)
            bp = grad.view(-1)[idx].item()
            denom = max(abs(fd), abs(bp), 1e-6)
            worst = max(worst, abs(fd - bp) / denom)
    return worst


def error_head_gradients_are_zero(loss: str = "fd_mse") -> bool:
    """With the error mask forced to zero, its head is disconnected."""
    cfg = tiny_config(loss)
    torch.manual_seed(3)
    model = build_model(cfg).double()
    canceller = DifferentiableCanceller(cfg, dtype=torch.float64)
    num_samples = 11 * cfg.hop + cfg.dft_length
    gen = torch.Generator().manual_seed(4)
    signals = tuple(torch.randn(1, num_samples, dtype=torch.float64,
                                generator=gen) for _ in range(3))
    loss_value = _loss_value(model, canceller, cfg, signals, "zero")
    loss_value.backward()
    head = model.head_error_mask
    for param in (head.weight, head.bias):
        if param.grad is not None and param.grad.abs().max() > 0.0:
            return False
    return True
