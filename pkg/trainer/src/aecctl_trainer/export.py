"""Export trained models as aecctl weight bundles (JSON, format version 1).

The trainer writes the documented interchange format directly; loading it
back into the inference package is covered by the parity tests.
"""

from __future__ import annotations

import json

import numpy as np

from aecctl_trainer.config import TrainConfig
from aecctl_trainer.model import LEAKY_RELU_SLOPE, MaskNet

WEIGHT_FORMAT = "aecctl-weights"
WEIGHT_FORMAT_VERSION = 1


def _dense_doc(dense) -> dict:
    return {"weight": dense.weight.detach().cpu().numpy().tolist(),
            "bias": dense.bias.detach().cpu().numpy().tolist()}


def _validate(model: MaskNet, cfg: TrainConfig) -> None:
    expected_in = cfg.band_dim
    if cfg.topology == "broadband":
        expected_in = cfg.num_bands * cfg.band_dim
    elif cfg.topology == "hybrid":
        expected_in += len(cfg.hybrid_signals)
    if model.input_dim != expected_in:
        raise ValueError(f"model input width {model.input_dim} does not "
                         f"match the configured feature layout {expected_in}")
    width = model.input_dense.weight.shape[0]
    for i, layer in enumerate(model.gru_layers):
        if layer.weight_input.shape[1] != width:
            raise ValueError(f"gru_{i} input width mismatch")
        width = layer.hidden_size
    expected_head = cfg.num_bands if cfg.topology == "broadband" else 1
    for name in ("head_step_mask", "head_error_mask"):
        head = getattr(model, name)
        if head.weight.shape != (expected_head, width):
            raise ValueError(f"{name} shape {tuple(head.weight.shape)} does "
                             f"not match ({expected_head}, {width})")
    variance = model.norm_variance.detach().cpu().numpy()
    mean = model.norm_mean.detach().cpu().numpy()
    if mean.shape != (model.input_dim,) or variance.shape != (model.input_dim,):
        raise ValueError("normalization statistics missing or mis-sized")
    if not np.all(np.isfinite(mean)) or np.any(variance <= 0.0):
        raise ValueError("normalization statistics must be finite with "
                         "positive variances")


def export_bundle(model: MaskNet, cfg: TrainConfig, path) -> None:
    _validate(model, cfg)
    doc = {
        "format": WEIGHT_FORMAT,
        "format_version": WEIGHT_FORMAT_VERSION,
        "topology": cfg.topology,
        "selective": True,
        "num_bands": cfg.num_bands if cfg.topology == "broadband" else None,
        "leaky_relu_slope": LEAKY_RELU_SLOPE,
        "feature_spec": {
            "signals": list(cfg.signals),
            "transform": cfg.transform,
            "hybrid_signals": list(cfg.hybrid_signals),
        },
        "feature_norm": {
            "mean": model.norm_mean.detach().cpu().numpy().tolist(),
            "variance": model.norm_variance.detach().cpu().numpy().tolist(),
        },
        "layers": {
            "input_dense": _dense_doc(model.input_dense),
            "gru": [{"weight_input":
                     l.weight_input.detach().cpu().numpy().tolist(),
                     "weight_hidden":
                     l.weight_hidden.detach().cpu().numpy().tolist(),
                     "bias": l.bias.detach().cpu().numpy().tolist()}
                    for l in model.gru_layers],
            "head_step_mask": _dense_doc(model.head_step_mask),
            "head_error_mask": _dense_doc(model.head_error_mask),
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def count_parameters(model: MaskNet) -> int:
    return sum(p.numel() for p in model.parameters())
