"""Training loop: Adam with plateau halving, early stopping, gradient
clipping, best-validation checkpointing, CSV history."""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import torch

from aecctl_trainer.config import TrainConfig
from aecctl_trainer.data import batches, load_corpus, stack_batch
from aecctl_trainer.export import export_bundle
from aecctl_trainer.model import MaskNet
from aecctl_trainer.unroll import DifferentiableCanceller, estimate_feature_stats


class TrainingDiverged(RuntimeError):
    pass


def build_model(cfg: TrainConfig) -> MaskNet:
    if cfg.topology == "broadband":
        input_dim = cfg.num_bands * cfg.band_dim
        head_dim = cfg.num_bands
    elif cfg.topology == "hybrid":
        input_dim = cfg.band_dim + len(cfg.hybrid_signals)
        head_dim = 1
    else:
        input_dim = cfg.band_dim
        head_dim = 1
    return MaskNet(input_dim, cfg.hidden_size, head_dim=head_dim,
                   num_gru_layers=cfg.num_gru_layers)


def _epoch_loss(model, canceller, scenes, cfg, optimizer=None,
                epoch: int = 0) -> float:
    total, count = 0.0, 0
    rng = np.random.default_rng(cfg.seed * 100003 + epoch)
    iterator = batches(scenes, cfg.batch_size, rng) if optimizer is not None \
        else (stack_batch(scenes[i:i + cfg.batch_size])
              for i in range(0, len(scenes), cfg.batch_size))
    for far, mic, echo in iterator:
        if optimizer is not None:
            optimizer.zero_grad()
            out = canceller.run(model, far, mic, echo)
            loss = out[cfg.loss]
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"{cfg.loss} became non-finite during epoch batch "
                    f"{count}; last finite mean was {total / max(count, 1):.4g}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(),
                                           cfg.grad_clip_norm)
            optimizer.step()
        else:
            with torch.no_grad():
                out = canceller.run(model, far, mic, echo)
                loss = out[cfg.loss]
        total += float(loss.detach()) * far.shape[0]
        count += far.shape[0]
    return total / max(count, 1)


def train(cfg: TrainConfig, bundle_path, history_path=None) -> dict:
    """Train a controller and export the best-validation weights.

    Returns a summary dict with the history rows and the best epoch.
    """
    torch.manual_seed(cfg.seed)
    scenes = load_corpus(cfg.dataset.scene_dir)
    num_val = max(1, int(round(len(scenes) * cfg.dataset.val_fraction)))
    if len(scenes) <= num_val:
        raise ValueError("corpus too small for the validation split")
    train_scenes = scenes[:-num_val]
    val_scenes = scenes[-num_val:]

    model = build_model(cfg)
    canceller = DifferentiableCanceller(cfg)
    estimate_feature_stats(model, canceller, train_scenes)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=0.5, patience=cfg.lr_halving_patience)

    best_state = copy.deepcopy(model.state_dict())
    best_val = float("inf")
    best_epoch = -1
    stale = 0
    history = []
    for epoch in range(cfg.epochs):
        train_loss = _epoch_loss(model, canceller, train_scenes, cfg,
                                 optimizer=optimizer, epoch=epoch)
        val_loss = _epoch_loss(model, canceller, val_scenes, cfg)
        lr = optimizer.param_groups[0]["lr"]
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": lr})
        scheduler.step(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
        if stale >= cfg.early_stop_patience:
            break

    model.load_state_dict(best_state)
    export_bundle(model, cfg, bundle_path)
    if history_path is not None:
        _write_history(history, history_path)
    return {"history": history, "best_epoch": best_epoch,
            "best_val_loss": best_val, "bundle": str(bundle_path)}


def _write_history(history, path):
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss,lr\n")
        for row in history:
            f.write(f"{row['epoch']},{row['train_loss']:.9g},"
                    f"{row['val_loss']:.9g},{row['lr']:.9g}\n")


def holdout_loss(cfg: TrainConfig, model: MaskNet, scene_dir) -> float:
    """Mean configured loss of a model over a scene directory."""
    scenes = load_corpus(scene_dir)
    canceller = DifferentiableCanceller(cfg)
    return _epoch_loss(model, canceller, scenes, cfg)
