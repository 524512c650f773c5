import numpy as np
import pytest
import torch

from aecctl_trainer.config import DatasetSpec, TrainConfig
from aecctl_trainer.data import load_corpus, stack_batch
from aecctl_trainer.train import TrainingDiverged, build_model, train
from aecctl_trainer.unroll import DifferentiableCanceller


def _cfg(scene_dir, **kw):
    base = dict(
        dataset=DatasetSpec(scene_dir=str(scene_dir), val_fraction=0.34),
        topology="narrowband", loss="td_erle",
        signals=("far", "mic"), transform="mag",
        hidden_size=4, num_gru_layers=1,
        dft_length=64, hop=16, filter_length=2,
        epochs=1, batch_size=2, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epoch_export_equals_initialization(tmp_path, small_corpus):
    cfg = _cfg(small_corpus, epochs=0)
    summary = train(cfg, tmp_path / "a.json")
    assert summary["best_epoch"] == -1

    torch.manual_seed(cfg.seed)
    model = build_model(cfg)
    canceller = DifferentiableCanceller(cfg)
    from aecctl_trainer.unroll import estimate_feature_stats

    scenes = load_corpus(small_corpus)
    num_val = max(1, int(round(len(scenes) * cfg.dataset.val_fraction)))
    estimate_feature_stats(model, canceller, scenes[:-num_val])
    from aecctl_trainer.export import export_bundle

    export_bundle(model, cfg, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_same_seed_identical_bundle(tmp_path, small_corpus):
    cfg = _cfg(small_corpus, epochs=2)
    train(cfg, tmp_path / "a.json")
    train(cfg, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_history_written(tmp_path, small_corpus):
    cfg = _cfg(small_corpus, epochs=2)
    summary = train(cfg, tmp_path / "w.json", history_path=tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "epoch,train_loss,val_loss,lr"
    assert len(rows) == 1 + len(summary["history"])


def test_training_reduces_loss(tmp_path, small_corpus):
    cfg = _cfg(small_corpus, epochs=4, hidden_size=8,
               signals=("far", "mic", "err"))
    summary = train(cfg, tmp_path / "w.json")
    losses = [row["train_loss"] for row in summary["history"]]
    assert losses[-1] < losses[0]


def test_divergence_aborts_with_diagnostics(tmp_path, small_corpus):
    cfg = _cfg(small_corpus, epochs=1, learning_rate=1e6)

    class ExplodingCanceller(DifferentiableCanceller):
        def run(self, model, far, mic, echo, **kw):
            out = super().run(model, far, mic, echo, **kw)
            out[self.cfg.loss] = out[self.cfg.loss] * float("nan")
            return out

    import sys

    train_mod = sys.modules["aecctl_trainer.train"]
    original = train_mod.DifferentiableCanceller
    train_mod.DifferentiableCanceller = ExplodingCanceller
    try:
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train(cfg, tmp_path / "w.json")
    finally:
        train_mod.DifferentiableCanceller = original


def test_corpus_loader_rejects_empty(tmp_path):
    with pytest.raises(ValueError, match="scene_"):
        load_corpus(tmp_path)


def test_batches_have_consistent_shapes(small_corpus):
    scenes = load_corpus(small_corpus)
    far, mic, echo = stack_batch(scenes[:3])
    assert far.shape == mic.shape == echo.shape
    assert far.shape[0] == 3
    for tensor in (far, mic, echo):
        assert torch.all(torch.isfinite(tensor))


def test_cli_gradcheck():
    from aecctl_trainer.cli import main

    assert main(["gradcheck", "--loss", "fd_mse"]) == 0
