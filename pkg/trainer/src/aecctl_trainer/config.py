"""Training configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

LOSSES = ("fd_mse", "td_mse", "fd_erle", "td_erle")
TOPOLOGIES = ("broadband", "narrowband", "hybrid")


@dataclass
class DatasetSpec:
    """Where the scenes come from.

    ``scene_dir`` must hold ``scene_<seed:06d>`` subdirectories as written
    by ``aecctl generate`` (WAV components plus ``scene.json``).  The last
    ``val_fraction`` of the scenes (by sorted seed) form the validation
    split.
    """

    scene_dir: str
    val_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class TrainConfig:
    dataset: DatasetSpec
    topology: str = "narrowband"
    loss: str = "td_erle"
    signals: tuple[str, ...] = ("far", "mic")
    transform: str = "mag"
    hybrid_signals: tuple[str, ...] = ()
    hidden_size: int = 64
    num_gru_layers: int = 2
    dft_length: int = 512
    hop: int = 128
    filter_length: int = 8
    learning_rate: float = 1e-3
    lr_halving_patience: int = 5
    early_stop_patience: int = 20
    epochs: int = 60
    grad_clip_norm: float = 0.5
    batch_size: int = 4
    seed: int = 0
    backprop_through_power: bool = True  # detach the power recursion if False
    num_bands_override: int | None = None

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        if min(self.epochs, self.batch_size, self.hidden_size,
               self.filter_length) < 0 or self.learning_rate <= 0:
            raise ValueError("training settings must be positive")
        self.signals = tuple(self.signals)
        self.hybrid_signals = tuple(self.hybrid_signals)
        if self.topology == "hybrid" and not self.hybrid_signals:
            self.hybrid_signals = ("mic", "err")

    @property
    def num_bands(self) -> int:
        if self.num_bands_override is not None:
            return self.num_bands_override
        return self.dft_length // 2 + 1

    @property
    def band_dim(self) -> int:
        per = 2 if self.transform == "reim" else 1
        return per * len(self.signals)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as f:
            doc = json.load(f)
        doc["dataset"] = DatasetSpec(**doc["dataset"])
        return cls(**doc)

    def to_json_dict(self) -> dict:
        doc = asdict(self)
        doc["signals"] = list(self.signals)
        doc["hybrid_signals"] = list(self.hybrid_signals)
        return doc
