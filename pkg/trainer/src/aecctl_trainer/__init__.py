"""End-to-end training for aecctl step-size controllers.

Re-implements the echo-canceller loop differentiably in torch, unrolls it
over whole scenes, optimizes the controller network by backpropagation
through time, and exports weights in the aecctl JSON bundle format.  The
only interfaces to the inference package are scene directories (produced
by ``aecctl generate``) and the versioned weight JSON.
"""

from aecctl_trainer.config import DatasetSpec, TrainConfig
from aecctl_trainer.model import MaskNet
from aecctl_trainer.train import TrainingDiverged, train
from aecctl_trainer.export import export_bundle

__all__ = [
    "DatasetSpec",
    "TrainConfig",
    "MaskNet",
    "TrainingDiverged",
    "train",
    "export_bundle",
]
