"""STFT-domain linear acoustic echo cancellation with pluggable step-size control.

The package is organized around a streaming per-frame canceller loop:

* :mod:`aecctl.stft` -- analysis/synthesis between time-domain samples and
  one-sided complex spectra (weighted overlap-add).
* :mod:`aecctl.scenes` -- synthetic test/training scenes with ground truth
  per microphone component.
* :mod:`aecctl.canceller` -- the per-band FIR echo canceller and its LMS
  coefficient update, driven by a pluggable step-size controller.
* :mod:`aecctl.control` -- classical, oracle and GRU-based step-size
  controllers.
* :mod:`aecctl.metrics` -- ERLE, echo-to-interference ratios, training-loss
  forward computations and GRU-state clustering.
* :mod:`aecctl.cli` -- the ``aecctl`` command-line harness.
"""

from aecctl.stft import StftConfig, analyze, synthesize
from aecctl.canceller import CancellerConfig, CtfFilterState, run_canceller

__all__ = [
    "StftConfig",
    "analyze",
    "synthesize",
    "CancellerConfig",
    "CtfFilterState",
    "run_canceller",
]

__version__ = "0.1.0"
