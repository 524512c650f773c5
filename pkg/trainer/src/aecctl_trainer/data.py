"""Scene corpus loading.

Consumes scene directories produced by ``aecctl generate``: each scene is
a ``scene_<seed:06d>`` subdirectory holding component WAVs and a
``scene.json``.  Only the far-end, microphone, and true-echo signals are
needed for training.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile


def _read_wav(path) -> np.ndarray:
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        return data.astype(np.float32) / 32768.0
    return data.astype(np.float32)


def load_scene(directory, dtype: torch.dtype = torch.float32) -> dict:
    """Load one scene directory.

    The microphone signal is recomputed from the stored components, like
    the inference side does, so both packages see identical inputs.
    """
    directory = Path(directory)
    with open(directory / "scene.json") as f:
        config = json.load(f)
    out = {"config": config, "seed": config.get("rng_seed")}
    for key, fname in (("far", "far.wav"), ("echo", "echo.wav")):
        out[key] = torch.tensor(_read_wav(directory / fname), dtype=dtype)
    parts = [_read_wav(directory / fname)
             for fname in ("echo.wav", "near.wav", "noise.wav")]
    mic = np.zeros_like(parts[0], dtype=np.float64)
    for part in parts:
        mic += part.astype(np.float64)
    out["mic"] = torch.tensor(mic, dtype=dtype)
    return out


def load_corpus(scene_dir, dtype: torch.dtype = torch.float32) -> list[dict]:
    scene_dir = Path(scene_dir)
    dirs = sorted(d for d in scene_dir.iterdir()
                  if d.is_dir() and d.name.startswith("scene_"))
    if not dirs:
        raise ValueError(f"{scene_dir} holds no scene_* directories")
    scenes = [load_scene(d, dtype) for d in dirs]
    min_len = min(s["far"].shape[0] for s in scenes)
    for s in scenes:
        for key in ("far", "mic", "echo"):
            s[key] = s[key][:min_len]
    return scenes


def stack_batch(scenes: list[dict]) -> tuple[torch.Tensor, ...]:
    return (torch.stack([s["far"] for s in scenes]),
            torch.stack([s["mic"] for s in scenes]),
            torch.stack([s["echo"] for s in scenes]))


def batches(scenes: list[dict], batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(scenes))
    for start in range(0, len(scenes), batch_size):
        chunk = [scenes[i] for i in order[start:start + batch_size]]
        yield stack_batch(chunk)
