"""GRU-based step-size estimation.

One network architecture serves three topologies.  A *broadband* estimator
runs a single inference per frame over the stacked features of all bands
and emits per-band masks jointly.  A *narrowband* estimator runs one
inference per band with shared weights but an independent recurrent state
per band.  A *hybrid* estimator is a narrowband estimator whose per-band
input is extended by a small spectrum-wide summary vector (band-averaged
magnitudes).

The network is a dense input layer with leaky-ReLU, two stacked GRU layers,
and two parallel sigmoid dense heads.  The heads emit a step-size mask and
an error-weighting mask in ``[0, 1]``; the actual step-size divides the
step mask by the smoothed loudspeaker power plus the masked error power,
so the network only ever has to produce bounded values.

GRU cell convention (normative; the per-gate reference implementation in
the test suite spells it out elementwise): single bias per gate, the reset
gate scales the hidden state *before* the recurrent candidate projection,
and the update gate carries the previous state::

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    c = tanh(Wc x + Uc (r * h) + bc)
    h' = z * h + (1 - z) * c

Packed weights stack the gates in the order (update, reset, candidate).

Weights travel in a versioned JSON document with explicit shapes and
row-major arrays, including the feature normalization statistics, so a
bundle is self-contained for inference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from aecctl.canceller import AdaptationController, ControlOutput, FrameContext

WEIGHT_FORMAT = "aecctl-weights"
WEIGHT_FORMAT_VERSION = 1

FEATURE_REG = 1e-12     # inside the log-magnitude transform
STEP_SIZE_REG = 1e-3    # additive constant in the step-size denominator
LEAKY_RELU_SLOPE = 0.01

TOPOLOGIES = ("broadband", "narrowband", "hybrid")
SIGNALS = ("far", "mic", "err", "est")
TRANSFORMS = ("reim", "mag", "logmag")

DEFAULT_HIDDEN = {"broadband": 128, "narrowband": 64, "hybrid": 64}
NUM_GRU_LAYERS = 2


# ---------------------------------------------------------------------------
# Features


@dataclass(frozen=True)
class FeatureSpec:
    """Which signals feed the network and how they are made real-valued."""

    signals: tuple[str, ...] = ("far", "mic")
    transform: str = "mag"
    hybrid_signals: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(self.signals))
        object.__setattr__(self, "hybrid_signals", tuple(self.hybrid_signals))
        for s in self.signals + self.hybrid_signals:
            if s not in SIGNALS:
                raise ValueError(f"unknown signal {s!r}; choose from {SIGNALS}")
        if not self.signals:
            raise ValueError("feature spec needs at least one signal")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")

    @property
    def band_dim(self) -> int:
        per_signal = 2 if self.transform == "reim" else 1
        return per_signal * len(self.signals)

    @property
    def hybrid_dim(self) -> int:
        return len(self.hybrid_signals)

    def to_json_dict(self) -> dict:
        return {"signals": list(self.signals), "transform": self.transform,
                "hybrid_signals": list(self.hybrid_signals)}

    @classmethod
    def from_json_dict(cls, d: dict) -> "FeatureSpec":
        return cls(tuple(d["signals"]), d["transform"],
                   tuple(d.get("hybrid_signals", ())))


def band_features(frames: dict, spec: FeatureSpec) -> np.ndarray:
    """Per-band feature matrix ``(F, band_dim)`` from one frame's spectra."""
    cols = []
    for name in spec.signals:
        if name not in frames:
            raise ValueError(f"feature spec needs signal {name!r} "
                             "but it was not provided")
        sig = np.asarray(frames[name])
        if spec.transform == "reim":
            cols.extend([sig.real, sig.imag])
        elif spec.transform == "mag":
            cols.append(np.abs(sig))
        else:
            cols.append(np.log10(np.abs(sig) + FEATURE_REG))
    return np.stack(cols, axis=1)


def summary_features(frames: dict, spec: FeatureSpec) -> np.ndarray:
    """Spectrum-wide summary: arithmetic band-average magnitude per signal."""
    vals = []
    for name in spec.hybrid_signals:
        if name not in frames:
            raise ValueError(f"feature spec needs signal {name!r} "
                             "but it was not provided")
        vals.append(np.mean(np.abs(frames[name])))
    return np.asarray(vals)


# ---------------------------------------------------------------------------
# Weight bundle


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("inconsistent dense layer shapes")

    @property
    def num_params(self) -> int:
        return self.weight.size + self.bias.size


@dataclass
class GruLayer:
    weight_input: np.ndarray   # (3H, in), gates stacked (update, reset, candidate)
    weight_hidden: np.ndarray  # (3H, H)
    bias: np.ndarray           # (3H,)

    def __post_init__(self):
        self.weight_input = np.asarray(self.weight_input, dtype=float)
        self.weight_hidden = np.asarray(self.weight_hidden, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        h = self.hidden_size
        if (self.weight_input.shape[0] != 3 * h
                or self.weight_hidden.shape != (3 * h, h)
                or self.bias.shape != (3 * h,)):
            raise ValueError("inconsistent GRU layer shapes")

    @property
    def hidden_size(self) -> int:
        return self.weight_hidden.shape[1]

    @property
    def input_size(self) -> int:
        return self.weight_input.shape[1]

    @property
    def num_params(self) -> int:
        return self.weight_input.size + self.weight_hidden.size + self.bias.size


@dataclass
class WeightBundle:
    """All parameters and statistics needed for self-contained inference."""

    topology: str
    feature_spec: FeatureSpec
    input_dense: Dense
    gru_layers: list[GruLayer]
    head_step_mask: Dense
    head_error_mask: Dense
    norm_mean: np.ndarray
    norm_variance: np.ndarray
    selective: bool = True
    num_bands: int | None = None   # fixed for broadband, free otherwise
    leaky_relu_slope: float = LEAKY_RELU_SLOPE

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        self.norm_mean = np.asarray(self.norm_mean, dtype=float)
        self.norm_variance = np.asarray(self.norm_variance, dtype=float)
        self.validate()

    # -- dimension bookkeeping

    @property
    def input_dim(self) -> int:
        spec = self.feature_spec
        if self.topology == "broadband":
            if self.num_bands is None:
                raise ValueError("broadband bundle must declare num_bands")
            return self.num_bands * spec.band_dim
        if self.topology == "hybrid":
            return spec.band_dim + spec.hybrid_dim
        return spec.band_dim

    @property
    def head_dim(self) -> int:
        if self.topology == "broadband":
            return self.num_bands if self.selective else 1
        return 1

    @property
    def hidden_size(self) -> int:
        return self.gru_layers[0].hidden_size

    def dimension_table(self) -> list[tuple[str, int, int]]:
        """(layer name, input width, output width) for every layer."""
        rows = [("input_dense", self.input_dense.weight.shape[1],
                 self.input_dense.weight.shape[0])]
        for i, layer in enumerate(self.gru_layers):
            rows.append((f"gru_{i}", layer.input_size, layer.hidden_size))
        rows.append(("head_step_mask", self.head_step_mask.weight.shape[1],
                     self.head_step_mask.weight.shape[0]))
        rows.append(("head_error_mask", self.head_error_mask.weight.shape[1],
                     self.head_error_mask.weight.shape[0]))
        return rows

    def validate(self) -> None:
        """Check the layer chain is dimensionally consistent."""
        if not self.gru_layers:
            raise ValueError("bundle has no GRU layers")
        if self.input_dense.weight.shape[1] != self.input_dim:
            raise ValueError(
                f"input dense expects {self.input_dense.weight.shape[1]} "
                f"features, feature layout provides {self.input_dim}")
        width = self.input_dense.weight.shape[0]
        for i, layer in enumerate(self.gru_layers):
            if layer.input_size != width:
                raise ValueError(f"gru_{i} input width {layer.input_size} != "
                                 f"previous output width {width}")
            width = layer.hidden_size
        for name, head in (("head_step_mask", self.head_step_mask),
                           ("head_error_mask", self.head_error_mask)):
            if head.weight.shape != (self.head_dim, width):
                raise ValueError(
                    f"{name} shape {head.weight.shape} != "
                    f"({self.head_dim}, {width})")
        if self.norm_mean.shape != (self.input_dim,) \
                or self.norm_variance.shape != (self.input_dim,):
            raise ValueError("feature normalization statistics do not match "
                             "the input width")
        if np.any(self.norm_variance <= 0.0):
            raise ValueError("feature normalization variances must be positive")

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.norm_mean) / np.sqrt(self.norm_variance)


def count_parameters(bundle: WeightBundle) -> int:
    """Exact trainable-parameter count.

    Closed form: ``in*out + out`` per dense layer and
    ``3 * (in*hidden + hidden^2 + hidden)`` per GRU layer.
    """
    return (bundle.input_dense.num_params
            + sum(layer.num_params for layer in bundle.gru_layers)
            + bundle.head_step_mask.num_params
            + bundle.head_error_mask.num_params)


# ---------------------------------------------------------------------------
# Inference


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_cell(layer: GruLayer, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One GRU step for a batch of units; see the module docstring."""
    hs = layer.hidden_size
    gx = x @ layer.weight_input.T + layer.bias
    update = _sigmoid(gx[:, :hs] + h @ layer.weight_hidden[:hs].T)
    reset = _sigmoid(gx[:, hs:2 * hs] + h @ layer.weight_hidden[hs:2 * hs].T)
    candidate = np.tanh(gx[:, 2 * hs:]
                        + (reset * h) @ layer.weight_hidden[2 * hs:].T)
    return update * h + (1.0 - update) * candidate


class GruStack:
    """Stateless forward pass over a bundle; callers keep the state array."""

    def __init__(self, bundle: WeightBundle):
        self.bundle = bundle

    def init_state(self, num_units: int) -> np.ndarray:
        """Zero recurrent state: ``(units, layers, hidden)``."""
        b = self.bundle
        return np.zeros((num_units, len(b.gru_layers), b.hidden_size))

    def forward(self, x: np.ndarray, state: np.ndarray):
        """Run one frame for a batch of inference units.

        Returns ``(step_mask, error_mask, new_state, last_hidden)`` where the
        masks have shape ``(units, head_dim)``.
        """
        b = self.bundle
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != b.input_dim:
            raise ValueError(f"input width {x.shape[1]} != bundle input "
                             f"width {b.input_dim} (input_dense)")
        if state.shape != (x.shape[0], len(b.gru_layers), b.hidden_size):
            raise ValueError("recurrent state shape does not match bundle")
        a = x @ b.input_dense.weight.T + b.input_dense.bias
        a = np.where(a >= 0.0, a, b.leaky_relu_slope * a)
        new_state = np.empty_like(state)
        for i, layer in enumerate(b.gru_layers):
            a = gru_cell(layer, a, state[:, i, :])
            new_state[:, i, :] = a
        step_mask = _sigmoid(a @ b.head_step_mask.weight.T
                             + b.head_step_mask.bias)
        error_mask = _sigmoid(a @ b.head_error_mask.weight.T
                              + b.head_error_mask.bias)
        return step_mask, error_mask, new_state, a


def step_size_from_masks(step_mask, error_mask, far_power, err_frame,
                         reg: float = STEP_SIZE_REG) -> np.ndarray:
    """Structured output layer: masked error-power-aware NLMS step.

    ``mu = step_mask / (far_power + |error_mask * err|^2 + reg)`` per band;
    bounded by ``1/reg`` since the masks live in [0, 1].
    """
    step_mask = np.asarray(step_mask, dtype=float)
    masked_err = np.asarray(error_mask, dtype=float) * np.asarray(err_frame)
    denom = np.asarray(far_power, dtype=float) + np.abs(masked_err) ** 2 + reg
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(denom > 0.0, step_mask / denom,
                      np.where(step_mask > 0.0, np.inf, 0.0))
    return mu


def run_topology(bundle: WeightBundle, stack: GruStack, features_banded,
                 features_summary, state):
    """Map one frame's features to per-band masks under the bundle topology.

    ``features_banded`` is ``(F, band_dim)`` (already normalized inputs are
    the caller's responsibility via ``bundle.normalize``); returns
    ``(step_mask (F,), error_mask (F,), new_state)``.
    """
    b = bundle
    num_bands = features_banded.shape[0]
    if b.topology == "broadband":
        if b.num_bands != num_bands:
            raise ValueError(f"bundle expects {b.num_bands} bands, "
                             f"got {num_bands}")
        x = b.normalize(features_banded.reshape(1, -1))
        step, errm, state, _ = stack.forward(x, state)
        if not b.selective:
            step = np.full((1, num_bands), step[0, 0])
            errm = np.full((1, num_bands), errm[0, 0])
        return step[0], errm[0], state
    if b.topology == "hybrid":
        summary = np.broadcast_to(features_summary,
                                  (num_bands, b.feature_spec.hybrid_dim))
        x = np.concatenate([features_banded, summary], axis=1)
    else:
        x = features_banded
    x = b.normalize(x)
    step, errm, state, _ = stack.forward(x, state)
    return step[:, 0], errm[:, 0], state


class DnnController(AdaptationController):
    """Step-size controller driven by a weight bundle.

    ``error_mask_mode`` selects the output-layer variant: ``"dnn"`` uses the
    network's error mask, ``"zero"`` disables error normalization (pure
    DNN-NLMS) and ``"one"`` applies full error normalization.
    """

    name = "dnn"

    def __init__(self, bundle: WeightBundle, error_mask_mode: str = "dnn",
                 far_smoothing: float = 0.9, step_size_reg: float = STEP_SIZE_REG,
                 trace_states: bool = False, trace_bands=None):
        if error_mask_mode not in ("dnn", "zero", "one"):
            raise ValueError("error_mask_mode must be 'dnn', 'zero' or 'one'")
        self.bundle = bundle
        self.stack = GruStack(bundle)
        self.error_mask_mode = error_mask_mode
        self.far_smoothing = far_smoothing
        self.step_size_reg = step_size_reg
        self.trace_states = trace_states
        self.trace_bands = trace_bands
        self.name = f"dnn_{bundle.topology}"

    def prepare(self, num_bands, filter_length, stft_cfg, scene=None):
        if self.bundle.topology == "broadband" \
                and self.bundle.num_bands != num_bands:
            raise ValueError(f"broadband bundle built for "
                             f"{self.bundle.num_bands} bands, stream has "
                             f"{num_bands}")
        self.filter_length = filter_length
        self.num_bands = num_bands
        self.far_power = np.zeros(num_bands)
        units = 1 if self.bundle.topology == "broadband" else num_bands
        self.state = self.stack.init_state(units)

    def step(self, frame: FrameContext) -> ControlOutput:
        lam = self.far_smoothing
        self.far_power = lam * self.far_power \
            + (1.0 - lam) * np.sum(np.abs(frame.taps) ** 2, axis=1)
        frames = {"far": frame.taps[:, 0], "mic": frame.mic,
                  "err": frame.err, "est": frame.echo_est}
        banded = band_features(frames, self.bundle.feature_spec)
        summary = summary_features(frames, self.bundle.feature_spec) \
            if self.bundle.topology == "hybrid" else None
        step_mask, error_mask, self.state = run_topology(
            self.bundle, self.stack, banded, summary, self.state)
        if self.error_mask_mode == "zero":
            error_mask = np.zeros_like(error_mask)
        elif self.error_mask_mode == "one":
            error_mask = np.ones_like(error_mask)
        mu = step_size_from_masks(step_mask, error_mask, self.far_power,
                                  frame.err, self.step_size_reg)
        diagnostics = {"step_mask": step_mask, "error_mask": error_mask}
        if self.trace_states:
            diagnostics["gru_state"] = self._state_vector()
        return ControlOutput(np.repeat(mu[:, None], self.filter_length, axis=1),
                             diagnostics=diagnostics)

    def _state_vector(self) -> np.ndarray:
        """Per-frame recurrent state for the clustering analysis."""
        if self.bundle.topology == "broadband":
            return self.state[0].reshape(-1).astype(np.float32)
        bands = self.trace_bands
        if bands is None:
            return self.state.reshape(-1).astype(np.float32)
        return self.state[np.asarray(bands)].reshape(-1).astype(np.float32)


# ---------------------------------------------------------------------------
# Serialization


def _dense_to_json(d: Dense) -> dict:
    return {"weight": d.weight.tolist(), "bias": d.bias.tolist()}


def _dense_from_json(d: dict) -> Dense:
    return Dense(np.array(d["weight"], dtype=float),
                 np.array(d["bias"], dtype=float))


def save_bundle(bundle: WeightBundle, path) -> None:
    doc = {
        "format": WEIGHT_FORMAT,
        "format_version": WEIGHT_FORMAT_VERSION,
        "topology": bundle.topology,
        "feature_spec": bundle.feature_spec.to_json_dict(),
        "selective": bundle.selective,
        "num_bands": bundle.num_bands,
        "leaky_relu_slope": bundle.leaky_relu_slope,
        "feature_norm": {"mean": bundle.norm_mean.tolist(),
                         "variance": bundle.norm_variance.tolist()},
        "layers": {
            "input_dense": _dense_to_json(bundle.input_dense),
            "gru": [{"weight_input": l.weight_input.tolist(),
                     "weight_hidden": l.weight_hidden.tolist(),
                     "bias": l.bias.tolist()} for l in bundle.gru_layers],
            "head_step_mask": _dense_to_json(bundle.head_step_mask),
            "head_error_mask": _dense_to_json(bundle.head_error_mask),
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_bundle(path) -> WeightBundle:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt weight file {path}: {exc}") from exc
    if doc.get("format") != WEIGHT_FORMAT:
        raise ValueError(f"{path} is not an {WEIGHT_FORMAT} file")
    if doc.get("format_version") != WEIGHT_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported weight format version "
                         f"{doc.get('format_version')}")
    layers = doc["layers"]
    try:
        bundle = WeightBundle(
            topology=doc["topology"],
            feature_spec=FeatureSpec.from_json_dict(doc["feature_spec"]),
            input_dense=_dense_from_json(layers["input_dense"]),
            gru_layers=[GruLayer(np.array(l["weight_input"], dtype=float),
                                 np.array(l["weight_hidden"], dtype=float),
                                 np.array(l["bias"], dtype=float))
                        for l in layers["gru"]],
            head_step_mask=_dense_from_json(layers["head_step_mask"]),
            head_error_mask=_dense_from_json(layers["head_error_mask"]),
            norm_mean=np.array(doc["feature_norm"]["mean"], dtype=float),
            norm_variance=np.array(doc["feature_norm"]["variance"], dtype=float),
            selective=doc.get("selective", True),
            num_bands=doc.get("num_bands"),
            leaky_relu_slope=doc.get("leaky_relu_slope", LEAKY_RELU_SLOPE),
        )
    except KeyError as exc:
        raise ValueError(f"corrupt weight file {path}: missing {exc}") from exc
    return bundle


def random_bundle(topology: str, rng_seed: int = 0,
                  feature_spec: FeatureSpec | None = None,
                  num_bands: int | None = None, hidden_size: int | None = None,
                  num_gru_layers: int = NUM_GRU_LAYERS,
                  selective: bool = True) -> WeightBundle:
    """Seeded untrained bundle for tests and pipeline dry runs.

    Weights are uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, biases
    zero, normalization statistics mean 0 / variance 1.
    """
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}")
    if feature_spec is None:
        feature_spec = FeatureSpec(hybrid_signals=("mic", "err")
                                   if topology == "hybrid" else ())
    if topology == "broadband" and num_bands is None:
        raise ValueError("broadband bundle needs num_bands")
    hidden = hidden_size or DEFAULT_HIDDEN[topology]
    rng = np.random.default_rng(rng_seed)

    def dense(out_dim, in_dim):
        bound = 1.0 / np.sqrt(in_dim)
        return Dense(rng.uniform(-bound, bound, size=(out_dim, in_dim)),
                     np.zeros(out_dim))

    def gru(in_dim):
        bound = 1.0 / np.sqrt(hidden)
        return GruLayer(
            rng.uniform(-1.0 / np.sqrt(in_dim), 1.0 / np.sqrt(in_dim),
                        size=(3 * hidden, in_dim)),
            rng.uniform(-bound, bound, size=(3 * hidden, hidden)),
            np.zeros(3 * hidden))

    if topology == "broadband":
        input_dim = num_bands * feature_spec.band_dim
        head_dim = num_bands if selective else 1
    elif topology == "hybrid":
        input_dim = feature_spec.band_dim + feature_spec.hybrid_dim
        head_dim = 1
    else:
        input_dim = feature_spec.band_dim
        head_dim = 1

    return WeightBundle(
        topology=topology,
        feature_spec=feature_spec,
        input_dense=dense(hidden, input_dim),
        gru_layers=[gru(hidden) for _ in range(num_gru_layers)],
        head_step_mask=dense(head_dim, hidden),
        head_error_mask=dense(head_dim, hidden),
        norm_mean=np.zeros(input_dim),
        norm_variance=np.ones(input_dim),
        selective=selective,
        num_bands=num_bands if topology == "broadband" else None,
    )
