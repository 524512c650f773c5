"""Command-line harness: scene generation, controller shoot-outs, weight
inspection and recurrent-state traces.

Configuration is a single JSON document (see ``docs/config-schema.md``);
a few scalar fields can be overridden by flags.  Exit codes: 0 on success,
1 for configuration errors, 2 when any scene run failed at runtime.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from aecctl.canceller import CancellerConfig, ControllerError, run_canceller
from aecctl.control import (
    DnnController,
    EaNlms,
    KalmanController,
    MinSystemDistanceNlms,
    OracleGradNlms,
    OracleIpKalman,
    StallOrAdaptNlms,
    count_parameters,
    load_bundle,
    random_bundle,
)
from aecctl.metrics import cluster_states, evaluate_run
from aecctl.scenes import (
    IrPool,
    Scene,
    build_scene,
    load_scene,
    sample_scene_config,
    write_scene,
)
from aecctl.stft import StftConfig, analyze
from aecctl.trace import write_frame_csv, write_trace

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

WORKERS_ENV = "AECCTL_WORKERS"


class ConfigError(Exception):
    pass


_CLASSIC_CONTROLLERS = {
    "stall_or_adapt": StallOrAdaptNlms,
    "ea_nlms": EaNlms,
    "min_system_distance": MinSystemDistanceNlms,
    "kalman": KalmanController,
    "oracle_grad_nlms": OracleGradNlms,
    "oracle_ip_kalman": OracleIpKalman,
}


def build_controller(spec: dict, default_num_bands: int | None = None):
    """Instantiate a fresh controller from its config entry."""
    kind = spec.get("type")
    params = dict(spec.get("params", {}))
    if kind == "dnn":
        if "weights" in spec:
            bundle = load_bundle(spec["weights"])
        elif "factory" in spec:
            factory = dict(spec["factory"])
            factory.setdefault("rng_seed", 0)
            feature_keys = {k: factory.pop(k)
                            for k in ("signals", "transform", "hybrid_signals")
                            if k in factory}
            if feature_keys:
                from aecctl.control import FeatureSpec

                default_hybrid = ("mic", "err") \
                    if factory.get("topology") == "hybrid" else ()
                factory["feature_spec"] = FeatureSpec(
                    signals=tuple(feature_keys.get("signals", ("far", "mic"))),
                    transform=feature_keys.get("transform", "mag"),
                    hybrid_signals=tuple(feature_keys.get("hybrid_signals",
                                                          default_hybrid)))
            if factory.get("topology") == "broadband":
                factory.setdefault("num_bands", default_num_bands)
            bundle = random_bundle(**factory)
        else:
            raise ConfigError("dnn controller needs 'weights' or 'factory'")
        controller = DnnController(
            bundle,
            error_mask_mode=spec.get("error_mask_mode", "dnn"),
            trace_states=spec.get("trace_states", False),
            **params)
    elif kind in _CLASSIC_CONTROLLERS:
        controller = _CLASSIC_CONTROLLERS[kind](**params)
    else:
        raise ConfigError(f"unknown controller type {kind!r}")
    if "name" in spec:
        controller.name = spec["name"]
    return controller


class ExperimentConfig:
    """Validated experiment description."""

    def __init__(self, doc: dict, base_dir: Path = Path(".")):
        self.doc = doc
        self.base_dir = Path(base_dir)
        self.output_dir = Path(doc.get("output_dir", "aecctl-out"))
        if not self.output_dir.is_absolute():
            self.output_dir = self.base_dir / self.output_dir
        self.workers = int(doc.get("workers",
                                   os.environ.get(WORKERS_ENV, "1")))
        stft = doc.get("stft", {})
        try:
            self.stft = StftConfig(
                dft_length=int(stft.get("dft_length", 512)),
                hop=int(stft.get("hop", 128)),
                window=stft.get("window", "hamming"),
                sample_rate=int(stft.get("sample_rate", 16000)))
        except ValueError as exc:
            raise ConfigError(f"bad stft config: {exc}") from exc
        self.filter_length = int(doc.get("filter_length", 8))
        self.scenes = doc.get("scenes", {})
        self.controllers = doc.get("controllers", [])
        if not self.controllers:
            raise ConfigError("config lists no controllers")
        reports = doc.get("reports", {})
        self.plots = bool(reports.get("plots", True))
        self.mask_spectrograms = bool(reports.get("mask_spectrograms", False))
        self._validate()

    def _validate(self):
        seeds = self.scene_seeds()
        if len(seeds) != len(set(seeds)):
            raise ConfigError("scene seeds are not unique")
        names = []
        for spec in self.controllers:
            build_probe = dict(spec)
            if build_probe.get("type") == "dnn" and "weights" in build_probe:
                path = self.base_dir / build_probe["weights"]
                if not path.exists():
                    raise ConfigError(f"weight file {path} does not exist")
                build_probe["weights"] = str(path)
            names.append(controller_label(spec))
        if len(names) != len(set(names)):
            raise ConfigError("controller names are not unique; "
                              "set 'name' fields")

    def scene_seeds(self) -> list[int]:
        if "seeds" in self.scenes:
            return [int(s) for s in self.scenes["seeds"]]
        count = int(self.scenes.get("count", 1))
        base = int(self.scenes.get("base_seed", 0))
        return [base + i for i in range(count)]

    def resolved_controllers(self) -> list[dict]:
        out = []
        for spec in self.controllers:
            spec = dict(spec)
            if spec.get("type") == "dnn" and "weights" in spec:
                spec["weights"] = str(self.base_dir / spec["weights"])
            out.append(spec)
        return out

    def canceller_config(self) -> CancellerConfig:
        return CancellerConfig(stft=self.stft,
                               filter_length=self.filter_length)

    def ir_pool(self) -> IrPool:
        ir = self.scenes.get("ir", {})
        if ir.get("type") == "directory":
            return IrPool(directory=self.base_dir / ir["path"],
                          sample_rate=self.stft.sample_rate)
        return IrPool(num_taps=int(ir.get("num_taps", 512)),
                      sample_rate=self.stft.sample_rate)

    def scene_for_seed(self, seed: int) -> Scene:
        if "dir" in self.scenes:
            return load_scene(self.base_dir / self.scenes["dir"]
                              / f"scene_{seed:06d}")
        cfg = sample_scene_config(
            seed, self.ir_pool(),
            duration_s=float(self.scenes.get("duration_s", 8.0)),
            sample_rate=self.stft.sample_rate)
        return build_scene(cfg)


def controller_label(spec: dict) -> str:
    if "name" in spec:
        return spec["name"]
    kind = spec.get("type", "?")
    if kind == "dnn":
        if "factory" in spec:
            return f"dnn_{spec['factory'].get('topology', '?')}"
        return "dnn"
    return kind


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("count", "base_seed", "duration_s"):
            doc.setdefault("scenes", {})[key] = value
        else:
            doc[key] = value
    return ExperimentConfig(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(config: ExperimentConfig) -> int:
    scene_dir = config.output_dir / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "aecctl-scenes", "format_version": 1,
                "sample_rate": config.stft.sample_rate, "scenes": []}
    for seed in config.scene_seeds():
        scene = config.scene_for_seed(seed)
        rel = f"scenes/scene_{seed:06d}"
        write_scene(scene, config.output_dir / rel)
        manifest["scenes"].append({
            "seed": seed,
            "dir": rel,
            "duration_s": scene.config.duration_s,
            "ser_db": scene.config.ser_db,
            "senr_db": scene.config.senr_db,
            "has_path_change": scene.config.change_time_s is not None,
        })
    manifest["count"] = len(manifest["scenes"])
    with open(config.output_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    print(f"wrote {manifest['count']} scenes to {config.output_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _evaluate_scene(args):
    """Run every controller on one scene; returns rows and segment series."""
    seed, config_doc, base_dir = args
    config = ExperimentConfig(config_doc, Path(base_dir))
    scene = config.scene_for_seed(seed)
    rows = []
    segments = {}
    for spec in config.resolved_controllers():
        label = controller_label(spec)
        try:
            controller = build_controller(
                spec, default_num_bands=config.stft.num_bins)
            trace = run_canceller(scene, controller, config.canceller_config())
            report = evaluate_run(trace, scene, controller_name=label,
                                  scene_seed=seed)
            rows.append({"controller": label, "scene_seed": seed,
                         "status": "ok", "erle_db": report.erle_db,
                         **report.losses})
            segments[label] = report.erle_segments_db
        except (ControllerError, ValueError) as exc:
            rows.append({"controller": label, "scene_seed": seed,
                         "status": f"failed: {exc}", "erle_db": np.nan,
                         "fd_mse": np.nan, "td_mse": np.nan,
                         "fd_erle": np.nan, "td_erle": np.nan})
            segments[label] = None
    return seed, rows, segments


def cmd_evaluate(config: ExperimentConfig) -> int:
    config.output_dir.mkdir(parents=True, exist_ok=True)
    seeds = config.scene_seeds()
    jobs = [(seed, config.doc, str(config.base_dir)) for seed in seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_evaluate_scene, jobs))
    else:
        results = [_evaluate_scene(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    rows = [row for _, scene_rows, _ in results for row in scene_rows]
    rows.sort(key=lambda r: (r["controller"], r["scene_seed"]))
    _write_per_scene_csv(rows, config.output_dir / "per_scene.csv")

    labels = [controller_label(s) for s in config.controllers]
    summary = {}
    for label in labels:
        values = np.array([r["erle_db"] for r in rows
                           if r["controller"] == label
                           and r["status"] == "ok"], dtype=float)
        summary[label] = {
            "num_scenes": int(values.size),
            "erle_mean_db": float(np.mean(values)) if values.size else np.nan,
            "erle_std_db": float(np.std(values)) if values.size else np.nan,
        }
    _write_summary(summary, config.output_dir)
    for label in labels:
        s = summary[label]
        print(f"{label}: ERLE {s['erle_mean_db']:.2f}/{s['erle_std_db']:.2f} dB "
              f"over {s['num_scenes']} scenes")

    if config.plots:
        _write_plots(config, results, summary, labels)
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print(f"{len(failed)} scene runs failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _write_per_scene_csv(rows, path):
    fields = ["controller", "scene_seed", "status", "erle_db",
              "fd_mse", "td_mse", "fd_erle", "td_erle"]
    with open(path, "w") as f:
        f.write(",".join(fields) + "\n")
        for row in rows:
            cells = []
            for key in fields:
                value = row.get(key, "")
                if isinstance(value, float):
                    cells.append(f"{value:.9g}")
                else:
                    cells.append(str(value).replace(",", ";"))
            f.write(",".join(cells) + "\n")


def _write_summary(summary, output_dir):
    doc = {"controllers": summary,
           "notes": "PESQ is not computed (proprietary ITU-T P.862 algorithm)"}
    with open(output_dir / "summary.json", "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    with open(output_dir / "summary.csv", "w") as f:
        f.write("controller,num_scenes,erle_mean_db,erle_std_db\n")
        for label in sorted(summary):
            s = summary[label]
            f.write(f"{label},{s['num_scenes']},"
                    f"{s['erle_mean_db']:.9g},{s['erle_std_db']:.9g}\n")


def _write_plots(config, results, summary, labels):
    from aecctl import plotting

    fig_dir = config.output_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    series = {}
    for label in labels:
        per_scene = [seg[label] for _, _, seg in results
                     if seg.get(label) is not None]
        if not per_scene:
            continue
        min_len = min(len(s) for s in per_scene)
        if min_len == 0:
            continue
        stacked = np.array([s[:min_len] for s in per_scene], dtype=float)
        series[label] = np.nanmean(stacked, axis=0)
    if series:
        plotting.save_convergence_plot(series, 1.0,
                                       fig_dir / "erle_convergence.svg")
    means = {k: v["erle_mean_db"] for k, v in summary.items()
             if v["num_scenes"]}
    stds = {k: v["erle_std_db"] for k, v in summary.items()
            if v["num_scenes"]}
    if means:
        plotting.save_erle_bars(means, stds, fig_dir / "erle_summary.svg")
    if config.mask_spectrograms:
        _write_mask_spectrograms(config, fig_dir)


def _write_mask_spectrograms(config, fig_dir):
    from aecctl import plotting

    seed = config.scene_seeds()[0]
    scene = config.scene_for_seed(seed)
    hop_s = config.stft.hop / config.stft.sample_rate
    for spec in config.resolved_controllers():
        if spec.get("type") != "dnn":
            continue
        label = controller_label(spec)
        controller = build_controller(
            spec, default_num_bands=config.stft.num_bins)
        trace = run_canceller(scene, controller, config.canceller_config())
        if "step_mask" in trace.masks:
            plotting.save_mask_spectrogram(
                trace.masks["step_mask"], hop_s, config.stft.sample_rate,
                fig_dir / f"{label}_step_mask_seed{seed}.png",
                title=f"{label} step mask (scene {seed})")


# ---------------------------------------------------------------------------
# inspect-weights


def cmd_inspect_weights(path) -> int:
    bundle = load_bundle(path)
    print(f"topology: {bundle.topology}"
          + ("" if bundle.selective else " (non-selective)"))
    print(f"features: {','.join(bundle.feature_spec.signals)} "
          f"[{bundle.feature_spec.transform}]"
          + (f" + summary {','.join(bundle.feature_spec.hybrid_signals)}"
             if bundle.feature_spec.hybrid_signals else ""))
    if bundle.num_bands is not None:
        print(f"bands: {bundle.num_bands}")
    print("layers:")
    for name, w_in, w_out in bundle.dimension_table():
        print(f"  {name}: {w_in} -> {w_out}")
    print(f"parameters: {count_parameters(bundle)}")
    stats = np.concatenate([bundle.norm_mean, bundle.norm_variance])
    digest = hashlib.sha256(stats.tobytes()).hexdigest()[:16]
    print(f"normalization: mean in [{bundle.norm_mean.min():.4g}, "
          f"{bundle.norm_mean.max():.4g}], variance in "
          f"[{bundle.norm_variance.min():.4g}, "
          f"{bundle.norm_variance.max():.4g}], digest {digest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# trace-states


def cmd_trace_states(config: ExperimentConfig, num_clusters: int = 2) -> int:
    dnn_specs = [s for s in config.resolved_controllers()
                 if s.get("type") == "dnn"]
    if not dnn_specs:
        raise ConfigError("trace-states requires a dnn controller; "
                          "classical controllers have no recurrent state")
    spec = dict(dnn_specs[0])
    spec["trace_states"] = True
    label = controller_label(spec)
    seed = config.scene_seeds()[0]
    scene = config.scene_for_seed(seed)
    controller = build_controller(
        spec, default_num_bands=config.stft.num_bins)
    trace = run_canceller(scene, controller, config.canceller_config())

    out = config.output_dir / f"trace_{label}_seed{seed}"
    write_trace(trace, out)
    write_frame_csv(trace, out / "frames.csv")

    states = trace.diagnostics["gru_state"]
    classes = cluster_states(states, num_clusters=num_clusters)
    hop_s = config.stft.hop / config.stft.sample_rate
    with open(out / "state_clusters.csv", "w") as f:
        f.write("frame,time_s,class\n")
        for t, c in enumerate(classes):
            f.write(f"{t},{t * hop_s:.6f},{c}\n")

    from aecctl import plotting

    spectra = {
        "interference power": analyze(scene.interference, config.stft),
        "echo power": analyze(scene.echo, config.stft),
        "residual echo power": analyze(scene.echo, config.stft)
        - trace.echo_est_spec,
    }
    plotting.save_component_spectrograms(
        spectra, hop_s, config.stft.sample_rate, out / "components.png")
    if "step_mask" in trace.masks:
        plotting.save_mask_spectrogram(
            trace.masks["step_mask"], hop_s, config.stft.sample_rate,
            out / "step_mask.png")
    print(f"trace written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="aecctl",
        description="Echo-canceller adaptation-control harness")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config JSON")
    common.add_argument("--output-dir", default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--count", type=int, default=None,
                        help="override scene count")
    common.add_argument("--base-seed", type=int, default=None)
    common.add_argument("--duration-s", type=float, default=None)

    sub.add_parser("generate", parents=[common],
                   help="synthesize scene WAV sets and a manifest")
    sub.add_parser("evaluate", parents=[common],
                   help="run every controller on every scene")
    p_trace = sub.add_parser("trace-states", parents=[common],
                             help="export and cluster recurrent states")
    p_trace.add_argument("--clusters", type=int, default=2)
    p_inspect = sub.add_parser("inspect-weights",
                               help="summarize a weight bundle")
    p_inspect.add_argument("weights")

    args = parser.parse_args(argv)
    try:
        if args.command == "inspect-weights":
            return cmd_inspect_weights(args.weights)
        overrides = {"output_dir": args.output_dir, "workers": args.workers,
                     "count": args.count, "base_seed": args.base_seed,
                     "duration_s": args.duration_s}
        config = load_config(args.config, overrides)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "evaluate":
            return cmd_evaluate(config)
        if args.command == "trace-states":
            return cmd_trace_states(config, num_clusters=args.clusters)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ControllerError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
