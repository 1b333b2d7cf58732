"""Command-line front end: corpus generation, training, evaluation,
out-of-bag scoring, and latency benchmarking.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 internal error.  The
``PCRF_THREADS`` environment variable sizes the training thread pool.
Partial outputs are removed when a command fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .bench import run_bench
from .evaluation import evaluate_model, write_sequence_csv, write_trace_csv
from .forest import HyperParams, oob_accuracy, pairwise_profile, static_profile
from .frames import DataError
from .inference import WindowConfig
from .serialize import load_model, save_model
from .synth import (GeneratorConfig, attach_channels, generate_corpus,
                    load_manifest, select_training_frames)
from .training import (MODEL_KINDS, TrainOptions, build_eval_pairs,
                       oob_pair_accuracy, train_model)

log = logging.getLogger("pcrf")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class _Outputs:
    """Tracks files a command creates so failures leave nothing behind."""

    def __init__(self):
        self.paths = []

    def register(self, path):
        self.paths.append(path)
        return path

    def cleanup(self):
        for p in self.paths:
            if os.path.isfile(p):
                try:
                    os.remove(p)
                except OSError:
                    pass


def _n_jobs() -> int:
    try:
        return max(1, int(os.environ.get("PCRF_THREADS", "1")))
    except ValueError:
        return 1


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_profile(name: str, fallback) -> HyperParams:
    if name == "static":
        return static_profile()
    if name == "pcrf":
        return pairwise_profile()
    if name == "default":
        return fallback
    if os.path.isfile(name):
        with open(name) as fh:
            d = json.load(fh)
        d["k"] = tuple(d["k"])
        return HyperParams(**d)
    raise UsageError(f"unknown profile {name!r} (use static, pcrf, or a JSON file)")


def _parse_selection(value: str):
    if value == "all":
        return ("all_labeled", 0)
    if value.startswith("first_last:"):
        return ("first_last", int(value.split(":", 1)[1]))
    if value == "first_last":
        return ("first_last", 3)
    raise UsageError(f"invalid --select {value!r} (use all or first_last[:k])")


def cmd_synth_gen(args, outputs: _Outputs) -> int:
    cfg = GeneratorConfig(
        n_subjects=args.subjects,
        n_sequences_per_subject=args.sequences,
        frames_per_sequence=args.frames,
        morphology_strength=args.morphology,
        amplitude_range=(args.amplitude_min, args.amplitude_max),
        landmark_noise=args.noise,
        pose_mode=args.pose_mode,
        pose_noise=args.pose_noise,
        render_images=args.render_images,
        offset_tail=args.offset_tail,
        seed=args.seed,
    )
    ds = generate_corpus(cfg, out_dir=args.out)
    print(f"wrote {len(ds)} frames over {len(ds.sequences())} sequences to {args.out}")
    return EXIT_OK


def _load_training_data(args):
    ds = load_manifest(args.data)
    policy, k = _parse_selection(args.select)
    selected = select_training_frames(ds, policy, k)
    if selected.has_images():
        attach_channels(selected)
    return ds, selected


def cmd_train(args, outputs: _Outputs) -> int:
    _, selected = _load_training_data(args)
    default_pair = pairwise_profile()
    hp_static = _load_profile(args.static_profile, static_profile())
    hp_pair = _load_profile(args.profile, default_pair) if args.model != "rf" \
        else None
    if args.model in ("rf", "mvrf") and args.profile != "default":
        hp_static = _load_profile(args.profile, static_profile())
    overrides = {}
    if args.trees:
        overrides["n_trees"] = args.trees
    if args.max_depth:
        overrides["max_depth"] = args.max_depth
    if overrides:
        from dataclasses import replace
        hp_static = replace(hp_static, **overrides)
        if hp_pair is not None:
            hp_pair = replace(hp_pair, **overrides)
    dropped_appearance = False
    if not selected.has_images():
        if sum(hp_static.k[2::3]) or (hp_pair and sum(hp_pair.k[2::3])):
            dropped_appearance = True
            log.warning("corpus has no images; dropping appearance templates")
        hp_static = hp_static.without_appearance()
        if hp_pair is not None:
            hp_pair = hp_pair.without_appearance()
    options = TrainOptions(src_per_subject=args.pair_src, dst_per_subject=args.pair_dst,
                           cross_view_pairs=args.cross_view, n_jobs=_n_jobs())
    model = train_model(selected, args.model, hp_static, hp_pair,
                        seed=args.seed, options=options)
    outputs.register(args.out)
    save_model(model, args.out)
    manifest = {
        "command": "train",
        "model_kind": args.model,
        "data": os.path.abspath(args.data),
        "selection": args.select,
        "seed": args.seed,
        "threads": _n_jobs(),
        "hp_static": None if model.hp_static is None else
            {**vars(model.hp_static), "k": list(model.hp_static.k)},
        "hp_pair": None if model.hp_pair is None else
            {**vars(model.hp_pair), "k": list(model.hp_pair.k)},
        "pair_caps": [args.pair_src, args.pair_dst],
        "cross_view_pairs": args.cross_view,
        "dropped_appearance_templates": dropped_appearance,
        "dataset_fingerprint": model.fingerprint,
        "warnings": model.bank.warnings if model.bank else [],
    }
    manifest_path = outputs.register(args.out + ".manifest.json")
    _write_json(manifest_path, manifest)
    n_cells = len(model.bank.cells) if model.bank else 0
    print(f"trained {args.model} model ({n_cells} bank cells) -> {args.out}")
    return EXIT_OK


def _window_config(args) -> WindowConfig:
    return WindowConfig(window=args.window, step=args.step, prior_mode=args.prior)


def cmd_eval(args, outputs: _Outputs) -> int:
    model = load_model(args.model_file)
    ds = load_manifest(args.data)
    if ds.has_images():
        attach_channels(ds)
    cfg = _window_config(args)
    report = evaluate_model(model, ds, cfg, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    seq_path = outputs.register(os.path.join(args.out, "sequences.csv"))
    write_sequence_csv(seq_path, report.rows)
    poses = {}
    for (subject_id, seq_id), idxs in ds.sequences():
        poses[(subject_id, seq_id)] = [ds.frames[i].pose for i in idxs]
    trace_path = outputs.register(os.path.join(args.out, "traces.csv"))
    write_trace_csv(trace_path, report.traces, model.labels, model.kind, poses)
    summary = {
        "command": "eval",
        "model_kind": model.kind,
        "model_file": os.path.abspath(args.model_file),
        "data": os.path.abspath(args.data),
        "window": cfg.window,
        "step": cfg.step,
        "prior_mode": cfg.prior_mode,
        "seed": args.seed,
        "sequences": len(report.rows),
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "per_label_f1": report.per_label_f1,
        "confusion": report.confusion.tolist(),
        "labels": model.labels,
    }
    summary_path = outputs.register(os.path.join(args.out, "summary.json"))
    _write_json(summary_path, summary)
    print(f"accuracy {report.accuracy:.4f}  macro-F1 {report.macro_f1:.4f} "
          f"({len(report.rows)} sequences) -> {args.out}")
    return EXIT_OK


def cmd_oob(args, outputs: _Outputs) -> int:
    model = load_model(args.model_file)
    ds = load_manifest(args.data)
    policy, k = _parse_selection(args.select)
    selected = select_training_frames(ds, policy, k)
    if selected.has_images():
        attach_channels(selected)
    payload = {
        "command": "oob",
        "model_kind": model.kind,
        "data": os.path.abspath(args.data),
        "selection": args.select,
        "labels": model.labels,
    }
    res = oob_accuracy(model.static_forest, selected)
    payload["static"] = {"accuracy": res.accuracy, "evaluated": res.evaluated,
                         "skipped": res.skipped, "confusion": res.confusion.tolist()}
    if model.bank is not None and model.bank.kind in ("full", "pcrf"):
        cells = {}
        for key in model.bank.sorted_keys():
            l_idx, _ = key
            source = None if l_idx is None else model.labels[l_idx]
            rng = np.random.default_rng(np.random.SeedSequence((args.seed, 6)))
            prev, cur, _, _ = build_eval_pairs(selected, source, rng)
            r = oob_pair_accuracy(model.bank.cells[key], selected, prev, cur)
            cells[str(source)] = {"accuracy": r.accuracy, "evaluated": r.evaluated,
                                  "skipped": r.skipped}
        payload["pairwise_cells"] = cells
    path = outputs.register(args.out)
    _write_json(path, payload)
    print(f"static OOB accuracy {res.accuracy:.4f} "
          f"({res.evaluated} frames, {res.skipped} skipped) -> {args.out}")
    return EXIT_OK


def cmd_bench(args, outputs: _Outputs) -> int:
    trees = [int(v) for v in args.trees.split(",")]
    if args.data:
        ds = load_manifest(args.data)
    else:
        cfg = GeneratorConfig(n_subjects=args.subjects, n_sequences_per_subject=6,
                              frames_per_sequence=30, render_images=False,
                              seed=args.seed)
        ds = generate_corpus(cfg)
    selected = select_training_frames(ds, "first_last", 3)
    hp_pair = pairwise_profile(n_trees=max(trees), k=(2, 2, 0, 2, 2, 0),
                               thresholds_per_feature=5, max_depth=10)
    hp_static = static_profile(n_trees=min(200, max(trees)), k=(4, 4, 0, 0, 0, 0),
                               thresholds_per_feature=5, max_depth=10)
    options = TrainOptions(src_per_subject=2, dst_per_subject=1, n_jobs=_n_jobs())
    model = train_model(selected, "pcrf", hp_static, hp_pair,
                        seed=args.seed, options=options)
    wcfg = WindowConfig(window=args.window, step=args.step)
    report = run_bench(model, ds, wcfg, trees, n_frames=args.frames_timed,
                       seed=args.seed)
    report["command"] = "bench"
    path = outputs.register(args.out)
    _write_json(path, report)
    ch = report["channel_build"]
    print(f"channel build: mean {ch['mean_ms']:.2f} ms  p95 {ch['p95_ms']:.2f} ms")
    for T in trees:
        ev = report["evaluation"][str(T)]
        if "error" in ev:
            print(f"T={T}: {ev['error']}")
        else:
            print(f"T={T}: eval mean {ev['mean_ms']:.2f} ms  p95 {ev['p95_ms']:.2f} ms")
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="pcrf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=int, default=40)
    g.add_argument("--sequences", type=int, default=6)
    g.add_argument("--frames", type=int, default=60)
    g.add_argument("--morphology", type=float, default=1.0)
    g.add_argument("--amplitude-min", type=float, default=0.5)
    g.add_argument("--amplitude-max", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=0.01)
    g.add_argument("--pose-mode", choices=("frontal", "binned"), default="frontal")
    g.add_argument("--pose-noise", type=float, default=0.0)
    g.add_argument("--render-images", action="store_true")
    g.add_argument("--offset-tail", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_synth_gen)

    t = sub.add_parser("train", help="train a model on a manifest corpus")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=MODEL_KINDS, default="pcrf")
    t.add_argument("--profile", default="default",
                   help="static | pcrf | JSON file (default: kind-appropriate)")
    t.add_argument("--static-profile", default="static",
                   help="profile for the auxiliary static forest")
    t.add_argument("--select", default="first_last:3")
    t.add_argument("--trees", type=int, default=0)
    t.add_argument("--max-depth", type=int, default=0)
    t.add_argument("--pair-src", type=int, default=4)
    t.add_argument("--pair-dst", type=int, default=4)
    t.add_argument("--cross-view", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="classify sequences and report accuracy/F1")
    e.add_argument("--data", required=True)
    e.add_argument("--model-file", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--window", type=int, default=60)
    e.add_argument("--step", type=int, default=6)
    e.add_argument("--prior", choices=("static", "dynamic"), default="dynamic")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oob", help="out-of-bag accuracy of a trained model")
    o.add_argument("--data", required=True)
    o.add_argument("--model-file", required=True)
    o.add_argument("--select", default="first_last:3")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oob)

    b = sub.add_parser("bench", help="per-frame latency benchmark")
    b.add_argument("--data", default=None)
    b.add_argument("--subjects", type=int, default=6)
    b.add_argument("--trees", default="500,1000,2000,6000")
    b.add_argument("--window", type=int, default=60)
    b.add_argument("--step", type=int, default=6)
    b.add_argument("--frames-timed", type=int, default=40)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    outputs = _Outputs()
    try:
        args = parser.parse_args(argv)
        return args.func(args, outputs)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        outputs.cleanup()
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover - defensive
        outputs.cleanup()
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
