"""Per-frame latency benchmark: channel building and model evaluation."""

from __future__ import annotations

import time

import numpy as np

from .channels import build_channels
from .inference import SequenceState, WindowConfig, predict_conditional, predict_multiview
from .synth import render_blob_image


def _percentile(values, q):
    return float(np.percentile(np.asarray(values), q)) if values else 0.0


def _stats(ms):
    return {"mean_ms": float(np.mean(ms)) if ms else 0.0,
            "p95_ms": _percentile(ms, 95),
            "n": len(ms)}


def time_channel_building(frames, repeats: int = 1) -> dict:
    """Time integral-channel construction on blob images rendered at the
    given frames' landmarks (one image per frame)."""
    times = []
    for frame in frames:
        img = render_blob_image(frame.landmarks, 250)
        for _ in range(repeats):
            t0 = time.perf_counter()
            build_channels(img)
            times.append((time.perf_counter() - t0) * 1e3)
    return _stats(times)


def time_model_evaluation(model, frames, cfg: WindowConfig, n_trees: int,
                          seed: int = 0) -> dict:
    """Time the pairwise mixture evaluation per frame over a warm buffer.

    The first frames only fill the window (static fallback); timing starts
    once pairs exist.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    state = SequenceState(model.static_forest, cfg)
    times = []
    for frame in frames:
        ctx = state.frame_context(frame)
        has_pairs = bool(state.pair_entries())
        t0 = time.perf_counter()
        if model.kind in ("mvrf", "mvpcrf"):
            p = predict_multiview(model, state, frame, cfg, rng, n_trees=n_trees)
        else:
            p = predict_conditional(model, state, frame, cfg, rng, n_trees=n_trees)
        dt = (time.perf_counter() - t0) * 1e3
        if has_pairs:
            times.append(dt)
        state.push(frame, ctx, p, None)
    return _stats(times)


def run_bench(model, dataset, cfg: WindowConfig, trees_list, n_frames: int = 40,
              seed: int = 0) -> dict:
    """Latency report: channel-building time and model evaluation time for
    each requested per-pair tree budget."""
    frames = []
    for _, idxs in dataset.sequences():
        frames.extend(dataset.frames[i] for i in idxs)
        if len(frames) >= n_frames + cfg.step:
            break
    frames = frames[:max(n_frames + cfg.step, cfg.step + 1)]
    report = {
        "window": cfg.window,
        "step": cfg.step,
        "channel_build": time_channel_building(frames[:min(len(frames), 20)]),
        "evaluation": {},
    }
    cell_size = model.bank.n_trees_per_cell
    for T in trees_list:
        if T > cell_size:
            report["evaluation"][str(T)] = {
                "error": f"requested {T} trees but cells hold {cell_size}"}
            continue
        report["evaluation"][str(T)] = time_model_evaluation(model, frames, cfg, T, seed)
    return report
