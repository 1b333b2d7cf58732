"""Prediction models over sequences: static, full pairwise, conditional,
and multi-view, with temporal model averaging.

For a frame at sequence position n, pairs are formed with the buffered
frames at positions n - step, n - 2*step, ... within the lookback window.
The conditional models apportion the per-pair tree budget T over bank
cells by largest-remainder rounding of the cell weights (label prior,
pose-bin weight, or their product), draw that many trees per cell without
replacement, and average all sampled tree outputs over all pairs.

Tree-sampling rng protocol (mirrored by verification oracles): pairs are
visited most-recent first; within a pair, cells in ascending key order;
one ``rng.choice(cell_size, size=count, replace=False)`` call per cell
with a nonzero count.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .features import PairEvalContext, StaticEvalContext
from .forest import Forest, walk
from .frames import DataError, LandmarkFrame
from .geometry import inter_ocular_distance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowConfig:
    """Temporal integration settings: lookback N, stride between paired
    previous frames, and which prior feeds the conditional models."""

    window: int = 60
    step: int = 6
    prior_mode: str = "dynamic"  # static | dynamic

    def __post_init__(self):
        if self.window < 1 or self.step < 1:
            raise ValueError("window and step must be >= 1")
        if self.prior_mode not in ("static", "dynamic"):
            raise ValueError("prior_mode must be 'static' or 'dynamic'")

    @property
    def max_pairs(self) -> int:
        return self.window // self.step


def allocate_trees(total: int, weights: dict) -> dict:
    """Largest-remainder apportionment of ``total`` over weight keys.

    Weights are normalized first; an all-zero weight vector falls back to
    uniform over the present keys.  Fractional-part ties break by
    ascending key order, so the result is deterministic and each count
    deviates from its exact quota by less than one.
    """
    if total <= 0:
        raise ValueError("cannot allocate a non-positive tree budget")
    keys = sorted(weights)
    w = np.array([weights[k] for k in keys], dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    s = w.sum()
    if s == 0:
        w = np.ones_like(w)
        s = w.sum()
    q = total * (w / s)
    base = np.floor(q).astype(np.int64)
    remainder = int(total - base.sum())
    if remainder > 0:
        frac = q - base
        order = np.lexsort((np.arange(len(keys)), -frac))
        base[order[:remainder]] += 1
    return {k: int(v) for k, v in zip(keys, base)}


class SequenceState:
    """Ring buffer of recent frames with their stored label priors."""

    def __init__(self, static_forest: Forest, cfg: WindowConfig):
        self.static_forest = static_forest
        self.cfg = cfg
        self.entries: deque = deque(maxlen=cfg.window)
        self.position = 0

    def reset(self):
        self.entries.clear()
        self.position = 0

    @staticmethod
    def frame_context(frame: LandmarkFrame) -> StaticEvalContext:
        return StaticEvalContext(frame.landmarks, inter_ocular_distance(frame),
                                 frame.channels)

    def static_prediction(self, ctx: StaticEvalContext) -> np.ndarray:
        return self.static_forest.predict(ctx)

    def pair_entries(self) -> list:
        """Buffered entries at positions pos - step, pos - 2*step, ...
        (most recent first) within the lookback window."""
        out = []
        pos = self.position
        for j in range(1, self.cfg.max_pairs + 1):
            q = pos - j * self.cfg.step
            if q < 0:
                break
            back = pos - q  # entries[-back] is position q
            if back > len(self.entries):
                break
            out.append(self.entries[-back])
        return out

    def push(self, frame: LandmarkFrame, ctx: StaticEvalContext,
             model_output: np.ndarray | None, static_p: np.ndarray | None):
        """Buffer a processed frame together with its stored prior."""
        if self.cfg.prior_mode == "static":
            prior = static_p if static_p is not None else self.static_prediction(ctx)
        else:
            prior = model_output if model_output is not None \
                else (static_p if static_p is not None else self.static_prediction(ctx))
        self.entries.append(_Entry(ctx, np.asarray(prior, dtype=np.float64),
                                   self.position, frame.pose))
        self.position += 1


@dataclass
class _Entry:
    ctx: StaticEvalContext
    prior: np.ndarray
    position: int
    pose: tuple | None


def _pair_eval_context(cur_ctx: StaticEvalContext, entries, elem_prev):
    prev_lm = np.stack([e.ctx.lm for e in entries])
    prev_iod = np.array([e.ctx.iod for e in entries])
    prev_ch = [e.ctx.channels for e in entries]
    return PairEvalContext(cur_ctx, prev_lm, prev_iod, prev_ch, elem_prev)


def predict_static(forest: Forest, frame: LandmarkFrame) -> np.ndarray:
    """Plain forest prediction on a single frame's static features."""
    return forest.predict(frame)


def predict_full(pair_forest: Forest, state: SequenceState, frame: LandmarkFrame,
                 cfg: WindowConfig = None) -> np.ndarray:
    """Average the pairwise forest over every strided (previous, current)
    pair in the window; falls back to the static model when no previous
    frame is available yet."""
    cfg = cfg or state.cfg
    ctx = state.frame_context(frame)
    entries = state.pair_entries()
    if not entries:
        return state.static_prediction(ctx)
    T = pair_forest.n_trees
    roots = np.tile(pair_forest.roots, len(entries))
    elem_prev = np.repeat(np.arange(len(entries), dtype=np.int64), T)
    pctx = _pair_eval_context(ctx, entries, elem_prev)
    dists = walk(pair_forest.store, roots, pctx)
    p = dists.sum(axis=0) / (len(entries) * T)
    return p / p.sum()


def _mixture_predict(bank_pool, T, entries, cur_ctx, weight_fn, rng, n_labels):
    """Shared allocation/sampling/averaging core for the conditional and
    multi-view pairwise models."""
    store, cell_roots = bank_pool
    roots = []
    elem_prev = []
    for pid, entry in enumerate(entries):
        weights = weight_fn(entry)
        alloc = allocate_trees(T, weights)
        for key, count in alloc.items():
            if count == 0:
                continue
            cell = cell_roots[key]
            take = rng.choice(cell.size, size=count, replace=False)
            roots.append(cell[take])
            elem_prev.append(np.full(count, pid, dtype=np.int64))
    roots = np.concatenate(roots)
    elem_prev = np.concatenate(elem_prev)
    pctx = _pair_eval_context(cur_ctx, entries, elem_prev)
    dists = walk(store, roots, pctx)
    p = dists.sum(axis=0) / (len(entries) * T)
    return p / p.sum()


def _present(keys_weights: dict, cells: dict) -> dict:
    return {k: v for k, v in keys_weights.items() if k in cells}


def predict_conditional(bank_model, state: SequenceState, frame: LandmarkFrame,
                        cfg: WindowConfig, rng, n_trees: int = None) -> np.ndarray:
    """Conditional pairwise prediction: per pair, the tree budget is split
    over source-label cells by the buffered frame's label prior.

    ``n_trees`` overrides the per-pair tree budget (default: the cell
    forest size); it may not exceed the number of trees stored per cell.
    """
    pool = bank_model.eval_pool()
    _, cell_roots = pool
    ctx = state.frame_context(frame)
    entries = state.pair_entries()
    if not entries:
        return state.static_prediction(ctx)
    T = n_trees or bank_model.bank.n_trees_per_cell

    def weight_fn(entry):
        return _present({(l, None): float(entry.prior[l])
                         for l in range(bank_model.n_labels)}, cell_roots)

    return _mixture_predict(pool, T, entries, ctx, weight_fn, rng,
                            bank_model.n_labels)


def _pose_weights(model, frame: LandmarkFrame) -> np.ndarray:
    if frame.pose is None:
        raise DataError("multi-view prediction requires a pose estimate")
    sampler = model.pose_sampler
    yaw, pitch = frame.pose
    if not sampler.in_support(yaw, pitch):
        log.warning("pose (%.1f, %.1f) outside sampler support; using uniform "
                    "bin weights", yaw, pitch)
        return np.full(sampler.n_bins, 1.0 / sampler.n_bins)
    return sampler.sample_weights(yaw, pitch)


def predict_multiview(model, state: SequenceState, frame: LandmarkFrame,
                      cfg: WindowConfig, rng, n_trees: int = None) -> np.ndarray:
    """Multi-view prediction conditioned on the pose estimate.

    ``mvpcrf``: per pair, cell weights are the product of the pose-bin
    weight at the current frame and the buffered label prior.  ``mvrf``:
    static per-bin forests weighted by pose only, no pairs or priors.
    """
    pool = model.eval_pool()
    store, cell_roots = pool
    pose_w = _pose_weights(model, frame)
    ctx = state.frame_context(frame)
    if model.bank.kind == "mvrf":
        T = n_trees or model.bank.n_trees_per_cell
        weights = _present({(None, b): float(pose_w[b])
                            for b in range(pose_w.size)}, cell_roots)
        alloc = allocate_trees(T, weights)
        roots = []
        for key, count in alloc.items():
            if count == 0:
                continue
            cell = cell_roots[key]
            take = rng.choice(cell.size, size=count, replace=False)
            roots.append(cell[take])
        dists = walk(store, np.concatenate(roots), ctx)
        p = dists.sum(axis=0) / T
        return p / p.sum()
    entries = state.pair_entries()
    if not entries:
        return state.static_prediction(ctx)
    T = n_trees or model.bank.n_trees_per_cell

    def weight_fn(entry):
        w = {}
        for l in range(model.n_labels):
            for b in range(pose_w.size):
                key = (l, b)
                if key in cell_roots:
                    w[key] = float(pose_w[b]) * float(entry.prior[l])
        return w

    return _mixture_predict(pool, T, entries, ctx, weight_fn, rng, model.n_labels)


@dataclass
class SequenceResult:
    label: str
    label_index: int
    trace: np.ndarray          # (n_frames, n_labels)
    frame_indices: list
    peak_frame: int


def classify_sequence(model, frames, cfg: WindowConfig = None,
                      rng=None, seed: int = 0) -> SequenceResult:
    """Run the model causally over a sequence; the sequence label is the
    label achieving the global maximum per-frame probability (ties by
    earliest frame, then lowest label index)."""
    if not frames:
        raise DataError("cannot classify an empty sequence")
    cfg = cfg or WindowConfig()
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 4)))
    state = SequenceState(model.static_forest, cfg)
    trace = np.zeros((len(frames), model.n_labels))
    for i, frame in enumerate(frames):
        trace[i] = _predict_frame(model, state, frame, cfg, rng)
    best_label, best_frame = _peak_decision(trace)
    return SequenceResult(model.labels[best_label], best_label, trace,
                          [f.frame_index for f in frames], best_frame)


def _predict_frame(model, state: SequenceState, frame, cfg, rng) -> np.ndarray:
    ctx = state.frame_context(frame)
    static_p = None
    if model.kind == "rf" or cfg.prior_mode == "static":
        static_p = state.static_prediction(ctx)
    if model.kind == "rf":
        p = static_p
    elif model.kind == "full":
        p = predict_full(model.bank.cells[(None, None)], state, frame, cfg)
    elif model.kind == "pcrf":
        p = predict_conditional(model, state, frame, cfg, rng)
    elif model.kind in ("mvrf", "mvpcrf"):
        p = predict_multiview(model, state, frame, cfg, rng)
    else:
        raise ValueError(f"unknown model kind {model.kind!r}")
    state.push(frame, ctx, p, static_p)
    return p


def _peak_decision(trace: np.ndarray) -> tuple[int, int]:
    best = (-np.inf, 0, 0)
    for i in range(trace.shape[0]):
        for l in range(trace.shape[1]):
            if trace[i, l] > best[0]:
                best = (trace[i, l], i, l)
    return best[2], best[1]
