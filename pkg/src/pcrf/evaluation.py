"""Sequence-level evaluation: accuracy, per-label F1, probability traces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import DataError, Dataset
from .inference import WindowConfig, classify_sequence


def sequence_ground_truth(dataset: Dataset, frame_indices) -> str | None:
    """The label of the last labeled frame (onset-to-apex convention)."""
    for i in reversed(frame_indices):
        if dataset.frames[i].label is not None:
            return dataset.frames[i].label
    return None


@dataclass
class EvalReport:
    rows: list          # (subject_id, sequence_id, truth, predicted, peak_frame)
    traces: list        # (subject_id, sequence_id, SequenceResult)
    accuracy: float
    macro_f1: float
    per_label_f1: dict
    confusion: np.ndarray


def macro_f1(confusion: np.ndarray, labels) -> tuple[float, dict]:
    """Unweighted mean of per-label one-vs-rest F1 over sequence decisions."""
    per = {}
    for i, name in enumerate(labels):
        tp = confusion[i, i]
        fp = confusion[:, i].sum() - tp
        fn = confusion[i, :].sum() - tp
        denom = 2 * tp + fp + fn
        per[name] = float(2 * tp / denom) if denom else 0.0
    present = [i for i in range(len(labels)) if confusion[i, :].sum() > 0]
    avg = float(np.mean([per[labels[i]] for i in present])) if present else 0.0
    return avg, per


def evaluate_model(model, dataset: Dataset, cfg: WindowConfig = None,
                   seed: int = 0) -> EvalReport:
    """Classify every sequence of the dataset and score against the
    sequence ground-truth labels."""
    cfg = cfg or WindowConfig()
    C = len(model.labels)
    label_idx = {name: i for i, name in enumerate(model.labels)}
    confusion = np.zeros((C, C), dtype=np.int64)
    rows = []
    traces = []
    for (subject_id, seq_id), idxs in dataset.sequences():
        truth = sequence_ground_truth(dataset, idxs)
        if truth is None:
            continue
        frames = [dataset.frames[i] for i in idxs]
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, 5, hash_key(subject_id), hash_key(seq_id))))
        result = classify_sequence(model, frames, cfg, rng=rng)
        confusion[label_idx[truth], result.label_index] += 1
        rows.append((subject_id, seq_id, truth, result.label, result.peak_frame))
        traces.append((subject_id, seq_id, result))
    total = int(confusion.sum())
    if total == 0:
        raise DataError("no labeled sequences to evaluate")
    acc = float(np.trace(confusion) / total)
    f1, per = macro_f1(confusion, model.labels)
    return EvalReport(rows, traces, acc, f1, per, confusion)


def hash_key(s: str) -> int:
    """Stable small hash for deriving per-sequence rng streams."""
    h = 2166136261
    for ch in s.encode("utf-8"):
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def write_trace_csv(path, traces, labels, model_kind: str, frames_by_trace=None) -> None:
    """Per-frame probability traces: sequence identity, frame index, the
    model that produced them, pose, then one probability per label."""
    with open(path, "w") as fh:
        cols = ["subject_id", "sequence_id", "frame_index", "model", "yaw", "pitch"]
        cols += [f"p_{name}" for name in labels]
        fh.write(",".join(cols) + "\n")
        for item in traces:
            subject_id, seq_id, result = item
            poses = frames_by_trace.get((subject_id, seq_id)) if frames_by_trace else None
            for r, frame_index in enumerate(result.frame_indices):
                pose = poses[r] if poses else None
                yaw = "" if pose is None else repr(float(pose[0]))
                pitch = "" if pose is None else repr(float(pose[1]))
                vals = [subject_id, seq_id, str(frame_index), model_kind, yaw, pitch]
                vals += [repr(float(v)) for v in result.trace[r]]
                fh.write(",".join(vals) + "\n")


def write_sequence_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("subject_id,sequence_id,truth,predicted,peak_frame\n")
        for subject_id, seq_id, truth, predicted, peak in rows:
            fh.write(f"{subject_id},{seq_id},{truth},{predicted},{peak}\n")
