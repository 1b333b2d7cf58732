"""Versioned binary serialization for forests and trained models.

Forest blob layout (little-endian): magic, version, label vocabulary,
tree count, per-tree preorder node counts and bootstrap subject ids, then
the node arrays of all trees back to back (each tree's span is in
preorder) and the leaf distribution table.  Child indices are absolute
into the concatenated node pool.

A model file wraps a JSON metadata header (kind, hyperparameters, pose
table, cell keys, dataset fingerprint) followed by length-prefixed forest
blobs and the pose-sampler arrays.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict

import numpy as np

from .forest import Forest, HyperParams, TreeStore
from .frames import DataError
from .pose import PoseBinTable, PoseSampler

FOREST_MAGIC = b"PCRF-FOR"
MODEL_MAGIC = b"PCRFMODL"
FORMAT_VERSION = 1


def _write_str(out, s: str):
    b = s.encode("utf-8")
    out.write(struct.pack("<I", len(b)))
    out.write(b)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def _write_array(out, arr: np.ndarray):
    data = np.ascontiguousarray(arr).tobytes()
    out.write(struct.pack("<Q", len(data)))
    out.write(data)


def _read_array(fh, dtype, shape) -> np.ndarray:
    (n,) = struct.unpack("<Q", fh.read(8))
    arr = np.frombuffer(fh.read(n), dtype=dtype).reshape(shape)
    return arr.copy()


def write_forest(fh, forest: Forest) -> None:
    fh.write(FOREST_MAGIC)
    fh.write(struct.pack("<H", FORMAT_VERSION))
    fh.write(struct.pack("<H", len(forest.labels)))
    for name in forest.labels:
        _write_str(fh, name)
    T = forest.n_trees
    fh.write(struct.pack("<I", T))
    store = forest.store
    bounds = np.append(forest.roots, store.n_nodes)
    for t in range(T):
        fh.write(struct.pack("<I", int(bounds[t + 1] - bounds[t])))
        subjects = forest.bootstrap_subjects[t]
        fh.write(struct.pack("<I", len(subjects)))
        for s in subjects:
            _write_str(fh, s)
    _write_array(fh, store.template.astype(np.int8))
    _write_array(fh, store.p_int.astype(np.int32))
    _write_array(fh, store.p_flt.astype(np.float64))
    _write_array(fh, store.threshold.astype(np.float64))
    _write_array(fh, store.left.astype(np.int64))
    _write_array(fh, store.right.astype(np.int64))
    _write_array(fh, store.leaf_id.astype(np.int64))
    fh.write(struct.pack("<Q", store.leaf_dist.shape[0]))
    _write_array(fh, store.leaf_dist.astype(np.float64))


def read_forest(fh) -> Forest:
    if fh.read(8) != FOREST_MAGIC:
        raise DataError("not a forest blob (bad magic)")
    (version,) = struct.unpack("<H", fh.read(2))
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported forest format version {version}")
    (n_labels,) = struct.unpack("<H", fh.read(2))
    labels = [_read_str(fh) for _ in range(n_labels)]
    (T,) = struct.unpack("<I", fh.read(4))
    counts = []
    subjects = []
    for _ in range(T):
        (n_nodes,) = struct.unpack("<I", fh.read(4))
        counts.append(n_nodes)
        (ns,) = struct.unpack("<I", fh.read(4))
        subjects.append([_read_str(fh) for _ in range(ns)])
    total = int(np.sum(counts))
    template = _read_array(fh, np.int8, (total,))
    p_int = _read_array(fh, np.int32, (total, 4))
    p_flt = _read_array(fh, np.float64, (total, 4))
    threshold = _read_array(fh, np.float64, (total,))
    left = _read_array(fh, np.int64, (total,))
    right = _read_array(fh, np.int64, (total,))
    leaf_id = _read_array(fh, np.int64, (total,))
    (n_leaves,) = struct.unpack("<Q", fh.read(8))
    leaf_dist = _read_array(fh, np.float64, (n_leaves, n_labels))
    store = TreeStore(template, p_int, p_flt, threshold, left, right, leaf_id, leaf_dist)
    roots = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    return Forest(store, roots, labels, subjects)


def forest_to_bytes(forest: Forest) -> bytes:
    buf = io.BytesIO()
    write_forest(buf, forest)
    return buf.getvalue()


def forest_from_bytes(data: bytes) -> Forest:
    return read_forest(io.BytesIO(data))


def forest_text_dump(forest: Forest, max_trees: int = None) -> str:
    """Human-readable dump for debugging."""
    lines = [f"forest trees={forest.n_trees} labels={','.join(forest.labels)}"]
    bounds = np.append(forest.roots, forest.store.n_nodes)
    store = forest.store
    n_show = forest.n_trees if max_trees is None else min(max_trees, forest.n_trees)
    for t in range(n_show):
        lines.append(f"tree {t} nodes={bounds[t + 1] - bounds[t]} "
                     f"subjects={','.join(forest.bootstrap_subjects[t])}")
        for n in range(int(bounds[t]), int(bounds[t + 1])):
            rel = n - int(bounds[t])
            if store.template[n] == 0:
                dist = np.round(store.leaf_dist[store.leaf_id[n]], 4)
                lines.append(f"  {rel}: leaf {dist.tolist()}")
            else:
                pi = store.p_int[n].tolist()
                pf = np.round(store.p_flt[n], 4).tolist()
                lines.append(
                    f"  {rel}: t{store.template[n]} int={pi} flt={pf} "
                    f"thr={store.threshold[n]:.6g} "
                    f"l={store.left[n] - bounds[t]} r={store.right[n] - bounds[t]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _hp_to_dict(hp: HyperParams | None):
    if hp is None:
        return None
    d = asdict(hp)
    d["k"] = list(d["k"])
    return d


def _hp_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    d["k"] = tuple(d["k"])
    return HyperParams(**d)


def save_model(model, path) -> None:
    from .training import ConditionalBank  # noqa: F401 (typing aid)

    meta = {
        "format": "pcrf-model",
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "labels": model.labels,
        "hp_static": _hp_to_dict(model.hp_static),
        "hp_pair": _hp_to_dict(model.hp_pair),
        "fingerprint": model.fingerprint,
        "cells": None,
        "pose_table": None,
        "sampler": None,
    }
    bank = model.bank
    if bank is not None:
        meta["cells"] = [[k[0], k[1]] for k in bank.sorted_keys()]
        meta["bank_kind"] = bank.kind
        if bank.pose_table is not None:
            t = bank.pose_table
            meta["pose_table"] = {
                "yaw_centers": list(t.yaw_centers),
                "pitch_centers": list(t.pitch_centers),
                "jitter_yaw": t.jitter_yaw,
                "jitter_pitch": t.jitter_pitch,
            }
    sampler = model.pose_sampler
    if sampler is not None:
        meta["sampler"] = {
            "n_bins": sampler.n_bins,
            "n_yaw": int(sampler.yaw_grid.size),
            "n_pitch": int(sampler.pitch_grid.size),
        }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        data = forest_to_bytes(model.static_forest)
        fh.write(struct.pack("<Q", len(data)))
        fh.write(data)
        if bank is not None:
            for key in bank.sorted_keys():
                data = forest_to_bytes(bank.cells[key])
                fh.write(struct.pack("<Q", len(data)))
                fh.write(data)
        if sampler is not None:
            _write_array(fh, sampler.yaw_grid.astype(np.float64))
            _write_array(fh, sampler.pitch_grid.astype(np.float64))
            _write_array(fh, sampler.weights.astype(np.float64))


def load_model(path):
    from .training import ConditionalBank, Model

    with open(path, "rb") as fh:
        if fh.read(8) != MODEL_MAGIC:
            raise DataError(f"{path}: not a model file (bad magic)")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported model version {version}")
        (n,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(n).decode("utf-8"))
        (n,) = struct.unpack("<Q", fh.read(8))
        static = forest_from_bytes(fh.read(n))
        bank = None
        if meta.get("cells") is not None:
            table = None
            if meta.get("pose_table") is not None:
                pt = meta["pose_table"]
                table = PoseBinTable(tuple(pt["yaw_centers"]), tuple(pt["pitch_centers"]),
                                     pt["jitter_yaw"], pt["jitter_pitch"])
            cells = {}
            for key in meta["cells"]:
                (n,) = struct.unpack("<Q", fh.read(8))
                k = (None if key[0] is None else int(key[0]),
                     None if key[1] is None else int(key[1]))
                cells[k] = forest_from_bytes(fh.read(n))
            bank = ConditionalBank(meta["bank_kind"], cells, meta["labels"], table)
        sampler = None
        if meta.get("sampler") is not None:
            sm = meta["sampler"]
            yaw_grid = _read_array(fh, np.float64, (sm["n_yaw"],))
            pitch_grid = _read_array(fh, np.float64, (sm["n_pitch"],))
            weights = _read_array(fh, np.float64,
                                  (sm["n_bins"], sm["n_yaw"], sm["n_pitch"]))
            sampler = PoseSampler(yaw_grid, pitch_grid, weights,
                                  bank.pose_table if bank else PoseBinTable())
        return Model(meta["kind"], meta["labels"], static, bank, sampler,
                     _hp_from_dict(meta["hp_static"]), _hp_from_dict(meta["hp_pair"]),
                     meta.get("fingerprint"))
