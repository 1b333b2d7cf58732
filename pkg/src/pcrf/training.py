"""Pairwise dataset construction and conditional-bank training.

A bank cell is one forest keyed by (source label, pose bin): ``pcrf``
banks key on the source label only, ``mvrf`` on the pose bin only (static
forests), ``mvpcrf`` on both, and the ``full`` model is a single cell
trained on transitions from every source label jointly.

Each tree of a cell draws its own subject-level pair bootstrap: sampled
source frames carrying the cell's label are crossed with sampled
destination frames of every label (same subject, any sequence), and the
resulting pairs are balanced by downsampling on the pair label.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .features import PairFeatureSpace, StaticFeatureSpace
from .forest import Forest, HyperParams, build_balanced_bootstrap, train_forest
from .frames import DataError, Dataset
from .pose import PoseBinTable, PoseSampler, build_pose_sampler

log = logging.getLogger(__name__)

DEFAULT_SRC_PER_SUBJECT = 4
DEFAULT_DST_PER_SUBJECT = 4

MODEL_KINDS = ("rf", "full", "pcrf", "mvrf", "mvpcrf")


@dataclass
class TrainOptions:
    src_per_subject: int = DEFAULT_SRC_PER_SUBJECT
    dst_per_subject: int = DEFAULT_DST_PER_SUBJECT
    cross_view_pairs: bool = False
    n_jobs: int = 1


def frame_pose_bins(dataset: Dataset, table: PoseBinTable) -> np.ndarray:
    """Nearest pose bin per frame; -1 where the pose is absent."""
    out = np.full(len(dataset), -1, dtype=np.int64)
    centers = table.centers()
    has = ~np.isnan(dataset.pose[:, 0])
    if has.any():
        d = ((dataset.pose[has, None, 0] - centers[None, :, 0]) ** 2
             + (dataset.pose[has, None, 1] - centers[None, :, 1]) ** 2)
        out[has] = np.argmin(d, axis=1)
    return out


def build_pair_bootstrap(dataset: Dataset, source_label, data_ratio: float, rng,
                         src_per_subject: int = DEFAULT_SRC_PER_SUBJECT,
                         dst_per_subject: int = DEFAULT_DST_PER_SUBJECT,
                         bin_of_frame=None, bin_id=None,
                         cross_view: bool = False, balance: bool = True):
    """One balanced pairwise bootstrap for a bank cell.

    Draws a subject fraction, then per subject up to ``src_per_subject``
    frames with the source label and up to ``dst_per_subject`` frames per
    destination label (cross-sequence pairs allowed), forms the cross
    product, and downsamples to equal pair-label counts.  When ``bin_id``
    is given, destination frames must sit in that pose bin; source frames
    too unless ``cross_view``.

    Returns (prev_idx, cur_idx, subjects, warnings).
    """
    labeled = np.flatnonzero(dataset.y >= 0)
    if bin_id is not None and bin_of_frame is None:
        raise ValueError("bin_id requires bin_of_frame")
    subj = sorted({dataset.frames[i].subject_id for i in labeled})
    if not subj:
        raise DataError("pair bootstrap requires labeled frames")
    m = int(np.ceil(data_ratio * len(subj)))
    chosen = sorted(rng.choice(len(subj), size=m, replace=False).tolist())
    chosen_names = [subj[i] for i in chosen]
    by_subject: dict[str, list[int]] = {s: [] for s in chosen_names}
    for i in labeled:
        s = dataset.frames[i].subject_id
        if s in by_subject:
            by_subject[s].append(i)

    src_label_idx = None if source_label is None else dataset.label_index(source_label)
    prev_list: list[np.ndarray] = []
    cur_list: list[np.ndarray] = []
    warnings: list[str] = []
    for s in chosen_names:
        idx = np.array(by_subject[s], dtype=np.int64)
        if idx.size == 0:
            continue
        in_bin = None
        if bin_id is not None:
            in_bin = bin_of_frame[idx] == bin_id
        src_mask = np.ones(idx.size, dtype=bool) if src_label_idx is None \
            else dataset.y[idx] == src_label_idx
        if bin_id is not None and not cross_view:
            src_mask &= in_bin
        src = idx[src_mask]
        if src.size == 0:
            continue
        if src.size > src_per_subject:
            src = np.sort(src[rng.choice(src.size, size=src_per_subject, replace=False)])
        for lbl in range(dataset.n_labels):
            dst_mask = dataset.y[idx] == lbl
            if bin_id is not None:
                dst_mask &= in_bin
            dst = idx[dst_mask]
            if dst.size == 0:
                continue
            if dst.size > dst_per_subject:
                dst = np.sort(dst[rng.choice(dst.size, size=dst_per_subject, replace=False)])
            prev_list.append(np.repeat(src, dst.size))
            cur_list.append(np.tile(dst, src.size))
    if not prev_list:
        raise DataError(
            f"no pairs available for source label {source_label!r}"
            + (f" in pose bin {bin_id}" if bin_id is not None else ""))
    prev = np.concatenate(prev_list)
    cur = np.concatenate(cur_list)
    if balance:
        y = dataset.y[cur]
        present = np.unique(y)
        n_min = min(int((y == l).sum()) for l in present)
        keep = []
        for l in present:
            cand = np.flatnonzero(y == l)
            if cand.size > n_min:
                cand = np.sort(cand[rng.choice(cand.size, size=n_min, replace=False)])
            keep.append(cand)
        keep = np.concatenate(keep)
        prev, cur = prev[keep], cur[keep]
        missing = [dataset.labels[i] for i in range(dataset.n_labels)
                   if i not in present]
        if missing:
            warnings.append(f"pair labels missing from bootstrap: {missing}")
    return prev, cur, chosen_names, warnings


class _GrowingPairSpace(PairFeatureSpace):
    """Pair feature space whose sample set grows as bootstraps arrive.

    Tree growth only ever references the indices a bootstrap returned, so
    appending is safe; a lock keeps concurrent tree builds consistent.
    """

    def __init__(self, dataset: Dataset):
        super().__init__(dataset, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
        import threading

        self._lock = threading.Lock()

    def append_pairs(self, prev, cur) -> np.ndarray:
        with self._lock:
            start = self.prev_idx.size
            self.prev_idx = np.concatenate([self.prev_idx, prev])
            self.cur_idx = np.concatenate([self.cur_idx, cur])
            return np.arange(start, start + prev.size, dtype=np.int64)


@dataclass
class ConditionalBank:
    """Map from (source label index, pose bin) to a trained forest.

    Keys use None for the unconditioned axis: ``pcrf`` cells are
    (label, None), ``mvrf`` cells (None, bin), ``full`` the single cell
    (None, None).
    """

    kind: str
    cells: dict[tuple, Forest]
    labels: list[str]
    pose_table: PoseBinTable | None = None
    warnings: list[str] = field(default_factory=list)

    @staticmethod
    def sort_key(key):
        l, b = key
        return (-1 if l is None else l, -1 if b is None else b)

    def sorted_keys(self) -> list[tuple]:
        return sorted(self.cells, key=self.sort_key)

    @property
    def n_trees_per_cell(self) -> int:
        return next(iter(self.cells.values())).n_trees


def _cell_keys(kind: str, n_labels: int, table: PoseBinTable | None) -> list[tuple]:
    if kind == "full":
        return [(None, None)]
    if kind == "pcrf":
        return [(l, None) for l in range(n_labels)]
    if kind == "mvrf":
        return [(None, b) for b in range(table.n_bins)]
    if kind == "mvpcrf":
        return [(l, b) for l in range(n_labels) for b in range(table.n_bins)]
    raise ValueError(f"no bank cells for kind {kind!r}")


def train_bank(dataset: Dataset, kind: str, hp: HyperParams, rng,
               options: TrainOptions = None,
               pose_table: PoseBinTable | None = None) -> ConditionalBank:
    """Train every bank cell that has data; empty cells are skipped with a
    warning and inference reallocates their tree share."""
    options = options or TrainOptions()
    if kind in ("mvrf", "mvpcrf") and pose_table is None:
        pose_table = PoseBinTable()
    bin_of_frame = None
    if pose_table is not None and kind in ("mvrf", "mvpcrf"):
        bin_of_frame = frame_pose_bins(dataset, pose_table)
    keys = _cell_keys(kind, dataset.n_labels, pose_table)
    streams = rng.spawn(len(keys))
    cells: dict[tuple, Forest] = {}
    warnings: list[str] = []
    for key, cell_rng in zip(keys, streams):
        l_idx, b_idx = key
        try:
            if kind == "mvrf":
                cells[key] = _train_static_cell(dataset, hp, cell_rng, b_idx,
                                                bin_of_frame, options.n_jobs)
            else:
                source = None if l_idx is None else dataset.labels[l_idx]
                cells[key] = _train_pair_cell(dataset, source, hp, cell_rng, options,
                                              bin_of_frame, b_idx)
        except DataError as e:
            msg = f"bank cell {key} skipped: {e}"
            warnings.append(msg)
            log.warning(msg)
    if not cells:
        raise DataError(f"no bank cell of kind {kind!r} could be trained")
    return ConditionalBank(kind, cells, list(dataset.labels), pose_table, warnings)


def _train_static_cell(dataset, hp, rng, bin_id, bin_of_frame, n_jobs) -> Forest:
    pool = np.flatnonzero((dataset.y >= 0) & (bin_of_frame == bin_id))
    if pool.size == 0:
        raise DataError(f"no labeled frames in pose bin {bin_id}")
    space = StaticFeatureSpace(dataset)

    def bootstrap(tree_rng):
        return build_balanced_bootstrap(dataset, hp.data_ratio, tree_rng,
                                        sample_indices=pool)

    return train_forest(space, hp, bootstrap, rng, dataset.n_labels,
                        dataset.labels, n_jobs=n_jobs)


def _train_pair_cell(dataset, source_label, hp, rng, options,
                     bin_of_frame=None, bin_id=None) -> Forest:
    space = _GrowingPairSpace(dataset)

    def bootstrap(tree_rng):
        prev, cur, subjects, warn = build_pair_bootstrap(
            dataset, source_label, hp.data_ratio, tree_rng,
            options.src_per_subject, options.dst_per_subject,
            bin_of_frame=bin_of_frame, bin_id=bin_id,
            cross_view=options.cross_view_pairs)
        return space.append_pairs(prev, cur), subjects, warn

    return train_forest(space, hp, bootstrap, rng, dataset.n_labels,
                        dataset.labels, n_jobs=options.n_jobs)


def train_pcrf(dataset: Dataset, hp: HyperParams, rng,
               options: TrainOptions = None) -> ConditionalBank:
    """One pairwise forest per source label (single-view conditional bank)."""
    return train_bank(dataset, "pcrf", hp, rng, options)


def train_static_forest(dataset: Dataset, hp: HyperParams, rng, n_jobs=1) -> Forest:
    space = StaticFeatureSpace(dataset)

    def bootstrap(tree_rng):
        return build_balanced_bootstrap(dataset, hp.data_ratio, tree_rng)

    return train_forest(space, hp, bootstrap, rng, dataset.n_labels,
                        dataset.labels, n_jobs=n_jobs)


def dataset_fingerprint(dataset: Dataset) -> str:
    """Stable content hash of frames, labels and poses."""
    h = hashlib.sha256()
    h.update((",".join(dataset.labels)).encode())
    for f in dataset.frames:
        h.update(f"{f.subject_id}|{f.sequence_id}|{f.frame_index}|{f.label}|{f.pose}".encode())
        h.update(np.ascontiguousarray(f.landmarks).tobytes())
    return h.hexdigest()


@dataclass
class Model:
    """A trained model: the static forest plus (for pairwise and
    multi-view kinds) the conditional bank and pose sampler."""

    kind: str
    labels: list[str]
    static_forest: Forest
    bank: ConditionalBank | None = None
    pose_sampler: PoseSampler | None = None
    hp_static: HyperParams | None = None
    hp_pair: HyperParams | None = None
    fingerprint: str | None = None
    _pool: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def eval_pool(self):
        """Merged node pool over all bank cells: (store, roots per cell).

        Built once; merging lets a whole frame's tree draws walk in a
        single frontier batch regardless of how many cells contribute.
        """
        if self.bank is None:
            return None
        if self._pool is None:
            from .forest import TreeStore

            keys = self.bank.sorted_keys()
            stores = [self.bank.cells[k].store for k in keys]
            merged, offsets = TreeStore.concatenate(stores)
            roots = {k: self.bank.cells[k].roots + off
                     for k, off in zip(keys, offsets)}
            self._pool = (merged, roots)
        return self._pool


def train_model(dataset: Dataset, kind: str, hp_static: HyperParams,
                hp_pair: HyperParams | None = None, seed: int = 0,
                options: TrainOptions = None,
                pose_table: PoseBinTable | None = None,
                static_forest: Forest | None = None) -> Model:
    """Train a complete model of the requested kind.

    The static forest is the ``rf`` model itself and initializes/feeds the
    label prior for the pairwise kinds; pass ``static_forest`` to share a
    pre-trained one (e.g. when comparing banks under the same prior).
    Multi-view kinds also build the pose sampling distribution from the
    training frames' poses.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    options = options or TrainOptions()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    static_rng, bank_rng = rng.spawn(2)
    static = static_forest if static_forest is not None else \
        train_static_forest(dataset, hp_static, static_rng, options.n_jobs)
    bank = None
    sampler = None
    if kind != "rf":
        hp_cells = hp_static if kind == "mvrf" else (hp_pair or hp_static)
        if kind in ("mvrf", "mvpcrf"):
            pose_table = pose_table or PoseBinTable()
        bank = train_bank(dataset, kind, hp_cells, bank_rng, options, pose_table)
        if kind in ("mvrf", "mvpcrf"):
            bins = frame_pose_bins(dataset, pose_table)
            has = bins >= 0
            poses = [(dataset.pose[i, 0], dataset.pose[i, 1], int(bins[i]))
                     for i in np.flatnonzero(has)]
            sampler = build_pose_sampler(poses, pose_table)
    return Model(kind, list(dataset.labels), static, bank, sampler,
                 hp_static, hp_pair, dataset_fingerprint(dataset))


def build_eval_pairs(dataset: Dataset, source_label, rng,
                     src_per_subject: int = DEFAULT_SRC_PER_SUBJECT,
                     dst_per_subject: int = DEFAULT_DST_PER_SUBJECT):
    """Unbalanced full-population pair set for out-of-bag scoring."""
    return build_pair_bootstrap(dataset, source_label, 1.0, rng,
                                src_per_subject, dst_per_subject, balance=False)


def oob_pair_accuracy(forest: Forest, dataset: Dataset, prev_idx, cur_idx):
    """Pair-label out-of-bag accuracy for a pairwise forest."""
    from .forest import OobResult, _eligible_matrix, pair_context, walk

    eligible = _eligible_matrix(forest, dataset)
    C = len(forest.labels)
    confusion = np.zeros((C, C), dtype=np.int64)
    skipped = 0
    for p, c in zip(prev_idx, cur_idx):
        subj = dataset.subject_code[c]
        trees = np.flatnonzero(eligible[:, subj])
        if trees.size == 0:
            skipped += 1
            continue
        ctx = pair_context(dataset.frames[p], dataset.frames[c], trees.size)
        dists = walk(forest.store, forest.roots[trees], ctx)
        pred = int(np.argmax(dists.sum(axis=0) / trees.size))
        confusion[dataset.y[c], pred] += 1
    evaluated = int(confusion.sum())
    acc = float(np.trace(confusion) / evaluated) if evaluated else 0.0
    return OobResult(acc, confusion, evaluated, skipped)
