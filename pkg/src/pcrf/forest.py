"""Balanced-bootstrap random trees over an arbitrary feature space.

Each tree draws a subject-level bootstrap, balances label counts by
downsampling, and grows greedily: at every node a fresh candidate set is
sampled and the candidate minimizing the children-size-weighted Gini
impurity is kept (ties broken by lowest candidate index).  Split
convention: value < threshold goes left.

Trees are stored flat in struct-of-arrays form (preorder per tree), which
the frontier-walk evaluator traverses level-synchronously for many
(tree, sample) elements at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import NodeCandidates, sample_candidates
from .frames import DataError, Dataset

LEAF = 0


@dataclass(frozen=True)
class HyperParams:
    """Forest growth settings.

    ``k`` holds the candidate counts for templates 1-6; each parameter
    draw is paired with ``thresholds_per_feature`` thresholds, so the
    total split candidates per node is sum(k) * thresholds_per_feature.
    """

    k: tuple = (40, 40, 160, 0, 0, 0)
    thresholds_per_feature: int = 25
    data_ratio: float = 2.0 / 3.0
    n_trees: int = 500
    impurity: str = "gini"
    max_depth: int = 30
    min_samples_leaf: int = 1

    def __post_init__(self):
        if len(self.k) != 6 or any(v < 0 for v in self.k):
            raise ValueError("k must hold 6 nonnegative candidate counts")
        if self.n_trees <= 0:
            raise ValueError("n_trees must be positive")
        if not 0 < self.data_ratio <= 1:
            raise ValueError("data_ratio must be in (0, 1]")
        if self.impurity != "gini":
            raise ValueError("only gini impurity is supported")
        if self.thresholds_per_feature <= 0:
            raise ValueError("thresholds_per_feature must be positive")

    @property
    def counts(self) -> dict:
        return {t + 1: int(self.k[t]) for t in range(6)}

    @property
    def total_candidates(self) -> int:
        return sum(self.k) * self.thresholds_per_feature

    def without_appearance(self) -> "HyperParams":
        k = list(self.k)
        k[2] = k[5] = 0
        return replace(self, k=tuple(k))


def static_profile(**overrides) -> HyperParams:
    """Default single-frame profile: 240 draws x 25 thresholds = 6000."""
    return replace(HyperParams(k=(40, 40, 160, 0, 0, 0)), **overrides) if overrides \
        else HyperParams(k=(40, 40, 160, 0, 0, 0))


def pairwise_profile(**overrides) -> HyperParams:
    """Default pair profile: same 6000-candidate budget split over 6 templates."""
    hp = HyperParams(k=(20, 20, 80, 20, 20, 80))
    return replace(hp, **overrides) if overrides else hp


def gini(label_counts) -> float:
    """Gini impurity 1 - sum(p^2) of a label count vector."""
    c = np.asarray(label_counts, dtype=np.int64)
    total = int(c.sum())
    if total <= 0:
        raise ValueError("gini of an empty node is undefined")
    sumsq = float((c.astype(np.float64) ** 2).sum())
    t = float(total)
    return 1.0 - sumsq / (t * t)


def _weighted_impurities(counts_left, counts_total, n, min_leaf):
    """Children-size-weighted Gini for every candidate column.

    counts_left is (C, J) int64; candidates producing a child smaller than
    ``min_leaf`` get +inf.  All arithmetic runs on exact integer counts so
    an independent per-candidate reimplementation produces bit-identical
    impurity values.
    """
    nl = counts_left.sum(axis=0)
    nr = n - nl
    counts_right = counts_total[:, None] - counts_left
    nlf = nl.astype(np.float64)
    nrf = nr.astype(np.float64)
    sumsq_l = (counts_left.astype(np.float64) ** 2).sum(axis=0)
    sumsq_r = (counts_right.astype(np.float64) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = 1.0 - sumsq_l / (nlf * nlf)
        gr = 1.0 - sumsq_r / (nrf * nrf)
    H = (nlf * gl + nrf * gr) / float(n)
    H[(nl < min_leaf) | (nr < min_leaf)] = np.inf
    return H


def _left_counts(V, thresholds, onehot):
    """Label counts going left for every (draw, threshold) candidate."""
    n, J = V.shape
    R = thresholds.shape[1]
    B = (V[:, :, None] < thresholds[None, :, :]).reshape(n, J * R).astype(np.float32)
    CL = onehot.T @ B
    return np.rint(CL).astype(np.int64)


def select_split(V, thresholds, y, n_labels, min_leaf=1):
    """Best (draw, threshold) pair by weighted Gini; None if all degenerate.

    Returns (draw_index, threshold_index, impurity).  Ties resolve to the
    lowest flat candidate index (draw-major, threshold-minor).
    """
    n, J = V.shape
    if J == 0:
        return None
    onehot = np.zeros((n, n_labels), dtype=np.float32)
    onehot[np.arange(n), y] = 1.0
    counts = np.bincount(y, minlength=n_labels).astype(np.int64)
    CL = _left_counts(V, thresholds, onehot)
    H = _weighted_impurities(CL, counts, n, min_leaf)
    best = int(np.argmin(H))
    if not np.isfinite(H[best]):
        return None
    R = thresholds.shape[1]
    return best // R, best % R, float(H[best])


def best_split(space, sample_indices, candidates):
    """Pick the candidate minimizing weighted Gini over the given samples.

    ``candidates`` is a flat FeatureDescriptor list; returns the winning
    descriptor or None when every candidate would create an empty child.
    """
    sample_indices = np.asarray(sample_indices)
    y = space_labels(space, sample_indices)
    if len(candidates) == 0:
        raise ValueError("candidate list must be nonempty")
    if np.all(y == y[0]):
        raise ValueError("best_split requires non-homogeneous labels")
    # evaluate per template group, preserving candidate order
    V = np.empty((sample_indices.size, len(candidates)), dtype=np.float64)
    by_template: dict[int, list[int]] = {}
    for i, d in enumerate(candidates):
        by_template.setdefault(d.template, []).append(i)
    from .features import _draws_from_descriptor

    for t, cols in by_template.items():
        d = {key: np.concatenate([_draws_from_descriptor(candidates[i])[key] for i in cols])
             for key in _draws_from_descriptor(candidates[cols[0]])}
        V[:, cols] = space.eval_template(t, d, sample_indices)
    thr = np.array([[d.threshold] for d in candidates])
    res = select_split(V, thr, y, int(y.max()) + 1)
    if res is None:
        return None
    j, _, _ = res
    return candidates[j]


def space_labels(space, sample_indices):
    ds = space.dataset
    if hasattr(space, "cur_idx"):
        return ds.y[space.cur_idx[np.asarray(sample_indices)]]
    return ds.y[np.asarray(sample_indices)]


# ---------------------------------------------------------------------------
# flat tree storage
# ---------------------------------------------------------------------------

class TreeStore:
    """Struct-of-arrays node storage shared by one or more trees."""

    __slots__ = ("template", "p_int", "p_flt", "threshold", "left", "right",
                 "leaf_id", "leaf_dist")

    def __init__(self, template, p_int, p_flt, threshold, left, right, leaf_id, leaf_dist):
        self.template = template
        self.p_int = p_int
        self.p_flt = p_flt
        self.threshold = threshold
        self.left = left
        self.right = right
        self.leaf_id = leaf_id
        self.leaf_dist = leaf_dist

    @property
    def n_nodes(self) -> int:
        return self.template.shape[0]

    @property
    def n_labels(self) -> int:
        return self.leaf_dist.shape[1]

    @staticmethod
    def concatenate(stores: list["TreeStore"]) -> tuple["TreeStore", np.ndarray]:
        """Merge stores into one pool; returns (pool, node offsets per store)."""
        offsets = np.zeros(len(stores) + 1, dtype=np.int64)
        leaf_off = 0
        parts = {name: [] for name in ("template", "p_int", "p_flt", "threshold",
                                       "left", "right", "leaf_id", "leaf_dist")}
        for i, s in enumerate(stores):
            off = offsets[i]
            offsets[i + 1] = off + s.n_nodes
            parts["template"].append(s.template)
            parts["p_int"].append(s.p_int)
            parts["p_flt"].append(s.p_flt)
            parts["threshold"].append(s.threshold)
            split = s.template != LEAF
            parts["left"].append(np.where(split, s.left + off, -1))
            parts["right"].append(np.where(split, s.right + off, -1))
            parts["leaf_id"].append(np.where(~split, s.leaf_id + leaf_off, -1))
            parts["leaf_dist"].append(s.leaf_dist)
            leaf_off += s.leaf_dist.shape[0]
        merged = TreeStore(*(np.concatenate(parts[name]) for name in
                             ("template", "p_int", "p_flt", "threshold",
                              "left", "right", "leaf_id", "leaf_dist")))
        return merged, offsets[:-1]


class _TreeBuilder:
    def __init__(self, n_labels):
        self.template = []
        self.p_int = []
        self.p_flt = []
        self.threshold = []
        self.left = []
        self.right = []
        self.leaf_id = []
        self.leaf_dist = []
        self.n_labels = n_labels

    def add_leaf(self, counts) -> int:
        node = len(self.template)
        self.template.append(LEAF)
        self.p_int.append((0, 0, 0, 0))
        self.p_flt.append((0.0, 0.0, 0.0, 0.0))
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_id.append(len(self.leaf_dist))
        self.leaf_dist.append(counts / counts.sum())
        return node

    def add_split(self, template, p_int, p_flt, threshold) -> int:
        node = len(self.template)
        self.template.append(template)
        self.p_int.append(p_int)
        self.p_flt.append(p_flt)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_id.append(-1)
        return node

    def freeze(self) -> TreeStore:
        C = self.n_labels
        leaf = (np.array(self.leaf_dist, dtype=np.float64).reshape(-1, C)
                if self.leaf_dist else np.zeros((0, C)))
        return TreeStore(
            np.array(self.template, dtype=np.int8),
            np.array(self.p_int, dtype=np.int32).reshape(-1, 4),
            np.array(self.p_flt, dtype=np.float64).reshape(-1, 4),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.leaf_id, dtype=np.int64),
            leaf,
        )


def _node_params(cands: NodeCandidates, template, j):
    d = cands.draws[template]
    if template in (1, 4):
        return (int(d["a"][j]), int(d["b"][j]), 0, 0), (0.0, 0.0, 0.0, 0.0)
    if template in (2, 5):
        return ((int(d["a"][j]), int(d["b"][j]), int(d["c"][j]), int(d["lam"][j])),
                (0.0, 0.0, 0.0, 0.0))
    return ((int(d["t1"][j]), int(d["t2"][j]), int(d["t3"][j]), int(d["ch"][j])),
            (float(d["s"][j]), float(d["alpha"][j]), float(d["beta"][j]),
             float(d["gamma"][j])))


def grow_tree(space, sample_indices, hp: HyperParams, ranges, rng, n_labels) -> TreeStore:
    """Grow one tree over the given bootstrap sample indices.

    Candidates are freshly sampled at every node.  The node becomes a leaf
    when labels are homogeneous, the depth or size caps hit, or every
    candidate degenerates; impure leaves store the empirical distribution.
    """
    sample_indices = np.asarray(sample_indices, dtype=np.int64)
    if sample_indices.size == 0:
        raise ValueError("cannot grow a tree from an empty bootstrap")
    y_all = space_labels(space, sample_indices)
    builder = _TreeBuilder(n_labels)
    counts_dict = hp.counts
    R = hp.thresholds_per_feature

    def build(local_idx, depth) -> int:
        y = y_all[local_idx]
        counts = np.bincount(y, minlength=n_labels).astype(np.float64)
        n = local_idx.size
        if (counts > 0).sum() <= 1 or depth >= hp.max_depth or n < 2 * hp.min_samples_leaf:
            return builder.add_leaf(counts)
        cands = sample_candidates(space.templates, counts_dict, R, ranges, space.L, rng)
        V = space.eval_matrix(cands, sample_indices[local_idx])
        thr = np.concatenate([cands.thresholds[t] for t in cands.templates], axis=0)
        res = select_split(V, thr, y, n_labels, hp.min_samples_leaf)
        if res is None:
            return builder.add_leaf(counts)
        j, r, _ = res
        # map flat draw index back to its template block
        t_sel, j_local = None, j
        for t in cands.templates:
            k = cands.thresholds[t].shape[0]
            if j_local < k:
                t_sel = t
                break
            j_local -= k
        p_int, p_flt = _node_params(cands, t_sel, j_local)
        theta = float(cands.thresholds[t_sel][j_local, r])
        node = builder.add_split(t_sel, p_int, p_flt, theta)
        mask = V[:, j] < thr[j, r]
        left = build(local_idx[mask], depth + 1)
        right = build(local_idx[~mask], depth + 1)
        builder.left[node] = left
        builder.right[node] = right
        return node

    build(np.arange(sample_indices.size), 0)
    return builder.freeze()


# ---------------------------------------------------------------------------
# bootstraps
# ---------------------------------------------------------------------------

def build_balanced_bootstrap(dataset: Dataset, data_ratio: float, rng,
                             sample_indices=None):
    """Subject-level bootstrap with majority-label downsampling.

    Draws ceil(data_ratio * n_subjects) subjects without replacement,
    pools their labeled frames, and downsamples every label to the
    minority count within the pool.  Returns (indices, subjects, missing)
    where ``missing`` lists vocabulary labels absent from the pool.
    """
    if sample_indices is None:
        sample_indices = np.flatnonzero(dataset.y >= 0)
    else:
        sample_indices = np.asarray(sample_indices, dtype=np.int64)
    subj = sorted({dataset.frames[i].subject_id for i in sample_indices})
    if not subj:
        raise DataError("bootstrap requires at least one labeled subject")
    m = int(np.ceil(data_ratio * len(subj)))
    chosen = sorted(rng.choice(len(subj), size=m, replace=False).tolist())
    chosen_names = {subj[i] for i in chosen}
    pool = np.array([i for i in sample_indices
                     if dataset.frames[i].subject_id in chosen_names], dtype=np.int64)
    y = dataset.y[pool]
    present = np.unique(y)
    missing = [dataset.labels[i] for i in range(dataset.n_labels) if i not in present]
    n_min = min(int((y == lbl).sum()) for lbl in present)
    picked = []
    for lbl in present:
        cand = pool[y == lbl]
        if cand.size > n_min:
            cand = cand[rng.choice(cand.size, size=n_min, replace=False)]
        picked.append(np.sort(cand))
    return np.concatenate(picked), sorted(chosen_names), missing


@dataclass
class Forest:
    """A list of grown trees plus the bootstrap subject set of each."""

    store: TreeStore
    roots: np.ndarray
    labels: list[str]
    bootstrap_subjects: list[list[str]]
    warnings: list[str] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return self.roots.size

    def predict(self, frame_or_ctx, tree_subset=None) -> np.ndarray:
        """Mean leaf distribution over the (sub)forest for one frame."""
        ctx = _as_context(frame_or_ctx)
        roots = self.roots if tree_subset is None else self.roots[tree_subset]
        dists = walk(self.store, roots, ctx)
        return dists.sum(axis=0) / roots.size

    def predict_pair(self, prev_frame, cur_frame) -> np.ndarray:
        ctx = pair_context(prev_frame, cur_frame, self.n_trees)
        dists = walk(self.store, self.roots, ctx)
        return dists.sum(axis=0) / self.n_trees


def _as_context(frame_or_ctx):
    from .features import StaticEvalContext
    from .frames import LandmarkFrame
    from .geometry import inter_ocular_distance

    if isinstance(frame_or_ctx, LandmarkFrame):
        return StaticEvalContext(frame_or_ctx.landmarks,
                                 inter_ocular_distance(frame_or_ctx),
                                 frame_or_ctx.channels)
    return frame_or_ctx


def pair_context(prev_frame, cur_frame, n_elements: int = 1):
    """Pair evaluation context where every element shares the same pair."""
    from .features import PairEvalContext

    cur = _as_context(cur_frame)
    prev = _as_context(prev_frame)
    return PairEvalContext(cur, prev.lm[None, :, :], np.array([prev.iod]),
                           [prev.channels], np.zeros(n_elements, dtype=np.int64))


def walk(store: TreeStore, roots, ctx) -> np.ndarray:
    """Evaluate frontier elements through their trees; one row per element.

    ``roots`` gives each element's start node; the context maps element
    ids to frame data (PairEvalContext carries the element -> previous
    frame mapping).
    """
    node = np.array(roots, dtype=np.int64)
    n = node.size
    out = np.zeros((n, store.n_labels), dtype=np.float64)
    alive = np.arange(n)
    while alive.size:
        nd = node[alive]
        t = store.template[nd]
        is_leaf = t == LEAF
        if is_leaf.any():
            done = alive[is_leaf]
            out[done] = store.leaf_dist[store.leaf_id[node[done]]]
            alive = alive[~is_leaf]
            nd = nd[~is_leaf]
            t = t[~is_leaf]
        if not alive.size:
            break
        for tmpl in np.unique(t):
            m = t == tmpl
            sel = alive[m]
            nds = nd[m]
            vals = ctx.eval_nodes(int(tmpl), store.p_int[nds], store.p_flt[nds], sel)
            go_left = vals < store.threshold[nds]
            node[sel] = np.where(go_left, store.left[nds], store.right[nds])
    return out


def train_forest(space, hp: HyperParams, bootstrap_fn, rng, n_labels, labels,
                 n_jobs: int = 1) -> Forest:
    """Grow a forest: estimate threshold ranges once, then one tree per
    independently seeded bootstrap.

    ``bootstrap_fn(rng) -> (sample_indices, subjects, warnings)`` supplies
    each tree's balanced bootstrap as indices into the feature space.
    """
    from .features import estimate_threshold_ranges

    streams = rng.spawn(hp.n_trees + 1)
    pool_idx, _, _ = bootstrap_fn(streams[0])
    ranges = estimate_threshold_ranges(space, hp.counts, streams[0], samples=pool_idx)

    def one_tree(t):
        tree_rng = streams[t + 1]
        idx, subjects, warn = bootstrap_fn(tree_rng)
        store = grow_tree(space, idx, hp, ranges, tree_rng, n_labels)
        return store, subjects, warn

    results = [None] * hp.n_trees
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            for t, res in enumerate(pool.map(one_tree, range(hp.n_trees))):
                results[t] = res
    else:
        for t in range(hp.n_trees):
            results[t] = one_tree(t)

    stores = [r[0] for r in results]
    merged, offsets = TreeStore.concatenate(stores)
    warnings = []
    for t, (_, _, warn) in enumerate(results):
        warnings.extend(f"tree {t}: {w}" for w in warn)
    return Forest(merged, offsets, list(labels),
                  [r[1] for r in results], warnings)


@dataclass
class OobResult:
    accuracy: float
    confusion: np.ndarray
    evaluated: int
    skipped: int


def oob_accuracy(forest: Forest, dataset: Dataset) -> OobResult:
    """Out-of-bag accuracy: each frame scored only by trees whose
    bootstrap excluded the frame's subject; frames with no eligible tree
    are skipped and counted."""
    eligible = _eligible_matrix(forest, dataset)
    C = len(forest.labels)
    confusion = np.zeros((C, C), dtype=np.int64)
    skipped = 0
    for i in np.flatnonzero(dataset.y >= 0):
        trees = np.flatnonzero(eligible[:, dataset.subject_code[i]])
        if trees.size == 0:
            skipped += 1
            continue
        p = forest.predict(dataset.frames[i], tree_subset=trees)
        confusion[dataset.y[i], int(np.argmax(p))] += 1
    evaluated = int(confusion.sum())
    acc = float(np.trace(confusion) / evaluated) if evaluated else 0.0
    return OobResult(acc, confusion, evaluated, skipped)


def _eligible_matrix(forest: Forest, dataset: Dataset) -> np.ndarray:
    """(n_trees, n_subjects) bool: True where the subject was out of bag."""
    n_subj = len(dataset.subjects)
    subj_idx = {s: i for i, s in enumerate(dataset.subjects)}
    out = np.ones((forest.n_trees, n_subj), dtype=bool)
    for t, subjects in enumerate(forest.bootstrap_subjects):
        for s in subjects:
            j = subj_idx.get(s)
            if j is not None:
                out[t, j] = False
    return out
