"""Split-candidate sampling and batched feature evaluation.

A split candidate is a feature template (1-6) with sampled parameters and
one threshold.  Templates 1-3 are static (evaluated on a single frame, or
on the second frame of a pair); templates 4-6 are their derivatives over a
frame pair.

Two evaluation paths share the same arithmetic kernels:

* training matrices: all parameter draws of one template evaluated over a
  set of samples at once, giving the (n_samples, n_draws) value matrix the
  split search runs on;
* frontier batches: during tree traversal, many (tree, pair) elements sit
  at different nodes; each step evaluates one template's node parameters
  for all elements currently testing that template.

Because both paths apply identical elementwise operations, a value
computed through either path (or through the scalar helpers in
``geometry`` / ``channels``) is bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import phi3_many
from .frames import DataError, Dataset
from .geometry import angle_feature, point_distance

PAIR_TEMPLATES = (1, 2, 3, 4, 5, 6)
STATIC_TEMPLATES = (1, 2, 3)
WINDOW_SIZE_RANGE = (0.1, 1.0)


@dataclass(frozen=True)
class FeatureDescriptor:
    """One sampled split candidate: template id, parameters, threshold.

    Parameter layout: templates 1/4 -> (a, b); 2/5 -> (a, b, c, lam);
    3/6 -> (t1, t2, t3, ch, s, alpha, beta, gamma).
    """

    template: int
    params: tuple
    threshold: float


def _distinct_triple_cols(raw, L):
    """Map raw columns (range L, L-1, L-2) to three distinct indices."""
    a = raw[:, 0]
    b = (a + 1 + raw[:, 1]) % L
    j = raw[:, 2]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c = j + (j >= lo)
    c = c + (c >= hi)
    return a, b, c


def sample_param_draws(template: int, k: int, L: int, rng) -> dict:
    """Draw k parameter sets for one template (uniform over its domain).

    Integer parameters come from a single rng call per template so node
    sampling stays cheap; distinct indices use the shift/skip construction
    over reduced ranges.
    """
    if template in (1, 4):
        raw = rng.integers(0, [L, L - 1], size=(k, 2))
        a = raw[:, 0]
        b = (a + 1 + raw[:, 1]) % L
        return {"a": a, "b": b}
    if template in (2, 5):
        raw = rng.integers(0, [L, L - 1, L - 2, 2], size=(k, 4))
        a, b, c = _distinct_triple_cols(raw, L)
        return {"a": a, "b": b, "c": c, "lam": raw[:, 3]}
    if template in (3, 6):
        raw = rng.integers(0, [L, L - 1, L - 2, 8], size=(k, 4))
        t1, t2, t3 = _distinct_triple_cols(raw, L)
        ch = raw[:, 3] + 1
        s = rng.uniform(WINDOW_SIZE_RANGE[0], WINDOW_SIZE_RANGE[1], size=k)
        bary = rng.dirichlet((1.0, 1.0, 1.0), size=k)
        return {"t1": t1, "t2": t2, "t3": t3, "ch": ch, "s": s,
                "alpha": bary[:, 0], "beta": bary[:, 1], "gamma": bary[:, 2]}
    raise ValueError(f"unknown template {template}")


@dataclass
class NodeCandidates:
    """Structured form of one node's candidate set.

    ``draws`` maps template -> parameter arrays, ``thresholds`` maps
    template -> (k, R) threshold matrix.  Candidate order is template
    ascending, then draw index, then threshold index; the flat candidate
    index used for tie-breaking follows that order.
    """

    templates: tuple
    draws: dict
    thresholds: dict

    @property
    def n_draws(self) -> int:
        return sum(len(next(iter(self.draws[t].values()))) for t in self.templates)

    def descriptor(self, template: int, draw: int, thr: float) -> FeatureDescriptor:
        d = self.draws[template]
        if template in (1, 4):
            params = (int(d["a"][draw]), int(d["b"][draw]))
        elif template in (2, 5):
            params = (int(d["a"][draw]), int(d["b"][draw]), int(d["c"][draw]),
                      int(d["lam"][draw]))
        else:
            params = (int(d["t1"][draw]), int(d["t2"][draw]), int(d["t3"][draw]),
                      int(d["ch"][draw]), float(d["s"][draw]), float(d["alpha"][draw]),
                      float(d["beta"][draw]), float(d["gamma"][draw]))
        return FeatureDescriptor(template, params, float(thr))

    def flatten(self) -> list[FeatureDescriptor]:
        out = []
        for t in self.templates:
            th = self.thresholds[t]
            for j in range(th.shape[0]):
                for r in range(th.shape[1]):
                    out.append(self.descriptor(t, j, th[j, r]))
        return out


def sample_candidates(templates, counts, thresholds_per_feature, ranges, L, rng) -> NodeCandidates:
    """Sample one node's candidate set.

    For each template i (ascending) with counts[i] > 0 the parameter
    arrays are drawn, then one uniform block covers all thresholds, scaled
    into each template's estimated range.  This call order defines the rng
    protocol trees rely on for reproducibility.
    """
    active = tuple(t for t in templates if counts.get(t, 0) > 0)
    draws = {t: sample_param_draws(t, counts[t], L, rng) for t in active}
    total = sum(counts[t] for t in active)
    unit = rng.random(size=(total, thresholds_per_feature))
    thr = {}
    row = 0
    for t in active:
        k = counts[t]
        lo, hi = ranges[t]
        thr[t] = lo + unit[row:row + k] * (hi - lo)
        row += k
    return NodeCandidates(active, draws, thr)


# ---------------------------------------------------------------------------
# training-time evaluation (samples x draws matrices)
# ---------------------------------------------------------------------------

def _channels_of(dataset: Dataset, idx: int):
    ch = dataset.frames[idx].channels
    if ch is None:
        raise DataError(
            "appearance templates require integral channels; "
            "call attach_channels() or drop templates 3/6"
        )
    return ch


def _phi3_rows(dataset, frame_indices, d):
    rows = np.empty((len(frame_indices), len(d["t1"])), dtype=np.float64)
    for i, fi in enumerate(frame_indices):
        rows[i] = phi3_many(_channels_of(dataset, fi), dataset.lm[fi], dataset.iod[fi],
                            d["t1"], d["t2"], d["t3"], d["ch"], d["s"],
                            d["alpha"], d["beta"], d["gamma"])
    return rows


def _geom_matrix(template, dataset, frame_indices, d):
    lm = dataset.lm[frame_indices]
    if template in (1, 4):
        return point_distance(lm[:, d["a"]], lm[:, d["b"]],
                              dataset.iod[frame_indices][:, None])
    return angle_feature(lm[:, d["a"]], lm[:, d["b"]], lm[:, d["c"]], d["lam"])


class StaticFeatureSpace:
    """Feature evaluation over single frames of a dataset."""

    templates = STATIC_TEMPLATES

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.L = dataset.landmark_count

    def n_samples(self) -> int:
        return len(self.dataset)

    def eval_template(self, template, draws, sample_indices) -> np.ndarray:
        idx = np.asarray(sample_indices)
        if template in (1, 2):
            return _geom_matrix(template, self.dataset, idx, draws)
        if template == 3:
            return _phi3_rows(self.dataset, idx, draws)
        raise ValueError(f"static space cannot evaluate template {template}")

    def eval_matrix(self, cands: NodeCandidates, sample_indices) -> np.ndarray:
        blocks = [self.eval_template(t, cands.draws[t], sample_indices)
                  for t in cands.templates]
        return np.concatenate(blocks, axis=1) if blocks else np.empty((len(sample_indices), 0))

    def eval_descriptor(self, desc: FeatureDescriptor, sample_index: int) -> float:
        d = _draws_from_descriptor(desc)
        return float(self.eval_template(desc.template, d, [sample_index])[0, 0])


class PairFeatureSpace:
    """Feature evaluation over (previous, current) frame pairs.

    Samples are indices into parallel ``prev_idx`` / ``cur_idx`` arrays;
    static templates read the current frame, derivative templates take the
    difference current minus previous.
    """

    templates = PAIR_TEMPLATES

    def __init__(self, dataset: Dataset, prev_idx, cur_idx):
        self.dataset = dataset
        self.prev_idx = np.asarray(prev_idx, dtype=np.int64)
        self.cur_idx = np.asarray(cur_idx, dtype=np.int64)
        self.L = dataset.landmark_count

    def n_samples(self) -> int:
        return self.prev_idx.size

    def eval_template(self, template, draws, sample_indices) -> np.ndarray:
        idx = np.asarray(sample_indices)
        cur = self.cur_idx[idx]
        if template in (1, 2):
            return _geom_matrix(template, self.dataset, cur, draws)
        if template == 3:
            return _phi3_rows(self.dataset, cur, draws)
        prev = self.prev_idx[idx]
        if template in (4, 5):
            base = 1 if template == 4 else 2
            return (_geom_matrix(base, self.dataset, cur, draws)
                    - _geom_matrix(base, self.dataset, prev, draws))
        if template == 6:
            return _phi3_rows(self.dataset, cur, draws) - _phi3_rows(self.dataset, prev, draws)
        raise ValueError(f"unknown template {template}")

    def eval_matrix(self, cands: NodeCandidates, sample_indices) -> np.ndarray:
        blocks = [self.eval_template(t, cands.draws[t], sample_indices)
                  for t in cands.templates]
        return np.concatenate(blocks, axis=1) if blocks else np.empty((len(sample_indices), 0))

    def eval_descriptor(self, desc: FeatureDescriptor, sample_index: int) -> float:
        d = _draws_from_descriptor(desc)
        return float(self.eval_template(desc.template, d, [sample_index])[0, 0])


def _draws_from_descriptor(desc: FeatureDescriptor) -> dict:
    p = desc.params
    if desc.template in (1, 4):
        return {"a": np.array([p[0]]), "b": np.array([p[1]])}
    if desc.template in (2, 5):
        return {"a": np.array([p[0]]), "b": np.array([p[1]]),
                "c": np.array([p[2]]), "lam": np.array([p[3]])}
    return {"t1": np.array([p[0]]), "t2": np.array([p[1]]), "t3": np.array([p[2]]),
            "ch": np.array([p[3]]), "s": np.array([p[4]]), "alpha": np.array([p[5]]),
            "beta": np.array([p[6]]), "gamma": np.array([p[7]])}


def estimate_threshold_ranges(space, counts: dict, rng,
                              subset_size: int = 1000, samples=None) -> dict:
    """Per-template (min, max) feature ranges over a random sample subset.

    The subset is drawn first (from ``samples`` when given, else from the
    whole space), then for each active template (ascending) the template's
    own candidate count of probe parameter draws.
    """
    pool = np.arange(space.n_samples()) if samples is None \
        else np.asarray(samples, dtype=np.int64)
    n = pool.size
    if n == 0:
        raise DataError("cannot estimate feature ranges from an empty sample set")
    take = min(subset_size, n)
    subset = pool[rng.choice(n, size=take, replace=False)] if take < n else pool
    ranges = {}
    for t in space.templates:
        k = counts.get(t, 0)
        if k <= 0:
            continue
        draws = sample_param_draws(t, k, space.L, rng)
        vals = space.eval_template(t, draws, subset)
        ranges[t] = (float(vals.min()), float(vals.max()))
    return ranges


# ---------------------------------------------------------------------------
# traversal-time evaluation (frontier batches)
# ---------------------------------------------------------------------------

class StaticEvalContext:
    """Evaluates node features of a single frame for frontier batches."""

    def __init__(self, lm, iod, channels=None):
        self.lm = np.asarray(lm, dtype=np.float64)
        self.iod = float(iod)
        self.channels = channels

    def eval_nodes(self, template, p_int, p_flt, elem_ids):
        lm, iod = self.lm, self.iod
        if template == 1:
            return point_distance(lm[p_int[:, 0]], lm[p_int[:, 1]], iod)
        if template == 2:
            return angle_feature(lm[p_int[:, 0]], lm[p_int[:, 1]], lm[p_int[:, 2]],
                                 p_int[:, 3].astype(np.float64))
        if template == 3:
            if self.channels is None:
                raise DataError("frame has no integral channels")
            return phi3_many(self.channels, lm, iod,
                             p_int[:, 0], p_int[:, 1], p_int[:, 2], p_int[:, 3],
                             p_flt[:, 0], p_flt[:, 1], p_flt[:, 2], p_flt[:, 3])
        raise DataError(f"static evaluation cannot handle template {template}")


class PairEvalContext:
    """Evaluates node features for (previous, current) pairs.

    The current frame is shared by all elements; ``elem_prev`` maps each
    frontier element to a row of the stacked previous-frame arrays.
    """

    def __init__(self, cur: StaticEvalContext, prev_lm, prev_iod,
                 prev_channels, elem_prev):
        self.cur = cur
        self.prev_lm = np.asarray(prev_lm, dtype=np.float64)
        self.prev_iod = np.asarray(prev_iod, dtype=np.float64)
        self.prev_channels = prev_channels
        self.elem_prev = np.asarray(elem_prev, dtype=np.int64)

    def eval_nodes(self, template, p_int, p_flt, elem_ids):
        if template <= 3:
            return self.cur.eval_nodes(template, p_int, p_flt, elem_ids)
        pe = self.elem_prev[elem_ids]
        lmp = self.prev_lm
        if template == 4:
            cur = self.cur.eval_nodes(1, p_int, p_flt, elem_ids)
            prev = point_distance(lmp[pe, p_int[:, 0]], lmp[pe, p_int[:, 1]],
                                  self.prev_iod[pe])
            return cur - prev
        if template == 5:
            cur = self.cur.eval_nodes(2, p_int, p_flt, elem_ids)
            prev = angle_feature(lmp[pe, p_int[:, 0]], lmp[pe, p_int[:, 1]],
                                 lmp[pe, p_int[:, 2]], p_int[:, 3].astype(np.float64))
            return cur - prev
        if template == 6:
            cur = self.cur.eval_nodes(3, p_int, p_flt, elem_ids)
            prev = np.empty_like(cur)
            for j in np.unique(pe):
                ch = self.prev_channels[j]
                if ch is None:
                    raise DataError("previous frame has no integral channels")
                m = pe == j
                prev[m] = phi3_many(ch, lmp[j], float(self.prev_iod[j]),
                                    p_int[m, 0], p_int[m, 1], p_int[m, 2], p_int[m, 3],
                                    p_flt[m, 0], p_flt[m, 1], p_flt[m, 2], p_flt[m, 3])
            return cur - prev
        raise DataError(f"unknown template {template}")
