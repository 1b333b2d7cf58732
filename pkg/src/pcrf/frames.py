"""Landmark frames and datasets.

A frame is one observation of a face: an ordered set of 2D landmark
points plus optional label, pose and image data.  Datasets bundle frames
with columnar views (stacked landmark arrays, integer-coded labels and
subjects) so that feature evaluation can run vectorized over many frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

DEFAULT_LANDMARK_COUNT = 49
DEFAULT_EYE_INDICES = (22, 28)


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class LandmarkFrame:
    """One observation: landmarks plus identity, label and pose metadata.

    ``landmarks`` is an (L, 2) float array in pixel coordinates.  ``label``
    and ``pose`` may be absent (None).  ``channels`` optionally references
    precomputed integral channels for the frame's image; ``image_path``
    lets them be built lazily from disk.
    """

    subject_id: str
    sequence_id: str
    frame_index: int
    landmarks: np.ndarray
    label: Optional[str] = None
    pose: Optional[tuple[float, float]] = None
    image_path: Optional[str] = None
    channels: object = None
    eye_indices: tuple[int, int] = DEFAULT_EYE_INDICES

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        if self.landmarks.ndim != 2 or self.landmarks.shape[1] != 2:
            raise DataError("landmarks must be an (L, 2) array")
        if self.frame_index < 0:
            raise DataError("frame_index must be >= 0")
        e0, e1 = self.eye_indices
        L = self.landmarks.shape[0]
        if e0 == e1 or not (0 <= e0 < L and 0 <= e1 < L):
            raise DataError("eye indices must be distinct and within range")

    @property
    def landmark_count(self) -> int:
        return self.landmarks.shape[0]

    def with_label(self, label: Optional[str]) -> "LandmarkFrame":
        return replace(self, label=label)


@dataclass
class Dataset:
    """A collection of frames with columnar indices for fast access."""

    frames: list[LandmarkFrame]
    labels: list[str]
    landmark_count: int = DEFAULT_LANDMARK_COUNT
    eye_indices: tuple[int, int] = DEFAULT_EYE_INDICES
    # columnar views, filled by _build_index
    lm: np.ndarray = field(init=False, repr=False)
    iod: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)
    subject_code: np.ndarray = field(init=False, repr=False)
    subjects: list[str] = field(init=False, repr=False)
    pose: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._build_index()

    def _build_index(self):
        from .geometry import inter_ocular_distance_many

        n = len(self.frames)
        L = self.landmark_count
        lm = np.empty((n, L, 2), dtype=np.float64)
        label_idx = {name: i for i, name in enumerate(self.labels)}
        y = np.full(n, -1, dtype=np.int64)
        subj_code = np.empty(n, dtype=np.int64)
        pose = np.full((n, 2), np.nan, dtype=np.float64)
        subjects: dict[str, int] = {}
        for i, f in enumerate(self.frames):
            if f.landmark_count != L:
                raise DataError(
                    f"frame {f.subject_id}/{f.sequence_id}/{f.frame_index} "
                    f"has {f.landmark_count} landmarks, expected {L}"
                )
            lm[i] = f.landmarks
            if f.label is not None:
                if f.label not in label_idx:
                    raise DataError(f"unknown label {f.label!r}")
                y[i] = label_idx[f.label]
            subj_code[i] = subjects.setdefault(f.subject_id, len(subjects))
            if f.pose is not None:
                pose[i] = f.pose
        self.lm = lm
        self.y = y
        self.subject_code = subj_code
        self.subjects = list(subjects)
        self.pose = pose
        self.iod = inter_ocular_distance_many(lm, self.eye_indices)
        if n and not np.all(self.iod > 0):
            bad = int(np.flatnonzero(~(self.iod > 0))[0])
            f = self.frames[bad]
            raise DataError(
                f"degenerate frame {f.subject_id}/{f.sequence_id}/{f.frame_index}: "
                "coincident eye landmarks"
            )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def label_index(self, name: str) -> int:
        return self.labels.index(name)

    def sequences(self) -> list[tuple[tuple[str, str], list[int]]]:
        """Frame indices grouped by (subject_id, sequence_id), in frame order."""
        groups: dict[tuple[str, str], list[int]] = {}
        for i, f in enumerate(self.frames):
            groups.setdefault((f.subject_id, f.sequence_id), []).append(i)
        out = []
        for key, idxs in groups.items():
            idxs.sort(key=lambda i: self.frames[i].frame_index)
            out.append((key, idxs))
        return out

    def subset(self, indices) -> "Dataset":
        frames = [self.frames[i] for i in indices]
        return Dataset(frames, self.labels, self.landmark_count, self.eye_indices)

    def split_by_subjects(self, subjects) -> "Dataset":
        keep = set(subjects)
        return self.subset([i for i, f in enumerate(self.frames) if f.subject_id in keep])

    def has_images(self) -> bool:
        return any(f.image_path is not None or f.channels is not None for f in self.frames)
