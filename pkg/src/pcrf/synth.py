"""Synthetic labeled sequence corpora and the dataset manifest format.

The generator deforms a 49-point 3D face template: per-subject morphology
(random affine plus per-landmark offsets, constant across a subject's
sequences), per-class deformation fields scaled by an onset-to-apex
amplitude profile, optional yaw/pitch rotation for multi-view corpora,
i.i.d. landmark noise, and optional 250x250 images splatted as Gaussian
blobs at the landmarks so appearance templates carry signal.

The on-disk format is a plain CSV manifest with a JSON header sidecar;
images are binary PGM.  Column order: subject_id, sequence_id,
frame_index, label, yaw, pitch, image, then x0,y0 ... x{L-1},y{L-1}.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from .frames import DataError, Dataset, LandmarkFrame
from .pgm import read_pgm, write_pgm
from .pose import PoseBinTable, assign_sequence_pose, single_bin_table

DEFAULT_LABELS = ("neutral", "happiness", "anger", "sadness", "fear",
                  "disgust", "surprise")
LANDMARK_COUNT = 49
EYE_INDICES = (22, 28)
MANIFEST_NAME = "manifest.csv"
HEADER_NAME = "header.json"

# landmark index groups of the template
BROW_L = list(range(0, 5))
BROW_R = list(range(5, 10))
NOSE_BRIDGE = list(range(10, 14))
NOSE_BASE = list(range(14, 19))
EYE_L = list(range(19, 25))   # center at 22
EYE_R = list(range(25, 31))   # center at 28
MOUTH_OUTER = list(range(31, 43))
MOUTH_INNER = list(range(43, 49))


def face_template() -> np.ndarray:
    """Mean face: (49, 3) points in face units (iod = 1), y pointing down."""
    pts = np.zeros((LANDMARK_COUNT, 3))
    pts[0:5, :2] = [(-0.75, -0.26), (-0.62, -0.31), (-0.50, -0.33),
                    (-0.38, -0.31), (-0.26, -0.26)]
    pts[5:10, :2] = [(0.26, -0.26), (0.38, -0.31), (0.50, -0.33),
                     (0.62, -0.31), (0.75, -0.26)]
    pts[10:14, :2] = [(0.0, -0.05), (0.0, 0.07), (0.0, 0.19), (0.0, 0.30)]
    pts[14:19, :2] = [(-0.16, 0.38), (-0.08, 0.41), (0.0, 0.43),
                      (0.08, 0.41), (0.16, 0.38)]
    pts[19:25, :2] = [(-0.68, 0.0), (-0.56, -0.08), (-0.40, -0.07),
                      (-0.50, 0.0), (-0.32, 0.0), (-0.50, 0.08)]
    pts[25:31, :2] = [(0.32, 0.0), (0.40, -0.07), (0.56, -0.08),
                      (0.50, 0.0), (0.68, 0.0), (0.50, 0.08)]
    for k in range(12):
        th = math.radians(180.0 - 30.0 * k)
        pts[31 + k, :2] = (0.30 * math.cos(th), 0.70 - 0.12 * math.sin(th))
    for k in range(6):
        th = math.radians(180.0 - 60.0 * k)
        pts[43 + k, :2] = (0.18 * math.cos(th), 0.70 - 0.05 * math.sin(th))
    # depth: facial dome plus protruding features; the depth contrast is
    # what makes off-center views distort the projected geometry
    x, y = pts[:, 0], pts[:, 1]
    dome = 1.0 - (x / 0.95) ** 2 - ((y - 0.15) / 1.05) ** 2
    pts[:, 2] = 0.80 * np.sqrt(np.clip(dome, 0.0, None))
    pts[NOSE_BRIDGE, 2] += (0.08, 0.14, 0.22, 0.32)
    pts[NOSE_BASE, 2] += 0.16
    pts[MOUTH_OUTER, 2] += 0.10
    pts[MOUTH_INNER, 2] += 0.08
    pts[BROW_L + BROW_R, 2] += 0.05
    return pts


def expression_fields() -> dict[str, np.ndarray]:
    """Per-class apex displacement fields (49, 2) in face units.

    Happiness and surprise move the face a lot; sadness, anger and fear
    are deliberately subtle so static per-frame separation stays hard.
    """
    fields = {}

    f = np.zeros((LANDMARK_COUNT, 2))
    f[31] = (-0.07, -0.06); f[37] = (0.07, -0.06)          # corners out/up
    f[32] = (-0.04, -0.03); f[36] = (0.04, -0.03)
    f[42] = (-0.04, -0.02); f[38] = (0.04, -0.02)
    f[43] = (-0.05, -0.04); f[46] = (0.05, -0.04)
    f[24] = (0.0, -0.02); f[30] = (0.0, -0.02)             # lower lids raise
    fields["happiness"] = f

    f = np.zeros((LANDMARK_COUNT, 2))
    f[BROW_L + BROW_R] += (0.0, -0.10)
    f[[20, 21, 26, 27]] += (0.0, -0.035)
    f[[24, 30]] += (0.0, 0.035)
    f[[38, 39, 40, 41, 42]] += (0.0, 0.16)                 # jaw drops
    f[[47, 48]] += (0.0, 0.12)
    f[[33, 34, 35]] += (0.0, -0.02)
    f[31] += (0.02, 0.04); f[37] += (-0.02, 0.04)
    fields["surprise"] = f

    f = np.zeros((LANDMARK_COUNT, 2))
    f[31] = (-0.01, 0.05); f[37] = (0.01, 0.05)            # corners droop
    f[4] = (0.005, -0.05); f[5] = (-0.005, -0.05)          # inner brows up
    f[3] = (0.0, -0.03); f[6] = (0.0, -0.03)
    f[40] = (0.0, -0.02)
    fields["sadness"] = f

    f = np.zeros((LANDMARK_COUNT, 2))
    f[4] = (0.02, 0.05); f[5] = (-0.02, 0.05)              # brows knit
    f[3] = (0.01, 0.03); f[6] = (-0.01, 0.03)
    f[[20, 21, 26, 27]] += (0.0, 0.015)                    # eyes narrow
    f[[24, 30]] += (0.0, -0.015)
    f[34] = (0.0, 0.02); f[40] = (0.0, -0.02)              # lips press
    f[31] += (0.02, 0.0); f[37] += (-0.02, 0.0)
    fields["anger"] = f

    f = np.zeros((LANDMARK_COUNT, 2))
    f[BROW_L + BROW_R] += (0.0, -0.05)
    f[4] += (0.015, -0.015); f[5] += (-0.015, -0.015)
    f[[20, 21, 26, 27]] += (0.0, -0.03)
    f[[24, 30]] += (0.0, 0.03)
    f[31] += (-0.03, 0.01); f[37] += (0.03, 0.01)          # mouth stretches
    f[[38, 39, 40, 41, 42]] += (0.0, 0.05)
    f[[47, 48]] += (0.0, 0.03)
    fields["fear"] = f

    f = np.zeros((LANDMARK_COUNT, 2))
    f[NOSE_BASE] += (0.0, -0.04)                           # nose wrinkles
    f[[12, 13]] += (0.0, -0.02)
    f[[33, 34, 35]] += (0.0, -0.05)                        # upper lip raises
    f[[44, 45]] += (0.0, -0.04)
    f[BROW_L + BROW_R] += (0.0, 0.02)
    f[[4, 5]] += (0.0, 0.03)
    f[31] += (0.0, 0.02); f[37] += (0.0, 0.02)
    fields["disgust"] = f
    return fields


def class_deformation_magnitude(label: str) -> float:
    """Mean per-landmark apex displacement of one class, face units."""
    f = expression_fields()[label]
    return float(np.linalg.norm(f, axis=1).mean())


@dataclass
class GeneratorConfig:
    n_subjects: int = 40
    n_sequences_per_subject: int = 6
    frames_per_sequence: int = 60
    labels: tuple = DEFAULT_LABELS
    morphology_strength: float = 1.0
    amplitude_range: tuple = (0.5, 1.0)
    landmark_noise: float = 0.01
    offcenter_noise_gain: float = 0.0   # extra tracker noise away from frontal
    camera_distance: float = 2.5        # face units; perspective strength
    pose_mode: str = "frontal"          # frontal | binned
    pose_noise: float = 0.0
    render_images: bool = False
    image_size: int = 250
    iod_pixels: float = 60.0
    offset_tail: bool = False
    seed: int = 0
    morphology_seed: int | None = None

    def __post_init__(self):
        if min(self.n_subjects, self.n_sequences_per_subject,
               self.frames_per_sequence) < 1:
            raise ValueError("all counts must be >= 1")
        lo, hi = self.amplitude_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("amplitude range must lie within [0, 1]")
        if self.pose_mode not in ("frontal", "binned"):
            raise ValueError("pose_mode must be 'frontal' or 'binned'")
        if self.labels[0] != "neutral":
            raise ValueError("labels[0] must be the neutral label")

    @property
    def expression_labels(self) -> tuple:
        return tuple(self.labels[1:])

    def pose_table(self) -> PoseBinTable:
        return PoseBinTable() if self.pose_mode == "binned" else single_bin_table()


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def amplitude_profile(n_frames: int, apex: float, rng, offset_tail: bool) -> np.ndarray:
    """Monotone onset-to-apex profile; zero before onset, apex held to the
    end unless an offset tail is requested."""
    t_on = max(3, int(round(rng.uniform(0.10, 0.25) * n_frames)))
    t_apex = max(t_on + 1, int(round(rng.uniform(0.60, 0.85) * n_frames)))
    t = np.arange(n_frames, dtype=np.float64)
    a = apex * _smoothstep((t - t_on) / (t_apex - t_on))
    if offset_tail:
        t_off = max(t_apex + 1, int(round(0.92 * n_frames)))
        a = a * (1.0 - 0.8 * _smoothstep((t - t_off) / max(1.0, n_frames - 1 - t_off)))
    return a


def subject_morphology(cfg: GeneratorConfig, subject_index: int) -> tuple[np.ndarray, np.ndarray]:
    """(affine 2x2, per-landmark xy offsets) for one subject."""
    mseed = cfg.seed if cfg.morphology_seed is None else cfg.morphology_seed
    rng = np.random.default_rng(np.random.SeedSequence((mseed, 1, subject_index)))
    s = cfg.morphology_strength
    affine = np.eye(2) + rng.normal(0.0, 0.06 * s, size=(2, 2))
    offsets = rng.normal(0.0, 0.025 * s, size=(LANDMARK_COUNT, 2))
    return affine, offsets


_EYE_PLANE_DEPTH = None


def _eye_plane_depth() -> float:
    global _EYE_PLANE_DEPTH
    if _EYE_PLANE_DEPTH is None:
        _EYE_PLANE_DEPTH = float(face_template()[EYE_INDICES[0], 2])
    return _EYE_PLANE_DEPTH


def _rotate_project(pts3: np.ndarray, yaw_deg: float, pitch_deg: float,
                    camera_distance: float = math.inf) -> np.ndarray:
    """Rotate 3D points by yaw then pitch and project toward the camera.

    A finite camera distance adds perspective, normalized so the frontal
    eye plane projects at unit scale: points rotated toward the camera
    magnify relative to the rest, which is what makes off-center views
    geometrically distinct from the frontal one.
    """
    g = math.radians(yaw_deg)
    b = math.radians(pitch_deg)
    x, y, z = pts3[:, 0], pts3[:, 1], pts3[:, 2]
    x1 = x * math.cos(g) + z * math.sin(g)
    z1 = -x * math.sin(g) + z * math.cos(g)
    y1 = y * math.cos(b) - z1 * math.sin(b)
    z2 = y * math.sin(b) + z1 * math.cos(b)
    if math.isfinite(camera_distance):
        scale = (camera_distance - _eye_plane_depth()) / (camera_distance - z2)
        x1 = x1 * scale
        y1 = y1 * scale
    return np.stack([x1, y1], axis=1)


def render_blob_image(landmarks_px: np.ndarray, size: int, sigma: float = 2.5,
                      amplitude: float = 160.0) -> np.ndarray:
    """Sum of Gaussian blobs at the landmarks, quantized to uint8."""
    img = np.zeros((size, size), dtype=np.float64)
    half = int(math.ceil(4 * sigma))
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for px, py in landmarks_px:
        cx = int(round(px))
        cy = int(round(py))
        x0, x1 = max(0, cx - half), min(size, cx + half + 1)
        y0, y1 = max(0, cy - half), min(size, cy + half + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1, dtype=np.float64) - px
        ys = np.arange(y0, y1, dtype=np.float64) - py
        img[y0:y1, x0:x1] += amplitude * np.exp(
            -(ys[:, None] ** 2 + xs[None, :] ** 2) * inv2s2)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def template_frame(cfg: GeneratorConfig = None) -> LandmarkFrame:
    """The mean face at pixel scale: frontal, no morphology, no noise."""
    cfg = cfg or GeneratorConfig()
    pts = _rotate_project(face_template(), 0.0, 0.0, cfg.camera_distance)
    px = cfg.image_size / 2.0 + cfg.iod_pixels * pts
    return LandmarkFrame("template", "template", 0, px, eye_indices=EYE_INDICES)


def _sequence_bins(cfg: GeneratorConfig):
    if cfg.pose_mode == "binned":
        return list(range(cfg.pose_table().n_bins))
    return [None]


def generate_corpus(cfg: GeneratorConfig, out_dir=None) -> Dataset:
    """Generate a corpus; when ``out_dir`` is given, write the manifest
    (and PGM images when rendering) there as well.

    In binned mode every base sequence is emitted once per pose bin with
    identical dynamics, so all (label, bin) cells receive data.  Without
    ``out_dir``, rendered images are converted directly to in-memory
    integral channels on each frame.
    """
    template = face_template()
    fields = expression_fields()
    table = cfg.pose_table()
    bins = _sequence_bins(cfg)
    frames = []
    rows = []
    images_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if cfg.render_images:
            images_dir = os.path.join(out_dir, "images")
            os.makedirs(images_dir, exist_ok=True)

    from .channels import build_channels

    for i in range(cfg.n_subjects):
        subject_id = f"subj{i:03d}"
        affine, offsets = subject_morphology(cfg, i)
        base = template.copy()
        base[:, :2] = base[:, :2] @ affine.T + offsets
        for j in range(cfg.n_sequences_per_subject):
            label = cfg.expression_labels[j % len(cfg.expression_labels)]
            dyn = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, i, j)))
            apex = dyn.uniform(cfg.amplitude_range[0], cfg.amplitude_range[1])
            amp = amplitude_profile(cfg.frames_per_sequence, apex, dyn, cfg.offset_tail)
            for b in bins:
                view = np.random.default_rng(
                    np.random.SeedSequence((cfg.seed, 3, i, j, 0 if b is None else b + 1)))
                if b is None:
                    seq_id = f"seq{j:02d}"
                    yaw = pitch = 0.0
                else:
                    seq_id = f"seq{j:02d}_bin{b:02d}"
                    yaw, pitch = assign_sequence_pose(table, b, view)
                # landmark tracking degrades away from the frontal view
                sigma = cfg.landmark_noise * (
                    1.0 + cfg.offcenter_noise_gain * (abs(yaw) + abs(pitch)) / 60.0)
                noise = view.normal(0.0, sigma,
                                    size=(cfg.frames_per_sequence, LANDMARK_COUNT, 2))
                if cfg.pose_noise > 0:
                    pn = view.normal(0.0, cfg.pose_noise, size=(cfg.frames_per_sequence, 2))
                else:
                    pn = np.zeros((cfg.frames_per_sequence, 2))
                field = fields[label]
                for t in range(cfg.frames_per_sequence):
                    pts3 = base.copy()
                    pts3[:, :2] += amp[t] * field
                    pts2 = _rotate_project(pts3, yaw, pitch,
                                           cfg.camera_distance) + noise[t]
                    px = cfg.image_size / 2.0 + cfg.iod_pixels * pts2
                    frame_label = cfg.labels[0] if amp[t] == 0.0 else label
                    pose = (yaw + pn[t, 0], pitch + pn[t, 1])
                    image_rel = None
                    frame = LandmarkFrame(subject_id, seq_id, t, px,
                                          label=frame_label, pose=pose,
                                          eye_indices=EYE_INDICES)
                    if cfg.render_images:
                        img = render_blob_image(px, cfg.image_size)
                        if images_dir is not None:
                            image_rel = f"images/{subject_id}_{seq_id}_{t:04d}.pgm"
                            write_pgm(os.path.join(out_dir, image_rel), img)
                            frame.image_path = os.path.join(out_dir, image_rel)
                        else:
                            frame.channels = build_channels(img)
                    frames.append(frame)
                    rows.append((subject_id, seq_id, t, frame_label,
                                 pose[0], pose[1], image_rel, px))

    ds = Dataset(frames, list(cfg.labels), LANDMARK_COUNT, EYE_INDICES)
    if out_dir is not None:
        _write_manifest(out_dir, cfg, rows)
    return ds


def _write_manifest(out_dir, cfg: GeneratorConfig, rows) -> None:
    header = {
        "version": 1,
        "landmark_count": LANDMARK_COUNT,
        "eye_indices": list(EYE_INDICES),
        "labels": list(cfg.labels),
        "generator": asdict(cfg),
    }
    with open(os.path.join(out_dir, HEADER_NAME), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cols = ["subject_id", "sequence_id", "frame_index", "label", "yaw", "pitch", "image"]
    for i in range(LANDMARK_COUNT):
        cols += [f"x{i}", f"y{i}"]
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        fh.write(",".join(cols) + "\n")
        for subject_id, seq_id, t, label, yaw, pitch, image_rel, px in rows:
            vals = [subject_id, seq_id, str(t), label or "",
                    repr(float(yaw)), repr(float(pitch)), image_rel or ""]
            for x, y in px:
                vals.append(repr(float(x)))
                vals.append(repr(float(y)))
            fh.write(",".join(vals) + "\n")


def save_manifest(dataset: Dataset, out_dir, generator_config: dict = None) -> None:
    """Write an existing dataset in manifest format (no image copying)."""
    os.makedirs(out_dir, exist_ok=True)
    header = {
        "version": 1,
        "landmark_count": dataset.landmark_count,
        "eye_indices": list(dataset.eye_indices),
        "labels": list(dataset.labels),
    }
    if generator_config:
        header["generator"] = generator_config
    with open(os.path.join(out_dir, HEADER_NAME), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cols = ["subject_id", "sequence_id", "frame_index", "label", "yaw", "pitch", "image"]
    for i in range(dataset.landmark_count):
        cols += [f"x{i}", f"y{i}"]
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        fh.write(",".join(cols) + "\n")
        for f in dataset.frames:
            pose = f.pose or (None, None)
            vals = [f.subject_id, f.sequence_id, str(f.frame_index), f.label or "",
                    "" if pose[0] is None else repr(float(pose[0])),
                    "" if pose[1] is None else repr(float(pose[1])),
                    f.image_path or ""]
            for x, y in f.landmarks:
                vals.append(repr(float(x)))
                vals.append(repr(float(y)))
            fh.write(",".join(vals) + "\n")


def load_manifest(path) -> Dataset:
    """Read a manifest directory (or the CSV inside one), validating
    strictly; parse errors name the offending line number."""
    if os.path.isdir(path):
        base = path
        csv_path = os.path.join(path, MANIFEST_NAME)
    else:
        csv_path = path
        base = os.path.dirname(path) or "."
    header_path = os.path.join(base, HEADER_NAME)
    if not os.path.exists(header_path):
        raise DataError(f"missing header sidecar {header_path}")
    with open(header_path) as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"{header_path}: invalid JSON ({e})") from None
    try:
        L = int(header["landmark_count"])
        eye = tuple(int(v) for v in header["eye_indices"])
        labels = [str(v) for v in header["labels"]]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{header_path}: malformed header ({e})") from None
    if len(eye) != 2 or eye[0] == eye[1] or not all(0 <= e < L for e in eye):
        raise DataError(f"{header_path}: invalid eye indices {eye}")

    expected_cols = 7 + 2 * L
    frames = []
    seen_sequences: set[tuple[str, str]] = set()
    prev_key = None
    prev_frame_index = -1
    with open(csv_path) as fh:
        head = fh.readline()
        if not head:
            raise DataError(f"{csv_path}: empty manifest")
        if head.count(",") + 1 != expected_cols:
            raise DataError(f"{csv_path}: line 1: expected {expected_cols} columns")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != expected_cols:
                raise DataError(
                    f"{csv_path}: line {lineno}: expected {expected_cols} "
                    f"columns, found {len(parts)}")
            subject_id, seq_id, fi_s, label, yaw_s, pitch_s, image = parts[:7]
            try:
                frame_index = int(fi_s)
                coords = np.array([float(v) for v in parts[7:]],
                                  dtype=np.float64).reshape(L, 2)
            except ValueError:
                raise DataError(f"{csv_path}: line {lineno}: malformed numeric field") from None
            if label and label not in labels:
                raise DataError(f"{csv_path}: line {lineno}: unknown label {label!r}")
            if (yaw_s == "") != (pitch_s == ""):
                raise DataError(f"{csv_path}: line {lineno}: partial pose")
            pose = None if yaw_s == "" else (float(yaw_s), float(pitch_s))
            key = (subject_id, seq_id)
            if key != prev_key:
                if key in seen_sequences:
                    raise DataError(
                        f"{csv_path}: line {lineno}: sequence {seq_id!r} of "
                        f"{subject_id!r} is not contiguous")
                seen_sequences.add(key)
                prev_key = key
                prev_frame_index = -1
            if frame_index <= prev_frame_index:
                raise DataError(
                    f"{csv_path}: line {lineno}: frame_index must increase "
                    f"strictly within a sequence")
            prev_frame_index = frame_index
            image_path = os.path.join(base, image) if image else None
            try:
                frames.append(LandmarkFrame(subject_id, seq_id, frame_index, coords,
                                            label=label or None, pose=pose,
                                            image_path=image_path, eye_indices=eye))
            except DataError as e:
                raise DataError(f"{csv_path}: line {lineno}: {e}") from None
    try:
        return Dataset(frames, labels, L, eye)
    except DataError as e:
        raise DataError(f"{csv_path}: {e}") from None


def attach_channels(dataset: Dataset, rescale: bool = True) -> None:
    """Build integral channels for every frame that has an image on disk."""
    from .channels import build_channels

    for f in dataset.frames:
        if f.channels is None and f.image_path is not None:
            f.channels = build_channels(read_pgm(f.image_path), rescale=rescale)


def select_training_frames(dataset: Dataset, policy: str = "first_last",
                           k: int = 3) -> Dataset:
    """Frame selection for training.

    ``first_last``: the last min(k, n) frames of each sequence keep their
    label (apex), and the first min(k, remaining) frames are relabeled as
    neutral; short sequences truncate, never duplicate.  ``all_labeled``
    keeps every labeled frame unchanged.
    """
    if policy == "all_labeled":
        keep = [i for i, f in enumerate(dataset.frames) if f.label is not None]
        return dataset.subset(keep)
    if policy != "first_last":
        raise ValueError(f"unknown selection policy {policy!r}")
    neutral = dataset.labels[0]
    frames = []
    for _, idxs in dataset.sequences():
        n = len(idxs)
        n_apex = min(k, n)
        n_neutral = min(k, n - n_apex)
        for i in idxs[:n_neutral]:
            frames.append(dataset.frames[i].with_label(neutral))
        for i in idxs[n - n_apex:]:
            frames.append(dataset.frames[i])
    return Dataset(frames, dataset.labels, dataset.landmark_count, dataset.eye_indices)
