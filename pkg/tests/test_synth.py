import json
import os

import numpy as np
import pytest

from pcrf.frames import DataError
from pcrf.geometry import inter_ocular_distance
from pcrf.pose import PoseBinTable
from pcrf.synth import (GeneratorConfig, attach_channels, class_deformation_magnitude,
                        expression_fields, face_template, generate_corpus,
                        load_manifest, select_training_frames, subject_morphology,
                        template_frame)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            GeneratorConfig(n_subjects=0)
        with pytest.raises(ValueError):
            GeneratorConfig(amplitude_range=(0.5, 1.5))
        with pytest.raises(ValueError):
            GeneratorConfig(pose_mode="sideways")

    def test_default_corpus_shape(self):
        cfg = GeneratorConfig()
        assert (cfg.n_subjects, cfg.n_sequences_per_subject,
                cfg.frames_per_sequence) == (40, 6, 60)
        assert len(cfg.labels) == 7 and cfg.labels[0] == "neutral"


class TestTemplate:
    def test_eye_centers_one_iod_apart(self):
        pts = face_template()
        d = np.linalg.norm(pts[22, :2] - pts[28, :2])
        assert d == pytest.approx(1.0)

    def test_template_frame_iod_matches_config(self):
        cfg = GeneratorConfig(iod_pixels=55.0)
        assert inter_ocular_distance(template_frame(cfg)) == pytest.approx(55.0)

    def test_fields_cover_expressions(self):
        fields = expression_fields()
        assert set(fields) == set(GeneratorConfig().labels[1:])
        # large-deformation classes really are larger than the subtle ones
        assert class_deformation_magnitude("surprise") > class_deformation_magnitude("sadness")
        assert class_deformation_magnitude("happiness") > class_deformation_magnitude("anger")


class TestGeneration:
    def test_amplitude_zero_keeps_neutral_shape(self):
        cfg = GeneratorConfig(n_subjects=1, n_sequences_per_subject=1,
                              frames_per_sequence=8, amplitude_range=(0.0, 0.0),
                              landmark_noise=0.0, seed=3)
        ds = generate_corpus(cfg)
        base = ds.frames[0].landmarks
        for f in ds.frames:
            assert np.allclose(f.landmarks, base, atol=1e-12)
            assert f.label == "neutral"

    def test_same_seed_different_morphology_seed(self):
        a = generate_corpus(GeneratorConfig(n_subjects=2, n_sequences_per_subject=2,
                                            frames_per_sequence=6, seed=5,
                                            landmark_noise=0.0))
        b = generate_corpus(GeneratorConfig(n_subjects=2, n_sequences_per_subject=2,
                                            frames_per_sequence=6, seed=5,
                                            landmark_noise=0.0, morphology_seed=99))
        # identical dynamics (labels, poses), different subject shapes
        assert [f.label for f in a.frames] == [f.label for f in b.frames]
        assert not np.allclose(a.frames[0].landmarks, b.frames[0].landmarks)
        # within each corpus, per-frame deformation offsets match exactly
        da = a.frames[5].landmarks - a.frames[0].landmarks
        db = b.frames[5].landmarks - b.frames[0].landmarks
        assert np.allclose(da, db, atol=1e-9)

    def test_morphology_confound_exceeds_apex_deformation(self):
        cfg = GeneratorConfig()
        template = face_template()[:, :2]
        disp = []
        for i in range(cfg.n_subjects):
            affine, offsets = subject_morphology(cfg, i)
            morphed = template @ affine.T + offsets
            disp.append(np.linalg.norm(morphed - template, axis=1).mean())
        mean_disp = float(np.mean(disp))
        worst = max(class_deformation_magnitude(l) for l in cfg.labels[1:])
        assert mean_disp > worst

    def test_binned_mode_poses_in_jitter_box(self):
        cfg = GeneratorConfig(n_subjects=2, n_sequences_per_subject=2,
                              frames_per_sequence=4, pose_mode="binned", seed=7)
        ds = generate_corpus(cfg)
        table = PoseBinTable()
        assert len(ds.sequences()) == 2 * 2 * 15
        for f in ds.frames:
            b = int(f.sequence_id.split("_bin")[1])
            yc, pc = table.center(b)
            assert abs(f.pose[0] - yc) <= table.jitter_yaw + 1e-9
            assert abs(f.pose[1] - pc) <= table.jitter_pitch + 1e-9

    def test_monotone_onset(self):
        cfg = GeneratorConfig(n_subjects=1, n_sequences_per_subject=1,
                              frames_per_sequence=30, landmark_noise=0.0, seed=9)
        ds = generate_corpus(cfg)
        base = ds.frames[0].landmarks
        drift = [float(np.linalg.norm(f.landmarks - base)) for f in ds.frames]
        assert drift[0] == 0.0
        assert max(drift) == pytest.approx(drift[-1], rel=1e-6)
        assert all(b - a > -1e-9 for a, b in zip(drift, drift[1:]))

    def test_first_frames_neutral_last_frames_labeled(self):
        cfg = GeneratorConfig(n_subjects=1, n_sequences_per_subject=6,
                              frames_per_sequence=20, seed=13)
        ds = generate_corpus(cfg)
        for _, idxs in ds.sequences():
            labels = [ds.frames[i].label for i in idxs]
            assert all(l == "neutral" for l in labels[:3])
            assert labels[-1] != "neutral"


# recorded in docs/CALIBRATION.md from the acceptance runs of the default
# frontal corpus: the conditional model's 5-seed mean sequence accuracy
PCRF_SEQUENCE_ACCURACY_DEFAULT = 0.85


def test_default_config_confounds_per_frame_probe():
    """Even the binary neutral-vs-apex task is hard per frame: a linear
    probe on normalized landmarks stays below the sequence accuracy the
    conditional model reaches on the same generator settings."""
    corpus = generate_corpus(GeneratorConfig(seed=0))
    subjects = sorted({f.subject_id for f in corpus.frames})
    tr = select_training_frames(corpus.split_by_subjects(subjects[:27]), "first_last", 3)
    te = select_training_frames(corpus.split_by_subjects(subjects[27:]), "first_last", 3)

    def features(ds):
        centroid = ds.lm.mean(axis=1, keepdims=True)
        X = ((ds.lm - centroid) / ds.iod[:, None, None]).reshape(len(ds), -1)
        return np.hstack([X, np.ones((len(ds), 1))]), (ds.y != 0).astype(float)

    Xtr, ytr = features(tr)
    Xte, yte = features(te)
    w = np.linalg.solve(Xtr.T @ Xtr + 1e-3 * np.eye(Xtr.shape[1]), Xtr.T @ ytr)
    acc = float((((Xte @ w) > 0.5) == (yte > 0.5)).mean())
    assert 0.5 < acc < PCRF_SEQUENCE_ACCURACY_DEFAULT


class TestManifestRoundtrip:
    def test_roundtrip_structural_identity(self, tmp_path):
        cfg = GeneratorConfig(n_subjects=2, n_sequences_per_subject=2,
                              frames_per_sequence=5, seed=21)
        out = tmp_path / "corpus"
        ds = generate_corpus(cfg, out_dir=str(out))
        back = load_manifest(str(out))
        assert len(back) == len(ds)
        assert back.labels == list(cfg.labels)
        for f1, f2 in zip(ds.frames, back.frames):
            assert (f1.subject_id, f1.sequence_id, f1.frame_index) == \
                (f2.subject_id, f2.sequence_id, f2.frame_index)
            assert f1.label == f2.label
            assert np.array_equal(f1.landmarks, f2.landmarks)
            assert f1.pose == pytest.approx(f2.pose)

    def test_byte_identical_across_runs(self, tmp_path):
        cfg = GeneratorConfig(n_subjects=2, n_sequences_per_subject=2,
                              frames_per_sequence=4, seed=22, render_images=True)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        generate_corpus(cfg, out_dir=str(out1))
        generate_corpus(cfg, out_dir=str(out2))
        assert (out1 / "manifest.csv").read_bytes() == (out2 / "manifest.csv").read_bytes()
        assert (out1 / "header.json").read_bytes() == (out2 / "header.json").read_bytes()
        imgs1 = sorted(os.listdir(out1 / "images"))
        assert imgs1 == sorted(os.listdir(out2 / "images"))
        for name in imgs1[:5]:
            assert (out1 / "images" / name).read_bytes() == \
                (out2 / "images" / name).read_bytes()

    def test_images_loadable_and_channels_attach(self, tmp_path):
        cfg = GeneratorConfig(n_subjects=1, n_sequences_per_subject=1,
                              frames_per_sequence=3, seed=23, render_images=True)
        out = tmp_path / "c"
        generate_corpus(cfg, out_dir=str(out))
        ds = load_manifest(str(out))
        assert ds.has_images()
        attach_channels(ds)
        assert all(f.channels is not None for f in ds.frames)


class TestManifestValidation:
    def _write(self, tmp_path, mutate):
        cfg = GeneratorConfig(n_subjects=1, n_sequences_per_subject=2,
                              frames_per_sequence=3, seed=31)
        out = tmp_path / "m"
        generate_corpus(cfg, out_dir=str(out))
        csv = out / "manifest.csv"
        lines = csv.read_text().splitlines()
        mutate(lines)
        csv.write_text("\n".join(lines) + "\n")
        return out

    def test_short_row_names_line(self, tmp_path):
        def mutate(lines):
            lines[2] = ",".join(lines[2].split(",")[:-2])
        out = self._write(tmp_path, mutate)
        with pytest.raises(DataError, match="line 3"):
            load_manifest(str(out))

    def test_bad_float_names_line(self, tmp_path):
        def mutate(lines):
            parts = lines[4].split(",")
            parts[9] = "notanumber"
            lines[4] = ",".join(parts)
        out = self._write(tmp_path, mutate)
        with pytest.raises(DataError, match="line 5"):
            load_manifest(str(out))

    def test_non_monotone_frame_index(self, tmp_path):
        def mutate(lines):
            parts = lines[3].split(",")
            parts[2] = "0"
            lines[3] = ",".join(parts)
        out = self._write(tmp_path, mutate)
        with pytest.raises(DataError, match="frame_index"):
            load_manifest(str(out))

    def test_non_contiguous_sequence(self, tmp_path):
        def mutate(lines):
            lines.append(lines[1])
        out = self._write(tmp_path, mutate)
        with pytest.raises(DataError, match="contiguous"):
            load_manifest(str(out))

    def test_absent_labels_load_as_none(self, tmp_path):
        def mutate(lines):
            parts = lines[1].split(",")
            parts[3] = ""
            lines[1] = ",".join(parts)
        out = self._write(tmp_path, mutate)
        ds = load_manifest(str(out))
        assert ds.frames[0].label is None

    def test_missing_header_sidecar(self, tmp_path):
        out = self._write(tmp_path, lambda lines: None)
        os.remove(out / "header.json")
        with pytest.raises(DataError, match="header"):
            load_manifest(str(out))


class TestSelectTrainingFrames:
    def _ds(self, n_frames, tmp_path=None):
        cfg = GeneratorConfig(n_subjects=1, n_sequences_per_subject=1,
                              frames_per_sequence=n_frames, seed=41)
        return generate_corpus(cfg)

    def test_first_last_counts(self):
        ds = self._ds(20)
        sel = select_training_frames(ds, "first_last", 3)
        assert len(sel) == 6
        labels = [f.label for f in sel.frames]
        assert labels[:3] == ["neutral"] * 3
        assert all(l == "happiness" for l in labels[3:])

    def test_short_sequence_truncates(self):
        ds = self._ds(4)
        sel = select_training_frames(ds, "first_last", 3)
        # 3 apex-slot frames plus 1 neutral-slot frame, never duplicated
        assert len(sel) == 4
        assert len({(f.sequence_id, f.frame_index) for f in sel.frames}) == 4

    def test_short_sequence_slot_assignment(self):
        ds = self._ds(20)
        sub = ds.subset([i for i, f in enumerate(ds.frames) if f.frame_index < 4])
        sel = select_training_frames(sub, "first_last", 3)
        assert len(sel) == 4
        labels = [f.label for f in sel.frames]
        # one neutral slot, three apex slots keeping their own labels
        assert labels[0] == "neutral"
        assert len(labels) == 4

    def test_all_labeled_identity(self):
        ds = self._ds(12)
        sel = select_training_frames(ds, "all_labeled")
        assert len(sel) == 12
