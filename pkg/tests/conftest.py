import numpy as np
import pytest

from pcrf.frames import Dataset, LandmarkFrame

LABELS = ["neutral", "happiness", "anger", "sadness"]


def random_labeled_dataset(seed=0, n_subjects=6, frames_per_subject=20,
                           n_labels=3, L=49):
    """Random frames with random labels: no structure, for search oracles."""
    rng = np.random.default_rng(seed)
    frames = []
    labels = LABELS[:n_labels]
    for s in range(n_subjects):
        for t in range(frames_per_subject):
            pts = rng.uniform(-40, 40, size=(L, 2))
            frames.append(LandmarkFrame(f"s{s:02d}", "seq00", t, pts,
                                        label=labels[int(rng.integers(0, n_labels))],
                                        eye_indices=(22, 28)))
    return Dataset(frames, labels, L, (22, 28))


@pytest.fixture(scope="session")
def small_corpus():
    from pcrf.synth import GeneratorConfig, generate_corpus

    cfg = GeneratorConfig(n_subjects=8, n_sequences_per_subject=6,
                          frames_per_sequence=24, seed=11)
    return generate_corpus(cfg)


@pytest.fixture(scope="session")
def tiny_model(small_corpus):
    """A small trained pcrf model shared across inference tests."""
    from pcrf.forest import pairwise_profile, static_profile
    from pcrf.synth import select_training_frames
    from pcrf.training import train_model

    sel = select_training_frames(small_corpus, "first_last", 3)
    hp_s = static_profile(n_trees=12, k=(8, 8, 0, 0, 0, 0), thresholds_per_feature=8)
    hp_p = pairwise_profile(n_trees=12, k=(4, 4, 0, 4, 4, 0), thresholds_per_feature=8)
    return train_model(sel, "pcrf", hp_s, hp_p, seed=5)
