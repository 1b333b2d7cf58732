"""Pairwise conditional random forests over landmark/image sequences.

The package trains plain random forests on single frames and pairwise
conditional forests on (previous, current) frame pairs, optionally keyed
by head-pose bin, and classifies sequences by temporal model averaging.
A synthetic corpus generator makes the pipeline verifiable at desk scale.
"""

from .channels import IntegralChannels, build_channels, phi3, phi6
from .forest import (Forest, HyperParams, best_split, build_balanced_bootstrap,
                     gini, grow_tree, oob_accuracy, pairwise_profile,
                     static_profile, train_forest)
from .frames import DataError, Dataset, LandmarkFrame
from .geometry import inter_ocular_distance, phi1, phi2, phi4, phi5
from .inference import (WindowConfig, allocate_trees, classify_sequence,
                        predict_conditional, predict_full, predict_multiview,
                        predict_static)
from .pose import PoseBinTable, PoseSampler, assign_sequence_pose, build_pose_sampler
from .synth import GeneratorConfig, generate_corpus, load_manifest, select_training_frames
from .training import (ConditionalBank, Model, build_pair_bootstrap, train_model,
                       train_pcrf)

__all__ = [
    "IntegralChannels", "build_channels", "phi3", "phi6",
    "Forest", "HyperParams", "best_split", "build_balanced_bootstrap",
    "gini", "grow_tree", "oob_accuracy", "pairwise_profile",
    "static_profile", "train_forest",
    "DataError", "Dataset", "LandmarkFrame",
    "inter_ocular_distance", "phi1", "phi2", "phi4", "phi5",
    "WindowConfig", "allocate_trees", "classify_sequence",
    "predict_conditional", "predict_full", "predict_multiview", "predict_static",
    "PoseBinTable", "PoseSampler", "assign_sequence_pose", "build_pose_sampler",
    "GeneratorConfig", "generate_corpus", "load_manifest", "select_training_frames",
    "ConditionalBank", "Model", "build_pair_bootstrap", "train_model", "train_pcrf",
]

__version__ = "0.1.0"
