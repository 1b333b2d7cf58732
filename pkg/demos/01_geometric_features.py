"""Geometric feature templates on synthetic faces.

Walks through the two static geometric templates (normalized distances
and signed-angle cosine/sine) and their pairwise derivatives, showing
scale/translation invariance and what an expression onset does to them.
"""

from pcrf.frames import LandmarkFrame
from pcrf.geometry import inter_ocular_distance, phi1, phi2, phi4, phi5
from pcrf.synth import GeneratorConfig, generate_corpus, template_frame

cfg = GeneratorConfig(n_subjects=1, n_sequences_per_subject=1,
                      frames_per_sequence=30, landmark_noise=0.0, seed=0)

# the mean face: eye centers are landmarks 22 and 28
mean = template_frame(cfg)
print(f"inter-ocular distance of the template: {inter_ocular_distance(mean):.1f} px")

# mouth width (outer corners 31 and 37), normalized by iod
print(f"mouth width phi1(31,37)        : {phi1(mean, 31, 37):.4f}")
print(f"mouth corner angle phi2 cos    : {phi2(mean, 31, 34, 37, True):.4f}")
print(f"mouth corner angle phi2 sin    : {phi2(mean, 31, 34, 37, False):.4f}")

# invariance: scaling or translating the face changes nothing
scaled = LandmarkFrame("demo", "s", 0, mean.landmarks * 3.7, eye_indices=(22, 28))
moved = LandmarkFrame("demo", "s", 0, mean.landmarks + (120.0, -45.0),
                      eye_indices=(22, 28))
print(f"after 3.7x scaling             : {phi1(scaled, 31, 37):.4f}")
print(f"after translation              : {phi1(moved, 31, 37):.4f}")

# derivatives over a happiness onset: the mouth widens, so phi4 > 0
corpus = generate_corpus(cfg)
seq = [corpus.frames[i] for _, idxs in corpus.sequences() for i in idxs]
first, apex = seq[0], seq[-1]
print(f"\nsequence label at apex: {apex.label}")
print(f"phi1 mouth width first -> apex : {phi1(first, 31, 37):.4f} -> {phi1(apex, 31, 37):.4f}")
print(f"phi4 (pairwise derivative)     : {phi4(first, apex, 31, 37):+.4f}")
print(f"phi5 on the corner angle       : {phi5(first, apex, 31, 34, 37, True):+.4f}")

# identity pairs have exactly zero derivatives
assert phi4(apex, apex, 31, 37) == 0.0
print("\nidentity pair derivative is exactly 0, as required")
