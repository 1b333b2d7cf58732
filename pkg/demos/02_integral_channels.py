"""Integral feature channels and the appearance templates.

Builds the 9 orientation channels for a rendered blob face, checks the
O(1) rectangle sums against brute force, and evaluates the normalized
window template at a landmark-anchored triangle.
"""

from pcrf.channels import build_channels, phi3, phi6
from pcrf.synth import GeneratorConfig, render_blob_image, template_frame

cfg = GeneratorConfig(seed=0)
frame = template_frame(cfg)
image = render_blob_image(frame.landmarks, cfg.image_size)
print(f"rendered {image.shape} image, intensity range {image.min()}..{image.max()}")

channels = build_channels(image)
frame.channels = channels
maps = channels.pixel_maps()
print(f"gradient magnitude mass: {maps[0].sum() / 2**24:.1f}")
print("orientation mass partition check:",
      abs(maps[1:].sum() - maps[0].sum()))

# a rectangle sum is 4 table lookups; compare against a double loop
x0, y0, x1, y1 = 90, 100, 170, 160
fast = channels.rect_sum_raw(0, x0, y0, x1, y1)
slow = int(maps[0][y0:y1, x0:x1].sum())
print(f"rect sum fast/naive: {fast} == {slow}: {fast == slow}")

# normalized orientation histogram in a window anchored between the eyes
tri = (22, 28, 16)  # eye centers and nose tip area
for ch in range(1, 9):
    v = phi3(frame, tri, ch, 0.5, 1 / 3, 1 / 3, 1 / 3)
    print(f"  phi3 channel {ch}: {v:.3f}")

# the pairwise derivative reacts to appearance motion between two frames
moved = template_frame(cfg)
moved.landmarks = frame.landmarks + (6.0, 0.0)
moved.channels = build_channels(render_blob_image(moved.landmarks, cfg.image_size))
d = phi6(frame, moved, tri, 1, 0.5, 1 / 3, 1 / 3, 1 / 3)
print(f"phi6 after shifting the face 6 px: {d:+.4f}")
