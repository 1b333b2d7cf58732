"""Integral feature channels and the appearance templates built on them.

Nine per-pixel maps are computed from a grayscale image: gradient
magnitude (channel 0) and eight orientation-quantized magnitude maps
(channels 1-8, unsigned orientation over [0, 180) degrees, hard
assignment).  Each map is quantized to fixed point and accumulated into an
int64 summed-area table, so any rectangle sum equals a naive summation of
the quantized map exactly: 250*250 pixels times the maximum magnitude
times the fixed-point scale stays far below 2**63.

Template 3 is a normalized window sum over one orientation channel,
anchored barycentrically on a landmark triangle; template 6 is its
pairwise derivative.
"""

from __future__ import annotations

import numpy as np

from .frames import LandmarkFrame, DataError
from .geometry import inter_ocular_distance

CANONICAL_SIZE = 250
N_CHANNELS = 9
N_ORIENT_BINS = 8
FIXED_POINT_SCALE = float(1 << 24)
EPS_NORM = 1e-6


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h == out_h and w == out_w:
        return img.copy()
    # map output pixel centers into input pixel-center coordinates
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def gradient_maps(image: np.ndarray) -> np.ndarray:
    """The 9 per-pixel feature maps for an image, float valued."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    pad_x = np.pad(img, ((0, 0), (1, 1)), mode="edge")
    pad_y = np.pad(img, ((1, 1), (0, 0)), mode="edge")
    gx = pad_x[:, 2:] - pad_x[:, :-2]
    gy = pad_y[2:, :] - pad_y[:-2, :]
    mag = np.sqrt(gx * gx + gy * gy)
    theta = np.arctan2(gy, gx)  # (-pi, pi]
    theta = np.where(theta < 0, theta + np.pi, theta)  # unsigned, [0, pi)
    theta = np.where(theta >= np.pi, 0.0, theta)
    bins = np.minimum((theta * (N_ORIENT_BINS / np.pi)).astype(np.intp), N_ORIENT_BINS - 1)
    maps = np.zeros((N_CHANNELS, h, w), dtype=np.float64)
    maps[0] = mag
    flat = bins.ravel() * (h * w) + np.arange(h * w)
    np.add.at(maps[1:].reshape(-1), flat, mag.ravel())
    return maps


class IntegralChannels:
    """Summed-area tables over the 9 quantized feature maps.

    ``sat`` has shape (9, H+1, W+1) with sat[c, i, j] holding the integer
    sum of the quantized map over rows < i and cols < j.  ``scale_x`` /
    ``scale_y`` map source-image coordinates (the ones the landmarks live
    in) onto this table's pixel grid.
    """

    __slots__ = ("sat", "height", "width", "scale_x", "scale_y")

    def __init__(self, sat: np.ndarray, scale_x: float = 1.0, scale_y: float = 1.0):
        self.sat = sat
        self.height = sat.shape[1] - 1
        self.width = sat.shape[2] - 1
        self.scale_x = scale_x
        self.scale_y = scale_y

    def pixel_maps(self) -> np.ndarray:
        """Reconstruct the quantized per-pixel maps (exact, int64)."""
        s = self.sat
        return s[:, 1:, 1:] - s[:, :-1, 1:] - s[:, 1:, :-1] + s[:, :-1, :-1]

    def rect_sum_raw(self, ch: int, x0: int, y0: int, x1: int, y1: int) -> int:
        """Exact integer sum of the quantized map over [x0,x1) x [y0,y1)."""
        x0 = min(max(int(x0), 0), self.width)
        x1 = min(max(int(x1), 0), self.width)
        y0 = min(max(int(y0), 0), self.height)
        y1 = min(max(int(y1), 0), self.height)
        if x1 <= x0 or y1 <= y0:
            return 0
        s = self.sat[ch]
        return int(s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0])

    def rect_sum(self, ch: int, x0, y0, x1, y1) -> float:
        """Rectangle sum of channel ``ch`` in magnitude units."""
        return self.rect_sum_raw(ch, x0, y0, x1, y1) / FIXED_POINT_SCALE


def build_channels(image: np.ndarray, rescale: bool = True) -> IntegralChannels:
    """Compute the 9 integral feature channels for a grayscale image.

    The image is bilinearly rescaled to 250x250 unless ``rescale`` is
    False (test hook for exact small-image oracles).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] == 0 or img.shape[1] == 0:
        raise DataError("build_channels requires a nonempty 2-D grayscale image")
    src_h, src_w = img.shape
    if rescale:
        img = bilinear_resize(img, CANONICAL_SIZE, CANONICAL_SIZE)
    maps = gradient_maps(img)
    q = np.rint(maps * FIXED_POINT_SCALE).astype(np.int64)
    h, w = img.shape
    sat = np.zeros((N_CHANNELS, h + 1, w + 1), dtype=np.int64)
    np.cumsum(q, axis=1, out=sat[:, 1:, 1:])
    np.cumsum(sat[:, 1:, 1:], axis=2, out=sat[:, 1:, 1:])
    return IntegralChannels(sat, scale_x=w / src_w, scale_y=h / src_h)


def _require_channels(frame: LandmarkFrame) -> IntegralChannels:
    ch = frame.channels
    if ch is None:
        raise DataError(
            f"frame {frame.subject_id}/{frame.sequence_id}/{frame.frame_index} "
            "has no integral channels"
        )
    return ch


def phi3_many(channels: IntegralChannels, lm: np.ndarray, iod: float,
              t1, t2, t3, ch, s, alpha, beta, gamma) -> np.ndarray:
    """Template 3 vectorized over parameter arrays for one frame.

    Window center is the barycentric point alpha*f_t1 + beta*f_t2 +
    gamma*f_t3; window side is s*iod.  The window is clamped to the image;
    a window clamped away entirely yields 0.
    """
    p1 = np.take(lm, t1, axis=0)
    p2 = np.take(lm, t2, axis=0)
    p3 = np.take(lm, t3, axis=0)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    cx = alpha * p1[..., 0] + beta * p2[..., 0] + gamma * p3[..., 0]
    cy = alpha * p1[..., 1] + beta * p2[..., 1] + gamma * p3[..., 1]
    half = np.asarray(s, dtype=np.float64) * iod * 0.5
    sat = channels.sat
    H, W = channels.height, channels.width
    ix0 = np.clip(np.rint((cx - half) * channels.scale_x), 0, W).astype(np.intp)
    ix1 = np.clip(np.rint((cx + half) * channels.scale_x), 0, W).astype(np.intp)
    iy0 = np.clip(np.rint((cy - half) * channels.scale_y), 0, H).astype(np.intp)
    iy1 = np.clip(np.rint((cy + half) * channels.scale_y), 0, H).astype(np.intp)
    ch = np.asarray(ch, dtype=np.intp)
    num = sat[ch, iy1, ix1] - sat[ch, iy0, ix1] - sat[ch, iy1, ix0] + sat[ch, iy0, ix0]
    den = sat[0, iy1, ix1] - sat[0, iy0, ix1] - sat[0, iy1, ix0] + sat[0, iy0, ix0]
    return (num / FIXED_POINT_SCALE) / (den / FIXED_POINT_SCALE + EPS_NORM)


def phi3(frame: LandmarkFrame, triangle, ch: int, s: float,
         alpha: float, beta: float, gamma: float) -> float:
    """Normalized orientation-channel sum in a landmark-anchored window."""
    channels = _require_channels(frame)
    if not 1 <= ch <= 8:
        raise ValueError("channel index must be in 1..8")
    t1, t2, t3 = triangle
    return float(phi3_many(channels, frame.landmarks, inter_ocular_distance(frame),
                           t1, t2, t3, ch, s, alpha, beta, gamma))


def phi6(prev: LandmarkFrame, cur: LandmarkFrame, triangle, ch: int, s: float,
         alpha: float, beta: float, gamma: float) -> float:
    """Derivative of template 3 over a frame pair, identical parameters."""
    return (phi3(cur, triangle, ch, s, alpha, beta, gamma)
            - phi3(prev, triangle, ch, s, alpha, beta, gamma))
