"""Head-pose bins and the pose sampling distribution.

The pose space is quantized into yaw x pitch bins.  Corpus generation
assigns each sequence its bin center plus uniform jitter; at inference a
smoothed per-bin weight surface over the yaw/pitch plane (built from the
training pose repartition) apportions trees across pose bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import DataError

DEFAULT_YAW_CENTERS = (-35.0, -17.5, 0.0, 17.5, 35.0)
DEFAULT_PITCH_CENTERS = (-25.0, 0.0, 25.0)
DEFAULT_JITTER = 5.0
DEFAULT_SMOOTHING = 5.0
GRID_YAW = (-45.0, 45.0)
GRID_PITCH = (-35.0, 35.0)
GRID_STEP = 1.0


@dataclass(frozen=True)
class PoseBinTable:
    """Bin centers over the yaw/pitch plane, yaw-major order."""

    yaw_centers: tuple = DEFAULT_YAW_CENTERS
    pitch_centers: tuple = DEFAULT_PITCH_CENTERS
    jitter_yaw: float = DEFAULT_JITTER
    jitter_pitch: float = DEFAULT_JITTER

    def __post_init__(self):
        if len(set(self.yaw_centers)) != len(self.yaw_centers) \
                or len(set(self.pitch_centers)) != len(self.pitch_centers):
            raise ValueError("bin centers must be distinct")

    @property
    def n_bins(self) -> int:
        return len(self.yaw_centers) * len(self.pitch_centers)

    def centers(self) -> np.ndarray:
        """(n_bins, 2) array of (yaw, pitch) centers."""
        out = [(y, p) for y in self.yaw_centers for p in self.pitch_centers]
        return np.array(out, dtype=np.float64)

    def center(self, bin_id: int) -> tuple[float, float]:
        c = self.centers()[bin_id]
        return float(c[0]), float(c[1])

    def nearest_bin(self, yaw: float, pitch: float) -> int:
        c = self.centers()
        d = (c[:, 0] - yaw) ** 2 + (c[:, 1] - pitch) ** 2
        return int(np.argmin(d))

    def central_bin(self) -> int:
        return self.nearest_bin(0.0, 0.0)


def single_bin_table() -> PoseBinTable:
    """Degenerate table for frontal-only corpora."""
    return PoseBinTable(yaw_centers=(0.0,), pitch_centers=(0.0,),
                        jitter_yaw=0.0, jitter_pitch=0.0)


def assign_sequence_pose(table: PoseBinTable, bin_id: int, rng) -> tuple[float, float]:
    """Bin center plus uniform jitter in [-sigma, sigma] on each axis."""
    yc, pc = table.center(bin_id)
    yaw = yc + rng.uniform(-table.jitter_yaw, table.jitter_yaw)
    pitch = pc + rng.uniform(-table.jitter_pitch, table.jitter_pitch)
    return float(yaw), float(pitch)


@dataclass
class PoseSampler:
    """Per-bin weight surface on a regular yaw/pitch grid.

    At every grid point the bin weights are nonnegative and sum to 1;
    queries bilinearly interpolate and clamp outside the grid.
    """

    yaw_grid: np.ndarray
    pitch_grid: np.ndarray
    weights: np.ndarray  # (n_bins, n_yaw, n_pitch)
    table: PoseBinTable = field(default_factory=PoseBinTable)

    @property
    def n_bins(self) -> int:
        return self.weights.shape[0]

    def in_support(self, yaw: float, pitch: float) -> bool:
        return (self.yaw_grid[0] <= yaw <= self.yaw_grid[-1]
                and self.pitch_grid[0] <= pitch <= self.pitch_grid[-1])

    def sample_weights(self, yaw: float, pitch: float) -> np.ndarray:
        """Bin weight vector at (yaw, pitch), clamped to the grid."""
        u = np.clip((yaw - self.yaw_grid[0]) / (self.yaw_grid[1] - self.yaw_grid[0]),
                    0.0, self.yaw_grid.size - 1.0)
        v = np.clip((pitch - self.pitch_grid[0]) / (self.pitch_grid[1] - self.pitch_grid[0]),
                    0.0, self.pitch_grid.size - 1.0)
        i0 = min(int(u), self.yaw_grid.size - 2) if self.yaw_grid.size > 1 else 0
        j0 = min(int(v), self.pitch_grid.size - 2) if self.pitch_grid.size > 1 else 0
        i1 = min(i0 + 1, self.yaw_grid.size - 1)
        j1 = min(j0 + 1, self.pitch_grid.size - 1)
        fu = u - i0
        fv = v - j0
        w = ((1 - fu) * (1 - fv) * self.weights[:, i0, j0]
             + fu * (1 - fv) * self.weights[:, i1, j0]
             + (1 - fu) * fv * self.weights[:, i0, j1]
             + fu * fv * self.weights[:, i1, j1])
        return w

    def export_surface_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = ",".join(f"bin{b}" for b in range(self.n_bins))
            fh.write(f"yaw,pitch,{cols}\n")
            for i, y in enumerate(self.yaw_grid):
                for j, p in enumerate(self.pitch_grid):
                    vals = ",".join(repr(float(v)) for v in self.weights[:, i, j])
                    fh.write(f"{y!r},{p!r},{vals}\n")


def build_pose_sampler(poses, table: PoseBinTable = None,
                       smoothing: float = DEFAULT_SMOOTHING,
                       yaw_range=GRID_YAW, pitch_range=GRID_PITCH,
                       resolution: float = GRID_STEP) -> PoseSampler:
    """Gaussian-smoothed per-bin pose density, pointwise normalized.

    ``poses`` is a sequence of (yaw, pitch, bin_id).  Grid points where
    every bin has (numerically) zero mass get uniform weights.
    """
    poses = list(poses)
    if not poses:
        raise DataError("cannot build a pose sampler from an empty pose set")
    if table is None:
        table = PoseBinTable()
    k = table.n_bins
    yaw_grid = np.arange(yaw_range[0], yaw_range[1] + resolution / 2, resolution)
    pitch_grid = np.arange(pitch_range[0], pitch_range[1] + resolution / 2, resolution)
    density = np.zeros((k, yaw_grid.size, pitch_grid.size), dtype=np.float64)
    arr = np.asarray([(y, p, b) for y, p, b in poses], dtype=np.float64)
    inv2s2 = 1.0 / (2.0 * smoothing * smoothing)
    for b in range(k):
        pts = arr[arr[:, 2] == b]
        if pts.shape[0] == 0:
            continue
        # separable kernel: outer product of per-axis responses
        ay = np.exp(-((yaw_grid[None, :] - pts[:, 0:1]) ** 2) * inv2s2)
        ap = np.exp(-((pitch_grid[None, :] - pts[:, 1:2]) ** 2) * inv2s2)
        density[b] = ay.T @ ap
    total = density.sum(axis=0)
    empty = total <= 1e-300
    safe = np.where(empty, 1.0, total)
    weights = density / safe
    weights[:, empty] = 1.0 / k
    return PoseSampler(yaw_grid, pitch_grid, weights, table)
