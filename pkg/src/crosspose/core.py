"""Shared pose types and the heatmap codec.

Poses travel through the toolkit as ordered keypoint lists tied to a
skeleton schema. Heatmaps are the training currency: every annotated
keypoint becomes a Gaussian bump on a stride-reduced grid, and model
predictions are read back by locating per-channel peaks. The mean of the
per-channel peak values is the scalar confidence used by the pseudo-label
filter, so every map handed to :class:`HeatmapStack` must already be
squashed into [0, 1] (targets are built there by construction; networks
apply a sigmoid before building a stack).

Everything in this module is a pure function over immutable-ish data and
is safe to call from any number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ConfigError, SchemaError

# Visibility flags follow the common keypoint-annotation convention.
VIS_ABSENT = 0    # not annotated: ignored by every loss and metric
VIS_OCCLUDED = 1  # annotated but occluded
VIS_VISIBLE = 2   # annotated and visible

DEFAULT_SIGMA = 2.0   # target bump std, in output-grid pixels
DEFAULT_STRIDE = 4    # image pixels per heatmap cell


@dataclass
class Keypoint:
    """One named joint location in image coordinates.

    ``x``/``y`` are continuous pixel coordinates; ``v`` is the visibility
    flag. When ``v == 0`` the coordinates carry no meaning and every loss
    and metric must skip the point.
    """

    x: float
    y: float
    v: int = VIS_VISIBLE

    def __post_init__(self):
        if self.v not in (VIS_ABSENT, VIS_OCCLUDED, VIS_VISIBLE):
            raise ValueError(f"visibility flag must be 0, 1 or 2, got {self.v}")
        if self.v > 0 and not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"annotated keypoint has non-finite coords ({self.x}, {self.y})")

    @property
    def annotated(self) -> bool:
        return self.v > 0


@dataclass
class Pose:
    """Ordered keypoints of one instance, matching a schema's ordering."""

    keypoints: list[Keypoint]
    schema_id: str | None = None

    def __len__(self) -> int:
        return len(self.keypoints)

    def xy(self) -> np.ndarray:
        """(d, 2) array of coordinates; rows with v == 0 are meaningless."""
        return np.array([[k.x, k.y] for k in self.keypoints], dtype=np.float64)

    def vis(self) -> np.ndarray:
        """(d,) array of visibility flags."""
        return np.array([k.v for k in self.keypoints], dtype=np.int64)

    def annotated_mask(self) -> np.ndarray:
        return self.vis() > 0

    @staticmethod
    def from_arrays(xy: np.ndarray, v: np.ndarray, schema_id: str | None = None) -> "Pose":
        xy = np.asarray(xy, dtype=np.float64)
        v = np.asarray(v, dtype=np.int64)
        if xy.shape != (len(v), 2):
            raise ValueError(f"xy shape {xy.shape} does not match {len(v)} visibility flags")
        kps = [Keypoint(float(x), float(y), int(vv)) for (x, y), vv in zip(xy, v)]
        return Pose(kps, schema_id)


@dataclass
class SkeletonSchema:
    """Named keypoints plus the bone edge list and an optional alignment
    into a reference schema.

    ``alignment`` maps this schema's keypoint indices into the reference
    schema's indices and must be injective; keypoints outside the map are
    dropped when converting.
    """

    name: str
    keypoint_names: list[str]
    bones: list[tuple[int, int]]
    alignment: dict[int, int] | None = None
    alignment_to: str | None = None

    def __post_init__(self):
        if self.d < 1:
            raise SchemaError(f"schema {self.name!r} needs at least one keypoint")
        for i, j in self.bones:
            if not (0 <= i < self.d and 0 <= j < self.d) or i == j:
                raise SchemaError(f"schema {self.name!r} has invalid bone ({i}, {j})")
        if self.alignment is not None:
            targets = list(self.alignment.values())
            if len(set(targets)) != len(targets):
                raise SchemaError(f"alignment of schema {self.name!r} is not injective")
            if any(i < 0 or i >= self.d for i in self.alignment):
                raise SchemaError(f"alignment of schema {self.name!r} has out-of-range source index")

    @property
    def d(self) -> int:
        return len(self.keypoint_names)

    def index_of(self, keypoint_name: str) -> int:
        return self.keypoint_names.index(keypoint_name)


@dataclass
class Instance:
    """One cropped image with optional pose annotation and domain tags.

    ``y`` is the coarse domain flag (1 = animal, 0 = human); ``z`` marks
    pose-unlabeled target-domain samples. A target sample (z = 1) never
    carries a pose at ingest time and is always an animal.
    """

    id: str
    image: np.ndarray | None          # H x W x C, float values in [0, 1]
    pose: Pose | None
    y: int
    z: int
    species: str | None = None
    bbox: tuple[float, float, float, float] | None = None  # x, y, w, h

    def __post_init__(self):
        if self.y not in (0, 1) or self.z not in (0, 1):
            raise ValueError(f"instance {self.id}: domain flags must be 0/1, got y={self.y} z={self.z}")
        if self.z == 1 and self.pose is not None:
            raise ValueError(f"instance {self.id}: pose-unlabeled sample (z=1) must not carry a pose")
        if self.z == 1 and self.y != 1:
            raise ValueError(f"instance {self.id}: target samples (z=1) must be animals (y=1)")
        if self.z == 0 and self.pose is None:
            raise ValueError(f"instance {self.id}: labeled sample (z=0) must carry a pose")


@dataclass
class HeatmapStack:
    """Per-keypoint activation grids plus their peak locations and values.

    Maps are expected to be already squashed into [0, 1]; ``peak_coords``
    holds (x, y) grid coordinates of each channel argmax and
    ``peak_values`` the corresponding maxima. ``from_maps`` is the only
    sanctioned constructor and keeps the invariants true by construction.
    """

    maps: np.ndarray          # (d, H', W')
    peak_coords: np.ndarray   # (d, 2) as (x, y) on the grid
    peak_values: np.ndarray   # (d,)

    @staticmethod
    def from_maps(maps: np.ndarray) -> "HeatmapStack":
        maps = np.asarray(maps, dtype=np.float64)
        if maps.ndim != 3:
            raise ValueError(f"expected (d, H', W') maps, got shape {maps.shape}")
        d, h, w = maps.shape
        flat_idx = maps.reshape(d, -1).argmax(axis=1)  # first max, row-major: deterministic
        rows, cols = np.divmod(flat_idx, w)
        coords = np.stack([cols, rows], axis=1).astype(np.float64)
        values = maps.reshape(d, -1)[np.arange(d), flat_idx]
        return HeatmapStack(maps=maps, peak_coords=coords, peak_values=values)

    @property
    def confidence(self) -> float:
        """Mean of per-channel peak values; the scalar the pseudo-label
        threshold is compared against."""
        return float(self.peak_values.mean())


def encode_heatmaps(pose: Pose, grid_h: int, grid_w: int,
                    sigma: float = DEFAULT_SIGMA, stride: int = DEFAULT_STRIDE) -> HeatmapStack:
    """Render a pose as per-keypoint Gaussian target maps.

    Each annotated keypoint becomes an unnormalized Gaussian of std
    ``sigma`` (grid pixels) centered at its stride-scaled location, with
    continuous peak value 1. Keypoints with v == 0 yield all-zero
    channels.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if grid_h < 1 or grid_w < 1 or stride < 1:
        raise ConfigError(f"invalid heatmap geometry: {grid_h}x{grid_w}, stride {stride}")
    ys, xs = np.mgrid[0:grid_h, 0:grid_w].astype(np.float64)
    maps = np.zeros((len(pose), grid_h, grid_w), dtype=np.float64)
    for k, kp in enumerate(pose.keypoints):
        if kp.v == VIS_ABSENT:
            continue
        cx = kp.x / stride
        cy = kp.y / stride
        maps[k] = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma ** 2))
    return HeatmapStack.from_maps(maps)


def _quarter_offset(channel: np.ndarray, row: int, col: int) -> tuple[float, float]:
    # Shift a quarter cell toward the larger neighbor on each axis; border
    # or tie means no shift. Bounds the decode error by half a cell.
    h, w = channel.shape
    dx = 0.0
    dy = 0.0
    if 0 < col < w - 1:
        right, left = channel[row, col + 1], channel[row, col - 1]
        if right > left:
            dx = 0.25
        elif left > right:
            dx = -0.25
    if 0 < row < h - 1:
        below, above = channel[row + 1, col], channel[row - 1, col]
        if below > above:
            dy = 0.25
        elif above > below:
            dy = -0.25
    return dx, dy


def decode_heatmaps(stack: HeatmapStack, stride: int = DEFAULT_STRIDE,
                    schema_id: str | None = None) -> tuple[Pose, float]:
    """Read a pose and its confidence back out of a heatmap stack.

    Coordinates are the per-channel argmax mapped back through the
    stride, refined by a quarter-cell offset toward the stronger
    neighbor. Confidence is the mean peak value over all channels; an
    all-zero channel contributes peak 0 and the deterministic coordinate
    (0, 0).
    """
    kps = []
    for k in range(stack.maps.shape[0]):
        col, row = int(stack.peak_coords[k, 0]), int(stack.peak_coords[k, 1])
        dx, dy = _quarter_offset(stack.maps[k], row, col)
        kps.append(Keypoint((col + dx) * stride, (row + dy) * stride, VIS_VISIBLE))
    return Pose(kps, schema_id), stack.confidence


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic squash onto (0, 1)."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
