"""Point-cloud container, deterministic preprocessing, and bird's-eye-view projection.

Coordinates are meters in a right-handed frame with z up. Intensities are
unitless reflectance values in [0, 1], one per point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

DEFAULT_CROP_LIMIT = 15.0  # meters, from the sensor along +-x and +-y
DEFAULT_BEV_SIZE = 256
DEFAULT_BEV_EXTENT = 15.0
DEFAULT_Z_RANGE = (-2.0, 5.0)
DEFAULT_DENSITY_CAP = 10


@dataclass
class PointCloud:
    """One LiDAR scan: an (n, 3) float64 array of points plus per-point intensity."""

    points: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if self.points.shape[0] != self.intensity.shape[0]:
            raise DataError(
                f"point/intensity length mismatch: {self.points.shape[0]} vs "
                f"{self.intensity.shape[0]}"
            )
        if self.points.size and not np.isfinite(self.points).all():
            raise DataError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.empty((0, 3)), np.empty((0,)))


@dataclass
class BevImage:
    """Top-down grid with height, point-density, and mean-intensity channels.

    All three channels share the same (h, w) shape and hold values in [0, 1].
    Row index follows y, column index follows x; cell (0, 0) is the corner at
    (-extent, -extent).
    """

    height_ch: np.ndarray
    density_ch: np.ndarray
    intensity_ch: np.ndarray
    extent: float

    @property
    def shape(self):
        return self.height_ch.shape

    def stacked(self) -> np.ndarray:
        """Channels as one (3, h, w) array: height, density, intensity."""
        return np.stack([self.height_ch, self.density_ch, self.intensity_ch])


def crop_xy(cloud: PointCloud, limit: float) -> PointCloud:
    """Keep points with |x| <= limit and |y| <= limit (boundary inclusive), order preserved."""
    if limit <= 0:
        raise ValueError(f"crop limit must be positive, got {limit}")
    if len(cloud) == 0:
        return PointCloud.empty()
    keep = (np.abs(cloud.points[:, 0]) <= limit) & (np.abs(cloud.points[:, 1]) <= limit)
    return PointCloud(cloud.points[keep], cloud.intensity[keep])


def random_downsample(cloud: PointCloud, n_target: int, seed: int) -> PointCloud:
    """Resample a cloud to exactly n_target points, deterministically per seed.

    Large clouds are thinned by uniform sampling without replacement. Clouds
    smaller than n_target keep every original point and are padded by
    with-replacement repetition, so downstream tensor shapes stay fixed.
    """
    if n_target < 1:
        raise ValueError(f"n_target must be >= 1, got {n_target}")
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot downsample an empty cloud")
    rng = np.random.default_rng(seed)
    if n >= n_target:
        idx = rng.choice(n, size=n_target, replace=False)
    else:
        idx = np.concatenate([np.arange(n), rng.integers(0, n, size=n_target - n)])
    return PointCloud(cloud.points[idx], cloud.intensity[idx])


def rotate_yaw(cloud: PointCloud, angle: float) -> PointCloud:
    """Rigid rotation about the z-axis by `angle` radians. Intensities unchanged."""
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return PointCloud(cloud.points @ rot.T, cloud.intensity.copy())


def random_yaw_augment(cloud: PointCloud, seed: int) -> PointCloud:
    """Rotate the whole cloud about z by an angle drawn uniformly from (-pi, pi]."""
    rng = np.random.default_rng(seed)
    angle = math.pi - rng.uniform(0.0, 2.0 * math.pi)
    return rotate_yaw(cloud, angle)


def project_bev(
    cloud: PointCloud,
    h: int = DEFAULT_BEV_SIZE,
    w: int = DEFAULT_BEV_SIZE,
    extent: float = DEFAULT_BEV_EXTENT,
    z_range: tuple[float, float] = DEFAULT_Z_RANGE,
    density_cap: int = DEFAULT_DENSITY_CAP,
) -> BevImage:
    """Discretize a cloud onto an h*w grid covering [-extent, extent]^2 in x, y.

    Per cell: height channel is the max z linearly mapped from z_range onto
    [0, 1] and clamped; density is min(count, density_cap)/density_cap;
    intensity is the mean point intensity. Points outside the extent or
    z_range are ignored, and empty cells are 0 in every channel.
    """
    if h < 1 or w < 1:
        raise ValueError("grid dimensions must be >= 1")
    if extent <= 0:
        raise ValueError(f"extent must be positive, got {extent}")
    z_min, z_max = z_range
    if not z_min < z_max:
        raise ValueError(f"invalid z_range {z_range}")

    height = np.zeros((h, w))
    density = np.zeros((h, w))
    mean_int = np.zeros((h, w))
    if len(cloud):
        pts = cloud.points
        keep = (
            (np.abs(pts[:, 0]) <= extent)
            & (np.abs(pts[:, 1]) <= extent)
            & (pts[:, 2] >= z_min)
            & (pts[:, 2] <= z_max)
        )
        pts = pts[keep]
        inten = cloud.intensity[keep]
        if len(pts):
            scale = 0.5 / extent
            col = np.minimum((pts[:, 0] + extent) * scale * w, w - 1).astype(np.intp)
            row = np.minimum((pts[:, 1] + extent) * scale * h, h - 1).astype(np.intp)
            cell = row * w + col
            # Accumulate in (cell, value) order so results do not depend on
            # the input point order, down to the last bit.
            order = np.lexsort((inten, pts[:, 2], cell))
            cell, z, inten = cell[order], pts[order, 2], inten[order]

            counts = np.bincount(cell, minlength=h * w)
            occupied = counts > 0
            top = np.full(h * w, -np.inf)
            np.maximum.at(top, cell, z)
            height.ravel()[occupied] = np.clip(
                (top[occupied] - z_min) / (z_max - z_min), 0.0, 1.0
            )
            density.ravel()[:] = np.minimum(counts, density_cap) / density_cap
            sums = np.bincount(cell, weights=inten, minlength=h * w)
            mean_int.ravel()[occupied] = sums[occupied] / counts[occupied]

    return BevImage(height, density, mean_int, extent)


def read_scan_csv(path: str | Path) -> PointCloud:
    """Read a scan file: one `x,y,z,intensity` record per line, no header.

    Lines with a field count other than 4 are rejected.
    """
    path = Path(path)
    xyz = []
    inten = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                fields = line.split(",")
                if len(fields) != 4:
                    raise DataError(
                        f"{path}:{lineno}: expected 4 fields, got {len(fields)}"
                    )
                try:
                    x, y, z, i = (float(f) for f in fields)
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
                xyz.append((x, y, z))
                inten.append(i)
    except OSError as exc:
        raise DataError(f"cannot read scan file {path}: {exc}") from exc
    if not xyz:
        return PointCloud.empty()
    return PointCloud(np.array(xyz), np.array(inten))


def write_scan_csv(path: str | Path, cloud: PointCloud) -> None:
    """Write a scan as `x,y,z,intensity` lines; values round-trip exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (x, y, z), i in zip(cloud.points, cloud.intensity):
            fh.write(f"{x!r},{y!r},{z!r},{i!r}\n")
