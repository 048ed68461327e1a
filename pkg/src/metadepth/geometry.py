"""Pinhole camera helpers: ray distance and point-cloud back-projection.

Pixel ``(x, y)`` refers to the center of column ``x`` and row ``y`` (0-based).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from metadepth.errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point must lie inside the image")

    @classmethod
    def default_for(cls, height: int, width: int) -> CameraIntrinsics:
        """Synthetic camera: focal length equal to the width, centered principal point."""
        return cls(float(width), float(width), (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    def pixel_grid(self):
        ys, xs = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        return xs, ys

    def camera_rays(self) -> np.ndarray:
        """(H, W, 3) ray directions with unit z component."""
        xs, ys = self.pixel_grid()
        return np.stack([(xs - self.cx) / self.fx, (ys - self.cy) / self.fy, np.ones_like(xs)], axis=-1)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "width": self.width, "height": self.height}


def _spatial(arr, K: CameraIntrinsics, what: str):
    arr = np.asarray(arr)
    if arr.shape[-2:] != (K.height, K.width):
        raise ShapeError(f"{what} of shape {arr.shape} does not match {K.height}x{K.width} intrinsics")
    return arr


def distance_ratio(K: CameraIntrinsics) -> np.ndarray:
    """Per-pixel factor turning z-depth into Euclidean ray length."""
    xs, ys = K.pixel_grid()
    return np.sqrt(1.0 + ((xs - K.cx) / K.fx) ** 2 + ((ys - K.cy) / K.fy) ** 2)


def depth_to_distance(depth, K: CameraIntrinsics) -> np.ndarray:
    depth = _spatial(depth, K, "depth")
    return depth * distance_ratio(K)


def distance_to_depth(distance, K: CameraIntrinsics) -> np.ndarray:
    distance = _spatial(distance, K, "distance")
    return distance / distance_ratio(K)


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) meters
    colors: np.ndarray  # (N, 3) in [0, 1]

    def __len__(self):
        return len(self.points)


def backproject(depth, image, K: CameraIntrinsics, valid) -> PointCloud:
    """Lift every valid pixel to camera coordinates and attach its color."""
    depth = _spatial(depth, K, "depth").reshape(K.height, K.width)
    image = _spatial(image, K, "image")
    if image.shape != (3, K.height, K.width):
        raise ShapeError(f"image must be (3, {K.height}, {K.width}), got {image.shape}")
    valid = _spatial(valid, K, "valid").reshape(K.height, K.width).astype(bool)
    xs, ys = K.pixel_grid()
    z = depth[valid]
    pts = np.stack([(xs[valid] - K.cx) * z / K.fx, (ys[valid] - K.cy) * z / K.fy, z], axis=1)
    cols = image[:, valid].T
    return PointCloud(pts.reshape(-1, 3), cols.reshape(-1, 3))


def project(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Perspective projection of camera-frame points to pixel coordinates (N, 2)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.stack([K.fx * points[:, 0] / points[:, 2] + K.cx, K.fy * points[:, 1] / points[:, 2] + K.cy], axis=1)


def write_ply(path, cloud: PointCloud, binary: bool = False) -> Path:
    path = Path(path)
    rgb = np.clip(np.round(np.asarray(cloud.colors) * 255), 0, 255).astype(np.uint8)
    pts = np.asarray(cloud.points, dtype=np.float32)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            rec = struct.Struct("<fffBBB")
            for p, c in zip(pts, rgb):
                fh.write(rec.pack(*p.tolist(), *c.tolist()))
        else:
            for p, c in zip(pts, rgb):
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}\n".encode("ascii"))
    return path


def read_ply_vertex_count(path) -> int:
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.decode("ascii").strip()
            if line.startswith("element vertex"):
                return int(line.split()[-1])
            if line == "end_header":
                break
    raise ValueError(f"{path} has no vertex element")
