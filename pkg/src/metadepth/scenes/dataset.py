"""Fine-grained RGB-D tasks, datasets, region annotations and their disk format.

Disk layout of one split directory::

    manifest.json
    images/<scene>_<frame>.png     8-bit RGB
    depth/<scene>_<frame>.mdld     16-byte header + little-endian float32 H*W

The depth header is ``b"MDLD"``, version ``u16``, ``H u16``, ``W u16`` and six
reserved zero bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from metadepth.errors import DataError

DEPTH_MAGIC = b"MDLD"
DEPTH_VERSION = 1
_DEPTH_HEADER = struct.Struct("<4sHHH6x")
MANIFEST_VERSION = 1


@dataclass
class FineGrainedTask:
    image: np.ndarray  # (3, H, W) in [0, 1]
    depth: np.ndarray  # (1, H, W) meters, 0 where invalid
    valid: np.ndarray  # (1, H, W) bool
    scene_id: int
    frame_id: int

    @property
    def key(self):
        return (self.scene_id, self.frame_id)


@dataclass
class Dataset:
    pairs: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def scene_ids(self) -> set:
        return {p.scene_id for p in self.pairs}

    def stack(self, indices=None):
        """Batched ``(images, depths, valid)`` arrays for the given indices."""
        sel = self.pairs if indices is None else [self.pairs[i] for i in indices]
        return (
            np.stack([p.image for p in sel]),
            np.stack([p.depth for p in sel]),
            np.stack([p.valid for p in sel]),
        )

    @property
    def image_size(self):
        return self.pairs[0].depth.shape[-2:]


@dataclass
class Region:
    mask: np.ndarray  # (1, H, W) bool
    kind: str  # "textured_plane" | "object_boundary"
    surface: str = ""
    plane_normal: np.ndarray | None = None  # camera frame
    plane_offset: float | None = None  # plane: normal . X = offset, camera frame

    def plane_depth(self, rays_cam: np.ndarray) -> np.ndarray:
        """Analytic z-depth of the generating plane along camera rays ``(H, W, 3)``."""
        return self.plane_offset / (rays_cam @ self.plane_normal)


@dataclass
class RegionAnnotation:
    regions: dict = field(default_factory=dict)  # (scene_id, frame_id) -> list[Region]

    def for_frame(self, scene_id, frame_id):
        return self.regions.get((scene_id, frame_id), [])

    def textured_planes(self, ds: Dataset):
        """Yield ``(pair_index, Region)`` for every textured-plane region in ``ds``."""
        for i, p in enumerate(ds.pairs):
            for r in self.for_frame(p.scene_id, p.frame_id):
                if r.kind == "textured_plane":
                    yield i, r


# run-length masks ------------------------------------------------------


def encode_mask(mask: np.ndarray) -> list:
    flat = np.asarray(mask, dtype=bool).ravel()
    padded = np.concatenate([[False], flat, [False]])
    changes = np.flatnonzero(padded[1:] != padded[:-1])
    return [[int(a), int(b - a)] for a, b in zip(changes[::2], changes[1::2])]


def decode_mask(runs, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for start, length in runs:
        flat[start : start + length] = True
    return flat.reshape(shape)


# depth binaries --------------------------------------------------------


def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth).reshape(depth.shape[-2:])
    H, W = depth.shape
    with open(path, "wb") as fh:
        fh.write(_DEPTH_HEADER.pack(DEPTH_MAGIC, DEPTH_VERSION, H, W))
        fh.write(depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _DEPTH_HEADER.size:
        raise DataError(f"{path}: truncated depth file")
    magic, version, H, W = _DEPTH_HEADER.unpack_from(raw)
    if magic != DEPTH_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != DEPTH_VERSION:
        raise DataError(f"{path}: unsupported depth version {version}")
    body = raw[_DEPTH_HEADER.size :]
    if len(body) != 4 * H * W:
        raise DataError(f"{path}: expected {H}x{W} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(1, H, W)


def write_png(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0)), mode="RGB").save(path, format="PNG", optimize=False)


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1) / 255.0


# split directories -----------------------------------------------------


def save_dataset(ds: Dataset, directory, annotations: RegionAnnotation | None = None) -> Path:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "depth").mkdir(parents=True, exist_ok=True)
    entries = []
    for p in ds.pairs:
        stem = f"{p.scene_id:05d}_{p.frame_id:05d}"
        write_png(directory / "images" / f"{stem}.png", p.image)
        write_depth(directory / "depth" / f"{stem}.mdld", np.where(p.valid, p.depth, 0.0))
        regions = []
        if annotations is not None:
            for r in annotations.for_frame(p.scene_id, p.frame_id):
                entry = {"kind": r.kind, "surface": r.surface, "runs": encode_mask(r.mask)}
                if r.plane_normal is not None:
                    entry["plane_normal"] = [float(v) for v in r.plane_normal]
                    entry["plane_offset"] = float(r.plane_offset)
                regions.append(entry)
        entries.append(
            {
                "scene_id": p.scene_id,
                "frame_id": p.frame_id,
                "image": f"images/{stem}.png",
                "depth": f"depth/{stem}.mdld",
                "regions": regions,
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "meta": ds.meta,
        "scene_ids": sorted(ds.scene_ids()),
        "pairs": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def load_dataset(directory):
    """Read a split directory into ``(Dataset, RegionAnnotation)``."""
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {manifest.get('version')}")
    pairs, ann = [], RegionAnnotation()
    for e in manifest["pairs"]:
        image = read_png(directory / e["image"])
        depth = read_depth(directory / e["depth"])
        valid = depth > 0
        pairs.append(FineGrainedTask(image, depth, valid, int(e["scene_id"]), int(e["frame_id"])))
        regions = []
        for r in e.get("regions", []):
            normal = np.array(r["plane_normal"]) if "plane_normal" in r else None
            regions.append(
                Region(decode_mask(r["runs"], depth.shape), r["kind"], r.get("surface", ""), normal, r.get("plane_offset"))
            )
        ann.regions[(int(e["scene_id"]), int(e["frame_id"]))] = regions
    return Dataset(pairs, manifest.get("meta", {})), ann
