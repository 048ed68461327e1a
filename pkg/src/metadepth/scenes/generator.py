"""Procedural RGB-D rooms with analytic ray-cast depth.

A scene is an axis-aligned room (world Y up) with up to six axis-aligned
boxes resting on the floor. Room planes may carry a procedural albedo
texture that leaves geometry untouched, which makes their ground truth an
exact plane while their color varies. Shading is a camera-mounted light with
distance falloff, so image brightness does carry some depth signal.

Every random draw comes from a generator seeded by ``(seed, scene_id)`` or
``(seed, scene_id, frame_id)``, so any frame can be rebuilt independently.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from metadepth.errors import ConfigurationError
from metadepth.geometry import CameraIntrinsics
from metadepth.scenes.dataset import Dataset, FineGrainedTask, Region, RegionAnnotation
from metadepth.seeding import stream

# How "variety" widens each sampling range: spread = SPREAD_MIN + (1 - SPREAD_MIN) * variety.
SPREAD_MIN = 0.15
ROOM_CENTER = (4.5, 2.7, 5.0)  # x, y (height), z in meters
ROOM_HALF_RANGE = (2.5, 0.5, 2.5)
MAX_BOXES = 6
BOX_SIZE_RANGE = (0.3, 1.3)
YAW_HALF_RANGE = np.pi
PITCH_HALF_RANGE = 0.45
CAMERA_HEIGHT = (1.1, 1.8)
ROOM_PLANES = ("wall_x0", "wall_x1", "floor", "ceiling", "wall_z0", "wall_z1")
MIN_REGION_PIXELS = 12


@dataclass(frozen=True)
class SceneGenConfig:
    num_scenes: int = 8
    frames_per_scene: int = 32
    variety: float = 0.1
    texture_density: float = 0.5
    image_size: tuple = (32, 32)
    depth_range: tuple = (0.3, 10.0)
    seed: int = 0
    num_test_scenes: int = 4
    test_frames_per_scene: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "depth_range", tuple(float(v) for v in self.depth_range))

    def validate(self):
        if self.num_scenes <= 0 or self.frames_per_scene <= 0:
            raise ConfigurationError("num_scenes and frames_per_scene must be positive")
        if self.num_test_scenes < 0:
            raise ConfigurationError("num_test_scenes must be non-negative")
        if not (0.0 <= self.variety <= 1.0) or not (0.0 <= self.texture_density <= 1.0):
            raise ConfigurationError("variety and texture_density must lie in [0, 1]")
        lo, hi = self.depth_range
        if not (0 < lo < hi):
            raise ConfigurationError("depth_range must satisfy 0 < d_min < d_max")
        H, W = self.image_size
        if H <= 0 or W <= 0:
            raise ConfigurationError("image_size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["depth_range"] = list(self.depth_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneGenConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def spread(self) -> float:
        return SPREAD_MIN + (1.0 - SPREAD_MIN) * self.variety


@dataclass
class Surface:
    normal_axis: int
    albedo: np.ndarray
    texture: dict | None = None


@dataclass
class Scene:
    scene_id: int
    dims: np.ndarray
    boxes: list = field(default_factory=list)  # (lo, hi, albedo)
    planes: list = field(default_factory=list)  # Surface per ROOM_PLANES entry
    base_yaw: float = 0.0


def _uniform_sym(rng, half):
    return rng.uniform(-half, half)


def sample_scene(cfg: SceneGenConfig, scene_id: int) -> Scene:
    rng = stream(cfg.seed, "scene", scene_id)
    s = cfg.spread
    dims = np.array([c + _uniform_sym(rng, h * s) for c, h in zip(ROOM_CENTER, ROOM_HALF_RANGE)])
    planes = []
    for name in ROOM_PLANES:
        base = rng.uniform(0.25, 0.9, size=3)
        tex = None
        if rng.random() < cfg.texture_density:
            tex = {
                "kind": int(rng.integers(0, 3)),
                "freq": float(rng.uniform(1.0, 4.0)),
                "angle": float(rng.uniform(0, np.pi)),
                "phase": float(rng.uniform(0, 2 * np.pi)),
                "second": rng.uniform(0.05, 0.95, size=3),
            }
        axis = {"wall_x0": 0, "wall_x1": 0, "floor": 1, "ceiling": 1, "wall_z0": 2, "wall_z1": 2}[name]
        planes.append(Surface(axis, base, tex))
    n_boxes = int(rng.integers(0, 1 + round(MAX_BOXES * s)))
    boxes = []
    for _ in range(n_boxes):
        lo_sz, hi_sz = BOX_SIZE_RANGE
        size = rng.uniform(lo_sz, lo_sz + (hi_sz - lo_sz) * (0.4 + 0.6 * s), size=3)
        x0 = rng.uniform(0.1, max(0.2, dims[0] - size[0] - 0.1))
        z0 = rng.uniform(0.1, max(0.2, dims[2] - size[2] - 0.1))
        lo = np.array([x0, 0.0, z0])
        boxes.append((lo, lo + size, rng.uniform(0.1, 0.95, size=3)))
    return Scene(scene_id, dims, boxes, planes, float(rng.uniform(0, 2 * np.pi)))


def camera_pose(cfg: SceneGenConfig, scene: Scene, frame_id: int):
    """Return ``(origin, R)`` with R mapping camera (x right, y down, z forward) to world axes."""
    rng = stream(cfg.seed, "frame", scene.scene_id, frame_id)
    s = cfg.spread
    for _ in range(100):
        origin = np.array(
            [
                rng.uniform(0.6, scene.dims[0] - 0.6),
                rng.uniform(*CAMERA_HEIGHT),
                rng.uniform(0.6, scene.dims[2] - 0.6),
            ]
        )
        inside = any(np.all(origin > lo - 0.3) and np.all(origin < hi + 0.3) for lo, hi, _ in scene.boxes)
        if not inside:
            break
    yaw = scene.base_yaw + _uniform_sym(rng, YAW_HALF_RANGE * s)
    pitch = -0.1 + _uniform_sym(rng, PITCH_HALF_RANGE * s)
    forward = np.array([np.cos(pitch) * np.sin(yaw), np.sin(pitch), np.cos(pitch) * np.cos(yaw)])
    right = np.array([np.cos(yaw), 0.0, -np.sin(yaw)])
    down = np.cross(right, forward)
    return origin, np.stack([right, down, forward], axis=1)


def _texture(tex, u, v):
    c, sn = np.cos(tex["angle"]), np.sin(tex["angle"])
    a = (c * u + sn * v) * tex["freq"]
    b = (-sn * u + c * v) * tex["freq"]
    if tex["kind"] == 0:  # stripes
        return 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * a + tex["phase"]))
    if tex["kind"] == 1:  # checker
        return ((np.floor(a + tex["phase"]) + np.floor(b)) % 2).astype(np.float64)
    return 0.5 + 0.5 * np.sin(2 * np.pi * a + tex["phase"]) * np.cos(2 * np.pi * b)


def render_frame(cfg: SceneGenConfig, scene: Scene, frame_id: int, K: CameraIntrinsics):
    """Ray-cast one frame.

    Returns ``(image[3,H,W], depth[1,H,W], valid[1,H,W], regions)``; depth is
    the camera z-coordinate of the first hit, 0 where invalid.
    """
    origin, R = camera_pose(cfg, scene, frame_id)
    rays_cam = K.camera_rays().reshape(-1, 3)
    d = rays_cam @ R.T  # world directions, scaled so that t equals camera depth
    n = d.shape[0]
    dims = scene.dims

    with np.errstate(divide="ignore", invalid="ignore"):
        t_axes = np.where(d > 0, (dims - origin) / d, np.where(d < 0, -origin / d, np.inf))
    axis = np.argmin(t_axes, axis=1)
    t = t_axes[np.arange(n), axis]
    positive = d[np.arange(n), axis] > 0
    surface = axis * 2 + positive.astype(int)  # index into ROOM_PLANES

    hit_box = np.full(n, -1)
    box_axis = np.zeros(n, dtype=int)
    for b, (lo, hi, _) in enumerate(scene.boxes):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / d
            t2 = (hi - origin) / d
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        t_enter = tmin.max(axis=1)
        t_exit = tmax.min(axis=1)
        hit = (t_enter < t_exit) & (t_enter > 1e-6) & (t_enter < t)
        t = np.where(hit, t_enter, t)
        box_axis = np.where(hit, tmin.argmax(axis=1), box_axis)
        hit_box = np.where(hit, b, hit_box)

    points = origin + t[:, None] * d
    albedo = np.zeros((n, 3))
    normal_axis = np.where(hit_box >= 0, box_axis, axis)
    for p, surf in enumerate(scene.planes):
        sel = (hit_box < 0) & (surface == p)
        if not np.any(sel):
            continue
        col = np.broadcast_to(surf.albedo, (sel.sum(), 3)).copy()
        if surf.texture is not None:
            uv_axes = [a for a in range(3) if a != surf.normal_axis]
            pat = _texture(surf.texture, points[sel, uv_axes[0]], points[sel, uv_axes[1]])[:, None]
            col = (1 - pat) * col + pat * surf.texture["second"]
        albedo[sel] = col
    for b, (_, _, col) in enumerate(scene.boxes):
        albedo[hit_box == b] = col

    unit = d / np.linalg.norm(d, axis=1, keepdims=True)
    cos = np.abs(unit[np.arange(n), normal_axis])
    dist = t * np.linalg.norm(d, axis=1)
    shade = 0.3 + 0.7 * cos / (1.0 + 0.05 * dist * dist)
    image = np.clip(albedo * shade[:, None], 0.0, 1.0)
    image = np.round(image * 255.0) / 255.0  # exactly representable as 8-bit PNG

    H, W = cfg.image_size
    d_min, d_max = cfg.depth_range
    valid = (t > 0) & (t <= d_max)
    depth = np.where(valid, t, 0.0)
    regions = []
    for p, surf in enumerate(scene.planes):
        if surf.texture is None:
            continue
        mask = (hit_box < 0) & (surface == p) & valid
        if mask.sum() < MIN_REGION_PIXELS:
            continue
        # plane n.X = c in world -> camera frame: n_cam = R^T n, c_cam = c - n.origin
        nw = np.zeros(3)
        nw[surf.normal_axis] = 1.0
        offset = dims[surf.normal_axis] if p % 2 == 1 else 0.0
        regions.append(
            Region(
                mask.reshape(1, H, W), "textured_plane", ROOM_PLANES[p], (R.T @ nw), float(offset - nw @ origin)
            )
        )
    box_mask = (hit_box >= 0).reshape(H, W)
    if box_mask.any():
        edge = np.zeros_like(box_mask)
        edge[:, 1:] |= box_mask[:, 1:] != box_mask[:, :-1]
        edge[:, :-1] |= box_mask[:, 1:] != box_mask[:, :-1]
        edge[1:, :] |= box_mask[1:, :] != box_mask[:-1, :]
        edge[:-1, :] |= box_mask[1:, :] != box_mask[:-1, :]
        edge &= valid.reshape(H, W)
        if edge.any():
            regions.append(Region(edge.reshape(1, H, W), "object_boundary", "boxes"))
    return (
        image.T.reshape(3, H, W),
        depth.reshape(1, H, W),
        valid.reshape(1, H, W),
        regions,
    )


def _split(cfg, scene_ids, frames, tag, K, annotations):
    pairs = []
    for sid in scene_ids:
        scene = sample_scene(cfg, sid)
        for fid in range(frames):
            image, depth, valid, regions = render_frame(cfg, scene, fid, K)
            pairs.append(FineGrainedTask(image, depth, valid, sid, fid))
            annotations.regions[(sid, fid)] = regions
    meta = {"config_hash": cfg.digest(), "seed": cfg.seed, "split": tag, "intrinsics": K.to_dict()}
    return Dataset(pairs, meta)


def generate_dataset(cfg: SceneGenConfig):
    """Build ``(train, test, regions)``; train and test never share a scene id."""
    cfg.validate()
    H, W = cfg.image_size
    K = CameraIntrinsics.default_for(H, W)
    annotations = RegionAnnotation()
    train = _split(cfg, range(cfg.num_scenes), cfg.frames_per_scene, "train", K, annotations)
    test_frames = cfg.test_frames_per_scene or cfg.frames_per_scene
    test_ids = range(cfg.num_scenes, cfg.num_scenes + cfg.num_test_scenes)
    test = _split(cfg, test_ids, test_frames, "test", K, annotations)
    return train, test, annotations


def image_diversity(ds: Dataset, num_pairs: int = 256, seed: int = 0) -> float:
    """Mean L2 distance between images of randomly drawn distinct frame pairs."""
    rng = np.random.default_rng(seed)
    n = len(ds)
    if n < 2:
        return 0.0
    total = 0.0
    for _ in range(num_pairs):
        i, j = rng.choice(n, size=2, replace=False)
        total += float(np.linalg.norm(ds.pairs[i].image - ds.pairs[j].image))
    return total / num_pairs
