"""Software rasterizer, ray-cast visibility, occlusion ratios, truncation and backgrounds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateGeometry, InvalidCrop, ZeroProjection
from .skelgeom import Camera, SkeletonModel

VIS_TOLERANCE = 1e-4
NEAR_PLANE = 1e-3
BOUNDARIES = ("left", "right", "top", "bottom")


@dataclass(frozen=True, eq=False)
class Placement:
    """Rigid transform applied as world = rotation @ p + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points):
        return np.asarray(points) @ np.asarray(self.rotation).T + np.asarray(self.translation)

    @classmethod
    def yaw(cls, angle, translation=(0.0, 0.0, 0.0)):
        c, s = math.cos(angle), math.sin(angle)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.array(translation, dtype=np.float64))


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str = "uniform"  # uniform | gradient | checker | noise
    seed: int = 0
    params: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class SceneConfig:
    instances: tuple  # ((SkeletonModel, Placement), ...); index 0 is the labeled target
    camera: Camera
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    light_strength: float = 1.0
    background: BackgroundSpec = field(default_factory=BackgroundSpec)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not 1 <= len(self.instances) <= 2:
            raise ValueError("a scene holds one or two instances")
        ld = np.asarray(self.light_dir, dtype=np.float64)
        object.__setattr__(self, "light_dir", ld / np.linalg.norm(ld))

    def solo(self, index):
        """The same scene with only one instance kept."""
        return SceneConfig((self.instances[index],), self.camera, self.light_dir, self.light_strength, self.background)

    def world_triangles(self):
        """(T, 3, 3) triangles in world coordinates and their 1-based instance ids."""
        tris, ids = [], []
        for i, (model, place) in enumerate(self.instances):
            t = place.apply(model.triangles())
            tris.append(t)
            ids.append(np.full(len(t), i + 1, dtype=np.int32))
        return np.concatenate(tris), np.concatenate(ids)


@dataclass(eq=False)
class FrameBuffer:
    color: np.ndarray  # (H, W, 1) in [0, 1]
    depth: np.ndarray  # (H, W), inf where empty
    instance_id: np.ndarray  # (H, W) int, 0 = background

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True)
class CropRecord:
    """Integer crop window [x0, x1) x [y0, y1) resampled back to (width, height)."""

    x0: int
    y0: int
    x1: int
    y1: int
    width: int
    height: int

    @property
    def scale(self):
        return self.width / (self.x1 - self.x0), self.height / (self.y1 - self.y0)

    def apply(self, uv):
        """Map pixel coordinates of the uncropped frame into the cropped frame."""
        sx, sy = self.scale
        uv = np.asarray(uv, dtype=np.float64)
        return np.stack([(uv[..., 0] - self.x0) * sx, (uv[..., 1] - self.y0) * sy], axis=-1)

    def matrix(self):
        sx, sy = self.scale
        return np.array([[sx, 0.0, -self.x0 * sx], [0.0, sy, -self.y0 * sy], [0.0, 0.0, 1.0]])

    def to_json(self):
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1, "width": self.width, "height": self.height}


def _screen_triangles(tris, camera):
    pc = camera.to_camera_frame(tris)
    z = pc[..., 2]
    if np.any(z <= NEAR_PLANE):
        raise BehindCamera("scene geometry crosses the camera near plane")
    cx, cy = camera.principal_point
    u = camera.focal * pc[..., 0] / z + cx
    v = camera.focal * pc[..., 1] / z + cy
    return u, v, z


def rasterize(scene: SceneConfig) -> FrameBuffer:
    """Z-buffered, flat-shaded rasterization of every scene triangle.

    Coverage uses inclusive edge functions at pixel centers, depth is
    interpolated perspective-correctly (linear in 1/z). The nearest surface
    wins; exact depth ties go to the lower triangle index. Each face is shaded
    max(0, n . light) * strength with its normal turned toward the camera.
    """
    tris, ids = scene.world_triangles()
    if len(tris) == 0:
        raise DegenerateGeometry("scene has no triangles")
    cam = scene.camera
    width, height = cam.image_size
    u, v, z = _screen_triangles(tris, cam)

    best = np.full((height, width), np.inf)
    winner = np.full((height, width), -1, dtype=np.int64)
    # per-triangle pixel bounding boxes, clipped to the image
    xmin = np.clip(np.ceil(u.min(axis=1) - 0.5), 0, width).astype(int)
    xmax = np.clip(np.floor(u.max(axis=1) - 0.5) + 1, 0, width).astype(int)
    ymin = np.clip(np.ceil(v.min(axis=1) - 0.5), 0, height).astype(int)
    ymax = np.clip(np.floor(v.max(axis=1) - 0.5) + 1, 0, height).astype(int)
    inv_z = 1.0 / z
    for t in range(len(tris)):
        x0, x1, y0, y1 = xmin[t], xmax[t], ymin[t], ymax[t]
        if x0 >= x1 or y0 >= y1:
            continue
        u0, u1, u2 = u[t]
        v0, v1, v2 = v[t]
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if abs(area) <= 1e-12:
            continue
        px = np.arange(x0, x1) + 0.5
        py = (np.arange(y0, y1) + 0.5)[:, None]
        w0 = ((u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)) / area
        w1 = ((u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)) / area
        w2 = ((u1 - u0) * (py - v0) - (v1 - v0) * (px - u0)) / area
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        d = 1.0 / (w0 * inv_z[t, 0] + w1 * inv_z[t, 1] + w2 * inv_z[t, 2])
        region = best[y0:y1, x0:x1]
        # strict comparison: on exact ties the earlier (lower index) triangle stays
        take = inside & (d < region)
        region[take] = d[take]
        winner[y0:y1, x0:x1][take] = t
    best, winner = best.ravel(), winner.ravel()

    covered = winner >= 0
    normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.where(norm > 0, norm, 1.0)
    to_cam = cam.center - tris.mean(axis=1)
    normals *= np.where((normals * to_cam).sum(axis=1) < 0, -1.0, 1.0)[:, None]
    shade = np.clip(np.maximum(normals @ scene.light_dir, 0.0) * scene.light_strength, 0.0, 1.0)

    color = np.zeros(best.shape)
    color[covered] = shade[winner[covered]]
    inst = np.zeros(best.shape, dtype=np.int32)
    inst[covered] = ids[winner[covered]]
    return FrameBuffer(
        color=color.reshape(height, width, 1),
        depth=best.reshape(height, width),
        instance_id=inst.reshape(height, width),
    )


def ray_triangle_distances(origin, directions, tris, eps=1e-12):
    """Moller-Trumbore hit parameters for rays origin + t * direction.

    directions: (R, 3); tris: (T, 3, 3). Returns (R, T) with inf for misses
    and for hits at t <= 0.
    """
    directions = np.atleast_2d(directions)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    e1, e2 = b - a, c - a
    pvec = np.cross(directions[:, None, :], e2[None])
    det = (e1[None] * pvec).sum(-1)
    ok = np.abs(det) > eps
    inv = 1.0 / np.where(ok, det, 1.0)
    tvec = origin - a
    u = (tvec[None] * pvec).sum(-1) * inv
    qvec = np.cross(tvec, e1)
    v = (directions @ qvec.T) * inv
    t = (qvec * e2).sum(-1)[None] * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
    return np.where(hit, t, np.inf)


def keypoint_visibility(scene: SceneConfig, keypoints, tolerance=VIS_TOLERANCE):
    """Occlusion flags (True = occluded) for world-space keypoints.

    A keypoint is occluded when the segment from the camera center to it hits
    any scene triangle more than `tolerance` before the keypoint, or when it
    projects outside the image.
    """
    keypoints = np.atleast_2d(np.asarray(keypoints, dtype=np.float64))
    cam = scene.camera
    width, height = cam.image_size
    pc = cam.to_camera_frame(keypoints)
    occluded = pc[:, 2] <= 0
    cx, cy = cam.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.focal * pc[:, 0] / pc[:, 2] + cx
        v = cam.focal * pc[:, 1] / pc[:, 2] + cy
    occluded |= ~((u >= 0) & (u < width) & (v >= 0) & (v < height))

    tris, _ = scene.world_triangles()
    origin = cam.center
    seg = keypoints - origin
    length = np.linalg.norm(seg, axis=1)
    t = ray_triangle_distances(origin, seg, tris)  # t = 1 at the keypoint
    nearest = t.min(axis=1) * length
    occluded |= nearest < length - tolerance
    return occluded


def occlusion_ratio(scene: SceneConfig, instance_index: int, frame: FrameBuffer | None = None) -> float:
    """Visible pixels of an instance in the scene over its pixels when rendered alone."""
    if not 0 <= instance_index < len(scene.instances):
        raise IndexError(f"no instance {instance_index}")
    alone = rasterize(scene.solo(instance_index))
    total = int((alone.instance_id == 1).sum())
    if total == 0:
        raise ZeroProjection(f"instance {instance_index} covers no pixels")
    if len(scene.instances) == 1:
        return 1.0
    frame = rasterize(scene) if frame is None else frame
    visible = int((frame.instance_id == instance_index + 1).sum())
    return visible / total


def crop_window(width, height, shifts):
    """Integer crop window for boundary shifts {boundary: fraction of image size}."""
    if len(shifts) != 2 or len(set(shifts)) != 2:
        raise ValueError("truncation shifts exactly two distinct boundaries")
    for side, frac in shifts.items():
        if side not in BOUNDARIES:
            raise ValueError(f"unknown boundary {side!r}")
        if not 0.0 <= frac <= 0.3:
            raise ValueError(f"shift {frac} outside [0, 0.3]")
    x0 = int(math.floor(shifts.get("left", 0.0) * width))
    x1 = width - int(math.floor(shifts.get("right", 0.0) * width))
    y0 = int(math.floor(shifts.get("top", 0.0) * height))
    y1 = height - int(math.floor(shifts.get("bottom", 0.0) * height))
    if x1 <= x0 or y1 <= y0:
        raise InvalidCrop(f"empty crop window x[{x0},{x1}) y[{y0},{y1})")
    return CropRecord(x0, y0, x1, y1, width, height)


def truncate(frame: FrameBuffer, shifts):
    """Shift two image boundaries inward and resample the crop to full size.

    Nearest-neighbor sampling at output pixel centers. Returns the new frame
    and the CropRecord that maps old pixel coordinates to new ones.
    """
    height, width = frame.shape
    rec = crop_window(width, height, shifts)
    cols = rec.x0 + np.floor((np.arange(width) + 0.5) * (rec.x1 - rec.x0) / width).astype(int)
    rows = rec.y0 + np.floor((np.arange(height) + 0.5) * (rec.y1 - rec.y0) / height).astype(int)
    ix = np.ix_(rows, cols)
    out = FrameBuffer(frame.color[ix], frame.depth[ix], frame.instance_id[ix])
    return out, rec


def _value_noise(rng, height, width, octaves=4, base_cells=4):
    img = np.zeros((height, width))
    amp, total = 1.0, 0.0
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    for o in range(octaves):
        cells = base_cells * 2 ** o
        lattice = rng.random((cells + 1, cells + 1))
        gy, gx = ys * cells, xs * cells
        iy, ix = np.floor(gy).astype(int), np.floor(gx).astype(int)
        fy, fx = gy - iy, gx - ix
        sy, sx = fy * fy * (3 - 2 * fy), fx * fx * (3 - 2 * fx)
        a = lattice[iy][:, ix]
        b = lattice[iy][:, ix + 1]
        c = lattice[iy + 1][:, ix]
        d = lattice[iy + 1][:, ix + 1]
        top = a + (b - a) * sx[None, :]
        bot = c + (d - c) * sx[None, :]
        img += amp * (top + (bot - top) * sy[:, None])
        total += amp
        amp *= 0.5
    return img / total


def background_image(spec: BackgroundSpec, height, width):
    """Procedural (H, W) background in [0, 1], deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    lo, hi = p.get("low", 0.2), p.get("high", 0.8)
    if spec.kind == "uniform":
        img = np.full((height, width), p.get("value", 0.5))
    elif spec.kind == "gradient":
        ang = p.get("angle", 0.0)
        ys, xs = np.mgrid[0:height, 0:width]
        t = (xs + 0.5) / width * math.cos(ang) + (ys + 0.5) / height * math.sin(ang)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
        img = lo + (hi - lo) * t
    elif spec.kind == "checker":
        period = int(p.get("period", 8))
        ys, xs = np.mgrid[0:height, 0:width]
        img = np.where(((xs // period) + (ys // period)) % 2 == 0, lo, hi).astype(np.float64)
    elif spec.kind == "noise":
        img = lo + (hi - lo) * _value_noise(rng, height, width, int(p.get("octaves", 4)), int(p.get("cells", 4)))
    else:
        raise ValueError(f"unknown background kind {spec.kind!r}")
    return np.clip(img, 0.0, 1.0)


def composite_background(frame: FrameBuffer, background: BackgroundSpec):
    """Fill background pixels (instance id 0); object pixels are left untouched."""
    height, width = frame.shape
    bg = background_image(background, height, width)[..., None]
    return np.where(frame.instance_id[..., None] == 0, bg, frame.color)


def write_pnm(frame_or_image, path, sidecar=True):
    """Binary PGM/PPM dump (maxval 255) with an optional JSON depth summary."""
    img = frame_or_image.color if isinstance(frame_or_image, FrameBuffer) else np.asarray(frame_or_image)
    if img.ndim == 2:
        img = img[..., None]
    height, width, channels = img.shape
    data = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{width} {height}\n255\n".encode())
        fh.write(data.tobytes())
    if sidecar and isinstance(frame_or_image, FrameBuffer):
        d = frame_or_image.depth
        fin = d[np.isfinite(d)]
        stats = {
            "width": width,
            "height": height,
            "covered_pixels": int(fin.size),
            "depth_min": float(fin.min()) if fin.size else None,
            "depth_max": float(fin.max()) if fin.size else None,
            "depth_mean": float(fin.mean()) if fin.size else None,
            "instances": sorted(int(i) for i in np.unique(frame_or_image.instance_id) if i),
        }
        with open(str(path) + ".json", "w") as fh:
            json.dump(stats, fh, indent=2)


def read_pnm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, dims, maxval, rest = raw.split(b"\n", 3)
    width, height = (int(v) for v in dims.split())
    channels = 1 if magic == b"P5" else 3
    return np.frombuffer(rest, dtype=np.uint8).reshape(height, width, channels)


def placement_bounds(model: SkeletonModel, place: Placement):
    """Oriented bounding box (center, axes as rows, half extents) of a placed mesh."""
    v = model.mesh_vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    center_local = 0.5 * (lo + hi)
    return place.apply(center_local), np.asarray(place.rotation).T.copy(), 0.5 * (hi - lo)


def boxes_overlap(a, b):
    """Separating-axis test for two oriented boxes from placement_bounds."""
    ca, axa, ha = a
    cb, axb, hb = b
    axes = list(axa) + list(axb)
    for i in range(3):
        for j in range(3):
            c = np.cross(axa[i], axb[j])
            n = np.linalg.norm(c)
            if n > 1e-9:
                axes.append(c / n)
    d = cb - ca
    for ax in axes:
        ra = np.abs(axa @ ax) @ ha
        rb = np.abs(axb @ ax) @ hb
        if abs(d @ ax) > ra + rb:
            return False
    return True
