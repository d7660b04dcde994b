"""Procedural object skeletons, pinhole cameras and azimuth binning.

Object frame: +x points to the front of the object, +y to its left, +z up.
Camera frame: x right, y down, z forward (depth).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BehindCamera, DegenerateGeometry

TWO_PI = 2.0 * math.pi
CATEGORIES = ("car", "chair", "sofa")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SkeletonModel:
    category: str
    keypoint_names: tuple
    keypoints: np.ndarray  # (K, 3)
    edges: np.ndarray  # (E, 2) keypoint indices
    faces: np.ndarray  # (F, 3) coarse mesh over keypoints
    mesh_vertices: np.ndarray  # (V, 3) render geometry
    mesh_triangles: np.ndarray  # (T, 3) indices into mesh_vertices
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "keypoints", _frozen(self.keypoints, np.float64))
        object.__setattr__(self, "edges", _frozen(self.edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "faces", _frozen(self.faces, np.int64).reshape(-1, 3))
        object.__setattr__(self, "mesh_vertices", _frozen(self.mesh_vertices, np.float64))
        object.__setattr__(self, "mesh_triangles", _frozen(self.mesh_triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, "keypoint_names", tuple(self.keypoint_names))
        k = len(self.keypoints)
        if k < 4:
            raise ValueError(f"a skeleton needs at least 4 keypoints, got {k}")
        if len(self.keypoint_names) != k:
            raise ValueError("one name per keypoint required")
        for what, idx in (("edge", self.edges), ("face", self.faces)):
            if idx.size and (idx.min() < 0 or idx.max() >= k):
                raise ValueError(f"{what} index out of range [0, {k})")
        tri = self.mesh_triangles
        if tri.size and (tri.min() < 0 or tri.max() >= len(self.mesh_vertices)):
            raise ValueError("mesh triangle index out of range")

    @property
    def num_keypoints(self):
        return len(self.keypoints)

    def triangles(self):
        """(T, 3, 3) array of triangle corner coordinates."""
        return self.mesh_vertices[self.mesh_triangles]

    def to_json(self):
        return {
            "category": self.category,
            "keypoints": [{"name": n, "xyz": p.tolist()} for n, p in zip(self.keypoint_names, self.keypoints)],
            "edges": self.edges.tolist(),
            "faces": self.faces.tolist(),
            "params": dict(self.params),
            "mesh": {"vertices": self.mesh_vertices.tolist(), "triangles": self.mesh_triangles.tolist()},
        }


def load_model(doc):
    """Build a SkeletonModel from a JSON document (dict, JSON text or path).

    The document holds {category, keypoints: [{name, xyz}], edges, faces, params}
    and optionally {mesh: {vertices, triangles}}. Without a mesh the convex hull
    of the keypoints is used as render geometry.
    """
    if isinstance(doc, str) and not doc.lstrip().startswith("{"):
        with open(doc) as fh:
            doc = json.load(fh)
    elif isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    names = [kp["name"] for kp in doc["keypoints"]]
    pts = np.array([kp["xyz"] for kp in doc["keypoints"]], dtype=np.float64)
    mesh = doc.get("mesh")
    if mesh is None:
        from scipy.spatial import ConvexHull

        hull = ConvexHull(pts)
        verts, tris = pts, hull.simplices
    else:
        verts, tris = mesh["vertices"], mesh["triangles"]
    return SkeletonModel(
        category=doc["category"],
        keypoint_names=names,
        keypoints=pts,
        edges=doc.get("edges", []),
        faces=doc.get("faces", []),
        mesh_vertices=verts,
        mesh_triangles=tris,
        params=doc.get("params", {}),
    )


def normalize_model(model: SkeletonModel) -> SkeletonModel:
    """Center keypoints at the origin and scale the longest axis extent to 1.

    The same similarity transform is applied to the render mesh.
    """
    kp = model.keypoints
    if len(kp) < 1:
        raise DegenerateGeometry("no keypoints")
    center = kp.mean(axis=0)
    extent = (kp.max(axis=0) - kp.min(axis=0)).max()
    if not extent > 0:
        raise DegenerateGeometry("all keypoints coincide")
    if np.allclose(center, 0.0, atol=1e-12) and abs(extent - 1.0) < 1e-12:
        return model
    new_kp = (kp - center) / extent
    # second pass removes the residual rounding of the centroid
    new_kp = new_kp - new_kp.mean(axis=0)
    verts = (model.mesh_vertices - center) / extent
    return replace(model, keypoints=new_kp, mesh_vertices=verts)


# ---------------------------------------------------------------------------
# procedural models


def _box(x0, x1, y0, y1, z0, z1):
    """8 corners and 12 triangles of an axis-aligned box."""
    v = np.array([[x, y, z] for x in (x0, x1) for y in (y0, y1) for z in (z0, z1)], dtype=np.float64)
    # corner index = 4*ix + 2*iy + iz
    quads = [
        (0, 2, 6, 4),  # bottom z0
        (1, 5, 7, 3),  # top z1
        (0, 4, 5, 1),  # y0
        (2, 3, 7, 6),  # y1
        (0, 1, 3, 2),  # x0
        (4, 6, 7, 5),  # x1
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return v, np.array(tris)


def _frustum(bottom, top):
    """Closed solid between two axis-aligned rectangles (x0, x1, y0, y1, z)."""
    bx0, bx1, by0, by1, bz = bottom
    tx0, tx1, ty0, ty1, tz = top
    v = np.array([
        [bx0, by0, bz], [bx1, by0, bz], [bx1, by1, bz], [bx0, by1, bz],
        [tx0, ty0, tz], [tx1, ty0, tz], [tx1, ty1, tz], [tx0, ty1, tz],
    ], dtype=np.float64)
    quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return v, np.array(tris)


def _merge(parts):
    verts, tris, offset = [], [], 0
    for v, t in parts:
        verts.append(v)
        tris.append(t + offset)
        offset += len(v)
    return np.concatenate(verts), np.concatenate(tris)


CAR_KEYPOINTS = (
    "wheel_front_left", "wheel_front_right", "wheel_rear_left", "wheel_rear_right",
    "roof_front_left", "roof_front_right", "roof_rear_left", "roof_rear_right",
    "bumper_front_left", "bumper_front_right", "bumper_rear_left", "bumper_rear_right",
)
CAR_EDGES = (
    (0, 1), (2, 3), (0, 2), (1, 3),
    (4, 5), (6, 7), (4, 6), (5, 7),
    (8, 9), (10, 11), (8, 10), (9, 11),
    (8, 4), (9, 5), (10, 6), (11, 7), (8, 0), (9, 1), (10, 2), (11, 3),
)
# closed coarse surface: sides, hood/windshield, rear window, roof, bumpers, underbody
CAR_FACES = (
    (8, 0, 2), (8, 2, 10), (8, 10, 6), (8, 6, 4),
    (9, 3, 1), (9, 11, 3), (9, 7, 11), (9, 5, 7),
    (8, 4, 5), (8, 5, 9), (10, 11, 7), (10, 7, 6),
    (4, 6, 7), (4, 7, 5),
    (8, 9, 1), (8, 1, 0), (10, 3, 11), (10, 2, 3),
    (0, 1, 3), (0, 3, 2),
)

CAR_PARAM_RANGES = {
    "length": (3.8, 4.8),
    "width": (1.6, 1.9),
    "clearance": (0.12, 0.22),
    "body_height": (0.55, 0.8),
    "cabin_height": (0.45, 0.65),
    "cabin_front": (0.0, 0.15),  # fraction of length ahead of the center
    "cabin_rear": (0.30, 0.42),  # fraction of length behind the center
    "wheel_radius": (0.30, 0.38),
    "wheelbase": (0.56, 0.66),  # fraction of length
}


def toy_car(params=None, rng=None) -> SkeletonModel:
    """Box-composite car: body, cabin frustum, four wheel blocks; K = 12.

    The cabin sits behind the center so front and rear are distinguishable.
    """
    p = _draw_params(CAR_PARAM_RANGES, params, rng)
    L, W = p["length"], p["width"]
    g, hb, hc = p["clearance"], p["body_height"], p["cabin_height"]
    r = p["wheel_radius"]
    z_top = g + hb
    cab_x0, cab_x1 = -p["cabin_rear"] * L, p["cabin_front"] * L
    slope = 0.35 * hc
    roof_x0, roof_x1 = cab_x0 + 0.6 * slope, cab_x1 - slope
    roof_y = 0.4 * W
    body = _box(-L / 2, L / 2, -W / 2, W / 2, g, z_top)
    cabin = _frustum((cab_x0, cab_x1, -0.47 * W, 0.47 * W, z_top), (roof_x0, roof_x1, -roof_y, roof_y, z_top + hc))
    xw = p["wheelbase"] * L / 2
    tw, bulge = 0.22, 0.04
    wheels = []
    for sx in (1, -1):
        for sy in (1, -1):
            y_out = sy * (W / 2 + bulge)
            y_in = sy * (W / 2 - tw)
            wheels.append(_box(sx * xw - r, sx * xw + r, min(y_in, y_out), max(y_in, y_out), 0.0, 2 * r))
    verts, tris = _merge([body, cabin] + wheels)
    kp = []
    for sx in (1, -1):
        for sy in (1, -1):
            kp.append((sx * xw, sy * (W / 2 + bulge), r))
    for x in (roof_x1, roof_x0):
        for sy in (1, -1):
            kp.append((x, sy * roof_y, z_top + hc))
    for sx in (1, -1):
        for sy in (1, -1):
            kp.append((sx * L / 2, sy * W / 2, g))
    return SkeletonModel("car", CAR_KEYPOINTS, kp, CAR_EDGES, CAR_FACES, verts, tris, p)


CHAIR_KEYPOINTS = (
    "leg_front_left", "leg_front_right", "leg_back_left", "leg_back_right",
    "seat_front_left", "seat_front_right", "seat_back_left", "seat_back_right",
    "back_top_left", "back_top_right",
)
CHAIR_EDGES = ((0, 4), (1, 5), (2, 6), (3, 7), (4, 5), (6, 7), (4, 6), (5, 7), (6, 8), (7, 9), (8, 9))
CHAIR_FACES = ((4, 6, 7), (4, 7, 5), (6, 8, 9), (6, 9, 7), (0, 4, 6), (0, 6, 2), (1, 7, 5), (1, 3, 7), (0, 5, 4), (0, 1, 5), (2, 6, 7), (2, 7, 3))
CHAIR_PARAM_RANGES = {
    "seat_width": (0.42, 0.55),
    "seat_depth": (0.40, 0.52),
    "seat_height": (0.40, 0.50),
    "seat_thickness": (0.04, 0.08),
    "back_height": (0.35, 0.55),
    "back_thickness": (0.04, 0.07),
    "leg_width": (0.035, 0.06),
}


def toy_chair(params=None, rng=None) -> SkeletonModel:
    """Seat slab, backrest slab and four legs; K = 10."""
    p = _draw_params(CHAIR_PARAM_RANGES, params, rng)
    w, d, h = p["seat_width"], p["seat_depth"], p["seat_height"]
    t, bh, bt, lw = p["seat_thickness"], p["back_height"], p["back_thickness"], p["leg_width"]
    parts = [_box(-d / 2, d / 2, -w / 2, w / 2, h - t, h), _box(-d / 2, -d / 2 + bt, -w / 2, w / 2, h, h + bh)]
    kp = []
    for sx in (1, -1):
        for sy in (1, -1):
            x_out, y_out = sx * d / 2, sy * w / 2
            x_in, y_in = x_out - sx * lw, y_out - sy * lw
            parts.append(_box(min(x_in, x_out), max(x_in, x_out), min(y_in, y_out), max(y_in, y_out), 0.0, h - t))
            kp.append((x_out, y_out, 0.0))
    for sx in (1, -1):
        for sy in (1, -1):
            kp.append((sx * d / 2, sy * w / 2, h))
    for sy in (1, -1):
        kp.append((-d / 2 + bt, sy * w / 2, h + bh))
    verts, tris = _merge(parts)
    return SkeletonModel("chair", CHAIR_KEYPOINTS, kp, CHAIR_EDGES, CHAIR_FACES, verts, tris, p)


SOFA_KEYPOINTS = (
    "base_front_left", "base_front_right", "seat_front_left", "seat_front_right",
    "arm_front_left", "arm_front_right", "back_top_left", "back_top_right",
    "base_back_left", "base_back_right",
)
SOFA_EDGES = ((0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 5), (4, 6), (5, 7), (6, 7), (6, 8), (7, 9), (8, 9), (0, 8), (1, 9))
SOFA_FACES = ((0, 1, 3), (0, 3, 2), (2, 3, 7), (2, 7, 6), (0, 2, 4), (0, 4, 6), (0, 6, 8), (1, 5, 3), (1, 7, 5), (1, 9, 7), (8, 6, 7), (8, 7, 9), (0, 8, 9), (0, 9, 1))
SOFA_PARAM_RANGES = {
    "width": (1.6, 2.3),
    "depth": (0.8, 1.0),
    "seat_height": (0.38, 0.48),
    "back_height": (0.35, 0.5),
    "back_thickness": (0.15, 0.25),
    "arm_width": (0.12, 0.22),
    "arm_height": (0.15, 0.25),
}


def toy_sofa(params=None, rng=None) -> SkeletonModel:
    """Base block, backrest and two armrests; K = 10."""
    p = _draw_params(SOFA_PARAM_RANGES, params, rng)
    w, d, h = p["width"], p["depth"], p["seat_height"]
    bh, bt, aw, ah = p["back_height"], p["back_thickness"], p["arm_width"], p["arm_height"]
    parts = [
        _box(-d / 2, d / 2, -w / 2, w / 2, 0.0, h),
        _box(-d / 2, -d / 2 + bt, -w / 2, w / 2, h, h + bh),
        _box(-d / 2, d / 2, w / 2 - aw, w / 2, h, h + ah),
        _box(-d / 2, d / 2, -w / 2, -w / 2 + aw, h, h + ah),
    ]
    kp = [
        (d / 2, w / 2, 0.0), (d / 2, -w / 2, 0.0),
        (d / 2, w / 2 - aw, h), (d / 2, -(w / 2 - aw), h),
        (d / 2, w / 2, h + ah), (d / 2, -w / 2, h + ah),
        (-d / 2, w / 2, h + bh), (-d / 2, -w / 2, h + bh),
        (-d / 2, w / 2, 0.0), (-d / 2, -w / 2, 0.0),
    ]
    verts, tris = _merge(parts)
    return SkeletonModel("sofa", SOFA_KEYPOINTS, kp, SOFA_EDGES, SOFA_FACES, verts, tris, p)


BUILDERS = {"car": toy_car, "chair": toy_chair, "sofa": toy_sofa}
PARAM_RANGES = {"car": CAR_PARAM_RANGES, "chair": CHAIR_PARAM_RANGES, "sofa": SOFA_PARAM_RANGES}


def _draw_params(ranges, params, rng):
    if params is not None:
        missing = set(ranges) - set(params)
        if missing:
            raise ValueError(f"missing model parameters: {sorted(missing)}")
        return {k: float(params[k]) for k in ranges}
    if rng is None:
        return {k: 0.5 * (lo + hi) for k, (lo, hi) in ranges.items()}
    return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in ranges.items()}


def make_model(category, params=None, rng=None, normalize=True) -> SkeletonModel:
    """Build a procedural model; params=None and rng=None give the mean instance."""
    if category not in BUILDERS:
        raise ValueError(f"unknown category {category!r}; expected one of {CATEGORIES}")
    model = BUILDERS[category](params, rng)
    return normalize_model(model) if normalize else model


# ---------------------------------------------------------------------------
# cameras


@dataclass(frozen=True)
class Camera:
    azimuth: float  # radians, camera position angle about +z measured from +x
    elevation: float  # radians above the ground plane
    distance: float
    focal: float  # pixels
    principal_point: tuple  # (cx, cy) pixels
    image_size: tuple  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "azimuth", float(self.azimuth) % TWO_PI)
        object.__setattr__(self, "principal_point", tuple(float(v) for v in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        if not self.distance > 0:
            raise ValueError("camera distance must be positive")

    @property
    def center(self):
        ca, sa = math.cos(self.azimuth), math.sin(self.azimuth)
        ce, se = math.cos(self.elevation), math.sin(self.elevation)
        return self.distance * np.array([ce * ca, ce * sa, se])

    @property
    def rotation(self):
        """World-to-camera rotation; rows are the camera x, y, z axes."""
        forward = -self.center / self.distance
        right = np.cross(forward, [0.0, 0.0, 1.0])
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return np.stack([right, down, forward])

    @property
    def intrinsics(self):
        cx, cy = self.principal_point
        return np.array([[self.focal, 0.0, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])

    def to_camera_frame(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - self.center) @ self.rotation.T

    def pixel_ray(self, u, v):
        """World-space direction through pixel coordinate (u, v), scaled to unit depth."""
        cx, cy = self.principal_point
        d_cam = np.stack([(np.asarray(u) - cx) / self.focal, (np.asarray(v) - cy) / self.focal, np.ones(np.shape(u))], axis=-1)
        return d_cam @ self.rotation

    def to_json(self):
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "focal": self.focal,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(doc["azimuth"], doc["elevation"], doc["distance"], doc["focal"], tuple(doc["principal_point"]), tuple(doc["image_size"]))


def project(points, camera: Camera):
    """Pinhole projection of (..., 3) world points to ((..., 2) pixels, (...) depths).

    Raises BehindCamera if any point has non-positive camera-frame depth.
    """
    pc = camera.to_camera_frame(points)
    depth = pc[..., 2]
    if np.any(depth <= 0):
        raise BehindCamera("point at or behind the camera plane")
    cx, cy = camera.principal_point
    uv = np.stack([camera.focal * pc[..., 0] / depth + cx, camera.focal * pc[..., 1] / depth + cy], axis=-1)
    return uv, depth


# ---------------------------------------------------------------------------
# azimuth encoding


@dataclass(frozen=True)
class AzimuthBinning:
    bins: int = 24

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 2:
            raise ValueError("need at least 2 azimuth bins")

    @property
    def width(self):
        return TWO_PI / self.bins

    def index(self, azimuth):
        a = np.mod(np.asarray(azimuth, dtype=np.float64), TWO_PI)
        idx = np.floor(a / self.width).astype(np.int64)
        return np.clip(idx, 0, self.bins - 1)

    def center(self, index):
        return (np.asarray(index) + 0.5) * self.width


def azimuth_to_onehot(azimuth, binning: AzimuthBinning = AzimuthBinning()):
    out = np.zeros(binning.bins)
    out[int(binning.index(azimuth))] = 1.0
    return out
