"""Scene sampling, label encoding and the binary dataset format.

File layout of ``samples.dsc`` (little-endian):

    header   4s magic "DSC1" | u16 schema version | u16 M | u16 K | u16 reserved | u64 record count
    record   u16 W, H, C | u8 image[H*W*C] (round(value * 255)) | f32 pose one-hot[M]
             | u8 visibility[K] | f32 keypoints 2D[2K] | f32 keypoints 3D[3K]
             | u8 occlusion class | u64 seed

``manifest.json`` next to it records the byte offset of every record and the
per-record metadata (category, model parameters, camera, crop).
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, SamplingExhausted
from .render import (
    BackgroundSpec,
    CropRecord,
    Placement,
    SceneConfig,
    boxes_overlap,
    composite_background,
    keypoint_visibility,
    placement_bounds,
    rasterize,
    truncate,
)
from .skelgeom import PARAM_RANGES, AzimuthBinning, Camera, azimuth_to_onehot, make_model, project

MAGIC = b"DSC1"
SCHEMA_VERSION = 1
HEADER = struct.Struct("<4sHHHHQ")
OCCLUSION_CLASSES = ("full", "truncated", "multi_object")
CAR_CLASS_MIX = {"full": 0.5, "truncated": 0.2, "multi_object": 0.3}
HOLDOUT_INSTANCES = 5


@dataclass(frozen=True)
class RenderConfig:
    image_size: int = 64
    bins: int = 24
    distance: tuple = (2.0, 3.0)
    elevation_deg: tuple = (0.0, 30.0)
    crop_padding: tuple = (0.05, 0.25)
    center_jitter: float = 0.05
    occlusion_range: tuple = (0.4, 0.9)
    max_attempts: int = 40
    light_strength: tuple = (0.5, 1.5)


@dataclass(eq=False)
class RenderedSample:
    image: np.ndarray  # (H, W, C) float32, multiples of 1/255
    pose_onehot: np.ndarray  # (M,) float32
    visibility: np.ndarray  # (K,) uint8, 1 = occluded
    keypoints_2d: np.ndarray  # (K, 2) float32, [0, 1] inside the image
    keypoints_3d: np.ndarray  # (K, 3) float32, normalized object frame
    occlusion_class: str
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def num_keypoints(self):
        return len(self.visibility)


def quantize_image(img):
    """Round to 8-bit levels and return as float32 multiples of 1/255."""
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return q.astype(np.float32) / np.float32(255.0)


def samples_equal(a: RenderedSample, b: RenderedSample, meta=True):
    """Bitwise equality of all record fields (and metadata if requested)."""
    arrays = ("image", "pose_onehot", "visibility", "keypoints_2d", "keypoints_3d")
    for name in arrays:
        x, y = getattr(a, name), getattr(b, name)
        if x.dtype != y.dtype or x.shape != y.shape or x.tobytes() != y.tobytes():
            return False
    same = a.occlusion_class == b.occlusion_class and a.seed == b.seed
    return same and (not meta or a.meta == b.meta)


# ---------------------------------------------------------------------------
# scene sampling


def _random_background(rng):
    kind = ("uniform", "gradient", "checker", "noise")[int(rng.integers(4))]
    lo = float(rng.uniform(0.0, 0.5))
    hi = float(min(1.0, lo + rng.uniform(0.2, 0.5)))
    params = {"low": lo, "high": hi, "value": float(rng.uniform(0.1, 0.9))}
    if kind == "gradient":
        params["angle"] = float(rng.uniform(0, 2 * math.pi))
    elif kind == "checker":
        params["period"] = int(rng.integers(4, 13))
    elif kind == "noise":
        params["cells"] = int(rng.integers(2, 7))
    return BackgroundSpec(kind, int(rng.integers(2**31)), params)


def _object_camera(model, rng, cfg: RenderConfig):
    """Random viewpoint with intrinsics chosen so the object fills a padded crop."""
    az = float(rng.uniform(0.0, 2 * math.pi))
    el = math.radians(float(rng.uniform(*cfg.elevation_deg)))
    dist = float(rng.uniform(*cfg.distance))
    size = cfg.image_size
    unit = Camera(az, el, dist, 1.0, (0.0, 0.0), (size, size))
    uv, _ = project(model.mesh_vertices, unit)
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    side = (hi - lo).max() * (1.0 + float(rng.uniform(*cfg.crop_padding)))
    center = 0.5 * (lo + hi) + cfg.center_jitter * side * rng.uniform(-1, 1, 2)
    focal = size / side
    pp = (size / 2 - focal * center[0], size / 2 - focal * center[1])
    return Camera(az, el, dist, focal, pp, (size, size))


def _light(camera, rng):
    d = camera.center / camera.distance + rng.normal(0.0, 0.6, 3) + np.array([0.0, 0.0, 0.5])
    return d / np.linalg.norm(d)


def _occluder_category(category, rng):
    if category == "car":
        return "car"
    return ("chair", "sofa")[int(rng.integers(2))]


def sample_scene(rng, occlusion_class="full", category="car", cfg: RenderConfig = RenderConfig(), target_params=None):
    """Draw a scene whose instance 0 is the labeled target at the origin.

    multi_object scenes add a second, non-overlapping instance between the
    camera and the target and keep it only if the target's visible fraction
    lies in cfg.occlusion_range; SamplingExhausted after cfg.max_attempts.
    """
    if occlusion_class not in OCCLUSION_CLASSES:
        raise ValueError(f"unknown occlusion class {occlusion_class!r}")
    target = make_model(category, params=target_params, rng=rng)
    camera = _object_camera(target, rng, cfg)
    light = _light(camera, rng)
    strength = float(rng.uniform(*cfg.light_strength))
    background = _random_background(rng)
    base = SceneConfig(((target, Placement()),), camera, light, strength, background)
    if occlusion_class != "multi_object":
        return base

    alone = int((rasterize(base).instance_id == 1).sum())
    target_box = placement_bounds(target, Placement())
    ground = target.mesh_vertices[:, 2].min()
    toward = np.array([math.cos(camera.azimuth), math.sin(camera.azimuth), 0.0])
    lateral = np.array([-toward[1], toward[0], 0.0])
    lo, hi = cfg.occlusion_range
    for _ in range(cfg.max_attempts):
        occluder = make_model(_occluder_category(category, rng), rng=rng)
        yaw = float(rng.uniform(0, 2 * math.pi))
        offset = toward * rng.uniform(0.5, 1.3) + lateral * rng.uniform(-0.7, 0.7)
        offset[2] = ground - occluder.mesh_vertices[:, 2].min()
        place = Placement.yaw(yaw, offset)
        if boxes_overlap(target_box, placement_bounds(occluder, place)):
            continue
        depth = camera.to_camera_frame(place.apply(occluder.mesh_vertices))[:, 2]
        if depth.min() < 0.3:
            continue
        scene = SceneConfig(((target, Placement()), (occluder, place)), camera, light, strength, background)
        visible = int((rasterize(scene).instance_id == 1).sum())
        if alone and lo <= visible / alone <= hi:
            return scene
    raise SamplingExhausted(f"no occluder placement within {cfg.max_attempts} attempts")


def sample_truncation(rng):
    """Two distinct image boundaries, each shifted by U[0, 0.3] of the image size."""
    pick = rng.choice(4, size=2, replace=False)
    sides = ("left", "right", "top", "bottom")
    return {sides[int(i)]: float(rng.uniform(0.0, 0.3)) for i in pick}


def encode_sample(scene: SceneConfig, frame, crop: CropRecord | None = None, binning=AzimuthBinning(),
                  occlusion_class="full", seed=0, meta=None) -> RenderedSample:
    """Turn a rendered scene into image + {pose, visibility, 3D, 2D} labels for instance 0."""
    model, place = scene.instances[0]
    cam = scene.camera
    width, height = cam.image_size
    kp_world = place.apply(model.keypoints)
    occluded = keypoint_visibility(scene, kp_world)
    uv, _ = project(kp_world, cam)
    if crop is not None:
        uv = crop.apply(uv)
        occluded |= ~((uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height))
    kp2d = (uv / np.array([width, height])).astype(np.float32)
    image = quantize_image(composite_background(frame, scene.background))
    info = {
        "category": model.category,
        "params": dict(model.params),
        "camera": cam.to_json(),
        "crop": crop.to_json() if crop is not None else None,
    }
    info.update(meta or {})
    return RenderedSample(
        image=image,
        pose_onehot=azimuth_to_onehot(cam.azimuth, binning).astype(np.float32),
        visibility=occluded.astype(np.uint8),
        keypoints_2d=kp2d,
        keypoints_3d=model.keypoints.astype(np.float32),
        occlusion_class=occlusion_class,
        seed=int(seed),
        meta=info,
    )


def draw_scene(rng, occlusion_class="full", category="car", cfg: RenderConfig = RenderConfig(), target_params=None):
    """sample_scene, redrawn from the same generator when occluder placement runs out."""
    for _ in range(20):
        try:
            return sample_scene(rng, occlusion_class, category, cfg, target_params)
        except SamplingExhausted:
            continue
    raise SamplingExhausted("scene sampling kept failing")


def generate_sample(seed, occlusion_class="full", category="car", cfg: RenderConfig = RenderConfig(), target_params=None):
    """Render and label one sample; fully determined by its arguments."""
    rng = np.random.default_rng(seed)
    scene = draw_scene(rng, occlusion_class, category, cfg, target_params)
    frame = rasterize(scene)
    crop = None
    if occlusion_class == "truncated":
        frame, crop = truncate(frame, sample_truncation(rng))
    return encode_sample(scene, frame, crop, AzimuthBinning(cfg.bins), occlusion_class, seed)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 1000
    seed: int = 0
    category_mix: dict = field(default_factory=lambda: {"car": 1.0})
    class_mix: dict = field(default_factory=lambda: dict(CAR_CLASS_MIX))
    split: str = "train"  # "train" draws fresh instances, "val" uses held-out ones
    render: RenderConfig = RenderConfig()

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        render = RenderConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.pop("render", {}).items()})
        return cls(render=render, **doc)

    def to_dict(self):
        return {
            "count": self.count,
            "seed": self.seed,
            "category_mix": dict(self.category_mix),
            "class_mix": dict(self.class_mix),
            "split": self.split,
            "render": {k: list(v) if isinstance(v, tuple) else v for k, v in self.render.__dict__.items()},
        }


def allocate(total, proportions):
    """Largest-remainder split of `total` items by (name -> weight) proportions."""
    names = list(proportions)
    w = np.array([float(proportions[n]) for n in names])
    if total < 0 or np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("proportions must be non-negative with a positive sum")
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(int)
    rest = total - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:rest]] += 1
    return {n: int(c) for n, c in zip(names, counts)}


def sample_seed(global_seed, index):
    """Per-sample 64-bit seed derived from (global seed, index)."""
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1, np.uint64)[0])


def holdout_params(category, n=HOLDOUT_INSTANCES):
    """Fixed parameter vectors reserved for validation."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, list(PARAM_RANGES).index(category)]))
    return [{k: float(rng.uniform(lo, hi)) for k, (lo, hi) in PARAM_RANGES[category].items()} for _ in range(n)]


def plan_dataset(cfg: DatasetConfig):
    """(seed, class, category, params) job for every record, in index order."""
    classes = allocate(cfg.count, cfg.class_mix)
    cats = allocate(cfg.count, cfg.category_mix)
    class_list = np.array([c for c, n in classes.items() for _ in range(n)], dtype=object)
    cat_list = np.array([c for c, n in cats.items() for _ in range(n)], dtype=object)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 2**32 - 1]))
    class_list = class_list[rng.permutation(cfg.count)]
    cat_list = cat_list[rng.permutation(cfg.count)]
    holdout = {c: holdout_params(c) for c in cats} if cfg.split == "val" else None
    jobs = []
    for i in range(cfg.count):
        params = None
        if holdout is not None:
            params = holdout[cat_list[i]][i % HOLDOUT_INSTANCES]
        jobs.append((sample_seed(cfg.seed, i), str(class_list[i]), str(cat_list[i]), params))
    return jobs


def _run_job(args):
    seed, occ, cat, params, render_cfg = args
    return generate_sample(seed, occ, cat, render_cfg, params)


def worker_count():
    try:
        return max(1, int(os.environ.get("DISCO_THREADS", "1")))
    except ValueError:
        return 1


def generate_dataset(cfg: DatasetConfig, workers=None, progress=None):
    """Render every record of a dataset. Output is independent of `workers`."""
    jobs = [job + (cfg.render,) for job in plan_dataset(cfg)]
    workers = worker_count() if workers is None else workers
    ks = {make_model(c).num_keypoints for c, w in cfg.category_mix.items() if w > 0}
    if len(ks) > 1:
        raise ConfigError("categories with different keypoint counts cannot share a dataset")
    samples = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            for i, s in enumerate(pool.map(_run_job, jobs, chunksize=16)):
                samples.append(s)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            samples.append(_run_job(job))
            if progress:
                progress(i + 1, len(jobs))
    return samples


def _record_bytes(s: RenderedSample):
    h, w, c = s.image.shape
    img = np.round(s.image * np.float32(255.0)).astype(np.uint8)
    parts = [
        struct.pack("<HHH", w, h, c),
        img.tobytes(),
        s.pose_onehot.astype("<f4").tobytes(),
        s.visibility.astype(np.uint8).tobytes(),
        s.keypoints_2d.astype("<f4").tobytes(),
        s.keypoints_3d.astype("<f4").tobytes(),
        struct.pack("<BQ", OCCLUSION_CLASSES.index(s.occlusion_class), s.seed),
    ]
    return b"".join(parts)


def write_dataset(samples, path, config: DatasetConfig | None = None, bins=None):
    """Write samples.dsc and manifest.json into directory `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    samples = list(samples)
    if samples:
        m, k = len(samples[0].pose_onehot), samples[0].num_keypoints
        if any(len(s.pose_onehot) != m or s.num_keypoints != k for s in samples):
            raise FormatError("all records must share M and K")
    else:
        m = bins if bins is not None else (config.render.bins if config else 24)
        k = 0
    offsets, pos = [], HEADER.size
    with open(path / "samples.dsc", "wb") as fh:
        fh.write(HEADER.pack(MAGIC, SCHEMA_VERSION, m, k, 0, len(samples)))
        for s in samples:
            rec = _record_bytes(s)
            offsets.append(pos)
            fh.write(rec)
            pos += len(rec)
    counts = {c: 0 for c in OCCLUSION_CLASSES}
    cats = {}
    for s in samples:
        counts[s.occlusion_class] += 1
        cat = s.meta.get("category")
        cats[cat] = cats.get(cat, 0) + 1
    h, w, c = samples[0].image.shape if samples else (None, None, None)
    manifest = {
        "schemaVersion": SCHEMA_VERSION,
        "total": len(samples),
        "counts": counts,
        "categoryCounts": cats,
        "M": m,
        "K": k,
        "imageSize": [w, h],
        "channels": c,
        "seed": config.seed if config else None,
        "config": config.to_dict() if config else None,
        "offsets": offsets,
        "records": [s.meta for s in samples],
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh)
    return manifest


def read_manifest(path):
    path = Path(path)
    try:
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest in {path}: {exc}") from exc
    if manifest.get("schemaVersion") != SCHEMA_VERSION:
        raise FormatError(f"schema version {manifest.get('schemaVersion')} != {SCHEMA_VERSION}")
    return manifest


def read_dataset(path):
    """Inverse of write_dataset; raises FormatError on any inconsistency."""
    path = Path(path)
    manifest = read_manifest(path)
    try:
        raw = (path / "samples.dsc").read_bytes()
    except OSError as exc:
        raise FormatError(str(exc)) from exc
    if len(raw) < HEADER.size:
        raise FormatError("file shorter than header")
    magic, version, m, k, _, count = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != SCHEMA_VERSION:
        raise FormatError(f"schema version {version} != {SCHEMA_VERSION}")
    if (m, k, count) != (manifest["M"], manifest["K"], manifest["total"]):
        raise FormatError("header does not match manifest")
    offsets = manifest["offsets"]
    if len(offsets) != count or len(manifest["records"]) != count:
        raise FormatError("manifest offsets/records do not match record count")
    samples, pos = [], HEADER.size
    for i in range(count):
        if offsets[i] != pos:
            raise FormatError(f"record {i} offset {offsets[i]} != {pos}")
        if pos + 6 > len(raw):
            raise FormatError("truncated file")
        w, h, c = struct.unpack_from("<HHH", raw, pos)
        size = 6 + w * h * c + 4 * m + k + 8 * k + 12 * k + 9
        if pos + size > len(raw):
            raise FormatError("truncated file")
        p = pos + 6
        img = np.frombuffer(raw, np.uint8, w * h * c, p).reshape(h, w, c)
        p += w * h * c
        pose = np.frombuffer(raw, "<f4", m, p).astype(np.float32)
        p += 4 * m
        vis = np.frombuffer(raw, np.uint8, k, p).copy()
        p += k
        kp2 = np.frombuffer(raw, "<f4", 2 * k, p).astype(np.float32).reshape(k, 2)
        p += 8 * k
        kp3 = np.frombuffer(raw, "<f4", 3 * k, p).astype(np.float32).reshape(k, 3)
        p += 12 * k
        occ, seed = struct.unpack_from("<BQ", raw, p)
        if occ >= len(OCCLUSION_CLASSES):
            raise FormatError(f"bad occlusion class code {occ}")
        samples.append(RenderedSample(
            image=img.astype(np.float32) / np.float32(255.0),
            pose_onehot=pose,
            visibility=vis,
            keypoints_2d=kp2,
            keypoints_3d=kp3,
            occlusion_class=OCCLUSION_CLASSES[occ],
            seed=seed,
            meta=manifest["records"][i],
        ))
        pos += size
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes")
    return samples


def stack_samples(samples):
    """Arrays for training: images (N,H,W,C) uint8 plus label arrays."""
    return {
        "images": np.stack([np.round(s.image * 255).astype(np.uint8) for s in samples]),
        "pose": np.stack([s.pose_onehot for s in samples]).astype(np.float32),
        "visibility": np.stack([s.visibility for s in samples]).astype(np.float32),
        "kp3d": np.stack([s.keypoints_3d.ravel() for s in samples]).astype(np.float32),
        "kp2d": np.stack([s.keypoints_2d.ravel() for s in samples]).astype(np.float32),
        "classes": np.array([s.occlusion_class for s in samples]),
        "categories": np.array([s.meta.get("category", "") for s in samples]),
    }

