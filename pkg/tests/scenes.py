"""Scene builders and independent oracles shared by the render tests."""

import math

import numpy as np

from disco import render as rd
from disco import skelgeom as sg
from disco.datagen import RenderConfig, _object_camera


def box_model(x0, x1, y0, y1, z0, z1):
    v, t = sg._box(x0, x1, y0, y1, z0, z1)
    return sg.SkeletonModel("car", [f"c{i}" for i in range(8)], v, [], [], v, t)


def random_pair_scene(rng, size=32):
    """Two random procedural instances that do not overlap, camera framed on the first."""
    cats = sg.CATEGORIES
    target = sg.make_model(cats[int(rng.integers(3))], rng=rng)
    cfg = RenderConfig(image_size=size)
    camera = _object_camera(target, rng, cfg)
    box_t = rd.placement_bounds(target, rd.Placement())
    toward = np.array([math.cos(camera.azimuth), math.sin(camera.azimuth), 0.0])
    lateral = np.array([-toward[1], toward[0], 0.0])
    while True:
        other = sg.make_model(cats[int(rng.integers(3))], rng=rng)
        offset = toward * rng.uniform(0.4, 1.4) + lateral * rng.uniform(-0.8, 0.8)
        offset[2] = rng.uniform(-0.1, 0.1)
        place = rd.Placement.yaw(rng.uniform(0, 2 * math.pi), offset)
        if rd.boxes_overlap(box_t, rd.placement_bounds(other, place)):
            continue
        depth = camera.to_camera_frame(place.apply(other.mesh_vertices))[:, 2]
        if depth.min() > 0.3:
            break
    light = rng.normal(size=3)
    return rd.SceneConfig(((target, rd.Placement()), (other, place)), camera, light, 1.0)


def brute_force_winners(scene):
    """Per-pixel nearest hit of each instance, by casting one ray per pixel center
    against every triangle (plane intersection + inside test).

    Returns (instance id image, depth image, per-instance depth stack (I, H, W)).
    """
    cam = scene.camera
    w, h = cam.image_size
    tris, ids = scene.world_triangles()
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs = cam.pixel_ray(uu.ravel(), vv.ravel())  # unit camera depth per ray
    o = cam.center
    per = np.full((ids.max(), len(dirs)), np.inf)
    for tri, inst in zip(tris, ids):
        a, b, c = tri
        n = np.cross(b - a, c - a)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((a - o) @ n) / denom
            p = o + t[:, None] * dirs
        s0 = np.cross(b - a, p - a) @ n
        s1 = np.cross(c - b, p - b) @ n
        s2 = np.cross(a - c, p - c) @ n
        hit = (np.abs(denom) > 1e-15) & (t > 0) & (s0 >= 0) & (s1 >= 0) & (s2 >= 0)
        per[inst - 1] = np.minimum(per[inst - 1], np.where(hit, t, np.inf))
    depth = per.min(axis=0)
    who = np.where(np.isfinite(depth), per.argmin(axis=0) + 1, 0)
    return who.reshape(h, w), depth.reshape(h, w), per.reshape(-1, h, w)


def brute_force_visibility(scene, keypoints, tolerance=rd.VIS_TOLERANCE):
    """Per-keypoint, per-triangle segment test written as plain loops."""
    cam = scene.camera
    w, h = cam.image_size
    tris, _ = scene.world_triangles()
    o = cam.center
    out = []
    for kp in keypoints:
        pc = cam.to_camera_frame(kp[None])[0]
        if pc[2] <= 0:
            out.append(True)
            continue
        u = cam.focal * pc[0] / pc[2] + cam.principal_point[0]
        v = cam.focal * pc[1] / pc[2] + cam.principal_point[1]
        if not (0 <= u < w and 0 <= v < h):
            out.append(True)
            continue
        seg = kp - o
        length = math.sqrt(seg @ seg)
        occluded = False
        for a, b, c in tris:
            e1, e2 = b - a, c - a
            pv = np.cross(seg, e2)
            det = e1 @ pv
            if abs(det) <= 1e-12:
                continue
            tv = o - a
            uu = (tv @ pv) / det
            qv = np.cross(tv, e1)
            vv = (seg @ qv) / det
            t = (e2 @ qv) / det
            if uu >= 0 and vv >= 0 and uu + vv <= 1 and t > 0 and t * length < length - tolerance:
                occluded = True
                break
        out.append(occluded)
    return np.array(out)
