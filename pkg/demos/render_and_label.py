"""
Rendering a labeled sample
==========================

Builds a procedural car, frames a camera on it, adds an occluding car and
turns the rendered frame into the four supervision targets.
"""

import math

import numpy as np

from disco import datagen as dg
from disco import render as rd
from disco import skelgeom as sg

rng = np.random.default_rng(3)

# a toy car: 12 named keypoints on a cuboid-composite body
car = sg.make_model("car", rng=rng)
print(car.keypoint_names)
print("extent", car.keypoints.max(0) - car.keypoints.min(0))

# the same keypoints projected from a camera 2.5 units away, 20 degrees up
cam = sg.Camera(math.radians(40), math.radians(20), 2.5, 60.0, (32, 32), (64, 64))
uv, depth = sg.project(car.keypoints, cam)
print("pixel coordinates\n", uv.round(1))

# a multi-object scene: instance 0 is the target, the second car hides part of it
scene = dg.draw_scene(rng, "multi_object")
print("visible fraction of the target", round(rd.occlusion_ratio(scene, 0), 3))

frame = rd.rasterize(scene)
sample = dg.encode_sample(scene, frame, occlusion_class="multi_object")
print("pose bin", int(np.argmax(sample.pose_onehot)), "of", len(sample.pose_onehot))
print("occluded keypoints", np.flatnonzero(sample.visibility))
print("2D keypoints (fraction of the image)\n", sample.keypoints_2d.round(3))

# truncation shifts two image borders inward and resamples the crop
cropped, crop = rd.truncate(frame, {"left": 0.25, "top": 0.1})
print("crop window", crop.x0, crop.y0, "scale", crop.scale)

# frames can be dumped as PGM for a quick look
rd.write_pnm(frame, "scene.pgm")
