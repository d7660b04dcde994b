"""
Lifting 2D landmarks with a shape model
=======================================

Fits a 5-component PCA model of car keypoints to 2D landmarks by searching
over viewpoints and refining pose and shape jointly.
"""

import math

import numpy as np

from disco import shapefit as sf
from disco.skelgeom import Camera, project

model = sf.category_model("car", samples=200, components=5)
print("component std", model.stddev.round(4))

rng = np.random.default_rng(0)
truth = rng.uniform(-1.5, 1.5, 5) * model.stddev
cam = Camera(math.radians(130), math.radians(18), 2.6, 60.0, (32, 32), (64, 64))
landmarks, _ = project(model.shape(truth), cam)

# two hidden landmarks are simply left out of the fit
occluded = np.zeros(12)
occluded[[3, 7]] = 1
fit = sf.fit_pca_to_2d(landmarks, occluded, model, cam)
print("azimuth", round(math.degrees(fit.azimuth), 3), "elevation", round(math.degrees(fit.elevation), 3))
print("coefficient error", np.abs(fit.coefficients - truth).max())
print("cost per iteration", [f"{c:.1e}" for c in fit.history[:6]])
