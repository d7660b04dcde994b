"""
Keypoint metrics
================

PCK in 2D and 3D, APK with visibility-derived confidences, average recall
after principal-axis alignment, and mask IoU.
"""

import numpy as np

from disco import evaluation as ev

rng = np.random.default_rng(5)
n, k = 40, 12
gt = rng.uniform(0, 64, (n, k, 2))
pred = gt + rng.normal(0, 5, (n, k, 2))
occluded = rng.random((n, k)) < 0.3

for alpha in (0.05, 0.1, 0.2):
    print(f"PCK@{alpha}", round(ev.pck_2d(pred, gt, occluded, alpha, 64), 3))

# a visibility head that is right about most keypoints gives a useful ranking
vis_output = np.where(rng.random((n, k)) < 0.8, occluded, ~occluded).astype(float)
print("APK", round(ev.apk(pred, ev.visibility_confidence(vis_output), gt, occluded), 3))

# 3D: a rotated copy of the ground truth is perfect once aligned
gt3 = rng.normal(size=(k, 3)) * [0.5, 0.25, 0.1]
angle = 0.8
rot = np.array([[np.cos(angle), -np.sin(angle), 0], [np.sin(angle), np.cos(angle), 0], [0, 0, 1]])
pred3 = gt3 @ rot.T
print("3D PCK raw", ev.pck_3d(pred3, gt3, 0.1), "aligned", ev.pck_3d(ev.pca_align(pred3, gt3), gt3, 0.1))
print("average recall", round(ev.average_recall(pred3, gt3), 3))

# masks from a coarse mesh over the keypoints
square = np.array([[8.0, 8.0], [24.0, 8.0], [24.0, 24.0], [8.0, 24.0]])
faces = [[0, 1, 2], [0, 2, 3]]
a = ev.skeleton_to_mask(square, faces, (32, 32))
b = ev.skeleton_to_mask(square + 4, faces, (32, 32))
print("IoU of shifted squares", round(ev.iou(a, b), 3))
