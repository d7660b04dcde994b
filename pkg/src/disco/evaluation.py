"""Keypoint metrics (PCK, APK, 3D PCK, average recall), PCA-basis alignment,
skeleton masks and pose error."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import DegenerateGeometry, EmptyEvaluation
from .skelgeom import TWO_PI, AzimuthBinning

RECALL_GRID = np.round(np.arange(1, 101) * 0.01, 2)


def _distances(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def pck_2d(pred, gt, occluded, alpha=0.1, L=64.0):
    """Fraction of ground-truth-visible keypoints predicted within alpha * L pixels.

    pred, gt: (..., K, 2) pixel coordinates; occluded: (..., K), nonzero = occluded.
    """
    dist = _distances(pred, gt)
    visible = np.asarray(occluded) == 0
    if not visible.any():
        raise EmptyEvaluation("no visible keypoints")
    return float((dist[visible] <= alpha * L).mean())


def pck_3d(pred, gt, alpha=0.1):
    """Fraction of 3D keypoints closer than alpha to ground truth (normalized units)."""
    dist = _distances(pred, gt)
    if dist.size == 0:
        raise EmptyEvaluation("no keypoints")
    return float((dist < alpha).mean())


def average_precision(scores, correct, num_positives):
    """All-points interpolated AP of a ranked detection list."""
    if num_positives == 0:
        raise EmptyEvaluation("no positives")
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(correct, dtype=np.float64)[order]
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(tp) + 1)
    recall = cum_tp / num_positives
    # precision envelope, then sum over recall steps
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev) * envelope).sum())


def apk(pred, confidence, gt, occluded, alpha=0.1, L=64.0):
    """Mean over keypoint types of the average precision of keypoint detections.

    Every image contributes one detection per type, ranked across images by
    confidence (higher = more likely visible). A detection is a true positive
    when its image has a visible, still unmatched ground truth of that type
    within alpha * L.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    confidence = np.asarray(confidence, dtype=np.float64)
    visible = np.asarray(occluded) == 0
    n, k = visible.shape
    aps = []
    for j in range(k):
        positives = int(visible[:, j].sum())
        if positives == 0:
            continue
        order = np.argsort(-confidence[:, j], kind="stable")
        matched = np.zeros(n, dtype=bool)
        correct = np.zeros(n)
        for rank, i in enumerate(order):
            if visible[i, j] and not matched[i] and np.linalg.norm(pred[i, j] - gt[i, j]) <= alpha * L:
                matched[i] = True
                correct[rank] = 1.0
        sorted_scores = confidence[order, j]
        aps.append(average_precision(sorted_scores, correct, positives))
    if not aps:
        raise EmptyEvaluation("no visible keypoints of any type")
    return float(np.mean(aps))


def _principal_axes(points):
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered
    vals, vecs = np.linalg.eigh(cov)
    if vals[-2] <= 1e-12 * max(vals[-1], 1e-300):
        raise DegenerateGeometry("point set is rank deficient")
    return vecs[:, ::-1]


def _proper_candidates(pred_axes, gt_axes):
    for signs in itertools.product((1.0, -1.0), repeat=3):
        r = gt_axes @ np.diag(signs) @ pred_axes.T
        if np.linalg.det(r) > 0:
            yield r


def pca_align(pred, gt, return_rotation=False):
    """Rotate `pred` so its principal axes coincide with those of `gt`.

    Among the sign choices that give a proper rotation, the one with the lowest
    RMSE to `gt` wins; the unrotated prediction is kept when it is already
    better. The result is centered on the ground-truth centroid.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if len(pred) < 3 or pred.shape != gt.shape:
        raise DegenerateGeometry("need matching sets of at least 3 points")
    cp, cg = pred.mean(axis=0), gt.mean(axis=0)
    pa, ga = _principal_axes(pred), _principal_axes(gt)
    best, best_err = np.eye(3), None
    for r in itertools.chain([np.eye(3)], _proper_candidates(pa, ga)):
        aligned = (pred - cp) @ r.T + cg
        err = np.sqrt(((aligned - gt) ** 2).sum(axis=1).mean())
        if best_err is None or err < best_err - 1e-12:
            best, best_err = r, err
    out = (pred - cp) @ best.T + cg
    return (out, best) if return_rotation else out


def average_recall(pred, gt, align=True, grid=RECALL_GRID):
    """Mean 3D PCK over the alpha grid 0.01 .. 1.00.

    pred, gt: (K, 3) or (N, K, 3); each shape is PCA-aligned first when align is set.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if align:
        pred = np.stack([pca_align(p, g) for p, g in zip(pred, gt)])
    dist = _distances(pred, gt).ravel()
    return float(np.mean([(dist < a).mean() for a in grid]))


def fill_triangles(triangles, width, height):
    """Boolean (H, W) mask of pixel centers covered by any 2D triangle (edges inclusive)."""
    mask = np.zeros((height, width), dtype=bool)
    px = np.arange(width) + 0.5
    py = (np.arange(height) + 0.5)[:, None]
    for (x0, y0), (x1, y1), (x2, y2) in np.asarray(triangles, dtype=np.float64):
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0:
            continue
        e0 = ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) / area
        e1 = ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)) / area
        e2 = ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)) / area
        mask |= (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
    return mask


def skeleton_to_mask(kp2d, faces, image_size):
    """Project the coarse keypoint mesh: union of filled face triangles in pixel space."""
    width, height = image_size
    kp2d = np.asarray(kp2d, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size and faces.max() >= len(kp2d):
        raise ValueError("face refers to a keypoint without a 2D estimate")
    return fill_triangles(kp2d[faces], width, height)


def iou(a, b):
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        raise EmptyEvaluation("both masks are empty")
    return float(np.logical_and(a, b).sum() / union)


def pose_error(pred_onehot, gt_azimuth, binning: AzimuthBinning = AzimuthBinning()):
    """Absolute circular difference (degrees) between the argmax bin center and the true azimuth."""
    pred_onehot = np.atleast_2d(pred_onehot)
    centers = binning.center(np.argmax(pred_onehot, axis=1))
    diff = np.abs(np.mod(centers - np.asarray(gt_azimuth), TWO_PI))
    diff = np.minimum(diff, TWO_PI - diff)
    out = np.degrees(diff)
    return float(out[0]) if out.shape == (1,) else out


def visibility_confidence(visibility_output):
    """Visibility head regresses 1 = occluded; flip so that higher means visible."""
    return 1.0 - np.asarray(visibility_output)


def metric_report(metric, alpha, value, sample_count, per_class=None):
    return {
        "metric": metric,
        "alpha": alpha,
        "value": value,
        "sampleCount": int(sample_count),
        "perClass": per_class or {},
    }


def evaluate_predictions(pred, gt, alpha=0.1, image_size=(64, 64), classes=None):
    """All metrics for prediction/ground-truth arrays keyed like the network outputs.

    pred: {"kp2d": (N, 2K) normalized, "kp3d": (N, 3K), "visibility": (N, K), "pose": (N, M)}
    gt:   same keys plus "azimuth" (N,) when pose error is wanted.
    """
    width, height = image_size
    L = float(max(width, height))
    scale = np.array([width, height], dtype=np.float64)
    reports = []
    n = len(gt["visibility"])
    classes = np.asarray(classes) if classes is not None else np.array(["all"] * n)
    occluded = np.asarray(gt["visibility"])
    k = occluded.shape[1]

    def split(fn):
        per = {}
        for c in sorted(set(classes.tolist())):
            sel = classes == c
            try:
                per[c] = fn(sel)
            except EmptyEvaluation:
                per[c] = None
        return per

    if "kp2d" in pred:
        p2 = np.asarray(pred["kp2d"]).reshape(n, k, 2) * scale
        g2 = np.asarray(gt["kp2d"]).reshape(n, k, 2) * scale
        f = lambda sel: pck_2d(p2[sel], g2[sel], occluded[sel], alpha, L)
        reports.append(metric_report("pck2d", alpha, f(np.ones(n, bool)), n, split(f)))
        if "visibility" in pred:
            conf = visibility_confidence(pred["visibility"])
            f = lambda sel: apk(p2[sel], conf[sel], g2[sel], occluded[sel], alpha, L)
            reports.append(metric_report("apk", alpha, f(np.ones(n, bool)), n, split(f)))
    if "kp3d" in pred:
        p3 = np.asarray(pred["kp3d"]).reshape(n, k, 3)
        g3 = np.asarray(gt["kp3d"]).reshape(n, k, 3)
        f = lambda sel: pck_3d(p3[sel], g3[sel], alpha)
        reports.append(metric_report("pck3d", alpha, f(np.ones(n, bool)), n, split(f)))
        f = lambda sel: average_recall(p3[sel], g3[sel])
        reports.append(metric_report("average_recall", None, f(np.ones(n, bool)), n, split(f)))
    if "visibility" in pred:
        acc = lambda sel: float(((np.asarray(pred["visibility"])[sel] >= 0.5) == (occluded[sel] != 0)).mean())
        reports.append(metric_report("visibility_accuracy", None, acc(np.ones(n, bool)), n, split(acc)))
    if "pose" in pred and "azimuth" in gt:
        m = np.asarray(pred["pose"]).shape[1]
        err = np.atleast_1d(pose_error(pred["pose"], gt["azimuth"], AzimuthBinning(m)))
        f = lambda sel: float(err[sel].mean())
        reports.append(metric_report("pose_error_deg", None, f(np.ones(n, bool)), n, split(f)))
    return reports


def pck_curve(pred2d, gt2d, occluded, alphas, L=64.0):
    return [(float(a), pck_2d(pred2d, gt2d, occluded, a, L)) for a in alphas]


def circular_difference_deg(a, b):
    d = abs(math.fmod(a - b, TWO_PI))
    return math.degrees(min(d, TWO_PI - d))
