"""Linear (PCA) shape models over 3D keypoints and their fit to 2D landmarks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NoConvergence, UnderConstrained
from .skelgeom import TWO_PI, Camera, make_model

MIN_VISIBLE = 6


@dataclass(frozen=True)
class PcaShapeModel:
    mean: np.ndarray  # (K, 3)
    basis: np.ndarray  # (B, K, 3), orthonormal when flattened
    stddev: np.ndarray  # (B,) per-component standard deviation of the training shapes

    @property
    def num_components(self):
        return len(self.basis)

    def shape(self, coefficients):
        c = np.asarray(coefficients, dtype=np.float64)
        return self.mean + np.tensordot(c, self.basis, axes=1)

    def project_coefficients(self, shape):
        """Least-squares coefficients of a (K, 3) shape (exact for in-span shapes)."""
        d = (np.asarray(shape, dtype=np.float64) - self.mean).reshape(-1)
        return self.basis.reshape(self.num_components, -1) @ d


def fit_pca_model(shapes, components=5) -> PcaShapeModel:
    shapes = np.asarray(shapes, dtype=np.float64)
    n, k, _ = shapes.shape
    if n <= components:
        raise DegenerateGeometry(f"need more than {components} shapes")
    mean = shapes.mean(axis=0)
    flat = (shapes - mean).reshape(n, -1)
    _, s, vt = np.linalg.svd(flat, full_matrices=False)
    if s[components - 1] <= 1e-12 * s[0]:
        raise DegenerateGeometry("shape set spans fewer than the requested components")
    basis = vt[:components].reshape(components, k, 3)
    return PcaShapeModel(mean, basis, s[:components] / math.sqrt(n - 1))


def category_model(category="car", samples=200, components=5, seed=0) -> PcaShapeModel:
    """PCA model of randomly sampled normalized instances of a procedural category."""
    rng = np.random.default_rng(seed)
    shapes = [make_model(category, rng=rng).keypoints for _ in range(samples)]
    return fit_pca_model(shapes, components)


def project_pose(points, azimuth, elevation, distance, focal, principal_point):
    """Pinhole projection for a camera on the viewing sphere looking at the origin.

    Returns (uv, depth); same conventions as skelgeom.Camera/project.
    """
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    ce, se = math.cos(elevation), math.sin(elevation)
    forward = -np.array([ce * ca, ce * sa, se])
    right = np.array([forward[1], -forward[0], 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    cam = (np.asarray(points) + forward * distance) @ np.stack([right, down, forward]).T
    depth = cam[:, 2]
    uv = focal * cam[:, :2] / depth[:, None] + np.asarray(principal_point)
    return uv, depth


@dataclass
class PcaFit:
    azimuth: float
    elevation: float
    distance: float
    coefficients: np.ndarray
    points: np.ndarray  # fitted (K, 3) keypoints
    cost: float  # sum of squared reprojection errors over visible landmarks
    iterations: int
    history: list  # cost after every accepted iteration

    @property
    def pose(self):
        return self.azimuth, self.elevation, self.distance


class _Problem:
    def __init__(self, landmarks, visible, model, focal, principal_point):
        self.target = landmarks[visible]
        self.visible = visible
        self.model = model
        self.focal = focal
        self.pp = principal_point

    def residual(self, theta):
        az, el, dist = theta[:3]
        pts = self.model.shape(theta[3:])[self.visible]
        uv, depth = project_pose(pts, az, el, dist, self.focal, self.pp)
        if np.any(depth <= 1e-6):
            return None
        return (uv - self.target).reshape(-1)

    def cost(self, theta):
        r = self.residual(theta)
        return math.inf if r is None else float(r @ r)

    def jacobian(self, theta, r0, steps):
        jac = np.empty((len(r0), len(theta)))
        for j, h in enumerate(steps):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            rp, rm = self.residual(tp), self.residual(tm)
            if rp is None or rm is None:
                return None
            jac[:, j] = (rp - rm) / (2 * h)
        return jac


def _initial_distance(problem, az, el, guess=2.5):
    """Distance at which the mean shape's projected spread matches the landmarks'."""
    uv, depth = project_pose(problem.model.mean[problem.visible], az, el, guess, problem.focal, problem.pp)
    if np.any(depth <= 0):
        return guess
    spread = np.linalg.norm(uv - uv.mean(0), axis=1).mean()
    target = np.linalg.norm(problem.target - problem.target.mean(0), axis=1).mean()
    if spread <= 0 or target <= 0:
        return guess
    return guess * spread / target


def _levenberg_marquardt(problem, theta, damping=1e-3, max_iter=200, tol=1e-14):
    r = problem.residual(theta)
    if r is None:
        raise NoConvergence("initial pose puts landmarks behind the camera")
    cost = float(r @ r)
    history = [cost]
    lam = damping
    steps = np.array([1e-6, 1e-6, 1e-6] + [1e-6] * (len(theta) - 3))
    it = 0
    for it in range(1, max_iter + 1):
        jac = problem.jacobian(theta, r, steps)
        if jac is None:
            break
        jtj, jtr = jac.T @ jac, jac.T @ r
        improved = False
        while lam < 1e12:
            # damping scaled by the diagonal keeps pose and shape steps comparable
            a = jtj + lam * (np.diag(np.diag(jtj)) + 1e-12 * np.eye(len(theta)))
            try:
                delta = np.linalg.solve(a, -jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = theta + delta
            cand[1] = min(max(cand[1], -0.5 * math.pi + 1e-6), 0.5 * math.pi - 1e-6)
            r_new = problem.residual(cand)
            c_new = math.inf if r_new is None else float(r_new @ r_new)
            if c_new < cost:
                rel = (cost - c_new) / max(cost, 1e-300)
                theta, r, cost = cand, r_new, c_new
                history.append(cost)
                lam = max(lam / 10, 1e-12)
                improved = True
                break
            lam *= 10
        if not improved or rel < tol or cost < 1e-20:
            break
    if not math.isfinite(cost):
        raise NoConvergence("cost diverged")
    return theta, cost, it, history


def fit_pca_to_2d(landmarks, occluded, model: PcaShapeModel, camera: Camera | None = None, *,
                  focal=None, principal_point=None, azimuth_step_deg=10.0, elevation_grid_deg=(0, 10, 20, 30, 40),
                  starts=3, damping=1e-3) -> PcaFit:
    """Pose (azimuth, elevation, distance) and shape coefficients that best reproject onto
    the visible 2D landmarks.

    A coarse grid over azimuth and elevation (mean shape, distance matched to the
    landmark spread) seeds a damped Gauss-Newton refinement of all parameters; the
    best of the `starts` lowest-cost seeds is returned. Intrinsics come from `camera`
    or from focal/principal_point.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    visible = np.asarray(occluded) == 0
    if int(visible.sum()) < MIN_VISIBLE:
        raise UnderConstrained(f"{int(visible.sum())} visible landmarks, need at least {MIN_VISIBLE}")
    if camera is not None:
        focal, principal_point = camera.focal, camera.principal_point
    if focal is None or principal_point is None:
        raise ValueError("camera intrinsics required")
    problem = _Problem(landmarks, visible, model, float(focal), np.asarray(principal_point, dtype=np.float64))
    b = model.num_components

    seeds = []
    for el in np.radians(elevation_grid_deg):
        for az in np.radians(np.arange(0.0, 360.0, azimuth_step_deg)):
            dist = _initial_distance(problem, az, el)
            theta = np.concatenate([[az, el, dist], np.zeros(b)])
            seeds.append((problem.cost(theta), theta))
    seeds.sort(key=lambda s: s[0])

    best = None
    for _, theta in seeds[:starts]:
        try:
            fitted, cost, it, hist = _levenberg_marquardt(problem, theta, damping)
        except NoConvergence:
            continue
        if best is None or cost < best[1]:
            best = (fitted, cost, it, hist)
    if best is None:
        raise NoConvergence("no grid seed converged")
    theta, cost, it, hist = best
    coeffs = theta[3:].copy()
    return PcaFit(
        azimuth=float(theta[0]) % TWO_PI,
        elevation=float(theta[1]),
        distance=float(theta[2]),
        coefficients=coeffs,
        points=model.shape(coeffs),
        cost=cost,
        iterations=it,
        history=hist,
    )
