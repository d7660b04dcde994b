import math

import numpy as np
import pytest

from disco import shapefit as sf
from disco.errors import DegenerateGeometry, UnderConstrained
from disco.skelgeom import Camera, project


@pytest.fixture(scope="module")
def model():
    return sf.category_model("car")


def test_basis_orthonormal(model):
    flat = model.basis.reshape(model.num_components, -1)
    assert np.allclose(flat @ flat.T, np.eye(model.num_components), atol=1e-10)
    assert np.all(np.diff(model.stddev) <= 0) and model.stddev[-1] > 0


def test_coefficients_round_trip(model, rng):
    c = rng.normal(size=5) * model.stddev
    assert np.allclose(model.project_coefficients(model.shape(c)), c, atol=1e-12)


def test_fit_pca_model_rank_check(rng):
    base = rng.normal(size=(12, 3))
    with pytest.raises(DegenerateGeometry):
        sf.fit_pca_model([base] * 10, components=5)
    with pytest.raises(DegenerateGeometry):
        sf.fit_pca_model(rng.normal(size=(4, 12, 3)), components=5)


def test_projection_matches_camera(rng):
    pts = rng.normal(size=(12, 3)) * 0.3
    cam = Camera(1.1, 0.3, 2.5, 55.0, (30.0, 33.0), (64, 64))
    uv, depth = project(pts, cam)
    uv2, depth2 = sf.project_pose(pts, cam.azimuth, cam.elevation, cam.distance, cam.focal, cam.principal_point)
    assert np.allclose(uv, uv2) and np.allclose(depth, depth2)


@pytest.mark.parametrize("seed", range(4))
def test_mean_shape_pose_recovery(model, seed):
    rng = np.random.default_rng(seed)
    cam = Camera(rng.uniform(0, 2 * math.pi), math.radians(rng.uniform(5, 35)), rng.uniform(2, 3), 60.0, (32, 32), (64, 64))
    uv, _ = project(model.mean, cam)
    fit = sf.fit_pca_to_2d(uv, np.zeros(12), model, cam)
    daz = abs((fit.azimuth - cam.azimuth + math.pi) % (2 * math.pi) - math.pi)
    assert math.degrees(daz) < 1
    assert abs(fit.elevation - cam.elevation) < math.radians(1)
    assert np.abs(fit.coefficients).max() < 1e-3
    assert all(b <= a for a, b in zip(fit.history, fit.history[1:]))


def test_coefficient_recovery(model):
    rng = np.random.default_rng(9)
    c = rng.uniform(-2, 2, 5) * model.stddev
    cam = Camera(2.0, math.radians(20), 2.4, 60.0, (32, 32), (64, 64))
    uv, _ = project(model.shape(c), cam)
    fit = sf.fit_pca_to_2d(uv, np.zeros(12), model, focal=cam.focal, principal_point=cam.principal_point)
    assert np.abs(fit.coefficients - c).max() < 1e-2
    assert np.allclose(fit.points, model.shape(fit.coefficients))
    assert fit.cost < 1e-10


def test_occluded_landmarks_ignored(model):
    cam = Camera(0.7, math.radians(15), 2.6, 60.0, (32, 32), (64, 64))
    uv, _ = project(model.mean, cam)
    occ = np.zeros(12)
    occ[:4] = 1
    uv[:4] = 1e3  # garbage where occluded
    fit = sf.fit_pca_to_2d(uv, occ, model, cam)
    assert fit.cost < 1e-10


def test_too_few_landmarks(model):
    occ = np.ones(12)
    occ[:5] = 0
    with pytest.raises(UnderConstrained):
        sf.fit_pca_to_2d(np.zeros((12, 2)), occ, model, focal=60.0, principal_point=(32, 32))
    with pytest.raises(ValueError):
        sf.fit_pca_to_2d(np.zeros((12, 2)), np.zeros(12), model)
