import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from polecalib.errors import MetricError
from polecalib.geometry import Line3, RigidTransform, relative_errors, so3_exp
from polecalib.metrics import (
    AxisFitConfig,
    RqeConfig,
    axis_fit_error,
    extrinsic_error_e_rt,
    information_potential,
    renyi_entropy,
    rqe_score,
)
from polecalib.pipeline import merged_cloud, table2_rows, table2_sweep

from conftest import random_transform


def _grid_axis_error(line, cfg, n=200_001):
    z = np.linspace(cfg.z_min, cfg.z_max, n)
    s = (z - line.anchor[2]) / line.direction[2]
    x = line.anchor[0] + line.direction[0] * s
    y = line.anchor[1] + line.direction[1] * s
    f = x * x + y * y if cfg.integrand_mode == "sum" else x * x * y * y
    return trapezoid(f, z) / (cfg.z_max - cfg.z_min)


def test_axis_fit_zero_on_true_axis():
    for mode in ("sum", "product"):
        assert axis_fit_error(Line3([0, 0, 0], [0, 0, 1]), AxisFitConfig(-1.0, 2.0, mode)) == 0.0


def test_axis_fit_constant_offset():
    a, b = 0.03, -0.02
    line = Line3([a, b, 0.5], [0, 0, 1])
    assert abs(axis_fit_error(line, AxisFitConfig(-0.9, 1.5)) - (a * a + b * b)) < 1e-15
    assert abs(axis_fit_error(line, AxisFitConfig(-0.9, 1.5, "product")) - a * a * b * b) < 1e-18


def test_axis_fit_matches_quadrature(rng):
    for mode in ("sum", "product"):
        for _ in range(20):
            line = Line3(rng.normal(0, 0.05, 3), [rng.normal(0, 0.05), rng.normal(0, 0.05), 1.0])
            cfg = AxisFitConfig(-0.9, 1.5, mode)
            assert abs(axis_fit_error(line, cfg) - _grid_axis_error(line, cfg)) < 1e-12


def test_axis_fit_invariant_under_rotation_about_axis(rng):
    line = Line3([0.01, 0.02, 0.3], [0.01, -0.02, 1.0])
    cfg = AxisFitConfig(-0.9, 1.5)
    base = axis_fit_error(line, cfg)
    for _ in range(20):
        G = RigidTransform(so3_exp([0.0, 0.0, rng.uniform(-math.pi, math.pi)]), np.zeros(3))
        assert abs(axis_fit_error(G.apply_line(line), cfg) - base) < 1e-15


def test_axis_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        AxisFitConfig(1.0, 1.0)
    with pytest.raises(ValueError):
        AxisFitConfig(0.0, 1.0, "max")
    with pytest.raises(MetricError):
        axis_fit_error(Line3([0, 0, 0], [1, 0, 0]), AxisFitConfig(0.0, 1.0))


CELLS = [(name, x_p) for name in ("q1", "q2") for x_p in (10.0, 6.0, 4.0)]


@pytest.mark.parametrize("mode", ["sum", "product"])
@pytest.mark.parametrize("name,x_p", CELLS)
def test_table2_decreasing_in_radius(mode, name, x_p, request):
    if (mode, name, x_p) == ("product", "q2", 10.0):
        # the sensor sits almost on the pole's y = 0 plane, so the y-offsets are
        # sampling noise and the product loses its ordering
        request.applymarker(pytest.mark.xfail(strict=True, reason="product mode, q2 at 10 m is not monotone"))
    sweep = _sweep(mode)
    vals = [sweep[(name, x_p, r)] for r in (0.3, 0.2, 0.1)]
    assert vals[0] > vals[1] > vals[2]


_SWEEPS = {}


def _sweep(mode):
    if mode not in _SWEEPS:
        _SWEEPS[mode] = table2_sweep(mode)
    return _SWEEPS[mode]


def test_table2_reference_value():
    value = _sweep("sum")[("q1", 10.0, 0.3)]
    assert 0.0612 / 2 <= value <= 0.0612 * 2


def test_table2_rows_layout():
    header, rows = table2_rows(table2_sweep("sum", distances=(6.0,), radii=(0.3, 0.1)))
    assert header == ["r", "q1_x6", "q2_x6"]
    assert [row[0] for row in rows] == [0.3, 0.1]


def test_e_rt_identical_is_zero(rng):
    T = random_transform(rng)
    assert extrinsic_error_e_rt(T, T) == 0.0


def test_e_rt_pure_translation(rng):
    T = random_transform(rng)
    d = np.array([0.3, -0.4, 1.2])
    assert abs(extrinsic_error_e_rt(RigidTransform(T.R, T.t + d), T) - np.linalg.norm(d)) < 1e-12


def test_e_rt_matches_trapezoid_and_is_symmetric(rng):
    x = np.linspace(1.0, 60.0, 1_000_001)
    for _ in range(10):
        A, B = random_transform(rng), random_transform(rng)
        vals = np.linalg.norm(np.outer(x, A.R[:, 1] - B.R[:, 1]) + (A.t - B.t), axis=1)
        oracle = trapezoid(vals, x) / 59.0
        assert abs(extrinsic_error_e_rt(A, B) - oracle) < 1e-7
        assert abs(extrinsic_error_e_rt(A, B) - extrinsic_error_e_rt(B, A)) < 1e-12


def test_e_rt_kink_inside_range():
    A = RigidTransform.identity()
    B = RigidTransform(so3_exp([0.0, 0.0, 0.1]), np.zeros(3))
    # the rotated ray crosses back through the original ray only at x = 0; shift it to x = 10
    B = RigidTransform(B.R, -10.0 * (B.R[:, 1] - A.R[:, 1]))
    x = np.linspace(1.0, 60.0, 2_000_001)
    vals = np.linalg.norm(np.outer(x - 10.0, B.R[:, 1] - A.R[:, 1]), axis=1)
    assert abs(extrinsic_error_e_rt(B, A) - trapezoid(vals, x) / 59.0) < 1e-7
    with pytest.raises(MetricError):
        extrinsic_error_e_rt(A, B, n=5.0, m=5.0)


def _blob(rng, n=600):
    return rng.normal(size=(n, 3)) * [1.0, 0.5, 0.2]


def test_information_potential_against_direct_sum(rng):
    pts = _blob(rng, 300)
    cfg = RqeConfig(kernel_sigma=0.1, subsample_size=0, block_size=64)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    direct = np.exp(-d2 / (4 * 0.1**2)).mean()
    assert abs(information_potential(pts, cfg) - direct) < 1e-14
    assert abs(renyi_entropy(pts, cfg) + math.log(direct)) < 1e-12


def test_rqe_identical_pair_beats_offset_pair(rng):
    pts = _blob(rng)
    same = np.vstack([pts, pts])
    shifted = np.vstack([pts, pts + [0.3, 0.0, 0.0]])
    assert information_potential(same) > information_potential(shifted)
    with pytest.raises(MetricError):
        information_potential(pts[:1])


def test_rqe_rigid_invariance(rng):
    pts = _blob(rng)
    cfg = RqeConfig(subsample_size=0)
    base = information_potential(pts, cfg)
    for _ in range(5):
        assert abs(information_potential(random_transform(rng).apply(pts), cfg) - base) < 1e-9


def test_rqe_decreases_with_perturbation(noisy_scene, rng):
    truth = noisy_scene.truth
    vals = []
    for size in (0.0, 0.1, 0.2, 0.5):
        offset = RigidTransform(np.eye(3), size * np.array([0.6, 0.0, 0.8]))
        vals.append(rqe_score(merged_cloud(noisy_scene.cloud1, noisy_scene.cloud2, offset @ truth)))
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_rqe_correct_beats_wrong_hypothesis(noisy_scene):
    cal = noisy_scene.calibration
    c1, c2 = noisy_scene.cloud1, noisy_scene.cloud2
    good = rqe_score(merged_cloud(c1, c2, cal.selected.transform))
    wrong = [
        rqe_score(merged_cloud(c1, c2, c.transform))
        for c in cal.candidates
        if c.converged and max(relative_errors(c.transform, noisy_scene.truth)) > 0.5
    ]
    assert wrong and all(good > w for w in wrong)
