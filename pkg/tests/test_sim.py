import math

import numpy as np
import pytest

from polecalib.errors import DegenerateGeometryError, NoVisibleArcError
from polecalib.geometry import Line3, RigidTransform, point_to_line_distance, quat_to_matrix
from polecalib.extract import fit_line
from polecalib.sim import (
    LIDAR1_POSITION,
    LIDAR1_QUAT,
    LIDAR2_POSITION,
    LIDAR2_QUAT,
    Q1,
    Q2,
    REFLECTIVE_INTENSITY,
    Environment,
    LidarModel,
    PoleSpec,
    Scenario,
    ScenePose,
    canonical_frame_for,
    canonicalize_pole_frame,
    channel_plane_normal,
    cylinder_curve_point,
    generate_scan,
    march_beam_points,
    random_scenario,
    raycast_cylinder,
    raycast_environment,
    scan_plane_fan,
    scan_pole_canonical,
    sensor_rays,
)

from conftest import random_rotation

C = math.radians(0.2)


def _angles(pts, t):
    rel = pts - t
    rel /= np.linalg.norm(rel, axis=1)[:, None]
    cross = np.linalg.norm(np.cross(rel[:-1], rel[1:]), axis=1)
    dot = np.einsum("ij,ij->i", rel[:-1], rel[1:])
    return np.arctan2(cross, dot)


def _random_pole(rng):
    d = rng.normal(size=3)
    d[2] = abs(d[2]) + 1.0
    return PoleSpec(rng.uniform(-3, 3, size=3), d / np.linalg.norm(d), 0.02)


# --------------------------------------------------------------- lidar model


def test_lidar_model_validation():
    with pytest.raises(ValueError):
        LidarModel(azimuth_resolution=0.0)
    with pytest.raises(ValueError):
        LidarModel(channel_elevations=(0.1, 0.0))
    with pytest.raises(ValueError):
        LidarModel(noise_sigma=-1.0)
    assert len(LidarModel.vlp16().channel_elevations) == 16
    with pytest.raises(ValueError):
        PoleSpec([0, 0, 0], [0, 0, 1], radius=0.0)


# ---------------------------------------------------------- canonicalization


def test_canonical_identity_case():
    pole = PoleSpec([0, 0, 0], [0, 0, 1], 0.02)
    frame = canonicalize_pole_frame(RigidTransform(np.eye(3), [4.0, 0, 0]), pole)
    assert np.abs(frame.correction.matrix() - np.eye(4)).max() < 1e-12
    assert frame.x_p == 4.0
    assert frame.diagnostics  # the degenerate-a substitution is reported


def test_canonical_sensor_on_negative_x():
    pole = PoleSpec([0, 0, 0], [0, 0, 1], 0.02)
    frame = canonicalize_pole_frame(RigidTransform(np.eye(3), [-3.0, 0, 0]), pole)
    assert any("half turn" in d for d in frame.diagnostics)
    assert np.allclose(frame.correction.apply([-3.0, 0, 0]), [3.0, 0, 0], atol=1e-12)


def test_canonicalization_random(rng):
    for _ in range(200):
        pole = _random_pole(rng)
        pose = RigidTransform(random_rotation(rng), rng.uniform(-5, 5, size=3))
        frame = canonicalize_pole_frame(pose, pole)
        T = frame.correction
        # pole axis becomes the z-axis
        on_axis = T.apply(pole.anchor + np.outer([-2.0, 0.0, 3.0], pole.direction))
        assert np.abs(on_axis[:, :2]).max() < 1e-9
        # sensor lands on +x at distance x_p
        assert np.abs(T.apply(pose.t) - [frame.x_p, 0, 0]).max() < 1e-9
        # round trip
        p = rng.normal(size=(20, 3))
        assert np.abs(T.inverse().apply(T.apply(p)) - p).max() < 1e-9


def test_axis_half_turn_maps_n_to_minus_ez(rng):
    for _ in range(100):
        n = _random_pole(rng).direction
        a = np.array([-n[0], -n[1], 1.0 - n[2]])
        a /= np.linalg.norm(a)
        A = 2.0 * np.outer(a, a) - np.eye(3)
        assert np.linalg.norm(A @ n + [0, 0, 1]) < 1e-9


def test_canonical_sensor_on_axis_rejected():
    pole = PoleSpec([0, 0, 0], [0, 0, 1], 0.02)
    with pytest.raises(DegenerateGeometryError):
        canonicalize_pole_frame(RigidTransform(np.eye(3), [0, 0, 5.0]), pole)


# ------------------------------------------------------------- curve / march


def test_curve_point_horizontal_plane():
    assert np.allclose(cylinder_curve_point(0.0, 5.0, [0, 0, 1], 0.5), [0.5, 0, 0], atol=0)


def test_curve_point_plane_and_cylinder(rng):
    for _ in range(100):
        v = rng.normal(size=3)
        v[2] = abs(v[2]) + 0.1
        v /= np.linalg.norm(v)
        x_p, r = rng.uniform(1, 10), rng.uniform(0.01, 0.5)
        th = rng.uniform(-math.pi, math.pi, size=50)
        p = cylinder_curve_point(th, x_p, v, r)
        assert np.abs((p - [x_p, 0, 0]) @ v).max() < 1e-12
        assert np.abs(np.hypot(p[:, 0], p[:, 1]) - r).max() < 1e-15
    with pytest.raises(DegenerateGeometryError):
        cylinder_curve_point(0.0, 5.0, [1, 0, 0], 0.5)


@pytest.mark.parametrize("q", [Q1, Q2])
@pytest.mark.parametrize("x_p,r", [(10.0, 0.3), (4.0, 0.1), (3.0, 0.02)])
def test_march_subtends_c_and_stays_on_cylinder(q, x_p, r):
    frame = canonical_frame_for(x_p, q)
    v = channel_plane_normal(frame, 0.0)
    pts = march_beam_points(x_p, v, r, C)
    assert len(pts) >= 2
    assert np.abs(_angles(pts, [x_p, 0, 0]) - C).max() < 1e-9
    assert np.abs(np.hypot(pts[:, 0], pts[:, 1]) - r).max() < 1e-12
    # every return is on the visible arc
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    assert np.all(np.abs(theta) <= math.acos(r / x_p) + 1e-12)


def test_march_errors():
    with pytest.raises(NoVisibleArcError):
        march_beam_points(0.5, [0, 0, 1], 0.5, C)
    with pytest.raises(ValueError):
        march_beam_points(5.0, [0, 0, 1], 0.5, 0.0)


def test_raycast_examples():
    assert np.allclose(raycast_cylinder([5, 0, 0], [-1, 0, 0], 0.5), [0.5, 0, 0], atol=1e-15)
    assert raycast_cylinder([5, 0, 0], [1, 0, 0], 0.5) is None
    assert raycast_cylinder([5, 2, 0], [-1, 0, 0], 0.5) is None
    graze = raycast_cylinder([5, 0.5, 0], [-1, 0, 0], 0.5)
    assert graze is not None and abs(math.hypot(graze[0], graze[1]) - 0.5) < 1e-9


def test_raycast_residual(rng):
    o = np.column_stack([rng.uniform(2, 8, 500), rng.uniform(-1, 1, 500), rng.uniform(-1, 1, 500)])
    target = np.column_stack([rng.uniform(-0.2, 0.2, 500), rng.uniform(-0.2, 0.2, 500), rng.uniform(-1, 1, 500)])
    d = target - o
    d /= np.linalg.norm(d, axis=1)[:, None]
    hits = raycast_cylinder(o, d, 0.3)
    ok = ~np.isnan(hits[:, 0])
    assert ok.sum() > 100
    assert np.abs(hits[ok, 0] ** 2 + hits[ok, 1] ** 2 - 0.09).max() < 1e-10


@pytest.mark.parametrize("q", [Q1, Q2])
@pytest.mark.parametrize("x_p,r", [(10.0, 0.3), (6.0, 0.2), (4.0, 0.1), (2.0, 0.02)])
def test_march_matches_raycast_oracle_on_central_ring(q, x_p, r):
    frame = canonical_frame_for(x_p, q)
    v = channel_plane_normal(frame, 0.0)
    pts = march_beam_points(x_p, v, r, C)
    origin, dirs = scan_plane_fan(x_p, v, r, C, len(pts))
    oracle = raycast_cylinder(origin, dirs, r)
    assert not np.isnan(oracle).any()
    assert np.abs(pts - oracle).max() < 1e-9


def test_scan_pole_canonical_membership():
    for q in (Q1, Q2):
        pts, rings = scan_pole_canonical(canonical_frame_for(6.0, q), 0.1, LidarModel())
        assert len(set(rings.tolist())) == 16
        assert np.abs(np.hypot(pts[:, 0], pts[:, 1]) - 0.1).max() < 1e-9


def test_tilted_plane_vs_cone_discrepancy():
    """Tilted planes stand in for the real elevation cones; near the pole the
    difference is a small vertical shift, far below the pole height."""
    frame = canonical_frame_for(5.0, Q2)
    el = math.radians(15.0)
    pts = march_beam_points(5.0, channel_plane_normal(frame, el), 0.1, C)
    rel = pts - [5.0, 0, 0]
    elev = np.arcsin(rel[:, 2] / np.linalg.norm(rel, axis=1))
    assert np.abs(elev - el).max() < math.radians(0.1)


# ----------------------------------------------------------------- full scans


def test_fixed_poses_and_ground_truth():
    s = random_scenario(0)
    p1, p2 = s.poses[0].pose, s.poses[1].pose
    assert np.array_equal(p1.t, LIDAR1_POSITION) and np.array_equal(p2.t, LIDAR2_POSITION)
    assert np.abs(p1.R - quat_to_matrix(LIDAR1_QUAT)).max() == 0
    assert np.abs(p2.R - quat_to_matrix(LIDAR2_QUAT)).max() == 0
    gt = s.ground_truth()
    assert np.abs((p1.inverse() @ p2).matrix() - gt.matrix()).max() < 1e-15


def test_noiseless_scan_on_cylinder():
    s = random_scenario(4, noise_sigma=0.0)
    for li in (0, 1):
        cloud = generate_scan(s, li)
        pose = s.poses[li].pose
        for k, pole in enumerate(s.poles):
            pts = pose.apply(cloud.points[cloud.label == k])
            assert len(pts) > 20
            d = point_to_line_distance(pts, Line3(pole.anchor, pole.direction))
            assert np.abs(d - pole.radius).max() < 1e-9
            assert pts[:, 2].min() >= pole.z_extent[0] - 1e-12
            assert pts[:, 2].max() <= pole.z_extent[1] + 1e-12
        assert np.all(cloud.intensities[cloud.label >= 0] == REFLECTIVE_INTENSITY)
        assert np.all(cloud.intensities[cloud.label < 0] <= 100.0)


def test_environment_points_on_surfaces():
    env = Environment()
    origin = np.array([1.0, -1.0, 0.0])
    dirs, _ = sensor_rays(LidarModel())
    rng_ = raycast_environment(origin, dirs, env)
    ok = np.isfinite(rng_)
    assert ok.mean() > 0.99
    pts = origin + dirs[ok] * rng_[ok, None]
    faces = [env.room] + list(env.obstacles)
    gap = np.full(len(pts), np.inf)
    for box in faces:
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        inside = np.all((pts >= lo - 1e-9) & (pts <= hi + 1e-9), axis=1)
        on_face = np.min(np.minimum(np.abs(pts - lo), np.abs(pts - hi)), axis=1)
        gap = np.where(inside, np.minimum(gap, on_face), gap)
    assert gap.max() < 1e-9


def test_scan_is_deterministic():
    a = generate_scan(random_scenario(11, noise_sigma=0.006), 1)
    b = generate_scan(random_scenario(11, noise_sigma=0.006), 1)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.intensities.tobytes() == b.intensities.tobytes()


def test_noise_level():
    s = random_scenario(5, noise_sigma=0.006)
    clean = random_scenario(5, noise_sigma=0.0)
    a, b = generate_scan(s, 0), generate_scan(clean, 0)
    diff = (a.points - b.points).ravel()
    assert abs(diff.std() - 0.006) < 0.0002 and abs(diff.mean()) < 0.0002


def test_both_scans_fit_same_axis_after_ground_truth():
    s = random_scenario(2, noise_sigma=0.006)
    gt = s.ground_truth()
    c1, c2 = generate_scan(s, 0), generate_scan(s, 1)
    for k in range(2):
        l1, _ = fit_line(c1.points[c1.label == k])
        l2, _ = fit_line(gt.apply(c2.points[c2.label == k]))
        angle = math.degrees(math.acos(min(1.0, abs(l1.direction @ l2.direction))))
        assert angle < 0.5


def test_random_scenario_sweep():
    dirs_z, seps = [], []
    for seed in range(1000):
        s = random_scenario(seed)
        dirs_z += [p.direction[2] for p in s.poles]
        a, b = (p.anchor for p in s.poles)
        seps.append(np.linalg.norm(a - b))
        assert a[2] == 0.0 and b[2] == 0.0
        assert 2.0 <= np.linalg.norm(a) <= 3.0 and 2.0 <= np.linalg.norm(b) <= 3.0
    assert min(dirs_z) > 0.9
    assert 1.5 <= min(seps) and max(seps) <= 4.0
    assert random_scenario(3).poles[0].anchor.tobytes() == random_scenario(3).poles[0].anchor.tobytes()


def test_scenario_rejects_parallel_poles():
    poles = (PoleSpec([2, 0, 0], [0, 0, 1]), PoleSpec([0, 2, 0], [0, 0, 1]))
    s = random_scenario(0)
    with pytest.raises(ValueError):
        Scenario(s.poses, poles, s.lidar, 0)


def test_scan_reports_pole_on_degenerate_geometry():
    s = random_scenario(0)
    pole = PoleSpec(np.array(LIDAR1_POSITION) - [0, 0, 0.5], [0, 0, 1])
    bad = Scenario((ScenePose(RigidTransform(np.eye(3), LIDAR1_POSITION)), s.poses[1]), (pole, s.poles[1]), s.lidar, 0)
    with pytest.raises(DegenerateGeometryError, match="pole 0"):
        generate_scan(bad, 0)
