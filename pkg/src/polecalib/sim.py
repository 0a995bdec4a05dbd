"""Synthetic LiDAR scans of thin cylindrical poles plus a simple indoor scene.

Pole returns come from the planar scan model: in a canonical frame where the
pole axis is the z-axis and the sensor sits at ``[x_p, 0, 0]``, a scan plane
with normal ``v`` cuts the cylinder along a closed curve, and successive
returns on the visible part of that curve subtend the azimuth resolution ``c``
at the sensor. ``raycast_cylinder`` is an independent ray-geometry oracle for
the same points.

Background returns (floor, walls, boxes) are ray cast directly with the
sensor's real cone geometry; they feed scene registration downstream.

Poses: ``ScenePose.pose`` maps LiDAR coordinates to world coordinates, so its
translation is the sensor position. The ground-truth extrinsic between two
sensors is ``pose_1^-1 * pose_2`` (LiDAR-2 points into the LiDAR-1 frame).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateGeometryError, NoVisibleArcError
from .geometry import (
    PointCloud,
    RigidTransform,
    normalize,
    quat_to_matrix,
    rotation_pi_about,
)

E_X = np.array([1.0, 0.0, 0.0])
E_Z = np.array([0.0, 0.0, 1.0])

VLP16_ELEVATIONS_DEG = tuple(float(e) for e in range(-15, 16, 2))

# reference sensor orientations for the single-pole study
Q1 = (0.957, -0.120, 0.263, -0.013)
Q2 = (1.0, 0.0, 0.0, 0.0)

# fixed sensor poses of the randomized two-pole experiment
LIDAR1_POSITION = (1.0, -1.0, 0.0)
LIDAR1_QUAT = (0.988, 0.094, 0.079, 0.094)
LIDAR2_POSITION = (1.0, 1.0, 0.0)
LIDAR2_QUAT = (0.989, -0.079, -0.094, -0.079)

REFLECTIVE_INTENSITY = 255.0
CLUTTER_INTENSITY_MAX = 100.0

_ENV_STREAM = 1000
_CLUTTER_STREAM = 1001


@dataclass(frozen=True)
class LidarModel:
    channel_elevations: tuple = tuple(math.radians(e) for e in VLP16_ELEVATIONS_DEG)
    azimuth_resolution: float = math.radians(0.2)
    max_range: float = 100.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        el = tuple(float(e) for e in self.channel_elevations)
        object.__setattr__(self, "channel_elevations", el)
        if self.azimuth_resolution <= 0:
            raise ValueError("azimuth_resolution must be positive")
        if any(b <= a for a, b in zip(el, el[1:])):
            raise ValueError("channel elevations must be strictly increasing")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @classmethod
    def vlp16(cls, noise_sigma: float = 0.0) -> "LidarModel":
        return cls(noise_sigma=noise_sigma)

    def with_noise(self, sigma: float) -> "LidarModel":
        return LidarModel(self.channel_elevations, self.azimuth_resolution, self.max_range, sigma)


@dataclass(frozen=True)
class PoleSpec:
    anchor: np.ndarray
    direction: np.ndarray
    radius: float = 0.02
    z_extent: tuple = (-0.9, 1.5)
    reflective: bool = True

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float).reshape(3))
        n = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("pole direction must be a unit vector")
        object.__setattr__(self, "direction", n)
        if self.radius <= 0:
            raise ValueError("pole radius must be positive")
        z0, z1 = self.z_extent
        if not z0 < z1:
            raise ValueError("z_extent must satisfy z_min < z_max")
        object.__setattr__(self, "z_extent", (float(z0), float(z1)))


@dataclass(frozen=True)
class ScenePose:
    pose: RigidTransform


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class Environment:
    """An axis-aligned room seen from inside, with solid boxes in it.

    The layout is deliberately asymmetric so that half-turn ambiguities of
    the two-pole problem do not also align the background.
    """

    room: Box = Box((-5.0, -6.0, -1.0), (7.0, 5.0, 2.5))
    obstacles: tuple = (
        Box((2.5, 2.0, -1.0), (3.5, 3.2, 0.6)),
        Box((-3.2, -4.2, -1.0), (-2.2, -3.0, 1.4)),
        Box((4.0, -3.5, -1.0), (5.0, -2.0, 0.2)),
    )
    clutter_count: int = 0


@dataclass(frozen=True)
class Scenario:
    poses: tuple
    poles: tuple
    lidar: LidarModel
    rng_seed: int
    environment: Optional[Environment] = field(default_factory=Environment)

    def __post_init__(self):
        if len(self.poses) != 2 or len(self.poles) != 2:
            raise ValueError("a scenario has exactly two sensor poses and two poles")
        na, nb = self.poles[0].direction, self.poles[1].direction
        if abs(float(na @ nb)) >= 1.0 - 1e-6:
            raise ValueError("pole directions must not be parallel")

    def ground_truth(self) -> RigidTransform:
        """Extrinsic mapping LiDAR-2 coordinates into the LiDAR-1 frame."""
        return self.poses[0].pose.inverse() @ self.poses[1].pose


@dataclass(frozen=True)
class CanonicalFrame:
    """Result of moving a pole onto the z-axis and the sensor onto +x.

    ``correction`` maps world to canonical coordinates. ``sensor_rotation``
    is the sensor orientation expressed in the canonical frame and ``normal``
    its central scan-plane normal (sensor +z).
    """

    correction: RigidTransform
    x_p: float
    normal: np.ndarray
    sensor_rotation: np.ndarray
    diagnostics: tuple = ()


def canonicalize_pole_frame(lidar_pose: RigidTransform, pole: PoleSpec) -> CanonicalFrame:
    n = pole.direction
    diagnostics = []

    a_raw = np.array([-n[0], -n[1], 1.0 - n[2]])
    if np.linalg.norm(a_raw) < 1e-12:
        A = np.eye(3)
        diagnostics.append("pole already along +z: axis-alignment half turn replaced by identity")
    else:
        A = rotation_pi_about(normalize(a_raw))
    # L* = A * T(-p) * L_i
    to_pole = RigidTransform(A, -A @ pole.anchor)
    v_star = to_pole.apply(lidar_pose.t)
    # L = T(-v*_z) * L*
    drop_z = RigidTransform(np.eye(3), np.array([0.0, 0.0, -v_star[2]]))
    v = drop_z.apply(v_star)
    x_p = float(np.linalg.norm(v))
    if x_p < 1e-12:
        raise DegenerateGeometryError(
            "sensor lies on the pole axis", hint="move the sensor or the pole"
        )
    b_raw = np.array([v[0] + x_p, v[1], v[2]])
    if np.linalg.norm(v - x_p * E_X) < 1e-12 * x_p:
        B = np.eye(3)
        diagnostics.append("sensor already on +x: placement half turn replaced by identity")
    elif np.linalg.norm(b_raw) < 1e-12 * x_p:
        B = rotation_pi_about(E_Z)
        diagnostics.append("sensor on -x: placement half turn replaced by rotation pi about z")
    else:
        B = rotation_pi_about(normalize(b_raw))
    correction = RigidTransform(B) @ drop_z @ to_pole
    sensor = correction @ lidar_pose
    R_c = sensor.R
    return CanonicalFrame(correction, x_p, R_c @ E_Z, R_c, tuple(diagnostics))


def channel_plane_normal(frame: CanonicalFrame, elevation: float) -> np.ndarray:
    """Scan-plane normal of one channel in the canonical pole frame.

    The central plane is tilted by the channel elevation about the sensor's
    horizontal axis perpendicular to the viewing direction toward the pole.
    """
    v = frame.normal
    toward = -E_X - (-E_X @ v) * v
    if np.linalg.norm(toward) < 1e-12:
        raise DegenerateGeometryError("sensor looks straight along its own up axis toward the pole")
    u = normalize(toward)
    return math.cos(elevation) * v - math.sin(elevation) * u


def cylinder_curve_point(theta, x_p: float, v, r: float) -> np.ndarray:
    """Point(s) where the scan plane (normal ``v`` through ``[x_p,0,0]``) meets the cylinder."""
    v = np.asarray(v, dtype=float)
    if abs(v[2]) < 1e-12:
        raise DegenerateGeometryError(
            "scan-plane normal is horizontal in the pole frame",
            hint="the scan plane contains the pole direction; tilt the sensor",
        )
    theta = np.asarray(theta, dtype=float)
    x = r * np.cos(theta)
    y = r * np.sin(theta)
    z = -(v[0] * x - x_p * v[0] + v[1] * y) / v[2]
    return np.stack([x, y, z], axis=-1)


def march_beam_points(x_p: float, v, r: float, c: float) -> np.ndarray:
    """Returns on the visible arc spaced by the azimuth resolution ``c``.

    Starts at the grazing point ``theta = -arccos(r / x_p)`` and solves for
    each increment ``dtheta`` so that consecutive returns subtend ``c`` at the
    sensor, until the next return would leave the visible arc.
    """
    if c <= 0:
        raise ValueError("azimuth resolution must be positive")
    if r >= x_p:
        raise NoVisibleArcError(
            f"pole radius {r} is not smaller than the sensor distance {x_p}",
            hint="the sensor must be outside the pole",
        )
    vx, vy, vz = (float(e) for e in np.asarray(v, dtype=float))
    if abs(vz) < 1e-12:
        raise DegenerateGeometryError(
            "scan-plane normal is horizontal in the pole frame",
            hint="the scan plane contains the pole direction; tilt the sensor",
        )

    # plain floats: this runs inside the root finder for every return
    def rel(th):
        x = r * math.cos(th)
        y = r * math.sin(th)
        return (x - x_p, y, -(vx * x - x_p * vx + vy * y) / vz)

    def angle(a, b):
        cx = a[1] * b[2] - a[2] * b[1]
        cy = a[2] * b[0] - a[0] * b[2]
        cz = a[0] * b[1] - a[1] * b[0]
        return math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), a[0] * b[0] + a[1] * b[1] + a[2] * b[2])

    theta_max = math.acos(r / x_p)
    theta = -theta_max
    thetas = [theta]
    while True:
        a = rel(theta)
        remaining = theta_max - theta

        def residual(d):
            return angle(a, rel(theta + d)) - c

        hi = min(4.0 * c * x_p / r, remaining)
        while residual(hi) < 0.0:
            if hi >= remaining:
                return cylinder_curve_point(np.array(thetas), x_p, v, r)
            hi = min(2.0 * hi, remaining)
        theta += brentq(residual, 0.0, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
        thetas.append(theta)


def raycast_cylinder(origin, direction, r: float):
    """Nearest forward hit of a ray on the infinite cylinder ``x^2 + y^2 = r^2``.

    Works on a single ray (returns a point or ``None``) or on ``(N, 3)``
    arrays (returns ``(N, 3)`` with NaN rows for misses).
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    single = d.ndim == 1
    o2 = np.atleast_2d(o)
    d2 = np.atleast_2d(d)
    o2, d2 = np.broadcast_arrays(o2, d2)
    a = d2[:, 0] ** 2 + d2[:, 1] ** 2
    b = 2.0 * (o2[:, 0] * d2[:, 0] + o2[:, 1] * d2[:, 1])
    cc = o2[:, 0] ** 2 + o2[:, 1] ** 2 - r * r
    disc = b * b - 4.0 * a * cc
    s = np.full(len(a), np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        # grazing rays: rounding makes the discriminant noise, use the tangent point
        tangent = (np.abs(disc) <= 64.0 * np.finfo(float).eps * b * b) & (a > 0)
        hit = (disc > 0) & (a > 0) & ~tangent
        sq = np.sqrt(np.where(hit, disc, 0.0))
        q = -0.5 * (b + np.copysign(sq, b))
        s1 = q / a
        s2 = cc / q
        near = np.minimum(s1, s2)
        far = np.maximum(s1, s2)
        s_hit = np.where(near > 0, near, np.where(far > 0, far, np.nan))
        s = np.where(hit, s_hit, s)
        s_tan = -b / (2.0 * a)
        s = np.where(tangent & (s_tan > 0), s_tan, s)
    pts = o2 + s[:, None] * d2
    if single:
        return None if np.isnan(s[0]) else pts[0]
    return pts


def scan_plane_fan(x_p: float, v, r: float, c: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Rays in the scan plane starting at the grazing ray, stepped by ``c``.

    Returns ``(origin, directions)``; this is the ray-geometry counterpart of
    ``march_beam_points`` used as an oracle.
    """
    t = np.array([x_p, 0.0, 0.0])
    m = normalize(v)
    d0 = normalize(cylinder_curve_point(-math.acos(r / x_p), x_p, v, r) - t)
    side = np.cross(m, d0)
    probe = cylinder_curve_point(0.0, x_p, v, r) - t
    if side @ probe < 0:
        side = -side
    k = np.arange(count)[:, None] * c
    return t, np.cos(k) * d0 + np.sin(k) * side


def scan_pole_canonical(frame: CanonicalFrame, r: float, lidar: LidarModel) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless returns of every channel on a pole, in the canonical frame."""
    pts, rings = [], []
    for ch, elev in enumerate(lidar.channel_elevations):
        n = channel_plane_normal(frame, elev)
        p = march_beam_points(frame.x_p, n, r, lidar.azimuth_resolution)
        pts.append(p)
        rings.append(np.full(len(p), ch, dtype=int))
    return np.concatenate(pts), np.concatenate(rings)


def canonical_frame_for(x_p: float, orientation) -> CanonicalFrame:
    """Frame of the single-pole study: pole on z, sensor at ``[x_p,0,0]`` with quaternion ``orientation``."""
    R = quat_to_matrix(orientation)
    return CanonicalFrame(RigidTransform.identity(), float(x_p), R @ E_Z, R)


def _rng(seed: int, lidar_index: int, stream: int, channel: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(lidar_index), int(stream), int(channel)]))


def sensor_rays(lidar: LidarModel) -> tuple[np.ndarray, np.ndarray]:
    """Unit ray directions in the sensor frame for every (channel, azimuth)."""
    n_az = int(round(2.0 * math.pi / lidar.azimuth_resolution))
    az = np.arange(n_az) * lidar.azimuth_resolution
    el = np.asarray(lidar.channel_elevations)
    E, A = np.meshgrid(el, az, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
    rings = np.repeat(np.arange(len(el)), n_az)
    return dirs.reshape(-1, 3), rings


def raycast_environment(origin: np.ndarray, dirs: np.ndarray, env: Environment) -> np.ndarray:
    """Range to the first surface along each ray (inf for none)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        lo = np.asarray(env.room.lo)
        hi = np.asarray(env.room.hi)
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
        exit_room = np.nanmin(np.maximum(t1, t2), axis=1)
        best = np.where(exit_room > 0, exit_room, np.inf)
        for box in env.obstacles:
            b1 = (np.asarray(box.lo) - origin) * inv
            b2 = (np.asarray(box.hi) - origin) * inv
            t_near = np.nanmax(np.minimum(b1, b2), axis=1)
            t_far = np.nanmin(np.maximum(b1, b2), axis=1)
            ok = (t_near <= t_far) & (t_near > 0)
            best = np.where(ok & (t_near < best), t_near, best)
    return best


def scan_environment(scenario: Scenario, lidar_index: int) -> PointCloud:
    env = scenario.environment
    if env is None:
        return PointCloud(np.zeros((0, 3)), np.zeros(0), np.zeros(0, int), np.zeros(0, int))
    lidar = scenario.lidar
    pose = scenario.poses[lidar_index].pose
    dirs_s, rings = sensor_rays(lidar)
    dirs_w = pose.rotate(dirs_s)
    rng_dist = raycast_environment(pose.t, dirs_w, env)
    keep = np.isfinite(rng_dist) & (rng_dist <= lidar.max_range)
    pts = dirs_s[keep] * rng_dist[keep, None]
    rng = _rng(scenario.rng_seed, lidar_index, _ENV_STREAM)
    if lidar.noise_sigma > 0:
        pts = pts + rng.normal(0.0, lidar.noise_sigma, size=pts.shape)
    inten = rng.uniform(0.0, CLUTTER_INTENSITY_MAX, size=len(pts))
    cloud = PointCloud(pts, inten, rings[keep], np.full(len(pts), -1))
    if env.clutter_count > 0:
        crng = _rng(scenario.rng_seed, lidar_index, _CLUTTER_STREAM)
        lo, hi = np.asarray(env.room.lo), np.asarray(env.room.hi)
        world = crng.uniform(lo, hi, size=(env.clutter_count, 3))
        extra = PointCloud(
            pose.inverse().apply(world),
            crng.uniform(0.0, CLUTTER_INTENSITY_MAX, size=env.clutter_count),
            np.full(env.clutter_count, -1),
            np.full(env.clutter_count, -1),
        )
        cloud = PointCloud.concat([cloud, extra])
    return cloud


def scan_pole(scenario: Scenario, lidar_index: int, pole_index: int) -> PointCloud:
    pole = scenario.poles[pole_index]
    lidar = scenario.lidar
    pose = scenario.poses[lidar_index].pose
    try:
        frame = canonicalize_pole_frame(pose, pole)
        chunks = []
        for ch, elev in enumerate(lidar.channel_elevations):
            n = channel_plane_normal(frame, elev)
            canon = march_beam_points(frame.x_p, n, pole.radius, lidar.azimuth_resolution)
            world = frame.correction.inverse().apply(canon)
            z0, z1 = pole.z_extent
            world = world[(world[:, 2] >= z0) & (world[:, 2] <= z1)]
            local = pose.inverse().apply(world)
            local = local[np.linalg.norm(local, axis=1) <= lidar.max_range]
            rng = _rng(scenario.rng_seed, lidar_index, pole_index, ch)
            if lidar.noise_sigma > 0:
                local = local + rng.normal(0.0, lidar.noise_sigma, size=local.shape)
            if pole.reflective:
                inten = np.full(len(local), REFLECTIVE_INTENSITY)
            else:
                inten = rng.uniform(0.0, CLUTTER_INTENSITY_MAX, size=len(local))
            chunks.append(PointCloud(local, inten, np.full(len(local), ch), np.full(len(local), pole_index)))
    except DegenerateGeometryError as exc:
        raise type(exc)(f"pole {pole_index}, lidar {lidar_index}: {exc.args[0]}", exc.hint) from exc
    return PointCloud.concat(chunks)


def generate_scan(scenario: Scenario, lidar_index: int) -> PointCloud:
    """Full scan of one sensor in its own frame: both poles, then the background.

    ``label`` holds the pole index for pole returns and -1 otherwise.
    """
    parts = [scan_pole(scenario, lidar_index, k) for k in range(len(scenario.poles))]
    parts.append(scan_environment(scenario, lidar_index))
    return PointCloud.concat(parts)


def fixed_lidar_poses() -> tuple:
    return (
        ScenePose(RigidTransform.from_quat(LIDAR1_QUAT, LIDAR1_POSITION)),
        ScenePose(RigidTransform.from_quat(LIDAR2_QUAT, LIDAR2_POSITION)),
    )


def _random_direction(rng: np.random.Generator, min_z: float) -> np.ndarray:
    z = min_z
    while z <= min_z:
        z = rng.uniform(min_z, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    s = math.sqrt(max(0.0, 1.0 - z * z))
    return np.array([s * math.cos(phi), s * math.sin(phi), z])


def random_scenario(
    seed: int,
    noise_sigma: float = 0.006,
    radius: float = 0.02,
    lidar: Optional[LidarModel] = None,
    environment: Optional[Environment] = Environment(),
    distance_range: Sequence[float] = (1.5, 4.0),
    norm_range: Sequence[float] = (2.0, 3.0),
) -> Scenario:
    """Two random near-vertical poles seen by the two fixed sensors.

    Directions have z-component above 0.9; anchors (where each axis crosses
    z = 0) have norms uniform in ``norm_range`` and are resampled until their
    separation falls in ``distance_range``.
    """
    rng = np.random.default_rng(seed)
    lidar = (lidar or LidarModel()).with_noise(noise_sigma)
    while True:
        dirs = [_random_direction(rng, 0.9) for _ in range(2)]
        anchors = []
        for _ in range(2):
            rho = rng.uniform(*norm_range)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            anchors.append(np.array([rho * math.cos(phi), rho * math.sin(phi), 0.0]))
        sep = float(np.linalg.norm(anchors[0] - anchors[1]))
        if not distance_range[0] <= sep <= distance_range[1]:
            continue
        if abs(float(dirs[0] @ dirs[1])) >= 1.0 - 1e-6:
            continue
        break
    poles = tuple(PoleSpec(a, d, radius) for a, d in zip(anchors, dirs))
    return Scenario(fixed_lidar_poses(), poles, lidar, int(seed), environment)
