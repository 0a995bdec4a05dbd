"""Pole extraction: intensity threshold, Euclidean clustering, axis fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    NoReflectiveReturnsError,
    ParallelPolesError,
    RankDeficientError,
    TooFewClustersError,
)
from .geometry import Line3, PointCloud, normalize, point_to_line_distance

logger = logging.getLogger(__name__)

# intensity thresholds at roughly 5 m range
THRESHOLDS = {
    "velodyne": 230.0,
    "hesai": 200.0,
    "leishen": 200.0,
    "robosense": 200.0,
}
DEFAULT_THRESHOLD = 200.0


def threshold_for(manufacturer: Optional[str], table: Optional[dict] = None) -> float:
    table = THRESHOLDS if table is None else {k.lower(): float(v) for k, v in table.items()}
    if not manufacturer:
        return DEFAULT_THRESHOLD
    value = table.get(manufacturer.lower(), DEFAULT_THRESHOLD)
    if not 0.0 <= value <= 255.0:
        raise ValueError(f"threshold {value} outside [0, 255]")
    return value


@dataclass(frozen=True)
class Cluster:
    indices: np.ndarray
    centroid: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class FittedPole:
    """A fitted pole axis.

    ``indices`` point into the cloud given to ``extract_poles``. ``radius`` is
    the surface offset the solver should expect between returns and the axis
    (0 for the plain line model).
    """

    line: Line3
    inlier_count: int
    rms_residual: float
    z_span: float
    indices: np.ndarray
    radius: float = 0.0
    points: Optional[np.ndarray] = None


def filter_by_intensity(cloud: PointCloud, threshold: float) -> tuple[PointCloud, np.ndarray]:
    """Returns with intensity >= threshold, in their original order, plus their indices."""
    if not 0.0 <= threshold <= 255.0:
        raise ValueError(f"threshold {threshold} outside [0, 255]")
    idx = np.flatnonzero(cloud.intensities >= threshold)
    if len(idx) == 0:
        raise NoReflectiveReturnsError(
            f"no returns at or above intensity {threshold}",
            hint="check the retro-reflective tape or lower the threshold",
        )
    return cloud.subset(idx), idx


def cluster_points(points, eps: float = 0.3, min_points: int = 5) -> list[Cluster]:
    """Single-linkage clusters (link when closer than ``eps``), largest first."""
    if eps <= 0 or min_points < 2:
        raise ValueError("need eps > 0 and min_points >= 2")
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
    n = len(pts)
    if n == 0:
        return []
    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    clusters = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if len(idx) >= min_points:
            clusters.append(Cluster(idx, pts[idx].mean(axis=0)))
    clusters.sort(key=lambda c: (-len(c), int(c.indices[0])))
    return clusters


def fit_line(points) -> tuple[Line3, float]:
    """Total-least-squares line: centroid plus principal axis of the scatter."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise RankDeficientError("need at least two points to fit a line")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(1.0, float(np.abs(pts).max()))
    if s[0] <= 1e-12 * scale:
        raise RankDeficientError("all points coincide; line direction undefined")
    line = Line3(centroid, vt[0])
    rms = float(np.sqrt(np.mean(point_to_line_distance(pts, line) ** 2)))
    return line, rms


def _perp_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = normalize(np.cross(d, helper))
    return e1, np.cross(d, e1)


def fit_cylinder_axis(points, radius: float, init: Line3, viewpoint=(0.0, 0.0, 0.0)) -> tuple[Line3, float]:
    """Axis of a cylinder of known radius through surface returns.

    Starts from ``init`` pushed away from ``viewpoint`` by the radius (returns
    only cover the side facing the sensor) and minimizes the smooth radial
    residuals ``(dist**2 - radius**2) / (2 radius)``. Returns the axis and the
    RMS of ``dist(p, axis) - radius``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    d0 = init.direction
    away = init.anchor - np.asarray(viewpoint, dtype=float)
    away -= (away @ d0) * d0
    a0 = init.anchor + (radius * normalize(away) if np.linalg.norm(away) > 0 else 0.0)
    e1, e2 = _perp_basis(d0)

    def unpack(x):
        d = normalize(d0 + x[0] * e1 + x[1] * e2)
        return a0 + x[2] * e1 + x[3] * e2, d

    def residuals(x):
        a, d = unpack(x)
        diff = pts - a
        perp = diff - np.outer(diff @ d, d)
        return (np.einsum("ni,ni->n", perp, perp) - radius * radius) / (2.0 * radius)

    sol = least_squares(residuals, np.zeros(4), method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a, d = unpack(sol.x)
    # re-anchor at the foot of the centroid so the anchor is comparable to the PCA one
    c = pts.mean(axis=0)
    a = a + ((c - a) @ d) * d
    radial = point_to_line_distance(pts, Line3(a, d)) - radius
    return Line3(a, d), float(np.sqrt(np.mean(radial**2)))


def extract_poles(
    cloud: PointCloud,
    threshold: float = DEFAULT_THRESHOLD,
    eps: float = 0.3,
    min_points: int = 5,
    radius: float = 0.0,
    max_rms: float = 0.06,
) -> list[FittedPole]:
    """Two pole axes from a raw scan, ordered by cluster size (largest first).

    With ``radius > 0`` each PCA axis is refined as a cylinder axis of that
    radius. Clusters whose line fit has RMS above ``max_rms`` are skipped as
    non-poles.
    """
    bright, src_idx = filter_by_intensity(cloud, threshold)
    clusters = cluster_points(bright.points, eps, min_points)
    poles: list[FittedPole] = []
    for cl in clusters:
        pts = bright.points[cl.indices]
        try:
            line, rms = fit_line(pts)
        except RankDeficientError:
            continue
        if rms > max_rms:
            logger.debug("skipping cluster of %d points: rms %.4f > %.4f", len(cl), rms, max_rms)
            continue
        if radius > 0:
            line, rms = fit_cylinder_axis(pts, radius, line)
        z = pts @ line.direction
        poles.append(
            FittedPole(line, len(cl), rms, float(z.max() - z.min()), src_idx[cl.indices], radius, pts)
        )
        if len(poles) == 2:
            break
    if len(poles) < 2:
        raise TooFewClustersError(
            f"found {len(poles)} pole-like cluster(s), need 2",
            hint="make sure both poles are in view and taped; check eps/min_points",
        )
    if abs(float(poles[0].line.direction @ poles[1].line.direction)) >= 1.0 - 1e-6:
        raise ParallelPolesError(
            "the two fitted poles are parallel",
            hint="tilt one pole so the axes are not parallel",
        )
    return poles
