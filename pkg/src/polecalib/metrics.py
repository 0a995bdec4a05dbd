"""Evaluation measures: axis-fit error, range-averaged extrinsic error, RQE crispness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.integrate import quad

from .errors import MetricError
from .geometry import Line3, PointCloud, RigidTransform


@dataclass(frozen=True)
class AxisFitConfig:
    z_min: float
    z_max: float
    integrand_mode: str = "sum"

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError("need z_min < z_max")
        if self.integrand_mode not in ("sum", "product"):
            raise ValueError("integrand_mode must be 'sum' or 'product'")


@dataclass(frozen=True)
class RqeConfig:
    kernel_sigma: float = 0.05
    subsample_size: int = 4000
    block_size: int = 1024

    def __post_init__(self):
        if self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")


def axis_fit_error(line: Line3, cfg: AxisFitConfig) -> float:
    """Mean horizontal deviation of a fitted axis from the true axis (the z-axis).

    The line is parameterized as ``[x_c, y_c, z_c] + s [n_cx, n_cy, n_cz]``
    and the integrand is averaged over the ``s`` range that spans
    ``z in [z_min, z_max]``. Mode ``"sum"`` averages the squared distance
    ``(x_c + n_cx s)^2 + (y_c + n_cy s)^2``; mode ``"product"`` averages
    ``(x_c + n_cx s)^2 (y_c + n_cy s)^2``. Integration is exact (polynomials).
    """
    xc, yc, zc = line.anchor
    ncx, ncy, ncz = line.direction
    if abs(ncz) < 1e-15:
        raise MetricError("fitted line is horizontal; the z range cannot be mapped", hint="n_cz must be non-zero")
    lo = (cfg.z_min - zc) / ncz
    hi = (cfg.z_max - zc) / ncz
    px = P.polypow([xc, ncx], 2)
    py = P.polypow([yc, ncy], 2)
    integrand = P.polyadd(px, py) if cfg.integrand_mode == "sum" else P.polymul(px, py)
    antider = P.polyint(integrand)
    total = P.polyval(hi, antider) - P.polyval(lo, antider)
    return float(ncz / (cfg.z_max - cfg.z_min) * total)


def extrinsic_error_e_rt(
    result: RigidTransform, truth: RigidTransform, n: float = 1.0, m: float = 60.0, tol: float = 1e-9
) -> float:
    """Average displacement between two extrinsics along ``[0, x, 0]``, ``x in [n, m]``."""
    if not n < m:
        raise MetricError("need n < m")
    dR = result.R[:, 1] - truth.R[:, 1]
    dt = result.t - truth.t
    a, b, c = float(dR @ dR), float(2.0 * dR @ dt), float(dt @ dt)

    def integrand(x):
        return np.sqrt(max(a * x * x + b * x + c, 0.0))

    # the integrand has a kink where the quadratic touches zero
    points = None
    if a > 0:
        x0 = -b / (2 * a)
        if n < x0 < m:
            points = [x0]
    val, _ = quad(integrand, n, m, epsabs=tol, epsrel=0.0, limit=200, points=points)
    return float(val / (m - n))


def _subsample(points: np.ndarray, size: int) -> np.ndarray:
    if size and len(points) > size:
        stride = int(np.ceil(len(points) / size))
        return points[::stride]
    return points


def information_potential(points, cfg: RqeConfig = RqeConfig()) -> float:
    """``(1/N^2) sum_ij exp(-|p_i - p_j|^2 / (4 sigma^2))`` computed exactly in blocks."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=float)
    pts = _subsample(pts, cfg.subsample_size)
    n = len(pts)
    if n < 2:
        raise MetricError("RQE needs at least two points")
    sq = np.einsum("ij,ij->i", pts, pts)
    scale = -1.0 / (4.0 * cfg.kernel_sigma**2)
    partial = []
    for s in range(0, n, cfg.block_size):
        blk = pts[s : s + cfg.block_size]
        d2 = sq[s : s + cfg.block_size, None] + sq[None, :] - 2.0 * blk @ pts.T
        np.maximum(d2, 0.0, out=d2)
        partial.append(np.exp(d2 * scale).sum(axis=1))
    return float(np.sort(np.concatenate(partial)).sum() / (n * n))


def renyi_entropy(points, cfg: RqeConfig = RqeConfig()) -> float:
    """Quadratic Renyi entropy estimate ``-log V``; lower means crisper."""
    return float(-np.log(information_potential(points, cfg)))


def rqe_score(merged: PointCloud, cfg: RqeConfig = RqeConfig()) -> float:
    """Crispness of a merged cloud; larger means better aligned scans.

    Reported as the information potential ``V = exp(-H)`` of the Gaussian
    kernel estimate, so it is positive and monotone in crispness.
    """
    return information_potential(merged, cfg)
