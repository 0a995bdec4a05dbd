"""Picking the physically correct candidate by scene registration.

Each candidate extrinsic seeds a point-to-point ICP between the full scans.
The ICP correction of the right candidate is close to the identity; wrong
candidates need large corrections.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DisambiguationError, NoCorrespondencesError
from .geometry import PointCloud, RigidTransform, rotation_error, translation_error

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_eps: float = 1e-6
    max_correspondence_distance: float = 1.0
    subsample_size: int = 5000

    def __post_init__(self):
        if min(self.max_iterations, self.convergence_eps, self.max_correspondence_distance, self.subsample_size) <= 0:
            raise ValueError("ICP parameters must all be positive")


@dataclass
class IcpResult:
    correction: RigidTransform
    converged: bool
    iterations: int
    cost_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class CandidateScore:
    e_r: float
    e_t: float
    icp_correction: RigidTransform = field(default_factory=RigidTransform.identity)
    icp_converged: bool = False

    @property
    def finite(self) -> bool:
        return math.isfinite(self.e_r) and math.isfinite(self.e_t)


FAILED_SCORE = CandidateScore(math.inf, math.inf)


def stride_subsample(points: np.ndarray, size: int) -> np.ndarray:
    if len(points) > size:
        return points[:: int(math.ceil(len(points) / size))]
    return points


def best_fit_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion taking ``src`` onto ``dst`` (Kabsch)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cd - R @ cs)


def icp_register(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform,
    params: IcpParams = IcpParams(),
    tree: cKDTree | None = None,
) -> IcpResult:
    """Point-to-point ICP returning the correction ``C`` so that ``C * init`` aligns source to target.

    The tracked cost is the mean truncated squared distance
    ``min(d^2, gate^2)``, which cannot increase from one iteration to the next.
    """
    if len(source) == 0 or len(target) == 0:
        raise NoCorrespondencesError("ICP needs non-empty clouds")
    gate = params.max_correspondence_distance
    src = init.apply(stride_subsample(source.points, params.subsample_size))
    tgt = target.points
    tree = cKDTree(tgt) if tree is None else tree

    def match(pts):
        d, idx = tree.query(pts, distance_upper_bound=gate)
        ok = np.isfinite(d)
        cost = float(np.mean(np.minimum(np.where(ok, d, gate) ** 2, gate * gate)))
        return ok, idx, cost

    C = RigidTransform.identity()
    ok, idx, cost = match(src)
    trace = [cost]
    converged = False
    it = 0
    while it < params.max_iterations:
        it += 1
        if ok.sum() < 3:
            raise NoCorrespondencesError(
                f"only {int(ok.sum())} correspondences within {gate} m",
                hint="the initial guess is too far off or the scans do not overlap",
            )
        step = best_fit_transform(src[ok], tgt[idx[ok]])
        src = step.apply(src)
        C = step @ C
        ok, idx, new_cost = match(src)
        trace.append(new_cost)
        if abs(cost - new_cost) <= params.convergence_eps * max(cost, 1e-20):
            converged = True
            cost = new_cost
            break
        cost = new_cost
    return IcpResult(C, converged, it, trace)


def score_candidate(
    candidate,
    source_scene: PointCloud,
    target_scene: PointCloud,
    params: IcpParams = IcpParams(),
    tree: cKDTree | None = None,
) -> CandidateScore:
    """Distance-to-identity of the ICP correction seeded by one candidate.

    ``source_scene`` is the full LiDAR-2 scan, ``target_scene`` the full
    LiDAR-1 scan. Unconverged candidates and ICP failures score infinity.
    """
    if not candidate.converged:
        return FAILED_SCORE
    try:
        icp = icp_register(source_scene, target_scene, candidate.transform, params, tree)
    except NoCorrespondencesError as exc:
        logger.info("candidate %s: %s", candidate.hypothesis.label, exc)
        return FAILED_SCORE
    C = icp.correction
    return CandidateScore(rotation_error(C.R), translation_error(C.t), C, icp.converged)


DUPLICATE_TOL = 1e-9


def score_all(candidates, source_scene: PointCloud, target_scene: PointCloud, params: IcpParams = IcpParams()):
    """Scores in candidate order.

    Hypotheses related by a symmetry of the two axes often converge to the
    same transform; a candidate within ``DUPLICATE_TOL`` (max abs entry of the
    4x4 matrix) of an already scored one reuses that score.
    """
    tree = cKDTree(target_scene.points)
    done: list[tuple[np.ndarray, CandidateScore]] = []
    scores = []
    for c in candidates:
        if not c.converged:
            scores.append(FAILED_SCORE)
            continue
        M = c.transform.matrix()
        score = next((s for m, s in done if np.abs(m - M).max() <= DUPLICATE_TOL), None)
        if score is None:
            score = score_candidate(c, source_scene, target_scene, params, tree)
            done.append((M, score))
        scores.append(score)
    return scores


def select_best(scores, kappa: float = 1.0) -> int:
    """Index minimizing ``e_r + kappa * e_t`` (kappa in rad/m); ties go to the lower index."""
    combined = [s.e_r + kappa * s.e_t if s.finite else math.inf for s in scores]
    if not combined or all(math.isinf(c) for c in combined):
        raise DisambiguationError(
            "every candidate failed scene registration",
            hint="check that the two scans overlap and contain structure besides the poles",
        )
    return int(np.argmin(combined))
