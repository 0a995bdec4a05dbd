"""Extrinsic estimation from two pole pairs.

The unknown ``T`` maps LiDAR-2 (source) points into the LiDAR-1 (target)
frame. For every correspondence hypothesis (which source pole matches which
target pole, and with which axis signs) a closed-form initial guess is refined
by Levenberg-Marquardt on the point-to-axis residuals.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GeometryError, PoleCalibError, SolverError
from .geometry import (
    Line3,
    RigidTransform,
    common_perpendicular_midpoint,
    normalize,
    relative_errors,
    so3_exp,
)

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 100
STEP_TOL = 1e-10
COST_ROUNDING = 64 * np.finfo(float).eps
LAMBDA_FLOOR = 1e-9
GRAD_TOL = 1e-10


@dataclass(frozen=True)
class CorrespondenceHypothesis:
    """Source pole ``k`` matches target pole ``pairing[k]``; ``T d_k = signs[k] * d'``."""

    pairing: tuple
    signs: tuple

    @property
    def label(self) -> str:
        sign = "".join("+" if s > 0 else "-" for s in self.signs)
        return f"{self.pairing[0]}{self.pairing[1]}{sign}"

    def inverse(self) -> "CorrespondenceHypothesis":
        """The same matching read from the target side."""
        inv = [0, 0]
        signs = [1, 1]
        for k, j in enumerate(self.pairing):
            inv[j] = k
            signs[j] = self.signs[k]
        return CorrespondenceHypothesis(tuple(inv), tuple(signs))


def enumerate_hypotheses() -> list[CorrespondenceHypothesis]:
    """All eight hypotheses: 2 pairings x 4 sign choices, fixed order."""
    return [
        CorrespondenceHypothesis(pairing, signs)
        for pairing in ((0, 1), (1, 0))
        for signs in itertools.product((1, -1), repeat=2)
    ]


@dataclass
class CandidateResult:
    hypothesis: CorrespondenceHypothesis
    transform: RigidTransform
    final_cost: float
    converged: bool
    iterations: int
    init: Optional[RigidTransform] = None
    cost_trace: list = field(default_factory=list)
    error: str = ""


def _frame(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    e1 = normalize(d1)
    e2 = d2 - (d2 @ e1) * e1
    if np.linalg.norm(e2) < 1e-9:
        raise GeometryError("parallel lines: rotation frame undefined", hint="poles must not be parallel")
    e2 = normalize(e2)
    return np.column_stack([e1, e2, np.cross(e1, e2)])


def closed_form_init(
    h: CorrespondenceHypothesis, target_lines: Sequence[Line3], source_lines: Sequence[Line3]
) -> RigidTransform:
    """Rigid motion taking the source line pair onto the hypothesized target pair.

    Rotation aligns the orthonormal frames built from the two directions;
    translation aligns the midpoints of the common perpendiculars.
    """
    src = [source_lines[0], source_lines[1]]
    tgt = [target_lines[h.pairing[0]], target_lines[h.pairing[1]]]
    F_src = _frame(src[0].direction, src[1].direction)
    F_tgt = _frame(h.signs[0] * tgt[0].direction, h.signs[1] * tgt[1].direction)
    R = F_tgt @ F_src.T
    m_src = common_perpendicular_midpoint(*src)
    m_tgt = common_perpendicular_midpoint(*tgt)
    return RigidTransform(R, m_tgt - R @ m_src)


def point_line_residuals(
    R: np.ndarray, t: np.ndarray, points: np.ndarray, line: Line3, radius: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of ``R p + t`` against an axis and their Jacobian.

    The Jacobian is taken with respect to ``(omega, delta_t)`` where the state
    is perturbed as ``R <- exp(omega) R`` and ``t <- t + delta_t``.

    With ``radius == 0`` each point contributes the 3-vector perpendicular
    offset (its squared norm is the squared point-to-line distance). With
    ``radius > 0`` each point contributes the scalar
    ``(distance**2 - radius**2) / (2 radius)``, which equals
    ``distance - radius`` to first order on the surface but stays smooth at
    the axis, so Gauss-Newton does not stall near it.
    """
    P = np.eye(3) - np.outer(line.direction, line.direction)
    q = points @ R.T
    diff = q + t - line.anchor
    perp = diff @ P  # P is symmetric
    n = len(points)
    # d(perp)/d(omega) = -P [q]x ; d(perp)/d(delta_t) = P
    Jw = -np.einsum("ij,njk->nik", P, _skew_many(q))
    Jt = np.broadcast_to(P, (n, 3, 3))
    J = np.concatenate([Jw, Jt], axis=2)
    if radius == 0.0:
        return perp.reshape(-1), J.reshape(-1, 6)
    res = (np.einsum("ni,ni->n", perp, perp) - radius * radius) / (2.0 * radius)
    return res, np.einsum("ni,nij->nj", perp, J) / radius


def _skew_many(v: np.ndarray) -> np.ndarray:
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -v[:, 2], v[:, 1]
    out[:, 1, 0], out[:, 1, 2] = v[:, 2], -v[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -v[:, 1], v[:, 0]
    return out


def _stack(R, t, clouds, lines, h, radius, loss, huber_delta):
    res, jac = [], []
    for k, pts in enumerate(clouds):
        r, J = point_line_residuals(R, t, pts, lines[h.pairing[k]], radius)
        res.append(r)
        jac.append(J)
    r = np.concatenate(res)
    J = np.concatenate(jac)
    if loss == "huber":
        # IRLS weights on the per-point distance
        per_point = r.reshape(-1, 3) if radius == 0.0 else r[:, None]
        d = np.linalg.norm(per_point, axis=1)
        w = np.where(d <= huber_delta, 1.0, huber_delta / np.maximum(d, 1e-300))
        w = np.sqrt(np.repeat(w, per_point.shape[1]))
        r, J = r * w, J * w[:, None]
    return r, J


def refine(
    init: RigidTransform,
    source_clouds: Sequence[np.ndarray],
    target_lines: Sequence[Line3],
    h: CorrespondenceHypothesis,
    radius: float = 0.0,
    loss: str = "squared",
    huber_delta: float = 0.018,
    max_iterations: int = MAX_ITERATIONS,
) -> CandidateResult:
    """Levenberg-Marquardt on the summed squared point-to-axis residuals.

    Damping starts at 1e-3 and is divided by 10 (down to 1e-9) after an
    accepted step and multiplied by 10 after a rejected one. Stops when the step or gradient
    norm drops below 1e-10, or after ``max_iterations``.
    """
    if loss not in ("squared", "huber"):
        raise SolverError(f"unknown loss {loss!r}", hint="use 'squared' or 'huber'")
    clouds = [np.asarray(c, dtype=float).reshape(-1, 3) for c in source_clouds]
    if any(len(c) == 0 for c in clouds):
        raise SolverError("empty pole cloud", hint="each pole needs at least one return")

    R, t = init.R.copy(), init.t.copy()
    r, J = _stack(R, t, clouds, target_lines, h, radius, loss, huber_delta)
    cost = float(r @ r)
    trace = [cost]
    lam = 1e-3
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        g = J.T @ r
        if np.linalg.norm(g) < GRAD_TOL:
            converged = True
            break
        H = J.T @ J
        damp = lam * np.maximum(np.diag(H), 1e-12)
        step = np.linalg.solve(H + np.diag(damp), -g)
        if np.linalg.norm(step) < STEP_TOL:
            converged = True
            break
        R_new = so3_exp(step[:3]) @ R
        t_new = t + step[3:]
        r_new, J_new = _stack(R_new, t_new, clouds, target_lines, h, radius, loss, huber_delta)
        cost_new = float(r_new @ r_new)
        # decreases at rounding level count as rejections so the damping grows
        # and the step test can fire
        if cost_new < cost - COST_ROUNDING * cost:
            R, t, r, J, cost = R_new, t_new, r_new, J_new, cost_new
            trace.append(cost)
            lam = max(lam / 10.0, LAMBDA_FLOOR)
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at machine precision
                converged = True
                break
    return CandidateResult(h, RigidTransform(R, t), cost, converged, it, init, trace)


def solve_all(
    target_poles,
    source_poles,
    radius: Optional[float] = None,
    loss: str = "squared",
    huber_delta: float = 0.018,
) -> list[CandidateResult]:
    """Initialize and refine every hypothesis; one result each, in enumeration order.

    ``target_poles``/``source_poles`` are the two ``FittedPole`` of LiDAR 1 and
    LiDAR 2. A failure in one hypothesis is recorded on its result rather than
    aborting the others.
    """
    if radius is None:
        radius = float(target_poles[0].radius)
    t_lines = [p.line for p in target_poles]
    s_lines = [p.line for p in source_poles]
    s_clouds = [p.points for p in source_poles]
    results = []
    for h in enumerate_hypotheses():
        try:
            init = closed_form_init(h, t_lines, s_lines)
            res = refine(init, s_clouds, t_lines, h, radius, loss, huber_delta)
        except PoleCalibError as exc:
            logger.warning("hypothesis %s failed: %s", h.label, exc)
            res = CandidateResult(h, RigidTransform.identity(), float("inf"), False, 0, None, [], str(exc))
        results.append(res)
    return results


def reverse_consistency(
    result: CandidateResult, target_poles, source_poles, radius: Optional[float] = None
) -> tuple[float, float]:
    """Solve the opposite direction (target points onto source axes) and compare.

    Returns the rotation and translation discrepancy between the forward
    estimate and the inverse of the reverse estimate.
    """
    if radius is None:
        radius = float(target_poles[0].radius)
    h_rev = result.hypothesis.inverse()
    rev = refine(
        result.transform.inverse(),
        [p.points for p in target_poles],
        [p.line for p in source_poles],
        h_rev,
        radius,
    )
    return relative_errors(rev.transform.inverse(), result.transform)

