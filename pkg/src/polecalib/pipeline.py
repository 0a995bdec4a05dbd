"""End-to-end runs: scans in, selected extrinsic and evaluation numbers out."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .disambiguate import score_all, select_best
from .extract import FittedPole, extract_poles, fit_line
from .formats import CandidateRecord, Manifest, RunReport
from .geometry import Line3, PointCloud, RigidTransform, line_angle, point_to_line_distance, relative_errors
from .metrics import AxisFitConfig, axis_fit_error, extrinsic_error_e_rt, rqe_score
from .sim import (
    Q1,
    Q2,
    LidarModel,
    Scenario,
    canonical_frame_for,
    canonicalize_pole_frame,
    generate_scan,
    random_scenario,
    scan_pole_canonical,
)
from .solver import CandidateResult, CorrespondenceHypothesis, solve_all

logger = logging.getLogger(__name__)

TABLE2_DISTANCES = (10.0, 6.0, 4.0)
TABLE2_RADII = (0.3, 0.2, 0.1)
TABLE2_ORIENTATIONS = (("q1", Q1), ("q2", Q2))


@dataclass
class Calibration:
    target_poles: list  # LiDAR 1
    source_poles: list  # LiDAR 2
    candidates: list
    scores: list
    selected_index: int

    @property
    def selected(self) -> CandidateResult:
        return self.candidates[self.selected_index]


def extract_both(cloud1: PointCloud, cloud2: PointCloud, cfg: RunConfig) -> tuple[list, list]:
    ex = cfg.extract
    kw = dict(threshold=ex.effective_threshold(), eps=ex.eps, min_points=ex.min_points, radius=ex.radius, max_rms=ex.max_rms)
    return extract_poles(cloud1, **kw), extract_poles(cloud2, **kw)


def calibrate(cloud1: PointCloud, cloud2: PointCloud, cfg: RunConfig = RunConfig()) -> Calibration:
    """Extrinsic taking ``cloud2`` (LiDAR 2) into the frame of ``cloud1`` (LiDAR 1)."""
    target, source = extract_both(cloud1, cloud2, cfg)
    candidates = solve_all(target, source, cfg.extract.radius, cfg.solver.loss, cfg.solver.huber_delta)
    scores = score_all(candidates, cloud2, cloud1, cfg.icp)
    return Calibration(target, source, candidates, scores, select_best(scores, cfg.kappa))


def candidate_records(cal: Calibration) -> tuple:
    records = []
    for c, s in zip(cal.candidates, cal.scores):
        records.append(
            CandidateRecord(
                c.hypothesis.label,
                bool(c.converged),
                int(c.iterations),
                float(c.final_cost) if np.isfinite(c.final_cost) else None,
                bool(s.icp_converged),
                float(s.e_r) if s.finite else None,
                float(s.e_t) if s.finite else None,
                tuple(float(x) for x in c.transform.quat),
                tuple(float(x) for x in c.transform.t),
            )
        )
    return tuple(records)


def build_report(cal: Calibration, cfg: RunConfig, command: str, seed: Optional[int] = None) -> RunReport:
    poles = []
    for scan, fitted in (("lidar1", cal.target_poles), ("lidar2", cal.source_poles)):
        for k, p in enumerate(fitted):
            poles.append((f"{scan}.{k}", tuple(map(float, p.line.anchor)), tuple(map(float, p.line.direction))))
    return RunReport(
        __version__,
        command,
        cfg.seed if seed is None else int(seed),
        cfg.config_hash(),
        cal.selected_index,
        candidate_records(cal),
        (),
        tuple(poles),
    )


def realized_hypothesis(T: RigidTransform, target_lines: Sequence[Line3], source_lines: Sequence[Line3]):
    """The hypothesis a transform realizes, found by mapping the source axes with it."""
    pairing, signs = [], []
    for line in source_lines:
        mapped = T.apply_line(line)
        cost = [line_angle(mapped, t) + point_to_line_distance(mapped.anchor, t) for t in target_lines]
        j = int(np.argmin(cost))
        pairing.append(j)
        # Line3 re-canonicalizes directions, so take the sign from the raw rotation
        signs.append(1 if (T.R @ line.direction) @ target_lines[j].direction > 0 else -1)
    if sorted(pairing) != [0, 1]:
        return None
    return CorrespondenceHypothesis(tuple(pairing), tuple(signs))


def pole_axis_errors(
    fitted: Sequence[FittedPole], manifest: Manifest, lidar_index: int, mode: str = "sum"
) -> list[float]:
    """Axis-fit error of each fitted pole against the nearest true pole.

    The fitted axis is moved into the true pole's canonical frame (pole on
    the z-axis); the z range is that of the pole's returns in that frame.
    """
    pose = manifest.poses[lidar_index].pose
    out = []
    for fp in fitted:
        best = None
        for pole in manifest.poles:
            local = pose.inverse().apply_line(Line3(pole.anchor, pole.direction))
            d = float(np.mean(point_to_line_distance(fp.points, local)))
            if best is None or d < best[0]:
                best = (d, pole)
        frame = canonicalize_pole_frame(pose, best[1])
        to_canon = frame.correction @ pose
        line = to_canon.apply_line(fp.line)
        z = to_canon.apply(fp.points)[:, 2]
        out.append(axis_fit_error(line, AxisFitConfig(float(z.min()), float(z.max()), mode)))
    return out


def merged_cloud(cloud1: PointCloud, cloud2: PointCloud, T: RigidTransform) -> PointCloud:
    moved = PointCloud(T.apply(cloud2.points), cloud2.intensities)
    return PointCloud.concat([PointCloud(cloud1.points, cloud1.intensities), moved])


def evaluate(
    report: RunReport,
    cloud1: PointCloud,
    cloud2: PointCloud,
    cfg: RunConfig,
    manifest: Optional[Manifest] = None,
    cal: Optional[Calibration] = None,
) -> RunReport:
    """Attach metrics to a report. Ground-truth metrics need a manifest."""
    sel = report.selected
    T = RigidTransform.from_quat(sel.quaternion, sel.translation)
    metrics = {"rqe": rqe_score(merged_cloud(cloud1, cloud2, T), cfg.metrics.rqe())}
    if manifest is not None:
        gt = manifest.ground_truth
        e_r, e_t = relative_errors(T, gt)
        metrics["e_r"] = e_r
        metrics["e_t"] = e_t
        metrics["e_rt"] = extrinsic_error_e_rt(T, gt, cfg.metrics.e_rt_min, cfg.metrics.e_rt_max)
        metrics["rqe_ground_truth"] = rqe_score(merged_cloud(cloud1, cloud2, gt), cfg.metrics.rqe())
        if cal is None:
            cal_target, cal_source = extract_both(cloud1, cloud2, cfg)
        else:
            cal_target, cal_source = cal.target_poles, cal.source_poles
        h = realized_hypothesis(gt, [p.line for p in cal_target], [p.line for p in cal_source])
        if h is not None:
            hit = realized_hypothesis(T, [p.line for p in cal_target], [p.line for p in cal_source]) == h
            metrics["selected_is_ground_truth"] = 1.0 if hit else 0.0
        for idx, fitted in ((0, cal_target), (1, cal_source)):
            for k, err in enumerate(pole_axis_errors(fitted, manifest, idx, cfg.integrand)):
                metrics[f"axis_fit.lidar{idx + 1}.{k}"] = err
    return report.with_metrics(metrics)


# ------------------------------------------------------------- experiments


def table2_sweep(
    mode: str = "sum",
    distances: Sequence[float] = TABLE2_DISTANCES,
    radii: Sequence[float] = TABLE2_RADII,
    orientations=TABLE2_ORIENTATIONS,
    lidar: Optional[LidarModel] = None,
) -> dict:
    """Axis-fit error of a PCA line fitted to noiseless pole returns.

    Keys are ``(orientation_name, x_p, r)``. The pole is the z-axis, the
    sensor sits at ``[x_p, 0, 0]`` with the given orientation, and the z range
    of the integral is that of the returns.
    """
    lidar = lidar or LidarModel()
    out = {}
    for name, q in orientations:
        for x_p in distances:
            frame = canonical_frame_for(x_p, q)
            for r in radii:
                pts, _ = scan_pole_canonical(frame, r, lidar)
                line, _ = fit_line(pts)
                cfg = AxisFitConfig(float(pts[:, 2].min()), float(pts[:, 2].max()), mode)
                out[(name, float(x_p), float(r))] = axis_fit_error(line, cfg)
    return out


def table2_rows(sweep: dict) -> tuple[list[str], list[list]]:
    """Table-II layout: one row per radius, one column per (orientation, distance)."""
    cols = sorted({(k[0], k[1]) for k in sweep}, key=lambda c: (c[0], -c[1]))
    radii = sorted({k[2] for k in sweep}, reverse=True)
    header = ["r"] + [f"{q}_x{x:g}" for q, x in cols]
    rows = [[r] + [sweep[(q, x, r)] for q, x in cols] for r in radii]
    return header, rows


def scenario_scans(scenario: Scenario) -> tuple[PointCloud, PointCloud]:
    return generate_scan(scenario, 0), generate_scan(scenario, 1)


@dataclass(frozen=True)
class TrialResult:
    seed: int
    e_r: float
    e_t: float
    e_rt: float
    selected: str
    ground_truth: Optional[str]
    correct: bool


def run_trial(seed: int, cfg: RunConfig) -> TrialResult:
    scenario = random_scenario(seed, noise_sigma=cfg.sigma)
    c1, c2 = scenario_scans(scenario)
    cal = calibrate(c1, c2, cfg)
    gt = scenario.ground_truth()
    T = cal.selected.transform
    e_r, e_t = relative_errors(T, gt)
    h = realized_hypothesis(gt, [p.line for p in cal.target_poles], [p.line for p in cal.source_poles])
    return TrialResult(
        seed,
        e_r,
        e_t,
        extrinsic_error_e_rt(T, gt, cfg.metrics.e_rt_min, cfg.metrics.e_rt_max),
        cal.selected.hypothesis.label,
        None if h is None else h.label,
        selected_is_ground_truth(cal, h),
    )


def selected_is_ground_truth(cal: Calibration, h: Optional[CorrespondenceHypothesis]) -> bool:
    """Whether the selected extrinsic realizes the ground-truth correspondence.

    Hypothesis labels only name the starting point of a refinement; two
    starts can end in the same basin, so the check maps the axes with the
    selected transform itself.
    """
    if h is None:
        return False
    lines = [p.line for p in cal.target_poles], [p.line for p in cal.source_poles]
    return realized_hypothesis(cal.selected.transform, *lines) == h


def score_table_from_report(report: RunReport):
    header = ["case", "hypothesis", "solver_cost", "rotation_error", "translation_error", "selected"]
    rows = []
    for i, c in enumerate(report.candidates):
        rows.append([
            i,
            c.hypothesis,
            c.solver_cost if c.solver_cost is not None else "failed",
            c.e_r if c.scored else "failed",
            c.e_t if c.scored else "failed",
            "*" if i == report.selected_index else "",
        ])
    return header, rows
