"""Command-line driver: ``polecalib {simulate,extract,calibrate,evaluate,pipeline}``.

Every stage reads and writes plain text under ``--out``:

    scan1.pcd, scan2.pcd, manifest.txt   simulate
    poles.tsv                            extract
    report.txt, candidates.tsv           calibrate
    report.txt (with metrics),
    axis_fit_<integrand>.tsv             evaluate

Exit status is 0 on success, 2 for usage errors and the error class's own
code for library failures (see ``errors.py``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import CONFIG_ENV, RunConfig, load_config
from .errors import ConfigError, PoleCalibError
from .formats import (
    read_cloud,
    read_manifest,
    read_report,
    write_cloud,
    write_manifest,
    write_report,
    write_table,
)
from .pipeline import (
    build_report,
    calibrate,
    evaluate,
    extract_both,
    scenario_scans,
    score_table_from_report,
    table2_rows,
    table2_sweep,
)
from .sim import random_scenario


SCAN_NAMES = ("scan1.pcd", "scan2.pcd")
MANIFEST = "manifest.txt"
REPORT = "report.txt"


def _paths(cfg: RunConfig, out: Path) -> tuple[Path, Path, Optional[Path]]:
    c1 = Path(cfg.cloud1) if cfg.cloud1 else out / SCAN_NAMES[0]
    c2 = Path(cfg.cloud2) if cfg.cloud2 else out / SCAN_NAMES[1]
    m = Path(cfg.manifest) if cfg.manifest else out / MANIFEST
    return c1, c2, m if m.is_file() else None


def _need(*paths: Path) -> None:
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"input {p} does not exist", hint="run simulate first or set [inputs] in the config")


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    scenario = random_scenario(cfg.seed, noise_sigma=cfg.sigma)
    c1, c2 = scenario_scans(scenario)
    out.mkdir(parents=True, exist_ok=True)
    write_cloud(c1, out / SCAN_NAMES[0])
    write_cloud(c2, out / SCAN_NAMES[1])
    write_manifest(scenario, out / MANIFEST)
    print(f"wrote {out / SCAN_NAMES[0]} ({len(c1)} points), {out / SCAN_NAMES[1]} ({len(c2)} points), {out / MANIFEST}")
    return 0


def cmd_extract(cfg: RunConfig, out: Path) -> int:
    p1, p2, _ = _paths(cfg, out)
    _need(p1, p2)
    poles1, poles2 = extract_both(read_cloud(p1), read_cloud(p2), cfg)
    rows = []
    for scan, fitted in (("lidar1", poles1), ("lidar2", poles2)):
        for k, fp in enumerate(fitted):
            rows.append(
                [scan, k, *map(float, fp.line.anchor), *map(float, fp.line.direction),
                 fp.inlier_count, float(fp.rms_residual), float(fp.z_span)]
            )
    out.mkdir(parents=True, exist_ok=True)
    header = ["scan", "pole", "ax", "ay", "az", "dx", "dy", "dz", "points", "rms", "span"]
    write_table(out / "poles.tsv", header, rows)
    print(f"wrote {out / 'poles.tsv'}")
    return 0


def _calibrate(cfg: RunConfig, out: Path, command: str):
    p1, p2, _ = _paths(cfg, out)
    _need(p1, p2)
    c1, c2 = read_cloud(p1), read_cloud(p2)
    cal = calibrate(c1, c2, cfg)
    report = build_report(cal, cfg, command)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / REPORT)
    write_table(out / "candidates.tsv", *score_table_from_report(report))
    return report, cal, c1, c2


def cmd_calibrate(cfg: RunConfig, out: Path) -> int:
    report, *_ = _calibrate(cfg, out, "calibrate")
    _print_selection(report)
    return 0


def _print_selection(report) -> None:
    sel = report.selected
    print(f"selected {sel.hypothesis} (case {report.selected_index})")
    print("quaternion " + " ".join(f"{v:.9f}" for v in sel.quaternion))
    print("translation " + " ".join(f"{v:.9f}" for v in sel.translation))


def _evaluate(cfg: RunConfig, out: Path, report, c1=None, c2=None, cal=None):
    p1, p2, mpath = _paths(cfg, out)
    if c1 is None:
        _need(p1, p2)
        c1, c2 = read_cloud(p1), read_cloud(p2)
    manifest = read_manifest(mpath) if mpath is not None else None
    report = evaluate(report, c1, c2, cfg, manifest, cal)
    write_report(report, out / REPORT)
    header, rows = table2_rows(table2_sweep(cfg.integrand))
    write_table(out / f"axis_fit_{cfg.integrand}.tsv", header, rows)
    return report


def _print_metrics(report) -> None:
    for k, v in report.metrics:
        print(f"{k} {v:.9g}")


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    report = read_report(out / REPORT)
    report = _evaluate(cfg, out, report)
    _print_metrics(report)
    return 0


def _one_pipeline(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    scenario = random_scenario(cfg.seed, noise_sigma=cfg.sigma)
    c1, c2 = scenario_scans(scenario)
    write_cloud(c1, out / SCAN_NAMES[0])
    write_cloud(c2, out / SCAN_NAMES[1])
    write_manifest(scenario, out / MANIFEST)
    # calibrate on what was written, so the files are the single source of truth
    local = cfg.replace(cloud1="", cloud2="", manifest="")
    report, cal, r1, r2 = _calibrate(local, out, "pipeline")
    return _evaluate(local, out, report, r1, r2, cal)


def cmd_pipeline(cfg: RunConfig, out: Path) -> int:
    if cfg.trials == 1:
        report = _one_pipeline(cfg, out)
        _print_selection(report)
        _print_metrics(report)
        return 0
    rows = []
    for k in range(cfg.trials):
        seed = cfg.seed + k
        report = _one_pipeline(cfg.replace(seed=seed, trials=1), out / f"trial_{seed}")
        m = dict(report.metrics)
        rows.append([seed, report.selected.hypothesis, m["e_r"], m["e_t"], m["e_rt"], m.get("selected_is_ground_truth", float("nan"))])
        print(f"seed {seed}: e_rt {m['e_rt']:.6f} e_r {m['e_r']:.6f} e_t {m['e_t']:.6f}")
    write_table(out / "trials.tsv", ["seed", "hypothesis", "e_r", "e_t", "e_rt", "correct"], rows)
    mean = float(np.mean([r[4] for r in rows]))
    print(f"mean e_rt over {cfg.trials} trials: {mean:.6f}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "extract": cmd_extract,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}

HELP = {
    "simulate": "write two simulated scans and a ground-truth manifest",
    "extract": "fit the two pole axes in each scan",
    "calibrate": "solve all eight hypotheses, score them and select one",
    "evaluate": "attach metrics (RQE, and e_r/e_t/e_rt with a manifest) to the report",
    "pipeline": "simulate, calibrate and evaluate; --trials N runs N consecutive seeds",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"INI config file (default: ${CONFIG_ENV} if set)")
    common.add_argument("--seed", type=int, help="scenario / RNG seed")
    common.add_argument("--sigma", type=float, help="range noise standard deviation in meters")
    common.add_argument("--out", default="polecalib_out", help="output directory (default: %(default)s)")
    common.add_argument("--trials", type=int, help="pipeline: number of consecutive seeds to run")
    common.add_argument("--integrand", choices=("sum", "product"), help="axis-fit error integrand")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="polecalib", description="Two-pole LiDAR extrinsic calibration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("seed", "sigma", "trials", "integrand") if getattr(args, k) is not None}
    cfg = cfg.replace(**overrides)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, Path(args.out))
    except PoleCalibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
