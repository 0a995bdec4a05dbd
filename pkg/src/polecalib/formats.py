"""Text formats: point clouds (ASCII PCD, CSV), scenario manifests and run reports.

Floats are written with ``repr`` so every value reads back bit-for-bit.
"""

from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError
from .geometry import PointCloud, RigidTransform
from .sim import LidarModel, PoleSpec, Scenario, ScenePose

REQUIRED_FIELDS = ("x", "y", "z", "intensity")
OPTIONAL_FIELDS = ("ring", "label")
PCD_HEADER_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")

MALFORMED_HEADER = "malformed-header"
FIELD_COUNT_MISMATCH = "field-count-mismatch"
NON_NUMERIC_TOKEN = "non-numeric-token"


def fmt(x: float) -> str:
    return repr(float(x))


def fmt_vec(v) -> str:
    return " ".join(fmt(x) for x in v)


# ---------------------------------------------------------------- clouds


def _columns(cloud: PointCloud) -> tuple[list[str], list[np.ndarray]]:
    names = list(REQUIRED_FIELDS)
    cols = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2], cloud.intensities]
    if cloud.ring is not None:
        names.append("ring")
        cols.append(cloud.ring)
    if cloud.label is not None:
        names.append("label")
        cols.append(cloud.label)
    return names, cols


def _rows(names, cols, sep: str) -> list[str]:
    ints = [n in OPTIONAL_FIELDS for n in names]
    lists = [c.tolist() for c in cols]
    out = []
    for row in zip(*lists):
        out.append(sep.join(str(int(v)) if is_int else repr(float(v)) for v, is_int in zip(row, ints)))
    return out


def write_cloud(cloud: PointCloud, path) -> None:
    """Write ``.pcd`` (ASCII) or ``.csv`` depending on the suffix."""
    path = Path(path)
    names, cols = _columns(cloud)
    if path.suffix.lower() == ".csv":
        text = ",".join(names) + "\n" + "".join(r + "\n" for r in _rows(names, cols, ","))
    else:
        n = len(cloud)
        size = " ".join("4" for _ in names)
        types = " ".join("I" if nm in OPTIONAL_FIELDS else "F" for nm in names)
        header = [
            "# .PCD v0.7 - Point Cloud Data file format",
            "VERSION 0.7",
            "FIELDS " + " ".join(names),
            "SIZE " + size,
            "TYPE " + types,
            "COUNT " + " ".join("1" for _ in names),
            f"WIDTH {n}",
            "HEIGHT 1",
            "VIEWPOINT 0 0 0 1 0 0 0",
            f"POINTS {n}",
            "DATA ascii",
        ]
        text = "\n".join(header) + "\n" + "".join(r + "\n" for r in _rows(names, cols, " "))
    path.write_text(text, encoding="ascii")


def _number(token: str, lineno: int, path: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FormatError(f"cannot parse {token!r} as a number", kind=NON_NUMERIC_TOKEN, line=lineno, path=path) from None
    if not math.isfinite(value):
        raise FormatError(f"non-finite value {token!r}", kind=NON_NUMERIC_TOKEN, line=lineno, path=path)
    return value


def _build(names: list[str], rows: list[list[float]]) -> PointCloud:
    data = np.asarray(rows, dtype=float).reshape(-1, len(names))
    col = {n: data[:, i] for i, n in enumerate(names)}
    ring = col["ring"].astype(int) if "ring" in col else None
    label = col["label"].astype(int) if "label" in col else None
    return PointCloud(np.column_stack([col["x"], col["y"], col["z"]]), col["intensity"], ring, label)


def _check_fields(names: list[str], lineno: int, path: str, kind: str) -> None:
    missing = [f for f in REQUIRED_FIELDS if f not in names]
    if missing:
        raise FormatError(
            f"missing field(s) {', '.join(missing)}; have {', '.join(names) or 'none'}",
            hint="clouds need x, y, z and intensity",
            kind=kind,
            line=lineno,
            path=path,
        )
    if len(set(names)) != len(names):
        raise FormatError("duplicate field names", kind=MALFORMED_HEADER, line=lineno, path=path)


def read_pcd(text: str, path: str = "") -> PointCloud:
    lines = text.splitlines()
    header: dict[str, tuple[int, list[str]]] = {}
    i = 0
    while i < len(lines):
        raw = lines[i].strip()
        i += 1
        if not raw or raw.startswith("#"):
            continue
        key, *vals = raw.split()
        if key not in PCD_HEADER_KEYS:
            raise FormatError(f"unexpected header entry {key!r}", kind=MALFORMED_HEADER, line=i, path=path)
        header[key] = (i, vals)
        if key == "DATA":
            break
    for key in ("FIELDS", "POINTS", "DATA"):
        if key not in header:
            raise FormatError(f"header lacks {key}", kind=MALFORMED_HEADER, line=min(i, max(len(lines), 1)), path=path)
    data_line, data_vals = header["DATA"]
    if data_vals != ["ascii"]:
        raise FormatError(
            f"only DATA ascii is supported, got {' '.join(data_vals)!r}", kind=MALFORMED_HEADER, line=data_line, path=path
        )
    fields_line, names = header["FIELDS"]
    _check_fields(names, fields_line, path, MALFORMED_HEADER)
    if "COUNT" in header and any(c != "1" for c in header["COUNT"][1]):
        raise FormatError("multi-count fields are not supported", kind=MALFORMED_HEADER, line=header["COUNT"][0], path=path)
    points_line, pv = header["POINTS"]
    if len(pv) != 1 or not pv[0].isdigit():
        raise FormatError(f"bad POINTS value {' '.join(pv)!r}", kind=MALFORMED_HEADER, line=points_line, path=path)
    expected = int(pv[0])
    rows = []
    for lineno in range(i + 1, len(lines) + 1):
        raw = lines[lineno - 1].strip()
        if not raw:
            continue
        toks = raw.split()
        if len(toks) != len(names):
            raise FormatError(
                f"expected {len(names)} values, found {len(toks)}", kind=FIELD_COUNT_MISMATCH, line=lineno, path=path
            )
        rows.append([_number(t, lineno, path) for t in toks])
    if len(rows) != expected:
        raise FormatError(
            f"POINTS says {expected} but the file has {len(rows)} data rows",
            kind=MALFORMED_HEADER,
            line=points_line,
            path=path,
        )
    return _build(names, rows)


def read_csv(text: str, path: str = "") -> PointCloud:
    reader = csv.reader(io.StringIO(text))
    try:
        names = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise FormatError("empty file", kind=MALFORMED_HEADER, line=1, path=path) from None
    _check_fields(names, 1, path, FIELD_COUNT_MISMATCH)
    rows = []
    for toks in reader:
        lineno = reader.line_num
        if not toks or all(not t.strip() for t in toks):
            continue
        if len(toks) != len(names):
            raise FormatError(
                f"expected {len(names)} values, found {len(toks)}", kind=FIELD_COUNT_MISMATCH, line=lineno, path=path
            )
        rows.append([_number(t.strip(), lineno, path) for t in toks])
    return _build(names, rows)


def read_cloud(path) -> PointCloud:
    """Read an ASCII PCD or a CSV cloud (by suffix; ``.csv`` means CSV)."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no such file {path}", kind="missing-file", path=str(path))
    text = path.read_text(encoding="ascii", errors="replace")
    if path.suffix.lower() == ".csv":
        return read_csv(text, str(path))
    return read_pcd(text, str(path))


# ------------------------------------------------------- key = value files


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",))
    cp.optionxform = str
    return cp


def _dump(sections: list[tuple[str, list[tuple[str, str]]]], title: str) -> str:
    out = [f"# {title}"]
    for name, items in sections:
        out.append("")
        out.append(f"[{name}]")
        out.extend(f"{k} = {v}" for k, v in items)
    return "\n".join(out) + "\n"


def _load(text: str, path: str, what: str) -> configparser.ConfigParser:
    cp = _parser()
    try:
        cp.read_string(text, source=path or "<string>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", 0) or 0
        raise FormatError(f"unreadable {what}: {exc.message}", kind=MALFORMED_HEADER, line=line, path=path) from None
    return cp


def _get(cp, section: str, key: str, path: str, what: str) -> str:
    if not cp.has_option(section, key):
        raise FormatError(f"{what} lacks [{section}] {key}", kind="schema", path=path)
    return cp.get(section, key)


def _floats(text: str, n: Optional[int], path: str, key: str) -> tuple:
    toks = text.split()
    if n is not None and len(toks) != n:
        raise FormatError(f"{key} needs {n} numbers, got {len(toks)}", kind=FIELD_COUNT_MISMATCH, path=path)
    return tuple(_number(t, 0, path) for t in toks)


def _bool(text: str, path: str, key: str) -> bool:
    if text not in ("true", "false"):
        raise FormatError(f"{key} must be true or false, got {text!r}", kind="schema", path=path)
    return text == "true"


# ---------------------------------------------------------------- manifest


def write_manifest(scenario: Scenario, path) -> None:
    gt = scenario.ground_truth()
    sections = [
        ("scenario", [("seed", str(scenario.rng_seed)), ("sigma", fmt(scenario.lidar.noise_sigma))]),
        (
            "lidar",
            [
                ("elevations", fmt_vec(scenario.lidar.channel_elevations)),
                ("azimuth_resolution", fmt(scenario.lidar.azimuth_resolution)),
                ("max_range", fmt(scenario.lidar.max_range)),
            ],
        ),
    ]
    for i, sp in enumerate(scenario.poses, start=1):
        sections.append((f"lidar{i}", [("quaternion", fmt_vec(sp.pose.quat)), ("translation", fmt_vec(sp.pose.t))]))
    for k, pole in enumerate(scenario.poles):
        sections.append(
            (
                f"pole{k}",
                [
                    ("anchor", fmt_vec(pole.anchor)),
                    ("direction", fmt_vec(pole.direction)),
                    ("radius", fmt(pole.radius)),
                    ("z_extent", fmt_vec(pole.z_extent)),
                ],
            )
        )
    sections.append(("ground_truth", [("quaternion", fmt_vec(gt.quat)), ("translation", fmt_vec(gt.t))]))
    Path(path).write_text(_dump(sections, "scenario manifest"), encoding="ascii")


@dataclass(frozen=True)
class Manifest:
    seed: int
    sigma: float
    lidar: LidarModel
    poses: tuple
    poles: tuple
    ground_truth: RigidTransform

    def scenario(self) -> Scenario:
        return Scenario(self.poses, self.poles, self.lidar, self.seed, None)


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no such file {path}", kind="missing-file", path=str(path))
    p = str(path)
    cp = _load(path.read_text(encoding="ascii", errors="replace"), p, "manifest")

    def vec(section, key, n):
        return _floats(_get(cp, section, key, p, "manifest"), n, p, key)

    def transform(section):
        return RigidTransform.from_quat(vec(section, "quaternion", 4), vec(section, "translation", 3))

    lidar = LidarModel(
        tuple(vec("lidar", "elevations", None)),
        vec("lidar", "azimuth_resolution", 1)[0],
        vec("lidar", "max_range", 1)[0],
        vec("scenario", "sigma", 1)[0],
    )
    poles = tuple(
        PoleSpec(vec(s, "anchor", 3), vec(s, "direction", 3), vec(s, "radius", 1)[0], vec(s, "z_extent", 2))
        for s in ("pole0", "pole1")
    )
    seed_text = _get(cp, "scenario", "seed", p, "manifest")
    if not seed_text.lstrip("-").isdigit():
        raise FormatError(f"seed must be an integer, got {seed_text!r}", kind=NON_NUMERIC_TOKEN, path=p)
    return Manifest(
        int(seed_text),
        lidar.noise_sigma,
        lidar,
        (ScenePose(transform("lidar1")), ScenePose(transform("lidar2"))),
        poles,
        transform("ground_truth"),
    )


# ------------------------------------------------------------------ report

REPORT_FORMAT = "1"


@dataclass(frozen=True)
class CandidateRecord:
    hypothesis: str
    solver_converged: bool
    solver_iterations: int
    solver_cost: Optional[float]
    icp_converged: bool
    e_r: Optional[float]
    e_t: Optional[float]
    quaternion: tuple
    translation: tuple

    @property
    def scored(self) -> bool:
        return self.e_r is not None and self.e_t is not None


@dataclass(frozen=True)
class RunReport:
    """Everything a calibration run produced. Only finite numbers are stored;
    a candidate whose scoring failed has ``e_r``/``e_t`` set to ``None``."""

    version: str
    command: str
    seed: int
    config_hash: str
    selected_index: int
    candidates: tuple
    metrics: tuple = ()  # (name, value) pairs in insertion order
    poles: tuple = ()  # per-scan fitted axes: (name, anchor, direction)

    @property
    def selected(self) -> CandidateRecord:
        return self.candidates[self.selected_index]

    def metric(self, name: str) -> float:
        return dict(self.metrics)[name]

    def with_metrics(self, extra) -> "RunReport":
        merged = dict(self.metrics)
        merged.update(extra)
        return RunReport(
            self.version, self.command, self.seed, self.config_hash, self.selected_index,
            self.candidates, tuple(merged.items()), self.poles,
        )

    def to_text(self) -> str:
        sel = self.selected
        sections = [
            (
                "provenance",
                [
                    ("format", REPORT_FORMAT),
                    ("tool", "polecalib"),
                    ("version", self.version),
                    ("command", self.command),
                    ("seed", str(self.seed)),
                    ("config_hash", self.config_hash),
                ],
            ),
            (
                "selected",
                [
                    ("index", str(self.selected_index)),
                    ("hypothesis", sel.hypothesis),
                    ("quaternion", fmt_vec(sel.quaternion)),
                    ("translation", fmt_vec(sel.translation)),
                ],
            ),
        ]
        for name, anchor, direction in self.poles:
            sections.append((f"pole {name}", [("anchor", fmt_vec(anchor)), ("direction", fmt_vec(direction))]))
        for i, c in enumerate(self.candidates):
            items = [
                ("hypothesis", c.hypothesis),
                ("solver_converged", "true" if c.solver_converged else "false"),
                ("solver_iterations", str(c.solver_iterations)),
            ]
            if c.solver_cost is not None:
                items.append(("solver_cost", fmt(c.solver_cost)))
            items.append(("icp_converged", "true" if c.icp_converged else "false"))
            if c.scored:
                items += [("e_r", fmt(c.e_r)), ("e_t", fmt(c.e_t))]
            items += [("quaternion", fmt_vec(c.quaternion)), ("translation", fmt_vec(c.translation))]
            sections.append((f"candidate {i}", items))
        if self.metrics:
            sections.append(("metrics", [(k, fmt(v)) for k, v in self.metrics]))
        return _dump(sections, "polecalib run report")

    @classmethod
    def from_text(cls, text: str, path: str = "") -> "RunReport":
        cp = _load(text, path, "report")

        def get(section, key):
            return _get(cp, section, key, path, "report")

        if get("provenance", "format") != REPORT_FORMAT:
            raise FormatError(f"unsupported report format {get('provenance', 'format')!r}", kind="schema", path=path)
        cand_sections = sorted(
            (s for s in cp.sections() if s.startswith("candidate ")), key=lambda s: int(s.split()[1])
        )
        if [int(s.split()[1]) for s in cand_sections] != list(range(len(cand_sections))) or not cand_sections:
            raise FormatError("candidate sections must be numbered 0..n-1", kind="schema", path=path)
        candidates = []
        for s in cand_sections:
            opt = cp[s]
            cost = _floats(opt["solver_cost"], 1, path, "solver_cost")[0] if "solver_cost" in opt else None
            has_score = "e_r" in opt and "e_t" in opt
            candidates.append(
                CandidateRecord(
                    get(s, "hypothesis"),
                    _bool(get(s, "solver_converged"), path, "solver_converged"),
                    int(_floats(get(s, "solver_iterations"), 1, path, "solver_iterations")[0]),
                    cost,
                    _bool(get(s, "icp_converged"), path, "icp_converged"),
                    _floats(opt["e_r"], 1, path, "e_r")[0] if has_score else None,
                    _floats(opt["e_t"], 1, path, "e_t")[0] if has_score else None,
                    _floats(get(s, "quaternion"), 4, path, "quaternion"),
                    _floats(get(s, "translation"), 3, path, "translation"),
                )
            )
        index = int(_floats(get("selected", "index"), 1, path, "index")[0])
        if not 0 <= index < len(candidates):
            raise FormatError(f"selected index {index} out of range", kind="schema", path=path)
        if get("selected", "hypothesis") != candidates[index].hypothesis:
            raise FormatError("selected hypothesis disagrees with its candidate", kind="schema", path=path)
        poles = tuple(
            (s.split(" ", 1)[1], _floats(get(s, "anchor"), 3, path, "anchor"), _floats(get(s, "direction"), 3, path, "direction"))
            for s in cp.sections()
            if s.startswith("pole ")
        )
        metrics = ()
        if cp.has_section("metrics"):
            metrics = tuple((k, _floats(v, 1, path, k)[0]) for k, v in cp["metrics"].items())
        seed = get("provenance", "seed")
        if not seed.lstrip("-").isdigit():
            raise FormatError(f"seed must be an integer, got {seed!r}", kind=NON_NUMERIC_TOKEN, path=path)
        return cls(
            get("provenance", "version"),
            get("provenance", "command"),
            int(seed),
            get("provenance", "config_hash"),
            index,
            tuple(candidates),
            metrics,
            poles,
        )


def write_report(report: RunReport, path) -> None:
    Path(path).write_text(report.to_text(), encoding="ascii")


def read_report(path) -> RunReport:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no such file {path}", kind="missing-file", path=str(path))
    return RunReport.from_text(path.read_text(encoding="ascii", errors="replace"), str(path))


def write_table(path, header: list[str], rows: list[list], sep: str = "\t") -> None:
    """Delimited text table; floats via ``repr``."""
    lines = [sep.join(header)]
    for row in rows:
        lines.append(sep.join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
