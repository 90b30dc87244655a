"""Run configuration, manifests and file formats.

Configs are flat ``key = value`` text.  Manifests and reports are JSON with
sorted keys; rationals are ``"p/q"`` strings and slab endpoints ``"m*2^e"``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from . import __version__
from .construction import ConstructionLedger, Stage, check_ordering, certify_injectivity
from .errors import ConfigError, ManifestIncomplete
from .kernel import Piece, Slab, canonicalize_direction, format_dyadic, format_rational, parse_dyadic, parse_rational
from .schedule import CAPACITY, GREEDY, MEASURE_ZERO, OPTIONS, SEARCH, LineSchedule, ParameterPlan, build_schedule

TOOL_NAME = "venetian"
TOOL_VERSION = __version__

_INT_KEYS = ("d", "cycles", "depth", "max_pieces", "ball_samples", "seed", "partition_tail", "n_limit")


@dataclass
class RunConfig:
    d: int
    t: Fraction
    option: str
    lines: list  # integer tuples
    cycles: Optional[int] = None
    depth: Optional[int] = None
    growth: Fraction = Fraction(2)
    max_pieces: Optional[int] = 200000
    partition_tail: Optional[int] = None
    strategy: str = SEARCH
    n_limit: int = 1024
    ball_samples: int = 1000
    seed: int = 0
    out: str = "run"

    def validate(self) -> "RunConfig":
        if self.d < 2:
            raise ConfigError(f"d must be at least 2, got {self.d}")
        if not 0 <= self.t <= 1:
            raise ConfigError(f"t must lie in [0, 1], got {self.t}")
        if self.option not in OPTIONS:
            raise ConfigError(f"unknown option {self.option!r}")
        if self.option == CAPACITY and not self.t < 1:
            raise ConfigError("option capacity needs t < 1")
        if self.option == MEASURE_ZERO and not self.t > 0:
            raise ConfigError("option measure_zero needs t > 0")
        if not self.lines:
            raise ConfigError("at least one user line is required")
        for v in self.lines:
            if len(v) != self.d or not any(v):
                raise ConfigError(f"line {v} is not a non-zero vector in R^{self.d}")
        if (self.cycles is None) == (self.depth is None):
            raise ConfigError("give exactly one of cycles and depth")
        if (self.cycles is not None and self.cycles < 1) or (self.depth is not None and self.depth < 1):
            raise ConfigError("cycles/depth must be positive")
        if self.growth < 1:
            raise ConfigError(f"growth must be at least 1, got {self.growth}")
        if self.max_pieces is not None and self.max_pieces < 1:
            raise ConfigError("max_pieces must be positive")
        if self.strategy not in (SEARCH, GREEDY):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.ball_samples < 0:
            raise ConfigError("ball_samples must be non-negative")
        return self

    @property
    def period(self) -> int:
        return 2 * self.d * len(self.lines)

    @property
    def stage_count(self) -> int:
        return self.depth if self.depth is not None else self.cycles * self.period

    def canonical(self) -> dict:
        """Everything that determines the run's content (the output directory does not)."""
        return {
            "d": self.d,
            "t": format_rational(self.t),
            "option": self.option,
            "lines": [list(v) for v in self.lines],
            "cycles": self.cycles,
            "depth": self.depth,
            "growth": format_rational(self.growth),
            "max_pieces": self.max_pieces,
            "partition_tail": self.partition_tail,
            "strategy": self.strategy,
            "n_limit": self.n_limit,
            "ball_samples": self.ball_samples,
            "seed": self.seed,
        }

    def to_text(self) -> str:
        c = self.canonical()
        out = []
        for key, val in c.items():
            if val is None:
                continue
            if key == "lines":
                val = " ; ".join(",".join(str(x) for x in v) for v in val)
            out.append(f"{key} = {val}")
        out.append(f"out = {self.out}")
        return "\n".join(out) + "\n"

    def config_hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def schedule(self) -> LineSchedule:
        horizon = max(self.stage_count, self.period)
        return build_schedule(self.lines, self.d, horizon)

    def plan(self) -> ParameterPlan:
        return ParameterPlan(self.t, self.option, self.growth, partition_tail=self.partition_tail,
                             strategy=self.strategy, depth=self.stage_count,
                             max_pieces=self.max_pieces, n_limit=self.n_limit)


def _parse_lines(text: str) -> list:
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip().strip("()[]")
        if chunk:
            out.append(tuple(int(x) for x in chunk.replace(" ", "").split(",")))
    return out


def parse_config(text: str) -> RunConfig:
    raw = {}
    for num, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {num}: duplicate key {key!r}")
        raw[key] = val
    try:
        kw = {}
        for key, val in raw.items():
            if key in _INT_KEYS:
                kw[key] = None if val.lower() == "none" else int(val)
            elif key in ("t", "growth"):
                kw[key] = parse_rational(val)
            elif key == "lines":
                kw[key] = _parse_lines(val)
            elif key in ("option", "strategy", "out"):
                kw[key] = val
            else:
                raise ConfigError(f"unknown key {key!r}")
        for key in ("d", "t", "option", "lines"):
            if key not in kw:
                raise ConfigError(f"missing required key {key!r}")
        return RunConfig(**kw).validate()
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return RunConfig(
        d=data["d"], t=parse_rational(data["t"]), option=data["option"],
        lines=[tuple(v) for v in data["lines"]], cycles=data["cycles"], depth=data["depth"],
        growth=parse_rational(data["growth"]), max_pieces=data["max_pieces"],
        partition_tail=data["partition_tail"], strategy=data["strategy"], n_limit=data["n_limit"],
        ball_samples=data["ball_samples"], seed=data["seed"]).validate()


# ---------------------------------------------------------------------------
# Serialisation helpers


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_text(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def csv_text(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def piece_record(p: Piece) -> dict:
    return {
        "stage": p.stage,
        "global_id": p.global_id,
        "parent_id": p.parent_id,
        "mass": format_rational(p.mass) if p.mass is not None else None,
        "gen": list(p.gen) if p.gen is not None else None,
        "slabs": [{"direction": list(s.direction.components), "lo": format_dyadic(s.lo), "hi": format_dyadic(s.hi)}
                  for s in p.slabs],
    }


def piece_from_record(rec: dict) -> Piece:
    slabs = tuple(Slab(canonicalize_direction(s["direction"]), parse_dyadic(s["lo"]), parse_dyadic(s["hi"]))
                  for s in rec["slabs"])
    mass = parse_rational(rec["mass"]) if rec["mass"] is not None else None
    gen = tuple(rec["gen"]) if rec["gen"] is not None else None
    return Piece(slabs, rec["stage"], rec["parent_id"], rec["global_id"], mass, gen)


def write_pieces(path: str, stages: list) -> None:
    with open(path, "w") as fh:
        for st in stages:
            for p in st.pieces:
                fh.write(json.dumps(piece_record(p), sort_keys=True, separators=(",", ":")) + "\n")


LEDGER_HEADER = ["k", "line_index", "n_k", "a_k", "count", "m_k", "min_children", "max_children"]


def ledger_csv(ledger: ConstructionLedger) -> str:
    rows = []
    for row in ledger.rows():
        rows.append([row["k"], row["line_index"], row["n_k"], row["a_k"], row["count"],
                     repr(row["m_k"]), row["min_children"], row["max_children"]])
    return csv_text(LEDGER_HEADER, rows)


def schedule_record(s: LineSchedule) -> dict:
    return {
        "d": s.d,
        "horizon": s.horizon,
        "initial_axes": list(s.initial_axes),
        "helpers": [list(h.components) for h in s.helpers],
        "e": list(s.e.components),
        "entries": [{"k": k, "line": list(s.line(k).components), "tag": s.entry(k).tag,
                     "cos_sq": format_rational(s.angle_data[k].cos_sq), "alpha": s.angle_data[k].alpha}
                    for k in range(1, s.horizon + 1)],
    }


def stage_certificates(ledger: ConstructionLedger) -> list:
    out = []
    for st in ledger.stages[1:]:
        cert = certify_injectivity(st)
        out.append({"k": st.k, "verdict": cert.verdict, "ordering": check_ordering(st),
                    "violation": list(cert.violation) if cert.violation else None})
    return out


# ---------------------------------------------------------------------------
# Reloading a run


def read_manifest(out_dir: str) -> dict:
    path = os.path.join(out_dir, "manifest.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise ManifestIncomplete(f"cannot read {path}: {exc}") from exc


def _checked_path(out_dir: str, manifest: dict, key: str) -> str:
    try:
        entry = manifest["files"][key]
    except KeyError as exc:
        raise ManifestIncomplete(f"manifest lists no {key!r} file") from exc
    path = os.path.join(out_dir, entry["path"])
    if not os.path.exists(path):
        raise ManifestIncomplete(f"missing file {path}")
    if sha256_file(path) != entry["sha256"]:
        raise ManifestIncomplete(f"{path} does not match its manifest checksum")
    return path


def load_run(out_dir: str) -> tuple:
    """``(config, ledger, manifest)`` rebuilt from a construct output directory."""
    manifest = read_manifest(out_dir)
    try:
        cfg = config_from_dict(manifest["config"])
        plan_rows = manifest["plan"]
    except (KeyError, TypeError) as exc:
        raise ManifestIncomplete(f"manifest is missing {exc}") from exc
    _checked_path(out_dir, manifest, "ledger")
    pieces_path = _checked_path(out_dir, manifest, "pieces")
    schedule = cfg.schedule()
    plan = cfg.plan()
    by_stage = {}
    try:
        with open(pieces_path) as fh:
            for line in fh:
                p = piece_from_record(json.loads(line))
                by_stage.setdefault(p.stage, []).append(p)
    except (ValueError, KeyError) as exc:
        raise ManifestIncomplete(f"corrupt piece file: {exc}") from exc
    stages = [Stage(0, None, 0, 0, by_stage.get(0, []), {})]
    for row in plan_rows:
        k, n, a = row["k"], row["n"], row["a"]
        pieces = by_stage.get(k)
        if not pieces:
            raise ManifestIncomplete(f"no pieces stored for stage {k}")
        counts = {}
        for p in pieces:
            counts[p.parent_id] = counts.get(p.parent_id, 0) + 1
        plan.stages[k] = (n, a)
        stages.append(Stage(k, schedule.line(k), n, a, pieces, counts, schedule.entry(k).tag))
    return cfg, ConstructionLedger(schedule, plan, stages), manifest
