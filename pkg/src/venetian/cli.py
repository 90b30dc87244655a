"""Command-line front end: construct, analyze, planes, export.

Exit codes: 0 success, 2 config error, 3 construction failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import os
import random
import sys
from fractions import Fraction
from typing import Optional

from . import analysis as A
from . import io as vio
from .construction import construct, check_persistence
from .errors import (
    ConfigError,
    ConfigMismatch,
    DegeneratePiece,
    DimensionError,
    EmptyStage,
    InvalidInput,
    ManifestIncomplete,
    PieceCapExceeded,
    PlanInfeasible,
    ScheduleSearchExhausted,
    StageStarved,
    VenetianError,
)
from .kernel import format_rational, projection_range
from .planes import (
    certified_stages,
    dimension_family,
    dual_hyperplanes,
    first_overlap,
    measure_zero_family,
    verify_family,
    vertical_direction,
)
from .schedule import MEASURE_ZERO, sandwich_attainable

EXIT_OK, EXIT_CONFIG, EXIT_CONSTRUCTION, EXIT_VERIFICATION = 0, 2, 3, 4
CHECKS = ("recursion", "wk", "boxdim", "series", "balls", "energy")
WK_SAMPLE = 32
TREND_TOL = Fraction(1, 10)

_CONFIG_ERRORS = (ConfigError, ConfigMismatch, InvalidInput)
_CONSTRUCTION_ERRORS = (PlanInfeasible, StageStarved, EmptyStage, PieceCapExceeded, DegeneratePiece,
                        ScheduleSearchExhausted, ManifestIncomplete)


class VerificationFailed(Exception):
    pass


def _fr(x) -> str:
    return format_rational(x)


def _write_json(path: str, obj) -> str:
    vio.write_text(path, vio.dumps(obj))
    return path


def _file_entry(out: str, name: str) -> dict:
    return {"path": name, "sha256": vio.sha256_file(os.path.join(out, name))}


# ---------------------------------------------------------------------------
# construct


def cmd_construct(cfg: vio.RunConfig, out: str, log=print) -> dict:
    os.makedirs(out, exist_ok=True)
    schedule = cfg.schedule()
    plan = cfg.plan()
    depth = cfg.stage_count

    def progress(st):
        log(f"stage {st.k}: n={st.n} a={st.a} pieces={st.count}")

    ledger = construct(schedule, plan, depth, cfg.max_pieces, progress)
    vio.write_text(os.path.join(out, "ledger.csv"), vio.ledger_csv(ledger))
    vio.write_pieces(os.path.join(out, "pieces.jsonl"), ledger.stages)
    certs = vio.stage_certificates(ledger)
    persistence = check_persistence(ledger)
    manifest = {
        "tool": {"name": vio.TOOL_NAME, "version": vio.TOOL_VERSION},
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash(),
        "schedule": vio.schedule_record(schedule),
        "plan": [{"k": st.k, "n": st.n, "a": st.a} for st in ledger.stages[1:]],
        "ledger": ledger.rows(),
        "certificates": certs,
        "persistence": {str(k): v for k, v in persistence.items()},
        "files": {"ledger": _file_entry(out, "ledger.csv"), "pieces": _file_entry(out, "pieces.jsonl")},
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    bad = [c["k"] for c in certs if c["verdict"] != "certified" or not c["ordering"]]
    if bad:
        raise VerificationFailed(f"stages {bad} failed injectivity or ordering")
    if any(persistence.values()):
        raise VerificationFailed(f"persistence violations {persistence}")
    return manifest


# ---------------------------------------------------------------------------
# analyze


def _check_recursion(ledger, out: str) -> dict:
    rep = A.check_mk_recursion(ledger, ledger.schedule)
    rows = [[r.k, repr(r.alpha_tilde), r.M, r.within, repr(r.delta),
             "" if r.eps is None else repr(r.eps), "" if r.eps_prime is None else repr(r.eps_prime)]
            for r in rep.rows]
    vio.write_text(os.path.join(out, "recursion.csv"),
                   vio.csv_text(["k", "alpha_tilde", "M", "within", "delta", "eps", "eps_prime"], rows))
    witnesses = [{"k": st.k, "n_k": st.n, "a_k": st.a, "count": st.count,
                  "n_lag": ledger.n(st.k - ledger.schedule.d), "M": ledger.schedule.angle_data[st.k].M}
                 for st in ledger.stages[ledger.schedule.d + 1:]]
    return {"hard": True, "verdict": rep.verdict, "violations": rep.violations(), "witnesses": witnesses}


def _check_wk(ledger, out: str, seed: int) -> dict:
    s = ledger.schedule
    d = s.d
    rng = random.Random(seed)
    rows, failures, literal_fail = [], [], 0
    for k in range(d + 1, ledger.depth + 1):
        parents = ledger.stage(k - 1).pieces
        chosen = parents if len(parents) <= WK_SAMPLE else rng.sample(parents, WK_SAMPLE)
        attainable = sandwich_attainable(s, k)
        for p in chosen:
            r = A.compute_wk(p, s.line(k))
            hard = r.verdict if attainable else r.edge_ok
            literal_fail += not r.verdict
            if not hard:
                failures.append([k, p.global_id])
            rows.append([k, p.global_id, _fr(r.gap), _fr(r.metric_sq), _fr(r.width_sq), r.alpha,
                         r.lower_ok, r.upper_ok, _fr(r.edge_sq), r.edge_alpha, r.edge_ok, attainable])
    vio.write_text(os.path.join(out, "wk.csv"), vio.csv_text(
        ["k", "parent", "gap", "metric_sq", "width_sq", "alpha", "lower_ok", "upper_ok",
         "edge_sq", "edge_alpha", "edge_ok", "sandwich_attainable"], rows))
    return {"hard": True, "verdict": not failures, "failures": failures, "sampled": len(rows),
            "literal_sandwich_failures": literal_fail}


def _deepest_occurrences(ledger) -> dict:
    s = ledger.schedule
    out = {}
    for idx in range(len(s.user_lines)):
        occ = [k for k in s.occurrences(idx) if k <= ledger.depth]
        if occ:
            out[idx] = occ[-1]
    return out


def _check_boxdim(ledger, out: str) -> dict:
    t = ledger.plan.t
    rows, per_line, ok = [], {}, True
    for idx, k in _deepest_occurrences(ledger).items():
        st = ledger.stage(k)
        series = A.scale_series(ledger, k, ledger.schedule.line(k))
        for q, N in series:
            rows.append([idx, k, q, N])
        try:
            slope = A.dim_slope(series)
        except VenetianError:
            slope = None
        ratio_ok = A.ratio_within(st.count, st.n, t, TREND_TOL)
        slope_ok = slope is not None and abs(slope - float(t)) <= 0.15
        ok = ok and ratio_ok and slope_ok
        per_line[str(idx)] = {"k": k, "n_k": st.n, "count": st.count, "ratio": st.m / st.n,
                              "ratio_ok": ratio_ok, "slope": slope, "slope_ok": slope_ok}
    vio.write_text(os.path.join(out, "boxdim.csv"), vio.csv_text(["line_index", "k", "q", "N"], rows))
    return {"hard": False, "verdict": ok, "lines": per_line}


def _check_series(ledger, out: str) -> dict:
    t = ledger.plan.t
    rows, per_line, ok = [], {}, True
    for idx in range(len(ledger.schedule.user_lines)):
        try:
            series = A.projection_measure_series(ledger, idx, t)
        except VenetianError:
            continue
        for p in series:
            rows.append([idx, p.k, p.n, p.count, repr(p.log2_value)])
        dec = A.strictly_decreasing(series)
        ok = ok and dec
        per_line[str(idx)] = {"strictly_decreasing": dec, "final_below_2^-10": series[-1].below_power_of_two(-10)}
    vio.write_text(os.path.join(out, "series.csv"),
                   vio.csv_text(["line_index", "k", "n_k", "count", "log2_value"], rows))
    # count * 2^(-n t) only has to shrink when the run aims at measure-zero projections
    return {"hard": ledger.plan.option == MEASURE_ZERO, "verdict": ok, "lines": per_line}


def _check_balls(ledger, out: str, samples: int, seed: int) -> dict:
    rows, summary = [], []
    violations = inconclusive = total = 0
    for k in range(max(1, ledger.depth - 1), ledger.depth + 1):
        for case in sorted(A.case_ranges(ledger, k)):
            checks = A.check_balls(ledger, k, case, samples, seed)
            v = sum(not c.holds for c in checks)
            inc = sum(c.inconclusive for c in checks)
            violations += v
            inconclusive += inc
            total += len(checks)
            summary.append({"k": k, "case": case, "samples": len(checks), "violations": v, "inconclusive": inc})
            for c in checks:
                rows.append([k, case, c.ball.q, " ".join(_fr(x) for x in c.ball.center),
                             _fr(c.lower), _fr(c.upper), c.holds, c.inconclusive])
    vio.write_text(os.path.join(out, "balls.csv"), vio.csv_text(
        ["k", "case", "q", "center", "lower", "upper", "holds", "inconclusive"], rows))
    return {"hard": True, "verdict": violations == 0, "violations": violations,
            "inconclusive": inconclusive, "samples": total, "ranges": summary}


def _check_energy(ledger, out: str) -> dict:
    s = ledger.schedule.d - 1
    reps = [A.energy(ledger.stage(k), s) for k in range(max(1, ledger.depth - 1), ledger.depth + 1)]
    rows = [[r.k, r.s, repr(r.cross_term), r.diagonal_count, _fr(r.diagonal_mass_sq)] for r in reps]
    vio.write_text(os.path.join(out, "energy.csv"),
                   vio.csv_text(["k", "s", "cross_term", "pieces", "diagonal_mass_sq"], rows))
    growth = reps[-1].cross_term / reps[0].cross_term - 1 if len(reps) == 2 and reps[0].cross_term else None
    return {"hard": False, "verdict": growth is not None and growth <= 0.1, "growth": growth,
            "cross_terms": [r.cross_term for r in reps]}


def cmd_analyze(run_dir: str, checks, out: Optional[str] = None, seed: Optional[int] = None) -> dict:
    cfg, ledger, manifest = vio.load_run(run_dir)
    out = out or run_dir
    os.makedirs(out, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    results = {}
    for name in checks:
        if name == "recursion":
            results[name] = _check_recursion(ledger, out)
        elif name == "wk":
            results[name] = _check_wk(ledger, out, seed)
        elif name == "boxdim":
            results[name] = _check_boxdim(ledger, out)
        elif name == "series":
            results[name] = _check_series(ledger, out)
        elif name == "balls":
            results[name] = _check_balls(ledger, out, cfg.ball_samples, seed)
        elif name == "energy":
            results[name] = _check_energy(ledger, out)
    report = {"config_hash": manifest["config_hash"], "seed": seed, "checks": results,
              "verdict": all(r["verdict"] for r in results.values() if r["hard"])}
    _write_json(os.path.join(out, "verdicts.json"), report)
    if not report["verdict"]:
        failed = [n for n, r in results.items() if r["hard"] and not r["verdict"]]
        raise VerificationFailed(f"hard verdicts failed: {failed}")
    return report


# ---------------------------------------------------------------------------
# planes


def _plane_record(p) -> dict:
    return {"Y": [[_fr(x) for x in row] for row in p.Y], "y0": [_fr(x) for x in p.y0]}


def _parse_verticals(text: str) -> list:
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk:
            out.append(tuple(Fraction(x) for x in chunk.split(",")))
    return out


def cmd_planes(run_dir: str, mode: str, out: Optional[str] = None, k: int = 1, s=None,
               plane_dim: Optional[int] = None, stage: Optional[int] = None, size: Optional[int] = None,
               verticals: Optional[list] = None) -> dict:
    cfg, ledger, manifest = vio.load_run(run_dir)
    out = out or run_dir
    os.makedirs(out, exist_ok=True)
    K = ledger.depth if stage is None else stage
    if not 1 <= K <= ledger.depth:
        raise ConfigError(f"stage {K} outside 1..{ledger.depth}")
    D = ledger.schedule.d
    if mode == "dual":
        return _planes_dual(ledger, out, verticals, K)
    try:
        if mode == "measure_zero":
            if plane_dim is None:
                if (D - 1) % (k + 1):
                    raise ConfigMismatch(f"a run in R^{D} is not a measure-zero parameter space for k={k}")
                plane_dim = (D - 1) // (k + 1) + 1 + k
            fam = measure_zero_family(ledger.stage(K), plane_dim, k, size)
        elif mode == "dimension":
            if plane_dim is None or s is None:
                raise ConfigError("dimension mode needs --plane-dim and --s")
            fam = dimension_family(plane_dim, k, s, ledger.stage(K), size)
        else:
            raise ConfigError(f"unknown mode {mode!r}")
    except DimensionError as exc:
        raise ConfigMismatch(str(exc)) from exc
    check = verify_family(fam.planes)
    family = {"d": fam.d, "k": fam.k, "planes": [_plane_record(p) for p in fam.planes],
              "provenance": dict(fam.provenance, config_hash=manifest["config_hash"])}
    if fam.s is not None:
        family["s"] = _fr(fam.s)
        family["m"] = fam.m
    _write_json(os.path.join(out, "family.json"), family)
    report = {"mode": mode, "planes": len(fam.planes), "pairs": check.pairs,
              "disjoint_failures": check.disjoint_failures,
              "nonparallel_failures": check.nonparallel_failures,
              "first_witness": list(check.first_witness) if check.first_witness else None,
              "verdict": check.ok}
    _write_json(os.path.join(out, "planes_verification.json"), report)
    if not check.ok:
        raise VerificationFailed(f"plane family failed pairwise checks at {check.first_witness}")
    return report


def _planes_dual(ledger, out: str, verticals, K: int) -> dict:
    if not verticals:
        raise ConfigError("dual mode needs --verticals")
    if any(len(x) != ledger.schedule.d - 1 for x in verticals):
        raise ConfigMismatch(f"verticals must have {ledger.schedule.d - 1} coordinates")
    planes, sections = dual_hyperplanes(ledger, verticals, K)
    rows = [[i, _fr(lo), _fr(hi)] for i, sec in enumerate(sections) for lo, hi in sec]
    vio.write_text(os.path.join(out, "sections.csv"), vio.csv_text(["vertical_index", "lo", "hi"], rows))
    _write_json(os.path.join(out, "hyperplanes.json"),
                {"stage": K, "hyperplanes": [{"a": [_fr(x) for x in h.a], "b": _fr(h.b)} for h in planes]})
    per, ok = [], True
    for i, x in enumerate(verticals):
        stages = [j for j in certified_stages(ledger, x) if j <= K]
        overlaps = {}
        for j in stages:
            _, secs = dual_hyperplanes(ledger, [x], j)
            hit = first_overlap(secs[0])
            if hit is not None:
                overlaps[str(j)] = hit
        slope = None
        if stages:
            try:
                slope = A.dim_slope(A.scale_series(ledger, stages[-1], vertical_direction(x)[0]))
            except VenetianError:
                pass
        ok = ok and not overlaps
        per.append({"vertical": [_fr(c) for c in x], "certified_stages": stages, "overlaps": overlaps,
                    "slope_stage": stages[-1] if stages else None, "slope": slope})
    report = {"mode": "dual", "stage": K, "verticals": per, "verdict": ok}
    _write_json(os.path.join(out, "planes_verification.json"), report)
    if not ok:
        raise VerificationFailed("sections overlap at a certified stage")
    return report


# ---------------------------------------------------------------------------
# export


def cmd_export(run_dir: str, stage: int, out: Optional[str] = None) -> list:
    cfg, ledger, _ = vio.load_run(run_dir)
    out = out or run_dir
    os.makedirs(out, exist_ok=True)
    if not 0 <= stage <= ledger.depth:
        raise ConfigError(f"stage {stage} outside 0..{ledger.depth}")
    st = ledger.stage(stage)
    pieces_path = os.path.join(out, f"stage_{stage}.jsonl")
    vio.write_pieces(pieces_path, [st])
    rows = []
    for idx, line in enumerate(ledger.schedule.user_lines):
        for p in st.pieces:
            lo, hi = projection_range(p, line)
            rows.append([p.global_id, idx, str(lo), str(hi)])
    proj_path = os.path.join(out, f"stage_{stage}_projections.csv")
    vio.write_text(proj_path, vio.csv_text(["global_id", "line_index", "lo", "hi"], rows))
    return [pieces_path, proj_path]


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="venetian", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    c = sub.add_parser("construct", help="build and certify a construction")
    c.add_argument("--config", required=True)
    c.add_argument("--out")
    c.add_argument("--seed", type=int)
    a = sub.add_parser("analyze", help="run checks on a constructed run")
    a.add_argument("--out", required=True, help="run directory written by construct")
    a.add_argument("--checks", default=",".join(CHECKS))
    a.add_argument("--seed", type=int)
    a.add_argument("--report-dir")
    p = sub.add_parser("planes", help="build and verify plane families")
    p.add_argument("--out", required=True, help="run directory written by construct")
    p.add_argument("--mode", required=True, choices=("measure_zero", "dimension", "dual"))
    p.add_argument("--stage", type=int)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--s")
    p.add_argument("--plane-dim", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--verticals", help='semicolon-separated points, e.g. "0;1;2"')
    p.add_argument("--report-dir")
    e = sub.add_parser("export", help="export one stage")
    e.add_argument("--out", required=True, help="run directory written by construct")
    e.add_argument("--stage", type=int, required=True)
    e.add_argument("--report-dir")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)

    def err(msg):
        print(f"venetian: {msg}", file=sys.stderr)

    try:
        if args.command == "construct":
            cfg = vio.load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            cmd_construct(cfg, args.out or cfg.out, log=lambda m: print(m, file=sys.stderr))
        elif args.command == "analyze":
            checks = [c.strip() for c in args.checks.split(",") if c.strip()]
            unknown = set(checks) - set(CHECKS)
            if unknown:
                raise ConfigError(f"unknown checks {sorted(unknown)}")
            cmd_analyze(args.out, checks, args.report_dir, args.seed)
        elif args.command == "planes":
            s = Fraction(args.s) if args.s is not None else None
            verticals = _parse_verticals(args.verticals) if args.verticals else None
            cmd_planes(args.out, args.mode, args.report_dir, args.k, s, args.plane_dim, args.stage,
                       args.size, verticals)
        elif args.command == "export":
            cmd_export(args.out, args.stage, args.report_dir)
    except _CONFIG_ERRORS as exc:
        err(f"config error: {exc}")
        return EXIT_CONFIG
    except _CONSTRUCTION_ERRORS as exc:
        err(f"construction failure: {exc}")
        return EXIT_CONSTRUCTION
    except VerificationFailed as exc:
        err(f"verification failure: {exc}")
        return EXIT_VERIFICATION
    except VenetianError as exc:
        err(f"verification failure: {type(exc).__name__}: {exc}")
        return EXIT_VERIFICATION
    except ValueError as exc:
        err(f"config error: {exc}")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
