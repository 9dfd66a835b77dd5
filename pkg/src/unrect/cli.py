"""Command line entry point: schedule lifecycle, grid sweeps and report emission.

Exit codes: 0 pass, 1 usage or input error, 2 a check failed.
Every flag can also be set through an environment variable named
``UNRECT_<FLAG>`` (for example ``UNRECT_DEPTH=8``); explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from . import curves as C
from . import martingale as M
from .construction import (CURVE_CONDITIONS, CURVE_RHO_RULE, DEFAULT_EPS0, DEFAULT_ETA,
                           DEFAULT_RHO_RULE, PartialSum, ScheduleError, StripSchedule,
                           certificate_ok, classify_depth_K, construction_for, generate_schedule,
                           tail_window, validate_schedule)
from .detectors import (WitnessError, admissible_h_stages, direction_set, nondiff_witness_h,
                        nondiff_witness_phi, zeta)
from .geometry import UnitVector, perp, sqrt

logger = logging.getLogger("unrect")

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------

def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(header: Sequence[str], rows: List[Sequence], out: Optional[str]) -> None:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([x if isinstance(x, str) else _num(x) for x in r])
    _emit(buf.getvalue(), out)


def _emit(text: str, out: Optional[str]) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def load_schedule(path: Optional[str], args=None) -> StripSchedule:
    if path is None:
        if args is None:
            raise UsageError("--schedule is required")
        return _generated(args)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read schedule: {exc}") from exc
    return StripSchedule.loads(text)


def _generated(args) -> StripSchedule:
    suite = getattr(args, "suite", "witness")
    if suite == "curve":
        return generate_schedule(K=args.depth or 6, rng_seed=args.seed, rho_rule=CURVE_RHO_RULE,
                                 require=CURVE_CONDITIONS)
    return generate_schedule(K=args.depth or 6, rng_seed=args.seed)


def _depth(args, s: StripSchedule) -> int:
    K = s.K if args.depth is None else args.depth
    if not 1 <= K <= s.K:
        raise UsageError(f"depth {K} outside 1..{s.K}")
    return K


def _grid_points(n: int):
    if n < 2:
        raise UsageError("grid resolution must be at least 2")
    return [(Fraction(2 * i + 1, 2 * n), Fraction(2 * j + 1, 2 * n)) for j in range(n) for i in range(n)]


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# Worker state for process pools (each worker rebuilds the construction once).
_W = {}


def _worker_init(sched_text: str, depth: int):
    key = (sched_text, depth)
    if _W.get("key") != key:
        s = StripSchedule.loads(sched_text)
        _W.update(key=key, s=s, c=construction_for(s, depth))
    return _W["s"], _W["c"]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        s = load_schedule(args.schedule)
    except ScheduleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cert = validate_schedule(s)
    conds = CURVE_CONDITIONS if args.conditions == "curve" else None
    ok = cert["ok"] if conds is None else certificate_ok(cert, conds)
    if ok:
        s.certificate = cert
        _emit(s.dumps(), args.out)
        return EXIT_OK
    for v in cert["violations"]:
        if conds is None or v["condition"] in conds:
            print(f"violation: condition ({v['condition']}) index {v['index']}: "
                  f"lhs={v['lhs']} rhs={v['rhs']}", file=sys.stderr)
    return EXIT_FAIL


def cmd_build(args) -> int:
    rule = CURVE_RHO_RULE if args.suite == "curve" else DEFAULT_RHO_RULE
    if args.rho_base is not None or args.rho_ratio is not None:
        rule = (Fraction(args.rho_base) if args.rho_base else rule[0],
                Fraction(args.rho_ratio) if args.rho_ratio else rule[1])
    req = CURVE_CONDITIONS if args.suite == "curve" else ("eta", "i", "ii", "iii", "iv", "v")
    try:
        s = generate_schedule(eta=Fraction(args.eta), K=args.depth or 6, rng_seed=args.seed,
                              rho_rule=rule, eps0=Fraction(args.eps0), require=req)
    except ScheduleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _emit(s.dumps(), args.out)
    return EXIT_OK


def _eval_point(task):
    text, depth, z = task
    s, c = _worker_init(text, depth)
    prof = c.profile(z, depth)
    g = prof.grad[depth]
    return [float(z[0]), float(z[1]), float(prof.h[depth]),
            None if g is None else float(g[0]), None if g is None else float(g[1]),
            prof.m[depth], prof.sigma[depth], len(prof.k_list)]


def cmd_eval_grid(args) -> int:
    s = load_schedule(args.schedule, args)
    K = _depth(args, s)
    text = s.dumps()
    rows = _pool_map(_eval_point, [(text, K, z) for z in _grid_points(args.grid)], args.jobs)
    write_csv(["x", "y", "h", "dh_x", "dh_y", "m", "sigma", "strips_hit"], rows, args.out)
    return EXIT_OK


def resolved_eps(s: StripSchedule, K: int, floor: float) -> Fraction:
    """Smallest scale at which every tail stage of depth ``K`` fits a witness."""
    a, _ = tail_window(K)
    need = Fraction(4 * s.rho(a) / sqrt(s.eta))
    return max(need, Fraction(floor))


def _nondiff_point(task):
    text, depth, z, dirs, eps = task
    s, c = _worker_init(text, depth)
    cls = classify_depth_K(c, z)
    f = PartialSum(c, depth)
    best, best_e = Fraction(0), None
    for e in direction_set(dirs):
        v, _ = zeta(f, z, eps, e)
        if v > best:
            best, best_e = v, e
    wid, wdef = "", None
    try:
        rep = nondiff_witness_h(c, z, None, perp(s.w), eps)
        wid = f"h{depth}:stage{rep.k}:m{rep.m}"
        wdef = rep.witness.defect
    except WitnessError:
        pass
    bound = Fraction(1, 2 ** cls["m_K"]) * sqrt(s.eta) / 4
    return [float(z[0]), float(z[1]), cls["E_K"], cls["G_K"], cls["H_candidate"], cls["F_m_K"],
            cls["m_K"], float(best), float(bound), float(eps),
            "" if best_e is None else f"{float(best_e[0])!r};{float(best_e[1])!r}", wid,
            None if wdef is None else float(wdef)]


def cmd_nondiff_map(args) -> int:
    s = load_schedule(args.schedule, args)
    K = _depth(args, s)
    eps = resolved_eps(s, K, args.eps_floor)
    text = s.dumps()
    tasks = [(text, K, z, args.dirs, eps) for z in _grid_points(args.grid)]
    rows = _pool_map(_nondiff_point, tasks, args.jobs)
    write_csv(["x", "y", "E_K", "G_K", "H_K", "F_m_K", "m_K", "zeta_lb", "bound", "eps", "best_dir",
               "witness_id", "witness_defect"], rows, args.out)
    return EXIT_OK


def cmd_witness(args) -> int:
    s = load_schedule(args.schedule, args)
    K = _depth(args, s)
    if args.point is None:
        raise UsageError("--point x,y is required")
    z = tuple(Fraction(v) for v in args.point.split(","))
    v = perp(s.w) if args.dir is None else UnitVector(*(Fraction(x) for x in args.dir.split(",")))
    c = construction_for(s, K)
    try:
        if args.stage is not None:
            w = nondiff_witness_phi(c, args.stage, z, v)
            out = {"kind": "phi", "stage": args.stage, **w.to_row(),
                   "bound": float(sqrt(s.eta) / 2), "ok": w.defect >= sqrt(s.eta) / 2}
        else:
            eps = Fraction(args.eps_floor) if args.eps is None else Fraction(args.eps)
            rep = nondiff_witness_h(c, z, None, v, eps)
            out = {"kind": "h", "stage": rep.k, "m": rep.m, **rep.witness.to_row(),
                   "bound": float(rep.bound), "slack": float(rep.slack), "ok": bool(rep.ok)}
    except WitnessError as exc:
        print(f"no witness: {exc.reason}", file=sys.stderr)
        return EXIT_FAIL
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK if out["ok"] else EXIT_FAIL


# -- curve suites -----------------------------------------------------------

def default_curve_suite(s: StripSchedule, n: int, seed: int) -> List[C.C1Curve]:
    """Admissible test curves: straight lines plus Hermite chains aimed at strip points."""
    rng = np.random.default_rng(seed)
    w = np.array(s.w.as_float())
    delta = 2 * float(s.eta)
    out = [C.C1Curve([{"type": "line", "p0": [0.0, 0.5], "p1": [1.0, 0.5]}], name="straight")]
    K = s.K
    for i in range(n - 1):
        k = 1 + i % K
        x = np.array([float(v) for v in s.stage(k).x])
        c = C.random_cone_curve(rng, w, delta, start=[x[0] - 0.5, 0.5], aim=x)
        c.name = f"hermite{i}_aim{k}"
        out.append(c)
    return out


def _strip_polygon(s: StripSchedule, k: int) -> C.PolygonRegion:
    from .arrangement import _window_polygon, split_polygon
    from .construction import StageGeometry
    geo = StageGeometry.of(s, k)
    lo, hi = geo.boundary()
    poly = split_polygon(_window_polygon(s.window), lo)[1]
    poly = split_polygon(poly, hi)[0]
    return C.PolygonRegion(np.array([[float(p[0]), float(p[1])] for p in poly]))


def curve_checks(s: StripSchedule, curve: C.C1Curve, depth: int, delta: Optional[float] = None) -> List[list]:
    delta = 2 * float(s.eta) if delta is None else delta
    w = np.array(s.w.as_float())
    rows = []
    name = curve.name

    def add(check, lhs, rhs, status, bar=0.0, note=""):
        rows.append([name, check, lhs, rhs, status, bar, note])

    dfe = curve.speed_defect()
    add("unit_speed", dfe, 1e-6, "PASS" if dfe <= 1e-6 else "FAIL")
    try:
        filt = C.build_filtration(s, curve, delta=delta, depth=depth)
    except C.ConePreconditionError as exc:
        add("hypothesis_cone", None, None, "N/A", note=str(exc))
        return rows
    except C.TangencyError as exc:
        add("filtration", None, None, "SKIPPED", note=str(exc))
        return rows
    add("filtration_nested", None, None, "PASS" if C.is_nested(filt) else "FAIL")
    c = construction_for(s, depth)
    for k in range(1, depth + 1):
        # crossing lemma on guard balls in the unit window
        for j, q in enumerate(c.states[k].S[:4]):
            qf = (float(q[0]), float(q[1]))
            if not (0 <= qf[0] <= 1 and 0 <= qf[1] <= 1):
                continue
            disk = C.DiskRegion(qf, float(s.stage(k).delta))
            try:
                r = C.crossing_bound_check(curve, disk, w, delta)
                add(f"crossing[k={k},ball={j}]", r.lhs, r.rhs, "PASS" if r.passed else "FAIL", r.error_bar)
            except C.TangencyError as exc:
                add(f"crossing[k={k},ball={j}]", None, None, "SKIPPED", note=str(exc))
        e = np.array(s.stage(k).e.as_float())
        try:
            r = C.convex_slope_integral_check(curve, _strip_polygon(s, k), e)
            add(f"convex[k={k}]", r.lhs, r.rhs, "PASS" if r.passed else "FAIL", r.error_bar)
        except C.ConePreconditionError as exc:
            add(f"convex[k={k}]", None, None, "N/A", note=str(exc))
        except C.TangencyError as exc:
            add(f"convex[k={k}]", None, None, "SKIPPED", note=str(exc))
        for p in range(1, k + 1):
            for r in C.strip_slope_integral_check(s, curve, k, p, filt):
                add(r.check, r.lhs, r.rhs, "PASS" if r.passed else "FAIL", r.error_bar, r.note)
    for p in range(1, depth + 1):
        d = C.D_p_diagnostic(s, curve, filt, p, delta)
        add(f"D_p[p={p}]", d["measure"], d["bound"], "PASS" if d["pass"] else "FAIL", filt.error_bar)
        add(f"D_p_markov[p={p}]", d["measure"], d["expectation"] / 2.0 ** (-p),
            "PASS" if d["markov_pass"] else "FAIL", filt.error_bar)
        add(f"ratio_approx[p={p}]", d["ratio_worst"], d["ratio_bound"],
            "PASS" if d["ratio_pass"] else "FAIL")
    for r in M.martingale_report(s, curve, delta=delta):
        add(r.check, r.lhs, r.rhs, "PASS" if r.passed else "FAIL", r.error_bar, r.note)
    return rows


def _curve_task(task):
    text, depth, seg, kind, delta = task
    s = StripSchedule.loads(text)
    curve = C.C1Curve(seg["segments"], name=seg["name"])
    if kind == "martingale":
        try:
            rep = M.martingale_report(s, curve, delta=delta)
        except C.CurveError as exc:
            return [[curve.name, "martingale", None, None, "N/A", 0.0, str(exc)]]
        return [[curve.name, r.check, r.lhs, r.rhs, "PASS" if r.passed else "FAIL", r.error_bar, r.note]
                for r in rep]
    return curve_checks(s, curve, depth, delta)


def _curve_report(args, kind: str) -> int:
    if args.schedule is None:
        args.suite = "curve"
    s = load_schedule(args.schedule, args)
    K = _depth(args, s)
    if args.curves:
        with open(args.curves) as fh:
            curves = C.load_curves(fh.read())
    else:
        curves = default_curve_suite(s, args.n_curves, args.seed)
    text = s.dumps()
    delta = 2 * float(s.eta) if args.delta is None else args.delta
    tasks = [(text, K, c.to_dict(), kind, delta) for c in curves]
    rows = [r for chunk in _pool_map(_curve_task, tasks, args.jobs) for r in chunk]
    write_csv(["curve", "check", "lhs", "rhs", "status", "error_bar", "note"], rows, args.out)
    return EXIT_FAIL if any(r[4] == "FAIL" for r in rows) else EXIT_OK


def cmd_curve_report(args) -> int:
    return _curve_report(args, "curve")


def cmd_martingale_report(args) -> int:
    return _curve_report(args, "martingale")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _env(name: str, default, conv=str):
    v = os.environ.get("UNRECT_" + name.upper().replace("-", "_"))
    return default if v is None else conv(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schedule", default=_env("schedule", None), help="schedule JSON file")
    common.add_argument("--depth", type=int, default=_env("depth", None, int), help="truncation depth K")
    common.add_argument("--grid", type=int, default=_env("grid", 8, int), help="grid resolution per axis")
    common.add_argument("--dirs", type=int, default=_env("dirs", 8, int), help="direction budget")
    common.add_argument("--eps-floor", type=float, default=_env("eps_floor", 1e-9, float),
                        help="smallest chord scale")
    common.add_argument("--out", default=_env("out", None), help="output file (default stdout)")
    common.add_argument("--jobs", type=int, default=_env("jobs", 1, int), help="worker processes")
    common.add_argument("--seed", type=int, default=_env("seed", 0, int), help="random seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="unrect", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", parents=[common], help="check a schedule and emit its certificate")
    sp.add_argument("--conditions", choices=["all", "curve"], default="all")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("build", parents=[common], help="generate a validated schedule")
    sp.add_argument("--eta", default=str(DEFAULT_ETA))
    sp.add_argument("--eps0", default=str(DEFAULT_EPS0))
    sp.add_argument("--rho-base", default=None)
    sp.add_argument("--rho-ratio", default=None)
    sp.add_argument("--suite", choices=["witness", "curve"], default="witness")
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("eval-grid", parents=[common], help="evaluate h_K on a grid")
    sp.set_defaults(func=cmd_eval_grid, suite="witness")

    sp = sub.add_parser("nondiff-map", parents=[common], help="zeta lower bounds and classifications")
    sp.set_defaults(func=cmd_nondiff_map, suite="witness")

    sp = sub.add_parser("witness", parents=[common], help="explicit chord witness at a point")
    sp.add_argument("--point", default=None, help="x,y (rationals allowed)")
    sp.add_argument("--dir", default=None, help="direction vx,vy (default w perp)")
    sp.add_argument("--stage", type=int, default=None, help="phi_k witness instead of h_K")
    sp.add_argument("--eps", default=None)
    sp.set_defaults(func=cmd_witness, suite="witness")

    for name, fn in (("curve-report", cmd_curve_report), ("martingale-report", cmd_martingale_report)):
        sp = sub.add_parser(name, parents=[common], help="lemma checks along curves")
        sp.add_argument("--curves", default=None, help="curve JSON file (default: generated suite)")
        sp.add_argument("--n-curves", type=int, default=_env("n_curves", 8, int))
        sp.add_argument("--delta", type=float, default=_env("delta", None, float),
                        help="cone aperture of the curve hypothesis (default 2 eta)")
        sp.set_defaults(func=fn, suite="curve")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScheduleError, C.CurveError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
