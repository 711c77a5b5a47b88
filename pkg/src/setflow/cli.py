"""Command-line front end: ``setflow run | list | describe``.

Exit codes: 0 all checks passed, 1 some check failed, 2 the scenario does not parse,
3 a name or resource does not resolve, 4 a check could not run (precondition or runtime).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from pathlib import Path

from .harness import TheoremId, _jsonable
from .levelset import recording, track_diagnostics, write_track_csv
from .scenarios import (ResolutionError, ScenarioError, bundled_scenarios,
                        find_scenario, load_scenario, resolve, run_check)

EXIT_PASS, EXIT_FAIL, EXIT_PARSE, EXIT_RESOLVE, EXIT_RUNTIME = 0, 1, 2, 3, 4

_TOL_SET = ("Set distances are measured between node sets and carry an additive slack of 4h; "
            "time-exponential bounds also absorb a factor exp(-|lambda| dt) for one sample step.")

DESCRIPTIONS = {
    TheoremId.ShrinkingBall: (
        "Shrinking-ball monotonicity of a weak set flow Z in R^(m+1).",
        "For a fixed point p and eps > 0, t -> min(eps, dist(p, Z(t)))^2 + c t is nondecreasing "
        "for c = 2m + 0.5 > 2m; equivalently dist(Z(t), p)^2 <= c (T - t) when p lies in Z(T).",
        "Probes are sampled from a seeded uniform lattice; each increment may drop by at most "
        "slack 4h (in squared-distance units scaled by the sample step)."),
    TheoremId.FiniteSpeed: (
        "Finite propagation speed.",
        "If the ball B(p, R) misses Z(0), then dist(Z(t), p) >= R - (2m/r + chi) t while "
        "R - (2m/r + chi) t >= r, where 2m/r is the mean curvature of a sphere of radius r/2 "
        "and chi bounds |X|.",
        "Checked at every sample in the stated window with additive slack 4h."),
    TheoremId.Compactness: (
        "Empty sets stay empty.",
        "A flow starting from the empty set is empty at every later time, for every ambient "
        "field in the built-in library.",
        "Exact: a single nonempty sample fails the check."),
    TheoremId.KeyProposition: (
        "Half-gap bounds against a separating hypersurface.",
        "With eta = dist(Y(0), Z(0)) and M the harmonic separator of Y(0) and Z(0), the flows "
        "satisfy dist(Y(t), M(t)) >= exp(lambda t) eta / 2 and likewise for Z.",
        _TOL_SET),
    TheoremId.DistanceTheorem: (
        "Exponential distance bound.",
        "If Ric^X >= lambda and Y(0), Z(0) are disjoint with one of them compact, then "
        "dist(Y(t), Z(t)) >= exp(lambda t) eta with eta = dist(Y(0), Z(0)); lambda is the "
        "smallest eigenvalue of the symmetric part of grad X over the run box.",
        "Passes iff dist(Y(t), Z(t)) >= exp(lambda t) exp(-|lambda| dt) (eta - 4h) - 4h at all "
        "samples. An optional concentric radius ODE oracle must agree with the gaps within 3%."),
    TheoremId.LongTime: (
        "Long-time distance monotonicity.",
        "exp(-lambda t) dist(Y(t), Z(t)) is nondecreasing for disjoint flows, one compact.",
        "Same tolerance policy as DistanceTheorem."),
    TheoremId.Avoidance: (
        "Avoidance.",
        "Weak set flows that start disjoint, one of them compact, stay disjoint.",
        "Passes iff the node gap minus h stays positive at every sample; requires an initial "
        "gap above 4h and a compact set."),
    TheoremId.StrongBarrierEquiv: (
        "Strong-barrier characterization of weak set flows.",
        "A closed spacetime set is a weak set flow iff every strong barrier (Phi < 0 on its "
        "boundary) that starts disjoint from it stays disjoint.",
        "The barrier is rasterized per sample; any shared node is a contact. In contact mode "
        "first contact is allowed only where Phi >= -1e-6."),
    TheoremId.BoundaryFlow: (
        "Boundaries of flows of regions are weak set flows.",
        "For a region C the boundary track of F_t(C) is itself a weak set flow starting at the "
        "boundary of C.",
        "The boundary track must pass a seeded panel of strong barriers with zero contacts."),
    TheoremId.Semigroup: (
        "Semigroup property of the biggest flow.",
        "F_(s+t)(C) = F_t(F_s(C)).",
        "Hausdorff distance between both sides at most 3h (configurable in cells)."),
    TheoremId.Containment: (
        "Level sets of the distance function flow independently.",
        "Evolving u0 = signed distance to C once, each level {u = a} is the flow of "
        "{u0 = a}; distinct levels stay disjoint and the zero level equals F_t(C).",
        "Pairwise disjointness is exact at node level; the zero level must match the direct "
        "run within one cell (sub-cell interface Hausdorff distance)."),
    TheoremId.Extinction: (
        "Extinction time of a round sphere.",
        "A sphere of radius r0 in R^(m+1) moving by mean curvature vanishes at r0^2 / (2m).",
        "Absolute tolerance in flow units from the scenario; an optional companion record "
        "requires the error to drop by a stated factor when the spacing is halved."),
    TheoremId.ArrivalTime: (
        "Arrival time of a mean-convex flow.",
        "For a mean-convex region the boundary passes each point exactly once; the arrival "
        "time u satisfies u = (r0^2 - |x|^2)/(2m) for a ball, its superlevel sets nest and "
        "each level {u = t} has empty interior.",
        "Pointwise error at most 3h on the inner 90% of the ball; thickness of each level at "
        "most 2 cells; nesting exact."),
    TheoremId.Brakke: (
        "Brakke inequality for polygonal curve shortening.",
        "For nonnegative test functions phi the upper time derivative of the phi-weighted "
        "length is bounded by the integral of -phi |H|^2 + grad phi . H plus the transport "
        "and time-derivative terms; the two algebraic forms of the right side agree.",
        "lhs <= rhs + 5% of (|lhs| + |rhs|) + 1e-6 at every step; form gap at most 1% of the "
        "dominant term; refinement consistency between (n, dt) and (2n, dt/4)."),
    TheoremId.Separator: (
        "Harmonic separating hypersurface.",
        "For closed sets X, Y at distance 2r the level set M of a harmonic interpolant between "
        "the r-neighbourhoods separates them, is equidistant at distance r and has a normal "
        "that follows the connecting direction where the closest-point set Z is nonempty.",
        "Equidistance and offset from r within 3h; normal angle at most 15 degrees; a radial "
        "configuration is fitted by a ln|x| + b within 2% of max |h|."),
    TheoremId.BarrierCalculus: (
        "Exact barrier calculus.",
        "Phi = v - H vanishes on the exact shrinking sphere; the perturbed barrier separates "
        "quadratically with ratio c; strong classification matches the closed forms.",
        "|Phi| <= 1e-10; ratio within 20% of c; classification exact."),
}


def describe(check_id: str) -> str:
    try:
        tid = TheoremId(check_id)
    except ValueError:
        known = ", ".join(t.value for t in TheoremId)
        raise ResolutionError(f"unknown check id '{check_id}' (known: {known})") from None
    title, statement, tolerance = DESCRIPTIONS[tid]
    return (f"{tid.value}: {title}\n\nStatement and hypotheses:\n  {statement}\n\n"
            f"Tolerance policy:\n  {tolerance}\n")


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, allow_nan=True)


def _summary(rows) -> str:
    head = ("check", "id", "passed", "margin", "tolerance")
    table = [head] + [(r["check"], r["theoremId"], "yes" if r["passed"] else "NO",
                       f"{r['margin']:.4g}" if isinstance(r["margin"], float) else str(r["margin"]),
                       f"{r['tolerance']:.4g}" if isinstance(r["tolerance"], float) else str(r["tolerance"]))
                      for r in rows]
    widths = [max(len(str(row[i])) for row in table) for i in range(len(head))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)) for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def run(path, grid_override=None, dump_every=None, report=None, seed=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        sc = load_scenario(find_scenario(path))
        res = resolve(sc, grid_override)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    seed = sc.seed if seed is None else seed
    dump_every = sc.dump_every if dump_every is None else dump_every
    report_path = Path(report or sc.report or f"{sc.name}.jsonl")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    side = report_path.with_suffix("")
    dump_root = side.parent / (side.name + ".dumps") if dump_every > 0 else None
    csv_root = side.parent / (side.name + ".tracks")

    header = {"record": "scenario", "scenario": sc.name, "seed": seed,
              "grid": {"origin": res.grid.origin, "spacing": res.grid.spacing,
                       "counts": res.grid.counts},
              "flow": {k: getattr(res.params, k) for k in
                       ("max_time", "cfl", "eps_reg", "reinit_every", "band_width", "sample_dt")},
              "fields": res.bounds}
    rows, timing, errors = [], [], 0
    lines = [_dumps(header)]
    for i, chk in enumerate(sc.checks):
        started = time.perf_counter()
        with recording(None if dump_root is None else dump_root / f"check_{i:02d}", dump_every) as rec, \
                warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                reports = run_check(res, chk, seed)
                error = None
            except Exception as exc:  # any failure inside a check is a runtime error (exit 4)
                reports, error = [], f"{type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - started
        for msg in sorted({str(w.message) for w in caught}):
            print(f"warning in {chk.label}: {msg}", file=sys.stderr)
        if error is not None:
            errors += 1
            rec_ = {"record": "check", "check": chk.label, "theoremId": chk.theorem_id.value,
                    "passed": False, "margin": -math.inf, "tolerance": 0.0, "witness": None,
                    "error": error}
            rows.append(rec_)
            lines.append(_dumps(rec_))
            print(f"error in {chk.label}: {error}", file=sys.stderr)
        for j, rep in enumerate(reports):
            rec_ = {"record": "check", "check": chk.label if j == 0 else f"{chk.label}/{j}",
                    **rep.to_record()}
            rows.append(rec_)
            lines.append(_dumps(rec_))
        if sc.track_csv and rec.tracks:
            csv_root.mkdir(parents=True, exist_ok=True)
            for k, tr in enumerate(rec.tracks):
                write_track_csv(csv_root / f"check_{i:02d}_flow_{k:02d}.csv", track_diagnostics(tr))
        timing.append({"check": chk.label, "runtime_s": round(elapsed, 3),
                       "flows": len(rec.tracks)})
    text = "\n".join(lines) + "\n" + "".join("@timing " + json.dumps(t, sort_keys=True) + "\n"
                                             for t in timing)
    report_path.write_text(text)
    print(_summary(rows), file=out)
    print(f"report: {report_path}", file=out)
    if errors:
        return EXIT_RUNTIME
    return EXIT_PASS if all(r["passed"] for r in rows) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="setflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or a bundled scenario by name")
    r.add_argument("path")
    r.add_argument("--grid-override", type=int, metavar="N", help="use spacing 1/N box units")
    r.add_argument("--dump-every", type=int, metavar="K", help="dump fields every K steps")
    r.add_argument("--report", metavar="PATH", help="report file (JSON lines)")
    r.add_argument("--seed", type=int, help="seed for probe and barrier lattices")
    sub.add_parser("list", help="list bundled scenarios")
    d = sub.add_parser("describe", help="describe a check id")
    d.add_argument("id")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.path, args.grid_override, args.dump_every, args.report, args.seed)
    if args.command == "list":
        for name, path in bundled_scenarios().items():
            try:
                desc = load_scenario(path).description.strip().splitlines()[0]
            except (ScenarioError, IndexError):
                desc = ""
            print(f"{name:32s} {desc}")
        return EXIT_PASS
    try:
        print(describe(args.id), end="")
    except ResolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_PASS


if __name__ == "__main__":
    sys.exit(main())
