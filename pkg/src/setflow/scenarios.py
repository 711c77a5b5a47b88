"""Scenario files: parsing, name resolution and check execution.

A scenario is a YAML mapping. Every physical quantity carries its unit in the key name:
lengths end in ``_box_units``, times in ``_flow_units``, rates (1/time) in
``_per_flow_units`` and velocities in ``_box_per_flow_units``. A bare ``radius`` is
rejected so that a file never relies on an implicit unit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import barriers as B
from .grid import ClosedSetMask, Grid, ScalarField
from .harness import TheoremId
from .levelset import FlowParams

LENGTH = "_box_units"
TIME = "_flow_units"
RATE = "_per_flow_units"
VELOCITY = "_box_per_flow_units"
DIFFUSIVITY = "_box2_per_flow_units"
_SUFFIXES = (VELOCITY, DIFFUSIVITY, RATE, LENGTH, TIME)

DEFAULT_MAX_NODES = 4_000_000


class ScenarioError(Exception):
    exit_code = 4


class ParseError(ScenarioError):
    exit_code = 2


class ResolutionError(ScenarioError):
    exit_code = 3


# --- YAML with source positions ---------------------------------------------------


class _Map(dict):
    mark = None
    key_marks: dict = {}


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.mark = node.start_mark
    out.key_marks = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        if key in out:
            m = knode.start_mark
            raise ParseError(f"line {m.line + 1}, column {m.column + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(vnode, deep=True)
        out.key_marks[key] = knode.start_mark
    return out


_Loader.add_constructor("tag:yaml.org,2002:map", _construct_map)


def _where(mark) -> str:
    return "" if mark is None else f"line {mark.line + 1}, column {mark.column + 1}: "


class _Section:
    """Reads keys out of one mapping, converting units and reporting positions."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ParseError(f"{path}: expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def error(self, msg: str, key: str | None = None) -> ParseError:
        marks = getattr(self.data, "key_marks", {})
        mark = marks.get(key, getattr(self.data, "mark", None))
        where = f"{self.path}.{key}" if key else self.path
        return ParseError(f"{_where(mark)}{where}: {msg}")

    def _lookup(self, name: str, suffix: str, required: bool):
        key = name + suffix
        if key in self.data:
            self.used.add(key)
            return key, self.data[key]
        if suffix and name in self.data:
            raise self.error(f"'{name}' needs explicit units; write '{key}'", name)
        for other in _SUFFIXES:
            if other != suffix and name + other in self.data:
                raise self.error(f"'{name}' must be given as '{key}'", name + other)
        if required:
            raise self.error(f"missing required key '{key}'")
        return key, None

    def _number(self, key, value):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", key)
        if not math.isfinite(value):
            raise self.error("expected a finite number", key)
        return float(value)

    def number(self, name: str, suffix: str = "", default=None, required: bool = False):
        key, v = self._lookup(name, suffix, required and default is None)
        return default if v is None else self._number(key, v)

    def integer(self, name: str, default=None, required: bool = False):
        key, v = self._lookup(name, "", required and default is None)
        if v is None:
            return default
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.error(f"expected an integer, got {v!r}", key)
        return int(v)

    def flag(self, name: str, default: bool = False) -> bool:
        key, v = self._lookup(name, "", False)
        if v is None:
            return default
        if not isinstance(v, bool):
            raise self.error(f"expected true or false, got {v!r}", key)
        return v

    def text(self, name: str, default=None, required: bool = False):
        key, v = self._lookup(name, "", required and default is None)
        if v is None:
            return default
        if not isinstance(v, str):
            raise self.error(f"expected a string, got {v!r}", key)
        return v

    def vector(self, name: str, suffix: str = "", default=None, required: bool = False, length=None):
        key, v = self._lookup(name, suffix, required and default is None)
        if v is None:
            return default
        if not isinstance(v, list) or not v:
            raise self.error(f"expected a list of numbers, got {v!r}", key)
        out = [self._number(key, x) for x in v]
        if length is not None and len(out) != length:
            raise self.error(f"expected {length} entries, got {len(out)}", key)
        return out

    def names(self, name: str, default=None, required: bool = False, count=None):
        key, v = self._lookup(name, "", required and default is None)
        if v is None:
            return default
        if isinstance(v, str):
            v = [v]
        if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
            raise self.error(f"expected a name or a list of names, got {v!r}", key)
        if count is not None and len(v) != count:
            raise self.error(f"expected {count} names, got {len(v)}", key)
        return list(v)

    def sub(self, name: str, required: bool = False):
        key, v = self._lookup(name, "", required)
        return None if v is None else _Section(v, f"{self.path}.{key}")

    def items(self, name: str, required: bool = False):
        key, v = self._lookup(name, "", required)
        if v is None:
            return []
        if not isinstance(v, list):
            raise self.error("expected a list", key)
        return [_Section(x, f"{self.path}.{key}[{i}]") for i, x in enumerate(v)]

    def mapping(self, name: str, required: bool = False):
        key, v = self._lookup(name, "", required)
        if v is None:
            return {}
        if not isinstance(v, dict):
            raise self.error("expected a mapping", key)
        return {k: _Section(x, f"{self.path}.{key}.{k}") for k, x in v.items()}

    def finish(self) -> None:
        extra = [k for k in self.data if k not in self.used]
        if extra:
            raise self.error(f"unknown key '{extra[0]}'", extra[0])


# --- parsed representation -------------------------------------------------------


@dataclass
class CheckSpec:
    theorem_id: TheoremId
    label: str
    args: dict
    field: str = "zero"
    flow: dict = dc_field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    description: str
    path: Path | None
    grid_spec: dict
    set_specs: dict
    field_specs: dict
    flow: dict
    checks: list[CheckSpec]
    seed: int = 0
    dump_every: int = 0
    report: str | None = None
    track_csv: bool = True
    max_nodes: int = DEFAULT_MAX_NODES


@dataclass
class Resolved:
    scenario: Scenario
    grid: Grid
    sets: dict[str, ScalarField]
    fields: dict[str, AmbientField]
    params: FlowParams
    bounds: dict


AmbientField = B.AmbientField

_SHAPES = ("ball", "annulus", "half_space", "rectangle", "polygon", "union", "intersection",
           "complement")
_FIELDS = ("zero", "constant", "radial", "rotation", "shear", "polynomial")
_FLOW_KEYS = {"max_time": TIME, "sample_dt": TIME, "band_width": LENGTH, "cfl": "",
              "reinit_every": "", "eps_reg": "", "stop_at_extinction": ""}


def _parse_shape(s: _Section) -> dict:
    kind = s.text("shape", required=True)
    out = {"shape": kind}
    if kind == "ball":
        out["center"] = s.vector("center", LENGTH, required=True)
        out["radius"] = s.number("radius", LENGTH, required=True)
    elif kind == "annulus":
        out["center"] = s.vector("center", LENGTH, required=True)
        out["inner_radius"] = s.number("inner_radius", LENGTH, required=True)
        out["outer_radius"] = s.number("outer_radius", LENGTH, required=True)
    elif kind == "half_space":
        out["normal"] = s.vector("normal", required=True)
        out["offset"] = s.number("offset", LENGTH, default=0.0)
    elif kind == "rectangle":
        out["lower"] = s.vector("lower", LENGTH, required=True)
        out["upper"] = s.vector("upper", LENGTH, required=True)
    elif kind == "polygon":
        key, v = s._lookup("vertices", LENGTH, True)
        if not isinstance(v, list) or len(v) < 3:
            raise s.error("a polygon needs at least three vertices", key)
        out["vertices"] = [[s._number(key, x) for x in row] if isinstance(row, list) else
                           s._number(key, row) for row in v]
        if not all(isinstance(r, list) and len(r) == 2 for r in out["vertices"]):
            raise s.error("polygon vertices must be [x, y] pairs", key)
    elif kind in ("union", "intersection"):
        parts = s.items("parts", required=True)
        if not parts:
            raise s.error("needs at least one part", "parts")
        out["parts"] = [_parse_shape(p) for p in parts]
    elif kind == "complement":
        out["of"] = _parse_shape(s.sub("of", required=True))
    else:
        s.used.add("shape")
        out["unknown"] = True
    if not out.get("unknown"):
        s.finish()
    return out


def _parse_field(s: _Section) -> dict:
    kind = s.text("kind", required=True)
    out = {"kind": kind}
    if kind == "constant":
        out["velocity"] = s.vector("velocity", VELOCITY, required=True)
    elif kind == "radial":
        out["kappa"] = s.number("kappa", RATE, required=True)
        out["center"] = s.vector("center", LENGTH)
    elif kind == "rotation":
        out["omega"] = s.number("omega", RATE, default=1.0)
    elif kind == "shear":
        out["rate"] = s.number("rate", RATE, default=1.0)
    elif kind == "polynomial":
        terms = []
        for t in s.items("terms", required=True):
            comp = t.integer("component", required=True)
            coef = t.number("coefficient", required=True)
            powers = t.vector("powers", required=True)
            if any(p < 0 or p != int(p) for p in powers):
                raise t.error("powers must be nonnegative integers", "powers")
            t.finish()
            terms.append((comp, coef, tuple(int(p) for p in powers)))
        out["terms"] = terms
    elif kind != "zero":
        s.used.update(s.data)
        out["unknown"] = True
    s.finish()
    return out


def _parse_flow(s: _Section | None) -> dict:
    if s is None:
        return {}
    out = {}
    for name, suffix in _FLOW_KEYS.items():
        if name == "reinit_every":
            v = s.integer(name)
        elif name == "stop_at_extinction":
            v = s.flag(name, None)
        else:
            v = s.number(name, suffix)
        if v is not None:
            out[name] = v
    s.finish()
    return out


def _parse_barrier(s: _Section) -> dict:
    kind = s.text("kind", required=True)
    out = {"kind": kind}
    if kind == "shrinking_ball":
        out["center"] = s.vector("center", LENGTH, required=True)
        out["delta"] = s.number("delta", LENGTH, required=True)
        out["c"] = s.number("c", DIFFUSIVITY, required=True)
        out["interval"] = s.vector("interval", TIME, length=2)
    elif kind == "exact_sphere":
        out["center"] = s.vector("center", LENGTH, required=True)
        out["radius"] = s.number("radius", LENGTH, required=True)
        out["end"] = s.number("end", TIME)
    elif kind == "half_space":
        out["normal"] = s.vector("normal", required=True)
        out["offset"] = s.number("offset", LENGTH, default=0.0)
        out["speed"] = s.number("speed", VELOCITY, default=0.0)
        out["interval"] = s.vector("interval", TIME, length=2, default=[0.0, 1.0])
    else:
        s.used.update(s.data)
        out["unknown"] = True
    s.finish()
    return out


def _parse_curve(s: _Section) -> dict:
    kind = s.text("kind", required=True)
    out = {"kind": kind, "vertices": s.integer("vertices", default=256),
           "center": s.vector("center", LENGTH, default=[0.0, 0.0], length=2)}
    if kind == "circle":
        out["radius"] = s.number("radius", LENGTH, required=True)
    elif kind == "ellipse":
        out["semi_axes"] = s.vector("semi_axes", LENGTH, required=True, length=2)
    else:
        s.used.update(s.data)
        out["unknown"] = True
    s.finish()
    return out


def _parse_check(s: _Section, index: int) -> CheckSpec:
    key, raw = s._lookup("id", "", True)
    try:
        tid = TheoremId(raw)
    except ValueError:
        tid = None
    label = s.text("label", default=f"{raw}#{index}")
    fname = s.text("field", default="zero")
    flow = _parse_flow(s.sub("flow"))
    a = {}
    T = TheoremId
    if tid is None:
        s.used.update(s.data)
        a["unknown_id"] = raw
    elif tid is T.Extinction:
        a["set"] = s.text("set", required=True)
        a["expected"] = s.number("expected", TIME, required=True)
        a["tolerance"] = s.number("tolerance", TIME, required=True)
        a["halving"] = s.flag("halving", False)
        a["halving_ratio"] = s.number("halving_ratio", default=1.5)
    elif tid in (T.Avoidance, T.DistanceTheorem, T.LongTime, T.KeyProposition):
        a["sets"] = s.names("sets", required=True, count=2)
        if tid is T.KeyProposition:
            a["level"] = s.number("level", default=0.0)
        if tid in (T.DistanceTheorem, T.LongTime):
            a["ode_radii"] = s.vector("ode_radii", LENGTH, length=2)
            a["ode_min_radius"] = s.number("ode_min_radius", LENGTH, default=0.15)
            a["ode_tolerance"] = s.number("ode_tolerance", default=0.03)
    elif tid is T.StrongBarrierEquiv:
        a["set"] = s.text("set", required=True)
        sub = s.sub("barrier")
        a["barrier"] = None if sub is None else _parse_barrier(sub)
        a["panel"] = s.integer("panel", default=6)
        a["mode"] = s.text("mode", default="strict")
        if a["mode"] not in ("strict", "contact"):
            raise s.error("mode must be 'strict' or 'contact'", "mode")
    elif tid is T.BoundaryFlow:
        a["set"] = s.text("set", required=True)
        a["barriers"] = s.integer("barriers", default=6)
    elif tid is T.Containment:
        a["set"] = s.text("set", required=True)
        a["levels"] = s.vector("levels", LENGTH, required=True)
    elif tid is T.Semigroup:
        a["set"] = s.text("set", required=True)
        a["s"] = s.number("s", TIME, required=True)
        a["t"] = s.number("t", TIME, required=True)
        a["tolerance_cells"] = s.number("tolerance_cells", default=3.0)
    elif tid is T.Compactness:
        a["fields"] = s.names("fields")
    elif tid is T.ShrinkingBall:
        a["sets"] = s.names("sets", required=True)
        a["probes"] = s.integer("probes", default=20)
    elif tid is T.FiniteSpeed:
        a["set"] = s.text("set", required=True)
        a["point"] = s.vector("point", LENGTH, required=True)
        a["R"] = s.number("R", LENGTH, required=True)
        a["r"] = s.number("r", LENGTH, required=True)
    elif tid is T.ArrivalTime:
        a["set"] = s.text("set", required=True)
        a["center"] = s.vector("center", LENGTH, required=True)
        a["radius"] = s.number("radius", LENGTH, required=True)
        a["tolerance_cells"] = s.number("tolerance_cells", default=3.0)
        a["inner_fraction"] = s.number("inner_fraction", default=0.9)
        a["max_thickness_cells"] = s.number("max_thickness_cells", default=2.0)
    elif tid is T.Brakke:
        a["curve"] = _parse_curve(s.sub("curve", required=True))
        a["dt"] = s.number("dt", TIME, required=True)
        a["end"] = s.number("end", TIME, required=True)
        a["every"] = s.integer("every", default=1)
        a["relative_tolerance"] = s.number("relative_tolerance", default=0.05)
        a["form_tolerance"] = s.number("form_tolerance", default=0.01)
        a["refinement"] = s.flag("refinement", False)
        a["refinement_end"] = s.number("refinement_end", TIME)
    elif tid is T.Separator:
        a["sets"] = s.names("sets", required=True, count=2)
        a["level"] = s.number("level", default=0.0)
        a["tolerance_cells"] = s.number("tolerance_cells", default=3.0)
        a["angle_degrees"] = s.number("angle_degrees", default=15.0)
        a["geometry"] = s.flag("geometry", True)
        a["log_center"] = s.vector("log_center", LENGTH)
        a["log_tolerance"] = s.number("log_tolerance", default=0.02)
    elif tid is T.BarrierCalculus:
        a["m"] = s.integer("m", default=1)
        a["samples"] = s.integer("samples", default=100)
    s.finish()
    return CheckSpec(tid, label, a, fname, flow)


def parse_scenario(text: str, path: Path | None = None) -> Scenario:
    """Parse YAML text into a :class:`Scenario`; raises :class:`ParseError`."""
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ParseError(f"{_where(mark)}{exc.problem or exc.context}") from None
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from None
    root = _Section(data, "scenario")
    name = root.text("name", required=True)
    description = root.text("description", default="")
    g = root.sub("grid", required=True)
    grid_spec = {"lower": g.vector("lower", LENGTH, required=True),
                 "upper": g.vector("upper", LENGTH, required=True),
                 "spacing": g.number("spacing", LENGTH, required=True)}
    g.finish()
    if len(grid_spec["lower"]) != len(grid_spec["upper"]):
        raise g.error("lower and upper corners differ in dimension")
    sets = {k: _parse_shape(v) for k, v in root.mapping("sets").items()}
    fields = {k: _parse_field(v) for k, v in root.mapping("fields").items()}
    flow = _parse_flow(root.sub("flow"))
    checks = [_parse_check(c, i) for i, c in enumerate(root.items("checks", required=True))]
    if not checks:
        raise root.error("at least one check is required", "checks")
    out = root.sub("outputs")
    dump_every, report_path, track_csv = 0, None, True
    if out is not None:
        dump_every = out.integer("dump_every", default=0)
        report_path = out.text("report")
        track_csv = out.flag("track_csv", True)
        out.finish()
    limits = root.sub("limits")
    max_nodes = DEFAULT_MAX_NODES
    if limits is not None:
        max_nodes = limits.integer("max_nodes", default=DEFAULT_MAX_NODES)
        limits.finish()
    seed = root.integer("seed", default=0)
    root.finish()
    return Scenario(name, description, path, grid_spec, sets, fields, flow, checks, seed,
                    dump_every, report_path, track_csv, max_nodes)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ResolutionError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, path)


# --- resolution ------------------------------------------------------------------


def _shape_function(spec: dict, dim: int):
    """Level-set function of a shape (negative inside); distance-like near the boundary."""
    kind = spec["shape"]
    if spec.get("unknown"):
        raise ResolutionError(f"unknown shape '{kind}' (known: {', '.join(_SHAPES)})")

    def vec(v, what):
        if len(v) != dim:
            raise ResolutionError(f"{kind}.{what} has {len(v)} entries on a {dim}-D grid")
        return np.asarray(v, dtype=float)

    if kind == "ball":
        c = vec(spec["center"], "center")
        r = spec["radius"]
        if r <= 0:
            raise ResolutionError("ball radius must be positive")
        return lambda P: np.linalg.norm(P - c, axis=-1) - r
    if kind == "annulus":
        c = vec(spec["center"], "center")
        a, b = spec["inner_radius"], spec["outer_radius"]
        if not 0 < a < b:
            raise ResolutionError("annulus needs 0 < inner_radius < outer_radius")
        return lambda P: np.maximum(np.linalg.norm(P - c, axis=-1) - b, a - np.linalg.norm(P - c, axis=-1))
    if kind == "half_space":
        n = vec(spec["normal"], "normal")
        if np.linalg.norm(n) == 0:
            raise ResolutionError("half_space normal must be nonzero")
        n = n / np.linalg.norm(n)
        return lambda P: P @ n - spec["offset"]
    if kind == "rectangle":
        lo, hi = vec(spec["lower"], "lower"), vec(spec["upper"], "upper")
        if np.any(hi <= lo):
            raise ResolutionError("rectangle needs lower < upper")
        c, half = (lo + hi) / 2, (hi - lo) / 2

        def rect(P):
            q = np.abs(P - c) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        return rect
    if kind == "polygon":
        if dim != 2:
            raise ResolutionError("polygons need a 2-D grid")
        V = np.asarray(spec["vertices"], dtype=float)
        return lambda P: _polygon_sdf(V, P)
    if kind in ("union", "intersection"):
        fs = [_shape_function(p, dim) for p in spec["parts"]]
        op = np.minimum if kind == "union" else np.maximum

        def combo(P):
            out = fs[0](P)
            for f in fs[1:]:
                out = op(out, f(P))
            return out
        return combo
    if kind == "complement":
        f = _shape_function(spec["of"], dim)
        return lambda P: -f(P)
    raise ResolutionError(f"unknown shape '{kind}'")


def _polygon_sdf(V: np.ndarray, P: np.ndarray) -> np.ndarray:
    from .brakke import _inside_polygon

    pts = P.reshape(-1, 2)
    A, Bv = V, np.roll(V, -1, axis=0)
    d2 = np.full(len(pts), np.inf)
    for a, b in zip(A, Bv):
        e = b - a
        s = np.clip(((pts - a) @ e) / (e @ e), 0.0, 1.0)
        d2 = np.minimum(d2, np.sum((pts - a - s[:, None] * e) ** 2, axis=1))
    inside = _inside_polygon(V, pts)
    return np.where(inside, -1.0, 1.0).reshape(P.shape[:-1]) * np.sqrt(d2).reshape(P.shape[:-1])


def _build_field(spec: dict, dim: int) -> AmbientField:
    kind = spec["kind"]
    if spec.get("unknown"):
        raise ResolutionError(f"unknown field kind '{kind}' (known: {', '.join(_FIELDS)})")
    if kind == "zero":
        return B.zero_field(dim)
    if kind == "constant":
        if len(spec["velocity"]) != dim:
            raise ResolutionError(f"constant velocity needs {dim} entries")
        return B.constant_field(spec["velocity"])
    if kind == "radial":
        c = spec.get("center")
        if c is not None and len(c) != dim:
            raise ResolutionError(f"radial center needs {dim} entries")
        return B.radial_field(spec["kappa"], dim, c)
    if kind == "rotation":
        return B.rotation_field(spec["omega"], dim)
    if kind == "shear":
        return B.shear_field(spec["rate"], dim)
    if kind == "polynomial":
        for comp, _, powers in spec["terms"]:
            if not 0 <= comp < dim or len(powers) != dim:
                raise ResolutionError("polynomial term does not match the grid dimension")
        return B.polynomial_field(spec["terms"], dim)
    raise ResolutionError(f"unknown field kind '{kind}'")


def _referenced(sc: Scenario):
    for chk in sc.checks:
        a = chk.args
        names = ([a["set"]] if "set" in a else []) + list(a.get("sets") or [])
        yield chk, names


def resolve(sc: Scenario, grid_override: int | None = None) -> Resolved:
    """Build the grid, initial sets and fields; raises :class:`ResolutionError`."""
    gs = sc.grid_spec
    spacing = gs["spacing"] if grid_override is None else 1.0 / grid_override
    if grid_override is not None and grid_override <= 0:
        raise ResolutionError("--grid-override must be a positive integer")
    lower, upper = np.asarray(gs["lower"]), np.asarray(gs["upper"])
    if spacing <= 0 or np.any(upper <= lower):
        raise ResolutionError("grid needs positive spacing and lower < upper")
    counts = np.rint((upper - lower) / spacing).astype(int) + 1
    nodes = int(np.prod(counts))
    if nodes > sc.max_nodes:
        raise ResolutionError(f"grid has {nodes} nodes, above the cap of {sc.max_nodes}")
    try:
        grid = Grid.box(lower, upper, spacing)
    except ValueError as exc:
        raise ResolutionError(f"grid: {exc}") from None
    dim = grid.dim
    P = grid.coords()
    sets = {k: ScalarField(grid, _shape_function(v, dim)(P)) for k, v in sc.set_specs.items()}
    fields = {"zero": B.zero_field(dim)}
    for k, v in sc.field_specs.items():
        fields[k] = _build_field(v, dim)
    for chk, names in _referenced(sc):
        if "unknown_id" in chk.args:
            known = ", ".join(t.value for t in TheoremId)
            raise ResolutionError(f"check '{chk.label}': unknown id '{chk.args['unknown_id']}' "
                                  f"(known: {known})")
        for n in names:
            if n not in sets:
                raise ResolutionError(f"check '{chk.label}' references undefined set '{n}'")
        if chk.field not in fields:
            raise ResolutionError(f"check '{chk.label}' references undefined field '{chk.field}'")
        for n in chk.args.get("fields") or []:
            if n not in fields:
                raise ResolutionError(f"check '{chk.label}' references undefined field '{n}'")
        for what in ("barrier", "curve"):
            spec = chk.args.get(what)
            if spec and spec.get("unknown"):
                raise ResolutionError(f"check '{chk.label}': unknown {what} kind '{spec['kind']}'")
    try:
        params = FlowParams(**sc.flow).resolve(grid)
        for chk in sc.checks:
            replace(params, **chk.flow).resolve(grid)
    except (TypeError, ValueError) as exc:
        raise ResolutionError(f"flow parameters: {exc}") from None
    bounds = {}
    for k, X in fields.items():
        try:
            X.validate(grid)
        except ValueError as exc:
            raise ResolutionError(f"field '{k}': {exc}") from None
        sup, jac = X.sample_bounds(grid)
        bounds[k] = {"chi": sup, "jacobian_bound": jac, "lambda": B.ricX_lower_bound(X, grid)}
    return Resolved(sc, grid, sets, fields, params, bounds)


# --- bundled scenarios -----------------------------------------------------------


def bundled_dir() -> Path:
    return Path(str(resources.files("setflow") / "bundled"))


def bundled_scenarios() -> dict[str, Path]:
    return {p.stem: p for p in sorted(bundled_dir().glob("*.yaml"))}


def find_scenario(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    table = bundled_scenarios()
    if str(name_or_path) in table:
        return table[str(name_or_path)]
    raise ResolutionError(f"no scenario file or bundled scenario named '{name_or_path}'")


# --- execution -------------------------------------------------------------------


def _mask(u: ScalarField) -> ClosedSetMask:
    return u.sublevel()


def run_check(res: Resolved, chk: CheckSpec, seed: int = 0) -> list:
    """Run one check and return its reports (some checks emit an oracle companion record)."""
    from . import harness as Hn
    from .levelset import evolve

    T = TheoremId
    a = chk.args
    X = res.fields[chk.field]
    X = None if X.is_zero else X
    params = replace(res.params, **chk.flow)
    grid = res.grid
    sets = res.sets
    tid = chk.theorem_id

    if tid is T.Extinction:
        tr = evolve(sets[a["set"]], X, params)
        out = [Hn.check_extinction(tr, a["expected"], a["tolerance"])]
        if a["halving"]:
            out.append(_halving_record(res, chk, out[0], X, params))
        return out
    if tid is T.Avoidance:
        Y, Z = (sets[n] for n in a["sets"])
        return [Hn.check_avoidance(Y, Z, X, params)]
    if tid in (T.DistanceTheorem, T.LongTime):
        Y, Z = (sets[n] for n in a["sets"])
        rep = Hn.check_exponential_distance(Y, Z, X, params, theorem_id=tid)
        out = [rep]
        if a["ode_radii"] is not None:
            out.append(_ode_record(res, chk, rep))
        return out
    if tid is T.KeyProposition:
        Y, Z = (_mask(sets[n]) for n in a["sets"])
        return [Hn.check_key_proposition(Y, Z, X, params, a["level"])]
    if tid is T.StrongBarrierEquiv:
        tr = evolve(sets[a["set"]], X, params)
        if a["barrier"] is None:
            panel = Hn.strong_barrier_panel(tr, a["panel"], seed=seed)
            return [Hn.check_barrier_panel(tr, panel, X)]
        b = _build_barrier(a["barrier"], grid.dim)
        return [Hn.check_strong_barrier_avoidance(tr, b, X, mode=a["mode"])]
    if tid is T.BoundaryFlow:
        return [Hn.check_boundary_flow(_mask(sets[a["set"]]), X, params, a["barriers"], seed)]
    if tid is T.Containment:
        return [Hn.check_containment_levels(_mask(sets[a["set"]]), a["levels"], X, params)]
    if tid is T.Semigroup:
        return [Hn.check_semigroup(_mask(sets[a["set"]]), a["s"], a["t"], X, params,
                                   a["tolerance_cells"])]
    if tid is T.Compactness:
        names = a["fields"] or list(res.fields)
        return [Hn.check_compactness(grid, [res.fields[n] for n in names], params)]
    if tid is T.ShrinkingBall:
        rng = np.random.default_rng(seed)
        lo, hi = np.asarray(grid.origin), grid.upper
        out = []
        for n in a["sets"]:
            probes = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), (a["probes"], grid.dim))
            rep = Hn.check_shrinking_ball(evolve(sets[n], X, params), probes)
            rep.details["set"] = n
            out.append(rep)
        return out
    if tid is T.FiniteSpeed:
        tr = evolve(sets[a["set"]], X, params)
        return [Hn.check_finite_speed(tr, a["point"], a["R"], a["r"])]
    if tid is T.ArrivalTime:
        if X is not None:
            raise ScenarioError("the arrival-time check needs the zero field")
        return [Hn.check_arrival_time(sets[a["set"]], a["center"], a["radius"], params,
                                      tol_cells=a["tolerance_cells"], inner=a["inner_fraction"],
                                      max_thickness_cells=a["max_thickness_cells"])]
    if tid is T.Brakke:
        return _brakke_records(res, chk, X)
    if tid is T.Separator:
        return _separator_records(res, chk)
    if tid is T.BarrierCalculus:
        return [Hn.check_barrier_calculus(a["m"], a["samples"])]
    raise ScenarioError(f"no runner for {tid}")


def _halving_record(res: Resolved, chk: CheckSpec, fine, X, params):
    """Rerun on the doubled spacing and compare extinction errors."""
    from .harness import check_extinction, report
    from .levelset import evolve

    a = chk.args
    g = res.grid
    coarse = Grid.box(g.origin, g.upper, 2 * g.spacing)
    u = ScalarField(coarse, _shape_function(res.scenario.set_specs[a["set"]], g.dim)(coarse.coords()))
    rc = check_extinction(evolve(u, X, params), a["expected"], a["tolerance"])
    ef, ec = fine.details["error"], rc.details["error"]
    ratio = math.inf if ef == 0 else ec / ef
    return report(TheoremId.Extinction, min(ratio, 1e6) - a["halving_ratio"], 0.0,
                  (math.nan, None), {"oracle": "grid halving", "error_fine": ef, "error_coarse": ec,
                                     "ratio": ratio, "required_ratio": a["halving_ratio"]})


def _ode_record(res: Resolved, chk: CheckSpec, rep):
    """Relative agreement of measured gaps with the concentric radius ODE."""
    from .harness import radius_ode, report

    a = chk.args
    spec = res.scenario.field_specs.get(chk.field, {"kind": "zero"})
    if spec["kind"] not in ("zero", "radial"):
        raise ScenarioError("the radius ODE oracle needs the zero or a radial field")
    kappa = spec.get("kappa", 0.0)
    m = res.grid.dim - 1
    times = np.asarray(rep.details["times"])
    gaps = np.asarray(rep.details["gaps"])
    rr = radius_ode(a["ode_radii"], float(times.max()), m=m, kappa=kappa, times=times)
    ode_gap = rr[:, 1] - rr[:, 0]
    ok = rr[:, 0] >= a["ode_min_radius"]
    if not ok.any():
        raise ScenarioError("no sample keeps the inner radius above the ODE comparison floor")
    rel = np.abs(gaps[ok] - ode_gap[ok]) / ode_gap[ok]
    k = int(np.argmax(rel))
    return report(chk.theorem_id, a["ode_tolerance"] - float(rel[k]), 0.0,
                  (float(times[ok][k]), None),
                  {"oracle": "radius ODE", "kappa": kappa, "max_relative_error": float(rel[k]),
                   "ode_gaps": ode_gap[ok].tolist(), "measured_gaps": gaps[ok].tolist()})


def _build_barrier(spec: dict, dim: int):
    kind = spec["kind"]
    if kind == "shrinking_ball":
        iv = spec["interval"]
        return B.shrinking_ball(spec["center"], spec["delta"], spec["c"], None if iv is None else tuple(iv))
    if kind == "exact_sphere":
        return B.exact_sphere_flow(spec["radius"], dim - 1, spec["end"], spec["center"])
    if kind == "half_space":
        return B.half_space(spec["normal"], spec["offset"], spec["speed"], tuple(spec["interval"]))
    raise ResolutionError(f"unknown barrier kind '{kind}'")


def _brakke_records(res: Resolved, chk: CheckSpec, X):
    from .brakke import (bump_suite, check_refinement, circle_curve, ellipse_curve, brakke_report,
                         simulate_curve)
    from .harness import report

    a = chk.args
    cv = a["curve"]
    if cv["kind"] == "circle":
        def make(n):
            return circle_curve(cv["radius"], n, cv["center"])
        scale = cv["radius"]
    else:
        def make(n):
            return ellipse_curve(*cv["semi_axes"], n, cv["center"])
        scale = max(cv["semi_axes"])
    phis = bump_suite(cv["center"], scale)
    tr = simulate_curve(make(cv["vertices"]), X, a["dt"], a["end"])
    out = [brakke_report(tr, X, phis, a["relative_tolerance"], a["form_tolerance"], a["every"])]
    if a["refinement"]:
        end = a["refinement_end"] or a["end"]
        rows = [check_refinement(make, X, phi, cv["vertices"], a["dt"], end) for phi in phis]
        bad = [phi.name for phi, r in zip(phis, rows) if not r["passed"]]
        out.append(report(TheoremId.Brakke, 0.0 - len(bad), 0.0, (math.nan, None),
                          {"oracle": "refinement consistency", "failed": bad,
                           "functions": [p.name for p in phis]}))
    return out


def _separator_records(res: Resolved, chk: CheckSpec):
    from .harness import report
    from .separator import check_separator, radial_profile_fit, separator_problem, solve_harmonic

    a = chk.args
    X, Y = (_mask(res.sets[n]) for n in a["sets"])
    out = []
    if a["geometry"]:
        out.append(check_separator(X, Y, a["level"], a["tolerance_cells"], a["angle_degrees"]))
    if a["log_center"] is not None:
        prob = separator_problem(X, Y)
        fit = radial_profile_fit(prob, solve_harmonic(prob), a["log_center"])
        out.append(report(TheoremId.Separator, a["log_tolerance"] - fit["relative_error"], 0.0,
                          (math.nan, None), {"oracle": "logarithmic profile", **fit,
                                             "tolerance": a["log_tolerance"]}))
    if not out:
        raise ScenarioError("separator check has nothing to verify")
    return out
