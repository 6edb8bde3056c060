"""Minimal ISO 10303-21 (STEP) reader for B-spline surface geometry.

Only the DATA section is read. ``B_SPLINE_SURFACE_WITH_KNOTS`` entities,
in the simple form or inside a complex entity that also carries
``RATIONAL_B_SPLINE_SURFACE`` weights, become :class:`NurbsSurface` values.
Other surface entities are counted and skipped.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .nurbs import NurbsError, NurbsSurface

__all__ = [
    "StepError",
    "StepSyntaxError",
    "DanglingReferenceError",
    "KnotMultiplicityError",
    "InvalidSurfaceError",
    "StepSurfaceRecord",
    "StepReport",
    "parse_data_section",
    "extract_step_surfaces",
    "expand_knots",
]


class StepError(ValueError):
    pass


class StepSyntaxError(StepError):
    def __init__(self, msg: str, entity: int | None = None, offset: int | None = None):
        where = []
        if entity is not None:
            where.append(f"entity #{entity}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{msg} ({', '.join(where)})" if where else msg)
        self.entity = entity
        self.offset = offset


class DanglingReferenceError(StepError):
    pass


class KnotMultiplicityError(StepError):
    pass


class InvalidSurfaceError(StepError):
    pass


@dataclass(frozen=True)
class Ref:
    id: int


@dataclass(frozen=True)
class Enum:
    name: str


@dataclass(frozen=True)
class Typed:
    name: str
    args: tuple


UNSET = None  # '$'
DERIVED = "*"

# surface entities this reader recognizes but does not convert
SKIPPED_SURFACES = {
    "PLANE", "CYLINDRICAL_SURFACE", "CONICAL_SURFACE", "SPHERICAL_SURFACE",
    "TOROIDAL_SURFACE", "DEGENERATE_TOROIDAL_SURFACE", "SURFACE_OF_REVOLUTION",
    "SURFACE_OF_LINEAR_EXTRUSION", "OFFSET_SURFACE", "RECTANGULAR_TRIMMED_SURFACE",
    "CURVE_BOUNDED_SURFACE", "RECTANGULAR_COMPOSITE_SURFACE", "BEZIER_SURFACE",
    "UNIFORM_SURFACE", "QUASI_UNIFORM_SURFACE", "SURFACE_REPLICA", "B_SPLINE_SURFACE",
}

_NUMBER = re.compile(r"[+-]?(\d+\.?\d*([eE][+-]?\d+)?|\.\d+([eE][+-]?\d+)?)")
_KEYWORD = re.compile(r"!?[A-Za-z_][A-Za-z0-9_]*")
_ENUM = re.compile(r"\.[A-Za-z_][A-Za-z0-9_]*\.")
_REF = re.compile(r"#(\d+)")
_STATEMENT = re.compile(r"\s*#(\d+)\s*=\s*", re.S)


class _Parser:
    def __init__(self, text: str, entity: int, base: int):
        self.s = text
        self.i = 0
        self.entity = entity
        self.base = base

    def fail(self, msg):
        raise StepSyntaxError(msg, self.entity, self.base + self.i)

    def ws(self):
        while self.i < len(self.s) and self.s[self.i].isspace():
            self.i += 1

    def peek(self):
        self.ws()
        return self.s[self.i] if self.i < len(self.s) else ""

    def expect(self, ch):
        if self.peek() != ch:
            self.fail(f"expected {ch!r}")
        self.i += 1

    def param(self):
        c = self.peek()
        if c == "":
            self.fail("unexpected end of entity")
        if c == "'":
            return self.string()
        if c == "(":
            return self.plist()
        if c == "$":
            self.i += 1
            return UNSET
        if c == "*":
            self.i += 1
            return DERIVED
        if c == "#":
            m = _REF.match(self.s, self.i)
            if not m:
                self.fail("malformed reference")
            self.i = m.end()
            return Ref(int(m.group(1)))
        if c == ".":
            m = _ENUM.match(self.s, self.i)
            if m:
                self.i = m.end()
                return Enum(m.group(0)[1:-1].upper())
        m = _NUMBER.match(self.s, self.i)
        if m:
            self.i = m.end()
            tok = m.group(0)
            return float(tok) if any(ch in tok for ch in ".eE") else int(tok)
        m = _KEYWORD.match(self.s, self.i)
        if m:
            self.i = m.end()
            return Typed(m.group(0).upper(), tuple(self.plist()))
        self.fail(f"unexpected character {c!r}")

    def string(self):
        self.i += 1
        out = []
        while True:
            j = self.s.find("'", self.i)
            if j < 0:
                self.fail("unterminated string")
            out.append(self.s[self.i:j])
            self.i = j + 1
            if self.s.startswith("'", self.i):
                out.append("'")
                self.i += 1
            else:
                return "".join(out)

    def plist(self):
        self.expect("(")
        items = []
        if self.peek() == ")":
            self.i += 1
            return items
        while True:
            items.append(self.param())
            c = self.peek()
            if c == ",":
                self.i += 1
            elif c == ")":
                self.i += 1
                return items
            else:
                self.fail("expected ',' or ')'")

    def entity_body(self):
        """Simple ``NAME(...)`` or complex ``(A(...) B(...))`` instance."""
        if self.peek() == "(":
            self.i += 1
            parts = {}
            while self.peek() != ")":
                m = _KEYWORD.match(self.s, self.i)
                if not m:
                    self.fail("expected entity name in complex instance")
                self.i = m.end()
                parts[m.group(0).upper()] = tuple(self.plist())
            self.i += 1
            body = parts
        else:
            m = _KEYWORD.match(self.s, self.i)
            if not m:
                self.fail("expected entity name")
            self.i = m.end()
            body = Typed(m.group(0).upper(), tuple(self.plist()))
        if self.peek() != "":
            self.fail("trailing characters after entity")
        return body


def _split_statements(data: str, base: int):
    """Yield ``(offset, text)`` for each ';'-terminated statement outside strings."""
    start = 0
    in_str = False
    i = 0
    n = len(data)
    while i < n:
        c = data[i]
        if in_str:
            if c == "'":
                if i + 1 < n and data[i + 1] == "'":
                    i += 1
                else:
                    in_str = False
        elif c == "'":
            in_str = True
        elif c == "/" and data.startswith("/*", i):
            j = data.find("*/", i + 2)
            if j < 0:
                raise StepSyntaxError("unterminated comment", offset=base + i)
            data = data[:i] + " " * (j + 2 - i) + data[j + 2:]
            continue
        elif c == ";":
            yield base + start, data[start:i]
            start = i + 1
        i += 1
    rest = data[start:]
    if rest.strip():
        m = _STATEMENT.match(rest)
        raise StepSyntaxError(
            "truncated entity (missing ';')", int(m.group(1)) if m else None, base + start
        )


def parse_data_section(text: str) -> dict:
    """Map entity id to ``Typed`` (simple) or ``dict`` name -> args (complex)."""
    m = re.search(r"\bDATA\s*(\([^;]*\))?\s*;", text)
    if not m:
        raise StepSyntaxError("no DATA section")
    begin = m.end()
    end_m = re.search(r"\bENDSEC\s*;", text[begin:])
    data = text[begin: begin + end_m.start()] if end_m else text[begin:]
    entities = {}
    for off, stmt in _split_statements(data, begin):
        if not stmt.strip():
            continue
        sm = _STATEMENT.match(stmt)
        if not sm:
            raise StepSyntaxError("expected '#id ='", offset=off)
        eid = int(sm.group(1))
        if eid in entities:
            raise StepSyntaxError("duplicate entity id", eid, off)
        entities[eid] = _Parser(stmt[sm.end():], eid, off + sm.end()).entity_body()
    if not end_m:
        last = max(entities) if entities else None
        raise StepSyntaxError("DATA section not closed by ENDSEC", last)
    return entities


@dataclass
class StepSurfaceRecord:
    entity_id: int
    degrees: tuple[int, int]
    knots_u: tuple[list, list]  # (distinct values, multiplicities)
    knots_v: tuple[list, list]
    control_points: np.ndarray
    rational: bool
    weights: np.ndarray

    def to_surface(self) -> NurbsSurface:
        n, m = self.control_points.shape[:2]
        p, q = self.degrees
        ku = expand_knots(*self.knots_u, expected=n + p + 1, entity=self.entity_id, axis="u")
        kv = expand_knots(*self.knots_v, expected=m + q + 1, entity=self.entity_id, axis="v")
        try:
            return NurbsSurface(p, q, ku, kv, self.control_points, self.weights,
                                label=f"step#{self.entity_id}")
        except NurbsError as exc:
            raise InvalidSurfaceError(f"entity #{self.entity_id}: {exc}") from exc


@dataclass
class StepReport:
    surfaces: list = field(default_factory=list)
    entity_ids: list = field(default_factory=list)
    skipped: Counter = field(default_factory=Counter)

    def summary(self) -> str:
        parts = [f"surfaces={len(self.surfaces)}"]
        parts += [f"skipped.{k}={v}" for k, v in sorted(self.skipped.items())]
        return " ".join(parts)


def expand_knots(values, mults, expected: int | None = None, entity=None, axis="") -> np.ndarray:
    if len(values) != len(mults):
        raise KnotMultiplicityError(
            f"entity #{entity}: {axis} has {len(values)} knots but {len(mults)} multiplicities"
        )
    if any((not isinstance(k, int)) or k < 1 for k in mults):
        raise KnotMultiplicityError(f"entity #{entity}: {axis} multiplicities must be positive integers")
    out = np.repeat(np.asarray(values, dtype=np.float64), mults)
    if expected is not None and out.size != expected:
        raise KnotMultiplicityError(
            f"entity #{entity}: {axis} expands to {out.size} knots, expected {expected}"
        )
    return out


def _point(entities, ref, eid):
    if not isinstance(ref, Ref):
        raise StepSyntaxError("control point is not a reference", eid)
    target = entities.get(ref.id)
    if target is None:
        raise DanglingReferenceError(f"entity #{eid} references missing #{ref.id}")
    if not (isinstance(target, Typed) and target.name == "CARTESIAN_POINT"):
        raise InvalidSurfaceError(f"entity #{eid}: #{ref.id} is not a CARTESIAN_POINT")
    coords = target.args[1] if len(target.args) > 1 else None
    if not isinstance(coords, list) or len(coords) != 3:
        raise InvalidSurfaceError(f"entity #{eid}: #{ref.id} is not a 3D point")
    return [float(c) for c in coords]


def _grid(entities, rows, eid):
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise StepSyntaxError("control point list must be a list of lists", eid)
    if len({len(r) for r in rows}) != 1:
        raise InvalidSurfaceError(f"entity #{eid}: ragged control point grid")
    return np.array([[_point(entities, ref, eid) for ref in row] for row in rows], dtype=np.float64)


def _number_list(x, eid, what):
    if not isinstance(x, list) or not all(isinstance(v, (int, float)) for v in x):
        raise StepSyntaxError(f"{what} must be a list of numbers", eid)
    return list(x)


def _record(entities, eid, base_args, knot_args, weight_rows) -> StepSurfaceRecord:
    if len(base_args) < 3 or len(knot_args) < 4:
        raise StepSyntaxError("too few B-spline surface parameters", eid)
    p, q, rows = base_args[0], base_args[1], base_args[2]
    if not isinstance(p, int) or not isinstance(q, int):
        raise StepSyntaxError("degrees must be integers", eid)
    cps = _grid(entities, rows, eid)
    n, m = cps.shape[:2]
    if weight_rows is None:
        weights = np.ones((n, m))
    else:
        if not isinstance(weight_rows, list) or len(weight_rows) != n:
            raise InvalidSurfaceError(f"entity #{eid}: weight grid does not match control grid")
        weights = np.array([_number_list(r, eid, "weights") for r in weight_rows], dtype=np.float64)
        if weights.shape != (n, m):
            raise InvalidSurfaceError(f"entity #{eid}: weight grid does not match control grid")
    um, vm, uk, vk = (_number_list(a, eid, "knot data") for a in knot_args[:4])
    return StepSurfaceRecord(eid, (p, q), (uk, um), (vk, vm), cps, weight_rows is not None, weights)


def extract_step_surfaces(text: str) -> StepReport:
    entities = parse_data_section(text)
    report = StepReport()
    for eid in sorted(entities):
        body = entities[eid]
        rec = None
        if isinstance(body, Typed):
            if body.name == "B_SPLINE_SURFACE_WITH_KNOTS":
                a = body.args
                if len(a) < 12:
                    raise StepSyntaxError("B_SPLINE_SURFACE_WITH_KNOTS needs 13 parameters", eid)
                rec = _record(entities, eid, a[1:4], a[8:12], None)
            elif body.name in SKIPPED_SURFACES:
                report.skipped[body.name] += 1
        else:
            if "B_SPLINE_SURFACE_WITH_KNOTS" in body:
                if "B_SPLINE_SURFACE" not in body:
                    raise StepSyntaxError("complex B-spline surface lacks B_SPLINE_SURFACE part", eid)
                weights = body.get("RATIONAL_B_SPLINE_SURFACE")
                rec = _record(
                    entities, eid, body["B_SPLINE_SURFACE"],
                    body["B_SPLINE_SURFACE_WITH_KNOTS"],
                    weights[0] if weights else None,
                )
            else:
                names = [k for k in body if k in SKIPPED_SURFACES]
                if names:
                    leaf = next((k for k in body if k.endswith("_SURFACE") and k != "B_SPLINE_SURFACE"), names[0])
                    report.skipped[leaf] += 1
        if rec is not None:
            report.surfaces.append(rec.to_surface())
            report.entity_ids.append(eid)
    return report
