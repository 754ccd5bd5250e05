"""JSON schemas, loaders and deterministic JSON/CSV emitters."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .abreu import curvature_function
from .legendre import XGrid
from .polynomial import Polynomial
from .polytope import DelzantPolytope
from .potential import AffinePsi, GridPsi, PolynomialPsi, SymplecticPotential, ZeroPsi

SIG_DIGITS = 12

_number = {"type": "number"}
_terms = {
    "type": "array",
    "items": {"type": "array", "minItems": 2, "maxItems": 2,
              "prefixItems": [{"type": "array", "items": {"type": "integer", "minimum": 0}}, _number]},
}

POLYTOPE_SCHEMA = {
    "type": "object",
    "required": ["dim", "facets"],
    "properties": {
        "dim": {"type": "integer", "minimum": 1},
        "facets": {
            "type": "array", "minItems": 2,
            "items": {
                "type": "object",
                "required": ["normal", "offset"],
                "properties": {"normal": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
                               "offset": _number},
            },
        },
    },
}

PSI_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["zero", "affine", "polynomial", "grid"]}},
    "allOf": [
        {"if": {"properties": {"kind": {"const": "affine"}}},
         "then": {"required": ["a", "b"],
                  "properties": {"a": {"type": "array", "items": _number}, "b": _number}}},
        {"if": {"properties": {"kind": {"const": "polynomial"}}},
         "then": {"required": ["terms"], "properties": {"terms": _terms}}},
        {"if": {"properties": {"kind": {"const": "grid"}}},
         "then": {"required": ["h", "margin", "values"],
                  "properties": {"h": {"type": "number", "exclusiveMinimum": 0},
                                 "margin": {"type": "number", "minimum": 0},
                                 "values": {"type": "array", "items": _number}}}},
    ],
}

POTENTIAL_SCHEMA = {
    "type": "object",
    "required": ["guillemin", "psi"],
    "properties": {"guillemin": {"type": "boolean"}, "psi": PSI_SCHEMA},
}

CURVATURE_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["constant", "affine", "polynomial"]}},
    "allOf": [
        {"if": {"properties": {"kind": {"const": "constant"}}},
         "then": {"required": ["value"], "properties": {"value": _number}}},
        {"if": {"properties": {"kind": {"const": "affine"}}},
         "then": {"required": ["a", "b"],
                  "properties": {"a": {"type": "array", "items": _number}, "b": _number}}},
        {"if": {"properties": {"kind": {"const": "polynomial"}}},
         "then": {"required": ["terms"], "properties": {"terms": _terms}}},
    ],
}

XBOX_SCHEMA = {
    "type": "object",
    "required": ["center", "half_width", "h"],
    "properties": {
        "center": {"type": "array", "minItems": 1, "items": _number},
        "half_width": {"type": "number", "exclusiveMinimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMAS = {"polytope": POLYTOPE_SCHEMA, "potential": POTENTIAL_SCHEMA,
           "curvature": CURVATURE_SCHEMA, "xbox": XBOX_SCHEMA}


class InputError(ValueError):
    """Unreadable, malformed or schema-violating input (CLI exit code 1)."""


def _where(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(data, kind: str, source: str = "<input>") -> None:
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = [f"at {_where(e)}: {e.message}" for e in errors[:5]]
        raise InputError(f"{source}: {kind} schema violation " + "; ".join(lines))


def load_json(path, kind: str):
    """Read and schema-check one input file."""
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise InputError(f"{p}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validate(data, kind, str(p))
    return data


# ----------------------------------------------------------------------------
# constructors from validated dicts


def polytope_from_dict(data: dict, source: str = "<polytope>") -> DelzantPolytope:
    if any(len(f["normal"]) != data["dim"] for f in data["facets"]):
        raise InputError(f"{source}: every facet normal must have length dim = {data['dim']}")
    try:
        return DelzantPolytope.from_dict(data)
    except ValueError as exc:
        raise InputError(f"{source}: {exc}") from exc


def psi_from_dict(data: dict, polytope: DelzantPolytope | None, dim: int, source: str = "<psi>"):
    kind = data["kind"]
    if kind == "zero":
        return ZeroPsi(dim)
    if kind == "affine":
        if len(data["a"]) != dim:
            raise InputError(f"{source}: psi/a has {len(data['a'])} entries, expected {dim}")
        return AffinePsi(Polynomial.affine(data["a"], data["b"]))
    if kind == "polynomial":
        bad = [t[0] for t in data["terms"] if len(t[0]) != dim]
        if bad:
            raise InputError(f"{source}: psi/terms exponent {bad[0]} has wrong length (dim {dim})")
        return PolynomialPsi(Polynomial(dim, [(t[0], t[1]) for t in data["terms"]]))
    if polytope is None:
        raise InputError(f"{source}: a grid perturbation needs a polytope")
    try:
        grid = polytope.interior_grid(data["h"], data["margin"])
    except ValueError as exc:
        raise InputError(f"{source}: {exc}") from exc
    if len(data["values"]) != len(grid):
        raise InputError(f"{source}: psi/values has {len(data['values'])} entries, "
                         f"the grid has {len(grid)} nodes")
    return GridPsi(grid, data["values"])


def potential_from_dict(data: dict, polytope: DelzantPolytope | None,
                        source: str = "<potential>") -> SymplecticPotential:
    dim = polytope.dim if polytope is not None else None
    if dim is None:
        if data["guillemin"]:
            raise InputError(f"{source}: a Guillemin potential needs a polytope")
        psi = data["psi"]
        dim = len(psi.get("a", [])) or (len(psi["terms"][0][0]) if psi.get("terms") else 0)
        if not dim:
            raise InputError(f"{source}: cannot infer the dimension without a polytope")
    psi = psi_from_dict(data["psi"], polytope, dim, source)
    return SymplecticPotential(polytope, psi, 1.0 if data["guillemin"] else 0.0)


def curvature_from_dict(data: dict, dim: int, source: str = "<curvature>"):
    try:
        return curvature_function(data, dim)
    except (ValueError, KeyError) as exc:
        raise InputError(f"{source}: {exc}") from exc


def xgrid_from_dict(data: dict, dim: int | None = None, source: str = "<x-box>") -> XGrid:
    if dim is not None and len(data["center"]) != dim:
        raise InputError(f"{source}: center has {len(data['center'])} entries, expected {dim}")
    return XGrid.from_dict(data)


# ----------------------------------------------------------------------------
# deterministic output


def fmt(x) -> str:
    """Float text with 12 significant digits."""
    return format(float(x), f".{SIG_DIGITS}g")


def to_plain(obj):
    """JSON-ready copy: floats rounded to 12 significant digits, non-finite as strings."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(fmt(x))
    return obj


def dumps(obj) -> str:
    return json.dumps(to_plain(obj), sort_keys=True, indent=2) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    p = Path(path)
    try:
        p.write_text(text)
    except OSError as exc:
        raise InputError(f"{p}: cannot write ({exc.strerror})") from exc
