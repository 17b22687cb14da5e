"""JSON run configuration: schema, validation and the built-in presets.

Numbers may be given as JSON numbers or as arithmetic strings such as
``"2^(1/3)"`` or ``"1/36"``; strings are evaluated by a small AST walker
that accepts only numeric literals, ``pi``, ``e``, ``sqrt`` and the
operators ``+ - * / ^``.
"""

from __future__ import annotations

import ast
import json
import math
import operator
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .errors import ConfigurationError, GridError, SGSDEError
from .model import (OutputFunctionSpec, SystemSpec, check_monotonicity,
                    estimate_lipschitz, spectral_abscissa)
from .noise import default_horizon, grid_steps

PRESETS = {"5.1": "ex51.json", "5.2": "ex52.json", "5.3": "ex53.json", "6.1": "ex61.json"}

_NUMBER = {"oneOf": [{"type": "number"}, {"type": "string", "minLength": 1}]}
_VECTOR = {"type": "array", "items": _NUMBER, "minItems": 1}
_MATRIX = {"type": "array", "items": _VECTOR, "minItems": 1}


def _section(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "grid"],
    "properties": {
        "name": {"type": "string"},
        "system": _section({
            "A": _MATRIX,
            "sigma": _MATRIX,
            "h": _section({
                "kind": {"type": "string"},
                "wiring": {"type": "array", "items": {
                    "type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}},
                "params": {"type": "object", "additionalProperties": {
                    "oneOf": [_NUMBER, _VECTOR]}},
                "monotonicity": {"enum": ["order-preserving", "anti-order-preserving"]},
            }, ["kind", "wiring", "params", "monotonicity"]),
            "L": _NUMBER,
        }, ["A", "sigma", "h", "L"]),
        "grid": _section({
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "t_past": {"type": "number", "exclusiveMinimum": 0},
            "t_fwd": {"type": "number", "minimum": 0},
        }, ["dt"]),
        "seeds": _section({
            "base": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
            "count": {"type": "integer", "minimum": 1},
        }),
        "check": _section({
            "t_max": {"type": "number", "exclusiveMinimum": 0},
            "n_points": {"type": "integer", "minimum": 2},
        }),
        "simulate": _section({
            "x0": _VECTOR,
            "t0": {"type": "number"},
            "t1": {"type": "number"},
            "scheme": {"enum": ["expeuler", "euler"]},
        }),
        "pullback": _section({
            "x": _VECTOR,
            "t_max": {"type": "number", "exclusiveMinimum": 0},
            "stride": {"type": "integer", "minimum": 1},
        }),
        "equilibrium": _section({
            "tol": {"type": "number", "exclusiveMinimum": 0},
            "max_iter": {"type": "integer", "minimum": 1},
            "warmup": {"type": "number", "exclusiveMinimum": 0},
            "verify_t0": {"type": "number"},
            "verify_t1": {"type": "number"},
        }),
        "stationary": _section({
            "mode": {"enum": ["ensemble-pullback", "ergodic-time-average"]},
            "n_samples": {"type": "integer", "minimum": 2},
            "dt": {"type": "number", "exclusiveMinimum": 0},
            "burn_in": {"type": "number", "exclusiveMinimum": 0},
            "thin": {"type": "number", "exclusiveMinimum": 0},
            "bins": {"type": "integer", "minimum": 1},
        }),
        "drift": _section({
            "epsilon": {"type": "number", "exclusiveMinimum": 0},
            "R": {"type": "number", "exclusiveMinimum": 0},
            "n_samples": {"type": "integer", "minimum": 1},
        }, ["epsilon", "R"]),
        "reference": _section({
            "spectral_abscissa": _NUMBER,
            "gain": _NUMBER,
            "cooperative": {"type": "boolean"},
            "smallGainOk": {"type": "boolean"},
        }),
        "output": _section({"dir": {"type": "string"}}),
    },
}

DEFAULTS = {
    "seeds": {"base": 0, "count": 1},
    "check": {"n_points": 2000},
    "simulate": {"t0": 0.0, "scheme": "expeuler"},
    "pullback": {"stride": 10},
    "equilibrium": {"tol": 1e-10, "max_iter": 500, "verify_t0": 0.0},
    "stationary": {"mode": "ensemble-pullback", "n_samples": 1000, "dt": 0.01},
    "drift": {"n_samples": 10_000},
}

# ---------------------------------------------------------------------------
# arithmetic strings

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt}


def evaluate_number(value, where=""):
    """A JSON number, or an arithmetic string evaluated to full double precision."""
    if isinstance(value, bool):
        raise ConfigurationError(f"{where}: expected a number, got a boolean", field=where)
    if isinstance(value, (int, float)):
        return float(value)
    try:
        tree = ast.parse(value.replace("^", "**"), mode="eval")
        out = float(_eval(tree.body))
    except (SyntaxError, ValueError, TypeError, ZeroDivisionError, OverflowError) as exc:
        raise ConfigurationError(f"{where}: cannot evaluate {value!r} ({exc})",
                                 field=where) from None
    if not math.isfinite(out):
        raise ConfigurationError(f"{where}: {value!r} is not finite", field=where)
    return out


def _eval(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return node.value
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        return _UNOPS[type(node.op)](_eval(node.operand))
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
        return _FUNCS[node.func.id](_eval(node.args[0]))
    raise ValueError(f"unsupported expression element {type(node).__name__}")


def _matrix(rows, where):
    return [[evaluate_number(v, f"{where}/{i}/{j}") for j, v in enumerate(r)]
            for i, r in enumerate(rows)]


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunConfig:
    name: str
    spec: SystemSpec
    dt: float
    t_past: float
    t_fwd: float
    seed: int
    n_seeds: int
    sections: dict
    reference: dict
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    def section(self, name):
        return self.sections.get(name, {})

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return RunConfig(**kw)


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


def validate_schema(doc):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        items = [{"pointer": _pointer(e.absolute_path), "message": e.message} for e in errors]
        first = items[0]
        raise ConfigurationError(
            f"config schema violation at {first['pointer']}: {first['message']}"
            + (f" (+{len(items) - 1} more)" if len(items) > 1 else ""),
            field=first["pointer"], errors=items)


def build_spec(system, name=""):
    h = system["h"]
    params = {}
    for k, v in h["params"].items():
        where = f"/system/h/params/{k}"
        params[k] = ([evaluate_number(x, f"{where}/{i}") for i, x in enumerate(v)]
                     if isinstance(v, list) else evaluate_number(v, where))
    try:
        out = OutputFunctionSpec(h["kind"], h["wiring"], params, h["monotonicity"])
        return SystemSpec(_matrix(system["A"], "/system/A"),
                          _matrix(system["sigma"], "/system/sigma"),
                          out, evaluate_number(system["L"], "/system/L"), name=name)
    except SGSDEError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"invalid system: {exc}", field="/system") from None


def parse_config(text, validate_h=True):
    """Parse and fully validate a JSON configuration document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed JSON: {exc}", field="/") from None
    validate_schema(doc)
    name = doc.get("name", "")
    spec = build_spec(doc["system"], name)
    if validate_h:
        estimate_lipschitz(spec)
        check_monotonicity(spec)

    grid = doc["grid"]
    dt = float(grid["dt"])
    lam = spectral_abscissa(spec.A)
    t_past = grid.get("t_past")
    if t_past is None:
        t_past = 2 * default_horizon(lam, dt) if lam < 0 else 1000 * dt
    t_fwd = grid.get("t_fwd", 0.0)
    for key, value in (("t_past", t_past), ("t_fwd", t_fwd)):
        try:
            grid_steps(value, dt, key)
        except GridError:
            raise GridError(f"grid.dt={dt!r} does not divide grid.{key}={value!r}",
                            field="/grid/dt") from None

    sections = {}
    for key, defaults in DEFAULTS.items():
        merged = dict(defaults)
        merged.update(doc.get(key, {}))
        sections[key] = merged
    for key, sec in (("simulate", "x0"), ("pullback", "x")):
        if sec in sections[key]:
            vec = [evaluate_number(v, f"/{key}/{sec}/{i}")
                   for i, v in enumerate(sections[key][sec])]
            if len(vec) != spec.d:
                raise ConfigurationError(f"{key}.{sec} must have {spec.d} entries",
                                         field=f"/{key}/{sec}")
            sections[key][sec] = vec
    reference = {}
    for k, v in doc.get("reference", {}).items():
        reference[k] = v if isinstance(v, bool) else evaluate_number(v, f"/reference/{k}")

    out_dir = doc.get("output", {}).get("dir", ".")
    parent = os.path.dirname(os.path.abspath(out_dir))
    if not os.path.isdir(parent):
        raise ConfigurationError(f"output directory parent {parent!r} does not exist",
                                 field="/output/dir")
    seeds = sections.pop("seeds")
    return RunConfig(name, spec, dt, float(t_past), float(t_fwd), int(seeds["base"]),
                     int(seeds["count"]), sections, reference, out_dir, doc)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc.strerror}",
                                 field="--config") from None
    return parse_config(text)


def preset_text(example_id):
    if example_id not in PRESETS:
        raise ConfigurationError(
            f"unknown example {example_id!r}; choose one of {sorted(PRESETS)}", field="example")
    return resources.files("sgsde.presets").joinpath(PRESETS[example_id]).read_text()


def load_preset(example_id):
    return parse_config(preset_text(example_id))


__all__ = ["SCHEMA", "RunConfig", "parse_config", "load_config", "load_preset",
           "preset_text", "evaluate_number", "PRESETS"]
