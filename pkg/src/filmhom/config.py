"""Run configuration: JSON file + ``--set`` overrides, validated by JSON Schema."""

import copy
import hashlib
import json

import jsonschema

from .errors import ConfigError

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_VEC2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_MAT32 = {"type": "array", "items": _NUM, "minItems": 6, "maxItems": 6}
_RANGE = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_DOMAIN = {"type": "array", "items": _RANGE, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_AFFINE = _obj({"const": _VEC3, "x1": _VEC3, "x2": _VEC3, "x3": _VEC3})

_LAW = {
    "type": "object",
    "required": ["family"],
    "properties": {
        "family": {"enum": ["HomogeneousQuadratic", "LaminateQuadratic", "CheckerboardPower",
                            "DoubleWell11", "RelaxedDoubleWell11", "MacroModulated"]},
        "a1": _NUM, "a2": _NUM, "theta": _NUM, "p": {"enum": [2, 4]}, "c": _NUM,
        "mollify": _NUM, "beta": _NUM, "m0": _NUM, "amp": _NUM,
        "base": {"$ref": "#/$defs/law"},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$defs": {"law": _LAW},
    **_obj(
        {
            "law": {"$ref": "#/$defs/law"},
            "seed": _INT,
            "workers": {"type": "integer", "minimum": 1},
            "out": {"type": "string"},
            "grid": _obj({"n_per_unit": {"type": "integer", "minimum": 2},
                          "n_thick": {"type": "integer", "minimum": 3},
                          "max_nodes": {"type": "integer", "minimum": 1}}),
            "optimizer": _obj({"grad_tol": {"type": "number", "exclusiveMinimum": 0},
                               "max_iters": {"type": "integer", "minimum": 1},
                               "memory": {"type": "integer", "minimum": 1},
                               "multistart": {"type": "integer", "minimum": 1}}),
            "loads": _obj({"f": _AFFINE, "g_plus": _AFFINE, "g_minus": _AFFINE,
                           "quadrature_n": {"type": "integer", "minimum": 2}}),
            "check": _obj({"sample_count": {"type": "integer", "minimum": 1}}),
            "whom": _obj({"x_alpha": _VEC2, "xi_bar": _MAT32, "T_max": {"type": "integer", "minimum": 1},
                          "rtol": {"type": "number", "exclusiveMinimum": 0}}),
            "table": _obj({"x_alpha": _VEC2, "base": _MAT32, "d1": _MAT32, "d2": _MAT32,
                           "s_range": _RANGE, "t_range": _RANGE, "n": {"type": "integer", "minimum": 2},
                           "T_max": {"type": "integer", "minimum": 1},
                           "rtol": {"type": "number", "exclusiveMinimum": 0}}),
            "membrane": _obj({"n_x": {"type": "integer", "minimum": 2}, "n_y": {"type": "integer", "minimum": 2},
                              "domain": _DOMAIN, "T_max": {"type": "integer", "minimum": 1},
                              "rtol": {"type": "number", "exclusiveMinimum": 0}}),
            "gamma": _obj({"eps_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                                    "maximum": 1}, "minItems": 1},
                           "n_x": {"type": "integer", "minimum": 1}, "n_y": {"type": "integer", "minimum": 1},
                           "nz_cap": {"type": "integer", "minimum": 2}}),
        },
        required=["law"],
    ),
}

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "out": "out",
    "grid": {"n_per_unit": 8, "n_thick": 3, "max_nodes": 500_000},
    "optimizer": {"grad_tol": 1e-8, "max_iters": 5000, "memory": 10, "multistart": 1},
    "loads": {"quadrature_n": 4},
    "check": {"sample_count": 100},
    "whom": {"x_alpha": [0.5, 0.5], "xi_bar": [1.0, 0.0, 0.0, 1.0, 0.0, 0.0], "T_max": 4, "rtol": 1e-3},
    "table": {"x_alpha": [0.5, 0.5], "base": [0.0] * 6, "d1": [1.0, 0, 0, 0, 0, 0], "d2": [0, 0, 0, 1.0, 0, 0],
              "s_range": [-1.0, 1.0], "t_range": [-1.0, 1.0], "n": 5, "T_max": 2, "rtol": 1e-3},
    "membrane": {"n_x": 8, "n_y": 8, "domain": [[0.0, 1.0], [0.0, 1.0]], "T_max": 1, "rtol": 1e-3},
    "gamma": {"eps_list": [0.5, 0.25, 0.125], "n_x": 16, "n_y": 16, "nz_cap": 64},
}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "law":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(config, assignment):
    """Apply ``a.b.c=value``; value is parsed as JSON, falling back to a string."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key!r}: {part!r} is not an object")
    node[parts[-1]] = value


def parse_config_text(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    return data


def validate(config):
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {where}: {exc.message}") from None


def load_config(path, overrides=()):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    data = parse_config_text(text)
    for assignment in overrides:
        apply_override(data, assignment)
    validate(data)
    config = _merge(DEFAULTS, data)
    validate(config)
    return config


def config_hash(config):
    """SHA-256 of the canonical config; the output directory is not part of it."""
    blob = json.dumps({k: v for k, v in config.items() if k != "out"}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
