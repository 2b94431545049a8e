"""Run configuration: YAML/JSON document, JSON-Schema validation, presets and problem building."""
from __future__ import annotations

import ast
import copy
import hashlib
import inspect
import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import problems
from .assembly import (CONVECTION, MASS, STIFFNESS, SeparableOperator, SeparableOperatorTerm,
                       SeparableSource, SourceTerm, weighted_mass, weighted_stiffness)
from .basis import Kernel, Mesh1D, PatchConfig, make_graded_mesh, make_uniform_mesh
from .errors import ConfigurationError
from .field import DimKind, DimensionSpec
from .inverse import InverseConfig
from .solver import DirichletSpec, SolverConfig
from .trainer import TrainConfig

PROBLEMS = ("poisson_case1", "poisson_case2", "helmholtz", "heat_spacetime", "heat_spt",
            "poisson_local_source", "operator_kl", "custom")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_interval = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

_PATCH_PROPS = {
    "s": {"type": "integer", "minimum": 0},
    "a": {"type": "number", "exclusiveMinimum": 0},
    "p": {"type": "integer", "minimum": 0},
    "kernel": {"enum": [k.value for k in Kernel]},
}

_EXPR = {"type": "string", "minLength": 1}

_DIM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "domain"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "kind": {"enum": [k.value for k in DimKind]},
        "domain": _interval,
        "n_elem": _pos_int,
        # [[lo, hi, n_elem], ...] contiguous pieces
        "graded": {"type": "array", "minItems": 1,
                   "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": _num}},
        # extra nodes forced into the mesh, e.g. where a source jumps
        "breakpoints": {"type": "array", "items": _num},
        "boundary": {"enum": ["both", "lower", "upper", "none"]},
        **_PATCH_PROPS,
    },
}

_KIND = {
    "oneOf": [
        {"enum": ["mass", "stiffness", "convection"]},
        {"type": "object", "additionalProperties": False, "required": ["weighted_mass"],
         "properties": {"weighted_mass": _EXPR}},
        {"type": "object", "additionalProperties": False, "required": ["weighted_stiffness"],
         "properties": {"weighted_stiffness": _EXPR}},
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "septensor run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {"enum": list(PROBLEMS)},
        "presets": {"type": "array", "items": {"type": "string"}},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output": {"type": "string"},
        # keyword arguments of the built-in problem
        "params": {"type": "object"},
        # patch and element count shared by every dim of a built-in problem
        "discretization": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_elem": _pos_int, **_PATCH_PROPS},
        },
        "dims": {"type": "array", "minItems": 1, "items": _DIM},
        "operator": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "additionalProperties": False, "required": ["kinds"],
                      "properties": {"coeff": _num, "kinds": {"type": "array", "items": _KIND}}},
        },
        "source": {
            "type": "array",
            "items": {"type": "object", "additionalProperties": False, "required": ["factors"],
                      "properties": {"coeff": _num,
                                     "factors": {"type": "array", "items": _EXPR}}},
        },
        # closed-form solution over the dim names, used for errors.csv
        "exact": _EXPR,
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {"max_modes": _pos_int, "max_subspace_iters": _pos_int,
                           "iter_tol": {"type": "number", "exclusiveMinimum": 0},
                           "mode_tol": {"type": "number", "exclusiveMinimum": 0}},
        },
        "errors": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_points": _pos_int, "integral": {"type": "boolean"}},
        },
        "trainer": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "data": {"type": "string"},
                "scheme": {"enum": ["boosting", "all_at_once"]},
                "modes": {"type": "integer", "minimum": 0},
                "epochs_max": _pos_int,
                "batch_size": _pos_int,
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "beta1": _num, "beta2": _num, "eps": _num,
                "early_stop_patience": _pos_int,
                "val_fraction": _num,
                "loss_tol": _num,
            },
        },
        "inverse": {
            "type": "object", "additionalProperties": False,
            "required": ["free_dims"],
            "properties": {
                "free_dims": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                "box": {"type": "object", "additionalProperties": _interval},
                "field": {"type": "string"},
                "target": {"type": "string"},
                # synthetic target drawn from the field itself at these parameters
                "truth": {"type": "object", "additionalProperties": _num},
                "n_points": _pos_int,
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "max_steps": {"type": "integer", "minimum": 0},
                "grad_tol": {"type": "number", "exclusiveMinimum": 0},
                "n_restarts": _pos_int,
            },
        },
        "study": {
            "type": "object", "additionalProperties": False,
            "required": ["elems", "sp"],
            "properties": {
                "elems": {"type": "array", "minItems": 1, "items": _pos_int},
                "sp": {"type": "array", "minItems": 1,
                       "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                 "items": {"type": "integer", "minimum": 0}}},
                "repeats": _pos_int,
                "n_points": _pos_int,
            },
        },
        "oracle": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 3},
                "n_steps": _pos_int,
                "n_snapshots": _pos_int,
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "k": {"type": "array", "minItems": 1, "items": _num},
                "P": {"type": "array", "minItems": 1, "items": _num},
            },
        },
    },
}

# Named defaults, applied under the user's own values in list order.
PRESETS = {
    "basis_defaults": {"discretization": {"a": 20.0}},
    "training_defaults": {
        "trainer": {"scheme": "all_at_once", "modes": 60, "epochs_max": 100, "batch_size": 128,
                    "learning_rate": 1e-4, "early_stop_patience": 10, "val_fraction": 0.1},
        "discretization": {"n_elem": 40, "s": 4, "a": 20.0, "p": 1},
    },
    "inverse_defaults": {"inverse": {"free_dims": ["k", "P"], "learning_rate": 0.1,
                                     "max_steps": 1000, "n_restarts": 8}},
    "heat_dataset": {"oracle": {"n": 33, "n_steps": 50, "n_snapshots": 10, "t_end": 0.04,
                                "k": [1.0, 1.75, 2.5, 3.25, 4.0],
                                "P": [100.0, 125.0, 150.0, 175.0, 200.0]}},
}



def _drop_required(node):
    if isinstance(node, dict):
        return {k: _drop_required(v) for k, v in node.items() if k != "required"}
    if isinstance(node, list):
        return [_drop_required(v) for v in node]
    return node


_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)
# before presets are merged, required fields may still come from a preset
_LOOSE = jsonschema.Draft202012Validator(_drop_required(SCHEMA))


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check(doc, validator=_VALIDATOR) -> None:
    errs = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigurationError(f"config error at {path}: {e.message}")


def validate(doc) -> dict:
    """Schema-check ``doc`` and expand its presets; returns a new dict."""
    _check(doc, _LOOSE)
    if "problem" not in doc:
        _check(doc)
    merged = {}
    for name in doc.get("presets", []):
        if name not in PRESETS:
            raise ConfigurationError(f"config error at presets: unknown preset {name!r}")
        merged = _merge(merged, PRESETS[name])
    merged = _merge(merged, doc)
    _check(merged)
    if merged["problem"] == "custom":
        if "dims" not in merged:
            raise ConfigurationError("config error at dims: required for custom problems")
    elif "dims" in merged or "operator" in merged or "source" in merged or "exact" in merged:
        raise ConfigurationError("config error at <root>: dims/operator/source/exact are "
                                 "only accepted for custom problems")
    return merged


def load(path) -> dict:
    """Read and validate a YAML or JSON config file.

    Relative file references inside the document resolve against its directory.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config {path} must be a mapping at the top level")
    cfg = validate(doc)
    base = path.resolve().parent
    for section, key in (("trainer", "data"), ("inverse", "field"), ("inverse", "target")):
        val = cfg.get(section, {}).get(key)
        if val is not None and not Path(val).is_absolute():
            cfg[section][key] = str(base / val)
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# expressions

_FUNCS = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh",
    "arctan", "minimum", "maximum", "heaviside", "where")}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Compare,
          ast.Lt, ast.LtE, ast.Gt, ast.GtE)


def compile_expr(src: str, variables):
    """Compile an arithmetic expression over ``variables`` into a numpy function.

    Only numbers, the listed variables, pi, e, + - * / ** comparisons and a
    fixed set of numpy functions are allowed.
    """
    variables = tuple(variables)
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"bad expression {src!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigurationError(f"expression {src!r}: {type(node).__name__} not allowed")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                               and node.func.id in _FUNCS):
            raise ConfigurationError(f"expression {src!r}: unknown function")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS \
                and node.id not in variables:
            raise ConfigurationError(f"expression {src!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigurationError(f"expression {src!r}: only numeric constants allowed")
    code = compile(tree, "<expr>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}

    def fn(*args):
        arrs = [np.asarray(a, dtype=np.float64) for a in args]
        val = eval(code, env, dict(zip(variables, arrs)))
        return np.broadcast_to(np.asarray(val, dtype=np.float64), np.broadcast(*arrs).shape).copy()

    fn.__name__ = f"expr[{src}]"
    return fn


def _const(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _const(node.operand)
        if v is not None:
            return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Name) and node.id in _CONSTS:
        return _CONSTS[node.id]
    return None


def _shift(node, var):
    """c when ``node`` is ``var - c`` / ``var + c`` / ``var``, else None."""
    if isinstance(node, ast.Name) and node.id == var:
        return 0.0
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Sub, ast.Add)) \
            and isinstance(node.left, ast.Name) and node.left.id == var:
        c = _const(node.right)
        if c is not None:
            return c if isinstance(node.op, ast.Sub) else -c
    return None


def expr_breakpoints(src: str, var: str = "x") -> list:
    """Locations where ``src`` jumps: comparisons of ``var`` with a constant and
    ``heaviside(var - c, ...)`` factors."""
    out = []
    for node in ast.walk(ast.parse(src, mode="eval")):
        if isinstance(node, ast.Compare) and len(node.comparators) == 1:
            a, b = node.left, node.comparators[0]
            for lhs, rhs in ((a, b), (b, a)):
                c0, sh = _const(rhs), _shift(lhs, var)
                if c0 is not None and sh is not None:
                    out.append(c0 + sh)
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id == "heaviside" and node.args:
            sh = _shift(node.args[0], var)
            if sh is not None:
                out.append(sh)
    return sorted(set(out))


# ---------------------------------------------------------------------------
# problem construction


def solver_config(cfg: dict, base: SolverConfig | None = None) -> SolverConfig:
    base = base or SolverConfig()
    over = dict(cfg.get("solver", {}))
    return SolverConfig(**{**base.__dict__, **over, "seed": int(cfg.get("seed", 0))})


def train_config(cfg: dict) -> TrainConfig:
    tr = {k: v for k, v in cfg.get("trainer", {}).items() if k != "data"}
    return TrainConfig(**tr, seed=int(cfg.get("seed", 0)))


def inverse_config(cfg: dict) -> InverseConfig:
    inv = cfg["inverse"]
    keep = ("learning_rate", "max_steps", "grad_tol", "n_restarts")
    box = {k: tuple(v) for k, v in inv.get("box", {}).items()}
    return InverseConfig(tuple(inv["free_dims"]), box, seed=int(cfg.get("seed", 0)),
                         **{k: inv[k] for k in keep if k in inv})


def _patch(spec: dict, default: PatchConfig | None = None) -> PatchConfig:
    base = default or PatchConfig()
    vals = {k: spec.get(k, getattr(base, k)) for k in ("s", "a", "p", "kernel")}
    return PatchConfig(**vals)


def _mesh(d: dict):
    lo, hi = d["domain"]
    if "graded" in d:
        mesh = make_graded_mesh([((a, b), int(n)) for a, b, n in d["graded"]])
        if not (np.isclose(mesh.lower, lo) and np.isclose(mesh.upper, hi)):
            raise ConfigurationError(f"graded mesh of {d['name']!r} does not span its domain")
    else:
        mesh = make_uniform_mesh(lo, hi, d.get("n_elem", 16))
    extra = [b for b in d.get("breakpoints", []) if lo < b < hi]
    if extra:
        mesh = Mesh1D(np.union1d(mesh.nodes, extra))
    return mesh


def _kind(spec, names):
    if isinstance(spec, str):
        return {"mass": MASS, "stiffness": STIFFNESS, "convection": CONVECTION}[spec]
    (key, expr), = spec.items()
    w = compile_expr(expr, ("x",))
    return weighted_mass(w) if key == "weighted_mass" else weighted_stiffness(w)


def build_dims(cfg: dict) -> tuple:
    """Dimensions declared under ``dims``; ``discretization`` fills unset fields.

    Jumps found in the source factors of a dim become mesh nodes so that each
    element integrates a smooth integrand.
    """
    if "dims" not in cfg:
        raise ConfigurationError("config error at dims: this command needs declared dims")
    disc = cfg.get("discretization", {})
    jumps = [[] for _ in cfg["dims"]]
    for t in cfg.get("source", []):
        for i, e in enumerate(t["factors"][:len(jumps)]):
            jumps[i] += expr_breakpoints(e)
    dims = []
    for d, extra in zip(cfg["dims"], jumps):
        spec = {**disc, **d}
        spec["breakpoints"] = list(d.get("breakpoints", [])) + extra
        dims.append(DimensionSpec(d["name"], _mesh(spec), _patch(spec), d.get("kind", "space")))
    return tuple(dims)


def _custom(cfg: dict) -> problems.Problem:
    if "operator" not in cfg:
        raise ConfigurationError("config error at operator: required to solve a custom problem")
    dims = build_dims(cfg)
    names = [d.name for d in dims]
    D = len(dims)
    terms = []
    for i, t in enumerate(cfg["operator"]):
        if len(t["kinds"]) != D:
            raise ConfigurationError(f"config error at operator/{i}/kinds: need {D} entries")
        terms.append(SeparableOperatorTerm(t.get("coeff", 1.0), [_kind(k, names) for k in t["kinds"]]))
    src = []
    for i, t in enumerate(cfg.get("source", [])):
        if len(t["factors"]) != D:
            raise ConfigurationError(f"config error at source/{i}/factors: need {D} entries")
        src.append(SourceTerm([compile_expr(e, ("x",)) for e in t["factors"]], t.get("coeff", 1.0)))
    # space faces clamped, zero initial state in time, parameters free
    default = {"space": "both", "time": "lower", "param": "none"}
    which = {d["name"]: d.get("boundary", default[d.get("kind", "space")]) for d in cfg["dims"]}
    bc = DirichletSpec.boundary(dims, which)
    exact = None
    if "exact" in cfg:
        ex = compile_expr(cfg["exact"], names)
        exact = lambda P: ex(*[P[:, i] for i in range(D)])
    return problems.Problem("custom", dims, SeparableOperator(terms), SeparableSource(src), bc,
                            SolverConfig(), exact)


def build_problem(cfg: dict):
    """(Problem, extra) from a validated config; ``extra`` is the KL expansion for operator_kl."""
    name = cfg["problem"]
    if name == "custom":
        prob, extra = _custom(cfg), None
    else:
        builder = problems.operator_kl if name == "operator_kl" else problems.BUILDERS[name]
        sig = inspect.signature(builder)
        kwargs = dict(cfg.get("params", {}))
        for key in kwargs:
            if key not in sig.parameters or key in ("patch", "max_modes"):
                raise ConfigurationError(f"config error at params/{key}: not a parameter of {name}")
        disc = cfg.get("discretization", {})
        if "n_elem" in disc:
            if "n_elem" not in sig.parameters:
                raise ConfigurationError(f"config error at discretization/n_elem: {name} uses a "
                                         f"graded mesh, set params n_fine/n_coarse instead")
            kwargs["n_elem"] = disc["n_elem"]
        if any(k in disc for k in _PATCH_PROPS):
            default = problems.DEFAULT_PATCH.get(name, PatchConfig())
            kwargs["patch"] = _patch(disc, default)
        if "zeta_range" in kwargs:
            kwargs["zeta_range"] = tuple(kwargs["zeta_range"])
        try:
            out = builder(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"config error at params: {exc}") from None
        prob, extra = (out if name == "operator_kl" else (out, None))
    prob.solver = solver_config(cfg, prob.solver)
    return prob, extra
