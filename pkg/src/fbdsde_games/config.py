"""Spec files: YAML schema, parsing with precise errors, and serialization.

A file holds one game.  Top-level keys::

    game: nonzero-sum | zero-sum     (optional, default nonzero-sum)
    horizon: 1.0                     (required)
    M: 0.5                           (required)
    info: w-filtration | full        (optional)
    terminal: {kappa0: 1.0, kappa1: 0.5}
    a0 .. a4, b0, c0 .. c3, d0       coefficients
    e11 .. e17, e21 .. e27           nonzero-sum weights
    l1 .. l4, r1, r2, l5, l6         zero-sum weights
    run: {depth: 8, paths: 10000, seed: 42, tol: 0.005}

A coefficient is a number or ``{kind: ..., data: ...}`` with ``kind`` one of
``constant``, ``piecewise-constant`` (data: list of ``[t, value]``) or
``polynomial`` (data: ascending powers).  Omitted coefficients are zero.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .errors import InvalidArgument, ParseError, SchemaError
from .model import (
    DYNAMIC_FIELDS,
    CoefficientFn,
    LqGameSpec,
    TerminalCondition,
    ZeroSumSpec,
    as_coefficient,
)

__all__ = [
    "RunConfig",
    "parse_config",
    "load_config",
    "serialize_spec",
    "config_hash",
    "builtin_names",
    "resolve_spec_path",
]

WEIGHT_FIELDS = tuple(f"e{i}{k}" for i in (1, 2) for k in range(1, 8))
ZS_FIELDS = ("l1", "l2", "l3", "l4", "r1", "r2", "l5", "l6")
RUN_DEFAULTS = {"depth": 8, "paths": 10000, "seed": 42, "tol": 5e-3}
_BUILTINS = {"specA": "specA.yaml", "specZ": "specZ.yaml"}
_COMMON = ("game", "horizon", "M", "info", "terminal", "run") + DYNAMIC_FIELDS


@dataclass(frozen=True)
class RunConfig:
    spec_path: str | None = None
    command: str | None = None
    depth: int = RUN_DEFAULTS["depth"]
    paths: int = RUN_DEFAULTS["paths"]
    seed: int = RUN_DEFAULTS["seed"]
    tol: float = RUN_DEFAULTS["tol"]
    out: str = "."
    threads: int = 1


def builtin_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def resolve_spec_path(name: str) -> Path:
    """Map a builtin instance name to its packaged file; other names are paths."""
    if name in _BUILTINS:
        return Path(str(resources.files("fbdsde_games") / "data" / _BUILTINS[name]))
    return Path(name)


def _number(field, value, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(field, f"expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise SchemaError(field, f"expected an integer, got {value!r}")
    return kind(value)


def _coefficient(field, value) -> CoefficientFn:
    if isinstance(value, dict):
        extra = set(value) - {"kind", "data"}
        if extra or "kind" not in value or "data" not in value:
            raise SchemaError(field, "coefficient mapping needs exactly the keys 'kind' and 'data'")
    elif isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(field, f"expected a number or {{kind, data}} mapping, got {value!r}")
    try:
        return as_coefficient(value)
    except (InvalidArgument, TypeError, ValueError) as exc:
        raise SchemaError(field, str(exc)) from None


def _run_section(raw) -> dict:
    if raw is None:
        return dict(RUN_DEFAULTS)
    if not isinstance(raw, dict):
        raise SchemaError("run", "expected a mapping")
    unknown = set(raw) - set(RUN_DEFAULTS)
    if unknown:
        raise SchemaError(f"run.{sorted(unknown)[0]}", "unknown key")
    out = dict(RUN_DEFAULTS)
    for key in ("depth", "paths", "seed"):
        if key in raw:
            out[key] = _number(f"run.{key}", raw[key], int)
    if "tol" in raw:
        out["tol"] = _number("run.tol", raw["tol"])
    if out["depth"] < 1 or out["paths"] < 1 or out["seed"] < 0 or out["tol"] < 0:
        raise SchemaError("run", "depth and paths must be positive, seed and tol nonnegative")
    return out


def parse_config(text: str, source: str | None = None):
    """Parse spec-file text into ``(RunConfig, spec)``.

    Raises
    ------
    ParseError
        Malformed YAML, with 1-based line and column.
    SchemaError
        Structurally invalid content; ``field`` names the offending key.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is not None:
            raise ParseError(problem, mark.line + 1, mark.column + 1) from None
        raise ParseError(problem) from None
    if not isinstance(raw, dict):
        raise SchemaError("<document>", "expected a mapping of fields")

    game = raw.get("game", "nonzero-sum")
    if game not in ("nonzero-sum", "zero-sum"):
        raise SchemaError("game", f"expected 'nonzero-sum' or 'zero-sum', got {game!r}")
    weight_keys = ZS_FIELDS if game == "zero-sum" else WEIGHT_FIELDS
    unknown = [k for k in raw if k not in _COMMON and k not in weight_keys]
    if unknown:
        raise SchemaError(str(unknown[0]), "unknown field")
    for required in ("horizon", "M"):
        if required not in raw:
            raise SchemaError(required, "missing required field")

    kwargs = {
        "horizon": _number("horizon", raw["horizon"]),
        "M": _number("M", raw["M"]),
        "info": raw.get("info", "w-filtration"),
    }
    if kwargs["info"] not in ("w-filtration", "full"):
        raise SchemaError("info", f"expected 'w-filtration' or 'full', got {kwargs['info']!r}")
    term = raw.get("terminal", {})
    if not isinstance(term, dict) or set(term) - {"kappa0", "kappa1"}:
        raise SchemaError("terminal", "expected a mapping with keys kappa0, kappa1")
    kwargs["terminal"] = TerminalCondition(
        _number("terminal.kappa0", term.get("kappa0", 0.0)),
        _number("terminal.kappa1", term.get("kappa1", 0.0)),
    )
    for name in DYNAMIC_FIELDS:
        kwargs[name] = _coefficient(name, raw.get(name, 0.0))

    if game == "zero-sum":
        for name in ("l1", "l2", "l3", "l4", "r1", "r2"):
            kwargs[name] = _coefficient(name, raw.get(name, 1.0 if name[0] == "r" else 0.0))
        for name in ("l5", "l6"):
            kwargs[name] = _number(name, raw.get(name, 0.0))
        spec = ZeroSumSpec(**kwargs)
    else:
        rows = []
        for i in (1, 2):
            row = []
            for k in range(1, 8):
                name = f"e{i}{k}"
                coef = _coefficient(name, raw.get(name, 0.0))
                if k in (5, 6) and not coef.is_constant:
                    raise SchemaError(name, "must be a constant")
                row.append(coef)
            rows.append(tuple(row))
        spec = LqGameSpec(e=tuple(rows), **kwargs)

    run = _run_section(raw.get("run"))
    return RunConfig(spec_path=source, **run), spec


def load_config(path_or_name: str):
    """Read a spec file (or builtin instance name) from disk."""
    path = resolve_spec_path(path_or_name)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError("spec", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path_or_name))


def _dump_coefficient(c: CoefficientFn):
    if c.kind == "constant":
        return c.data[0]
    if c.kind == "piecewise-constant":
        return {"kind": c.kind, "data": [[b, v] for b, v in c.data]}
    return {"kind": c.kind, "data": list(c.data)}


def _spec_mapping(spec, run: RunConfig | None = None) -> dict:
    out = {}
    zero_sum = isinstance(spec, ZeroSumSpec)
    out["game"] = "zero-sum" if zero_sum else "nonzero-sum"
    out["horizon"] = spec.horizon
    out["M"] = spec.M
    out["info"] = spec.info
    out["terminal"] = {"kappa0": spec.terminal.kappa0, "kappa1": spec.terminal.kappa1}
    for name in DYNAMIC_FIELDS:
        out[name] = _dump_coefficient(spec.coefficient(name))
    if zero_sum:
        for name in ("l1", "l2", "l3", "l4", "r1", "r2"):
            out[name] = _dump_coefficient(getattr(spec, name))
        out["l5"], out["l6"] = spec.l5, spec.l6
    else:
        for i in (1, 2):
            for k in range(1, 8):
                out[f"e{i}{k}"] = _dump_coefficient(spec.weight(i, k))
    if run is not None:
        out["run"] = {"depth": run.depth, "paths": run.paths, "seed": run.seed, "tol": run.tol}
    return out


def serialize_spec(spec, run: RunConfig | None = None) -> str:
    """YAML text that :func:`parse_config` maps back to an equal spec."""
    return yaml.safe_dump(_spec_mapping(spec, run), sort_keys=False, default_flow_style=None)


def config_hash(spec, run: RunConfig | None = None, **extra) -> str:
    payload = serialize_spec(spec, run)
    if run is not None:
        payload += repr(dataclasses.replace(run, spec_path=None, out=".", threads=1))
    payload += repr(sorted(extra.items()))
    return hashlib.sha256(payload.encode()).hexdigest()
