"""Flat ``key = value`` run configuration with a strict per-command schema.

Grammar, one entry per line::

    # comment
    command = scan
    weight  = "linear rho=(1,)"
    grid    = "0:1:81"
    h       = 0.4, 0.283, 0.2
    seed    = 7

Values are Python literals (int, float, quoted string, tuple/list); anything
that is not a literal is taken as a bare string.  Boxes are written
``a:b x c:d`` and grids ``a:b:m x c:d:m``.
"""

from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

REQUIRED = object()


def _to_int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _to_float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _to_floats(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (float(v),)
    if isinstance(v, (list, tuple)):
        return tuple(_to_float(x) for x in v)
    raise TypeError("expected a number or a list of numbers")


def _to_str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _to_expr(v):
    """Expression text; bare numbers are accepted and kept as their text."""
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return repr(v)
    return _to_str(v)


def _to_rational(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = repr(v)
    v = _to_str(v)
    try:
        Fraction(v)
    except (ValueError, ZeroDivisionError):
        raise TypeError("expected a rational number such as 1/100 or 0.01") from None
    return v


def _to_strs(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (repr(v),)
    if isinstance(v, str):
        return tuple(t.strip() for t in v.split(",") if t.strip())
    if isinstance(v, (list, tuple)):
        return tuple(_to_expr(x) for x in v)
    raise TypeError("expected a string or a list of strings")


def _choice(*options):
    def conv(v):
        v = _to_str(v)
        if v not in options:
            raise TypeError(f"expected one of {', '.join(options)}")
        return v
    return conv


@dataclass(frozen=True)
class Key:
    convert: Callable[[Any], Any]
    default: Any = REQUIRED
    help: str = ""


COMMON = {
    "command": Key(_to_str),
    "seed": Key(_to_int, 0, "master seed"),
    "out": Key(_to_str, ".", "output directory"),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "identity": {"dim": Key(_to_int)},
    "bracket": {
        "weight": Key(_to_str), "box": Key(_to_str),
        "count": Key(_to_int, 200), "tol": Key(_to_float, 1e-9),
        # the convexified bound runs only when both are given
        "bound_h": Key(_to_rational, None), "bound_eps": Key(_to_rational, None),
        "bound_tol": Key(_to_float, 1e-6),
    },
    "scan": {
        "weight": Key(_to_str), "grid": Key(_to_str), "h": Key(_to_floats),
        "op": Key(_choice("fourth", "bilap", "both"), "fourth"),
        "norm": Key(_choice("l2", "h1"), "l2"),
        "support": Key(_choice("interior", "image"), "interior"),
        "tol": Key(_to_float, 1e-10), "max_iter": Key(_to_int, 300),
    },
    "compare": {
        "weight": Key(_to_str), "grid": Key(_to_str), "h": Key(_to_floats),
        "norm": Key(_choice("l2", "h1"), "l2"),
        "support": Key(_choice("interior", "image"), "interior"),
        "margin": Key(_to_float, 0.3),
        "tol": Key(_to_float, 1e-10), "max_iter": Key(_to_int, 300),
    },
    "cauchy": {
        "grid": Key(_to_str), "weight": Key(_to_str), "delta": Key(_to_float),
        "noise": Key(_to_floats), "u_true": Key(_to_expr), "gamma_faces": Key(_to_strs),
        "A": Key(_to_strs, ()), "q": Key(_to_expr, "0"),
        "data": Key(_choice("analytic", "discrete"), "analytic"),
        "trials": Key(_to_int, 5), "gamma": Key(_to_float, 1e6), "lambda": Key(_to_float, 1e-10),
    },
    "caccioppoli": {
        "grid": Key(_to_str), "r": Key(_to_float), "rho": Key(_to_float), "u_true": Key(_to_expr),
        "A": Key(_to_strs, ()), "q": Key(_to_expr, "0"), "tol": Key(_to_float, 1e-8),
    },
    "ucp": {
        "grid": Key(_to_str), "omega": Key(_to_str),
        "A": Key(_to_strs, ()), "q": Key(_to_expr, "0"),
    },
}

ALIASES = {"utrue": "u_true", "lam": "lambda", "max-iter": "max_iter"}


class ConfigError(ValueError):
    pass


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_text(text: str) -> dict[str, Any]:
    """Raw key/value pairs in file order; later duplicates are rejected."""
    out: dict[str, Any] = {}
    for num, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        key, sep, val = s.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {num}: expected key = value")
        key = ALIASES.get(key, key)
        if key in out:
            raise ConfigError(f"line {num}: duplicate key: {key}")
        out[key] = parse_value(val)
    return out


@dataclass
class RunConfig:
    command: str
    params: dict[str, Any]
    seed: int = 0
    out: str = "."
    provided: set[str] = field(default_factory=set)

    def to_text(self) -> str:
        """Canonical text; parsing it back gives an equal RunConfig."""
        lines = [f"command = {self.command!r}", f"seed = {self.seed!r}"]
        for key in sorted(self.params):
            if self.params[key] is None:
                continue
            lines.append(f"{key} = {self.params[key]!r}")
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def __getitem__(self, key: str):
        return self.params[key]


def validate(raw: dict[str, Any]) -> RunConfig:
    raw = {ALIASES.get(k, k): v for k, v in raw.items()}
    if "command" not in raw:
        raise ConfigError("missing key: command")
    command = raw["command"]
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command: {command}")
    schema = SCHEMAS[command]
    for key in raw:
        if key not in schema and key not in COMMON:
            raise ConfigError(f"unknown key: {key}")
    params = {}
    for key, spec in schema.items():
        if key in raw:
            try:
                params[key] = spec.convert(raw[key])
            except TypeError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        elif spec.default is REQUIRED:
            raise ConfigError(f"missing key: {key}")
        else:
            params[key] = spec.default
    common = {}
    for key in ("seed", "out"):
        spec = COMMON[key]
        try:
            common[key] = spec.convert(raw[key]) if key in raw else spec.default
        except TypeError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    if common["seed"] < 0 or common["seed"] >= 2 ** 64:
        raise ConfigError("bad value for seed: must fit in an unsigned 64-bit integer")
    return RunConfig(command, params, common["seed"], common["out"], set(raw) - {"command"})


def load(text: str, overrides: dict[str, Any] | None = None) -> RunConfig:
    raw = parse_text(text)
    for k, v in (overrides or {}).items():
        raw[ALIASES.get(k, k)] = v
    return validate(raw)


# -- field grammars ---------------------------------------------------------------


def parse_box(text: str) -> list[tuple[float, float]]:
    """``a:b x c:d`` (the separator ``x`` needs surrounding spaces)."""
    axes = []
    for part in text.split(" x "):
        bits = part.strip().split(":")
        if len(bits) != 2:
            raise ConfigError(f"bad box axis {part.strip()!r}, expected a:b")
        try:
            a, b = float(bits[0]), float(bits[1])
        except ValueError:
            raise ConfigError(f"bad box axis {part.strip()!r}") from None
        if not b > a:
            raise ConfigError(f"empty box axis {part.strip()!r}")
        axes.append((a, b))
    return axes


def parse_grid(text: str) -> tuple[list[tuple[float, float]], list[int]]:
    """``a:b:m x c:d:m``."""
    box, nodes = [], []
    for part in text.split(" x "):
        bits = part.strip().split(":")
        if len(bits) != 3:
            raise ConfigError(f"bad grid axis {part.strip()!r}, expected a:b:m")
        try:
            box.append((float(bits[0]), float(bits[1])))
            nodes.append(int(bits[2]))
        except ValueError:
            raise ConfigError(f"bad grid axis {part.strip()!r}") from None
    return box, nodes


def parse_faces(items, dim: int):
    """Faces written ``x1-`` (low end of axis 1) or ``x2+`` (high end of axis 2)."""
    from .cauchy import Face

    faces = []
    for it in items:
        it = it.strip()
        if len(it) < 3 or it[0] != "x" or it[-1] not in "+-" or not it[1:-1].isdigit():
            raise ConfigError(f"bad face {it!r}, expected e.g. x1- or x2+")
        axis = int(it[1:-1]) - 1
        if not 0 <= axis < dim:
            raise ConfigError(f"face {it!r} is outside dimension {dim}")
        faces.append(Face(axis, 0 if it[-1] == "-" else 1))
    return faces


__all__ = [
    "RunConfig", "ConfigError", "SCHEMAS", "load", "validate", "parse_text", "parse_value",
    "parse_box", "parse_grid", "parse_faces",
]
