"""Exact polynomial symbols in the phase-space variables (x_1..x_n, xi_1..xi_n).

A :class:`PolySymbol` is a sparse map from exponent vectors of length ``2n`` to
:class:`fractions.Fraction` coefficients.  The first ``n`` slots are the
x-exponents, the last ``n`` the xi-exponents.  Zero coefficients are never
stored, so equality of canonical term maps is equality of polynomials and
``is_zero`` is an exact identity test.

Example:
    >>> a = PolySymbol.xi(2, 0) ** 4 + PolySymbol.xi(2, 1) ** 4
    >>> print(a.dumps())
    1 * xi2^4
    1 * xi1^4
"""

from __future__ import annotations

import ast
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

MAX_EXPONENT = 255

Exponent = tuple[int, ...]
Scalar = Union[int, Fraction]


def _as_fraction(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    if isinstance(c, float):
        # decimal reading keeps "0.1" as 1/10
        return Fraction(repr(c))
    raise TypeError(f"coefficient must be rational, got {type(c).__name__}")


class PolySymbol:
    """Immutable multivariate polynomial with rational coefficients."""

    __slots__ = ("_dim", "_terms", "_hash")

    def __init__(self, dim: int, terms: Mapping[Sequence[int], Scalar] | None = None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        clean: dict[Exponent, Fraction] = {}
        for key, coeff in (terms or {}).items():
            key = tuple(int(e) for e in key)
            if len(key) != 2 * dim:
                raise ValueError(f"exponent {key} has length {len(key)}, expected {2 * dim}")
            if any(e < 0 or e > MAX_EXPONENT for e in key):
                raise ValueError(f"exponent {key} outside [0, {MAX_EXPONENT}]")
            c = _as_fraction(coeff)
            if c:
                clean[key] = clean.get(key, Fraction(0)) + c
        self._dim = dim
        self._terms = {k: v for k, v in clean.items() if v}
        self._hash = None

    @classmethod
    def _raw(cls, dim: int, terms: dict[Exponent, Fraction]) -> "PolySymbol":
        # trusted constructor: keys valid, no zero coefficients
        obj = cls.__new__(cls)
        obj._dim = dim
        obj._terms = terms
        obj._hash = None
        return obj

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, dim: int) -> "PolySymbol":
        return cls._raw(dim, {})

    @classmethod
    def constant(cls, dim: int, c: Scalar) -> "PolySymbol":
        return cls(dim, {(0,) * (2 * dim): c})

    @classmethod
    def x(cls, dim: int, j: int) -> "PolySymbol":
        """The coordinate x_{j+1} (0-based axis index)."""
        _check_axis(dim, j)
        key = [0] * (2 * dim)
        key[j] = 1
        return cls._raw(dim, {tuple(key): Fraction(1)})

    @classmethod
    def xi(cls, dim: int, j: int) -> "PolySymbol":
        """The dual coordinate xi_{j+1} (0-based axis index)."""
        _check_axis(dim, j)
        key = [0] * (2 * dim)
        key[dim + j] = 1
        return cls._raw(dim, {tuple(key): Fraction(1)})

    # -- basic protocol ----------------------------------------------------
    @property
    def dim(self) -> int:
        return self._dim

    @property
    def terms(self) -> dict[Exponent, Fraction]:
        return dict(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, PolySymbol):
            return self._dim == other._dim and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == PolySymbol.constant(self._dim, other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self._dim, frozenset(self._terms.items())))
        return self._hash

    def __repr__(self) -> str:
        body = " + ".join(_format_term(self._dim, k, c) for k, c in self.sorted_terms())
        return f"PolySymbol(dim={self._dim}, {body or '0'})"

    def sorted_terms(self) -> list[tuple[Exponent, Fraction]]:
        return sorted(self._terms.items())

    def degree(self) -> int:
        return max((sum(k) for k in self._terms), default=-1)

    def xi_degree(self) -> int:
        n = self._dim
        return max((sum(k[n:]) for k in self._terms), default=-1)

    def depends_on_xi(self) -> bool:
        n = self._dim
        return any(any(k[n:]) for k in self._terms)

    # -- arithmetic --------------------------------------------------------
    def _coerce(self, other) -> "PolySymbol":
        if isinstance(other, PolySymbol):
            if other._dim != self._dim:
                raise ValueError(f"dimension mismatch: {self._dim} vs {other._dim}")
            return other
        return PolySymbol.constant(self._dim, _as_fraction(other))

    def __add__(self, other):
        return add(self, self._coerce(other))

    __radd__ = __add__

    def __neg__(self):
        return PolySymbol._raw(self._dim, {k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return add(self, -self._coerce(other))

    def __rsub__(self, other):
        return add(self._coerce(other), -self)

    def __mul__(self, other):
        if isinstance(other, PolySymbol):
            return mul(self, other)
        c = _as_fraction(other)
        if not c:
            return PolySymbol.zero(self._dim)
        return PolySymbol._raw(self._dim, {k: v * c for k, v in self._terms.items()})

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only non-negative integer powers")
        result = PolySymbol.constant(self._dim, 1)
        base = self
        while k:
            if k & 1:
                result = mul(result, base)
            k >>= 1
            if k:
                base = mul(base, base)
        return result

    # -- conveniences mirroring the module functions -------------------------
    def diff(self, which: str, j: int) -> "PolySymbol":
        return differentiate(self, which, j)

    def __call__(self, point: Sequence[float]) -> float:
        return evaluate(self, point)

    def is_zero(self) -> bool:
        return is_zero(self)

    def dumps(self) -> str:
        return dumps(self)

    def compile(self) -> "CompiledPoly":
        return CompiledPoly(self)


def _check_axis(dim: int, j: int) -> None:
    if not 0 <= j < dim:
        raise IndexError(f"axis {j} out of range for dim {dim}")


def _merge_dims(p: PolySymbol, q: PolySymbol) -> int:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    return p.dim


def add(p: PolySymbol, q: PolySymbol) -> PolySymbol:
    """Coefficient-wise sum."""
    n = _merge_dims(p, q)
    out = dict(p._terms)
    for k, c in q._terms.items():
        s = out.get(k, 0) + c
        if s:
            out[k] = s
        else:
            out.pop(k, None)
    return PolySymbol._raw(n, out)


def mul(p: PolySymbol, q: PolySymbol) -> PolySymbol:
    """Distributive product of two symbols."""
    n = _merge_dims(p, q)
    if not p._terms or not q._terms:
        return PolySymbol.zero(n)
    out: dict[Exponent, Fraction] = {}
    for kp, cp in p._terms.items():
        for kq, cq in q._terms.items():
            k = tuple(a + b for a, b in zip(kp, kq))
            out[k] = out.get(k, 0) + cp * cq
    if any(e > MAX_EXPONENT for k in out for e in k):
        raise OverflowError(f"exponent exceeds cap {MAX_EXPONENT}")
    return PolySymbol._raw(n, {k: c for k, c in out.items() if c})


def differentiate(p: PolySymbol, which: str, j: int) -> PolySymbol:
    """Formal partial derivative in ``x_j`` (``which='x'``) or ``xi_j`` (``which='xi'``).

    ``j`` is a 0-based axis index.
    """
    n = p.dim
    _check_axis(n, j)
    if which == "x":
        slot = j
    elif which in ("xi", "ξ"):
        slot = n + j
    else:
        raise ValueError(f"which must be 'x' or 'xi', got {which!r}")
    out: dict[Exponent, Fraction] = {}
    for k, c in p._terms.items():
        e = k[slot]
        if e:
            kk = list(k)
            kk[slot] = e - 1
            out[tuple(kk)] = c * e
    return PolySymbol._raw(n, out)


def gradient_x(p: PolySymbol) -> list[PolySymbol]:
    return [differentiate(p, "x", j) for j in range(p.dim)]


def gradient_xi(p: PolySymbol) -> list[PolySymbol]:
    return [differentiate(p, "xi", j) for j in range(p.dim)]


def evaluate(p: PolySymbol, point: Sequence[float]) -> float:
    """Evaluate at a point ``(x_1..x_n, xi_1..xi_n)`` in floating point."""
    if len(point) != 2 * p.dim:
        raise ValueError(f"point has length {len(point)}, expected {2 * p.dim}")
    return float(CompiledPoly(p)(np.asarray(point, dtype=float)))


def is_zero(p: PolySymbol) -> bool:
    return not p._terms


def substitute_scaled_xi(p: PolySymbol, s: PolySymbol) -> PolySymbol:
    """Replace every ``xi_j`` by ``s * xi_j`` where ``s`` depends on x only."""
    n = _merge_dims(p, s)
    if s.depends_on_xi():
        raise ValueError("scaling factor must not depend on xi")
    powers = {0: PolySymbol.constant(n, 1)}
    out = PolySymbol.zero(n)
    for k, c in p._terms.items():
        deg = sum(k[n:])
        if deg not in powers:
            powers[deg] = s ** deg
        out = add(out, mul(PolySymbol._raw(n, {k: c}), powers[deg]))
    return out


def compose_weight(phi: PolySymbol, c: Scalar) -> PolySymbol:
    """Return ``phi + c * phi**2`` (the quadratic convexification of a weight)."""
    if phi.depends_on_xi():
        raise ValueError("weight must not depend on xi")
    return phi + mul(phi, phi) * _as_fraction(c)


# -- serialization ---------------------------------------------------------


def _var_names(dim: int) -> list[str]:
    return [f"x{j + 1}" for j in range(dim)] + [f"xi{j + 1}" for j in range(dim)]


def _format_term(dim: int, key: Exponent, coeff: Fraction) -> str:
    factors = [f"{name}^{e}" for name, e in zip(_var_names(dim), key) if e]
    return " * ".join([str(coeff)] + factors)


def dumps(p: PolySymbol) -> str:
    """One term per line, ``coeff * x1^e1 * ... * xin^fn``, in lexicographic exponent order.

    The zero polynomial serializes to ``0``.
    """
    if not p._terms:
        return "0"
    return "\n".join(_format_term(p.dim, k, c) for k, c in p.sorted_terms())


_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Pow, ast.Div)


def parse(text: str, dim: int) -> PolySymbol:
    """Parse polynomial text in ``x1..xn, xi1..xin`` with rational coefficients.

    Accepts ``+ - * / ^ **`` and parentheses; newlines are read as ``+``, so
    :func:`dumps` output round-trips.  Division is allowed only by constants.
    """
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    src = " + ".join(f"({ln})" for ln in lines) or "0"
    src = src.replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse polynomial {text!r}: {exc.msg}") from None
    names = {name: i for i, name in enumerate(_var_names(dim))}

    def walk(node) -> PolySymbol:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return PolySymbol.constant(dim, _as_fraction(node.value))
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ValueError(f"unknown variable {node.id!r} (dim={dim})")
            key = [0] * (2 * dim)
            key[names[node.id]] = 1
            return PolySymbol._raw(dim, {tuple(key): Fraction(1)})
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = walk(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            left, right = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
            if isinstance(node.op, ast.Div):
                c = _constant_value(right)
                if c is None or c == 0:
                    raise ValueError("division only by non-zero constants")
                return left * (1 / c)
            e = _constant_value(right)
            if e is None or e.denominator != 1 or e < 0:
                raise ValueError("exponents must be non-negative integer constants")
            return left ** int(e)
        raise ValueError(f"unsupported syntax in polynomial: {ast.dump(node)}")

    return walk(tree)


def _constant_value(p: PolySymbol) -> Fraction | None:
    if not p._terms:
        return Fraction(0)
    if len(p._terms) == 1:
        (k, c), = p._terms.items()
        if not any(k):
            return c
    return None


# -- floating-point evaluation ---------------------------------------------


class CompiledPoly:
    """Vectorised float evaluator for a fixed :class:`PolySymbol`.

    Call with an array whose leading axis has length ``2n``; trailing axes are
    broadcast.  Terms are grouped by their exponent on the first variable and
    accumulated Horner-fashion in that variable.
    """

    def __init__(self, p: PolySymbol):
        self.dim = p.dim
        keys = sorted(p._terms)
        self._exps = np.array(keys, dtype=np.int64).reshape(len(keys), 2 * p.dim)
        self._coeffs = np.array([float(p._terms[k]) for k in keys], dtype=float)
        self._maxexp = self._exps.max(axis=0) if len(keys) else np.zeros(2 * p.dim, dtype=np.int64)

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if pts.shape[0] != 2 * self.dim:
            raise ValueError(f"leading axis must be {2 * self.dim}, got {pts.shape[0]}")
        shape = pts.shape[1:]
        if not len(self._coeffs):
            return np.zeros(shape)
        tables = []
        for v in range(2 * self.dim):
            emax = int(self._maxexp[v])
            tab = np.empty((emax + 1,) + shape)
            tab[0] = 1.0
            for e in range(1, emax + 1):
                tab[e] = tab[e - 1] * pts[v]
            tables.append(tab)
        # Horner in the first variable over groups sharing the rest of the monomial
        acc_by_e0: dict[int, np.ndarray] = {}
        for coeff, exps in zip(self._coeffs, self._exps):
            rest = np.full(shape, coeff)
            for v in range(1, 2 * self.dim):
                if exps[v]:
                    rest = rest * tables[v][exps[v]]
            e0 = int(exps[0])
            acc_by_e0[e0] = acc_by_e0[e0] + rest if e0 in acc_by_e0 else rest
        out = np.zeros(shape)
        for e in range(max(acc_by_e0), -1, -1):
            out = out * pts[0]
            if e in acc_by_e0:
                out = out + acc_by_e0[e]
        return out


def x_only_values(p: PolySymbol, coords: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate an x-only symbol at grid coordinates (xi slots set to zero)."""
    if p.depends_on_xi():
        raise ValueError("symbol depends on xi")
    coords = [np.asarray(c, dtype=float) for c in coords]
    shape = np.broadcast(*coords).shape
    pts = np.zeros((2 * p.dim,) + shape)
    for j, c in enumerate(coords):
        pts[j] = c
    return CompiledPoly(p)(pts)


def from_terms(dim: int, items: Iterable[tuple[Sequence[int], Scalar]]) -> PolySymbol:
    out: dict[Exponent, Fraction] = {}
    for k, c in items:
        k = tuple(k)
        out[k] = out.get(k, 0) + _as_fraction(c)
    return PolySymbol(dim, out)


def max_abs_coefficient(p: PolySymbol) -> Fraction:
    return max((abs(c) for c in p._terms.values()), default=Fraction(0))


def coefficient_bits(p: PolySymbol) -> int:
    """Largest numerator/denominator bit length; a cheap growth diagnostic."""
    return max((max(c.numerator.bit_length(), c.denominator.bit_length())
                for c in p._terms.values()), default=0)


__all__ = [
    "MAX_EXPONENT", "PolySymbol", "CompiledPoly", "add", "mul", "differentiate",
    "gradient_x", "gradient_xi", "evaluate", "is_zero", "substitute_scaled_xi",
    "compose_weight", "dumps", "parse", "x_only_values", "from_terms",
    "max_abs_coefficient", "coefficient_bits",
]
