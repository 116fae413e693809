"""Carleman weight functions and their exact calculus.

Weights are x-only :class:`~ucplab.polysym.PolySymbol` objects tagged with the
family they came from.  Gradient and Hessian are computed symbolically once
and cached.
"""

from __future__ import annotations

import itertools
import re
import shlex
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .polysym import CompiledPoly, PolySymbol, _as_fraction, compose_weight, differentiate, parse

LINEAR = "linear"
PARABOLOID = "parab"
POLY = "poly"


@dataclass(frozen=True)
class Weight:
    """A phase function phi(x) on R^n.

    ``kind`` is one of ``"linear"``, ``"parab"`` or ``"poly"``; ``params``
    records the constructor arguments so the weight can be re-serialized.
    Convexified weights are ``"poly"`` with ``base`` pointing at the original
    and ``params`` holding ``h`` and ``eps``.
    """

    dim: int
    kind: str
    phi: PolySymbol
    params: tuple = ()
    base: "Weight | None" = field(default=None, compare=False)

    def __post_init__(self):
        if self.phi.dim != self.dim:
            raise ValueError("weight polynomial has the wrong dimension")
        if self.phi.depends_on_xi():
            raise ValueError("weight must be a function of x only")

    @cached_property
    def gradient(self) -> tuple[PolySymbol, ...]:
        return tuple(differentiate(self.phi, "x", j) for j in range(self.dim))

    @cached_property
    def hessian(self) -> tuple[tuple[PolySymbol, ...], ...]:
        g = self.gradient
        rows = []
        for j in range(self.dim):
            rows.append(tuple(differentiate(g[j], "x", k) if k >= j else None for k in range(self.dim)))
        # fill the lower triangle from the upper one so the matrix is exactly symmetric
        return tuple(tuple(rows[j][k] if k >= j else rows[k][j] for k in range(self.dim))
                     for j in range(self.dim))

    @cached_property
    def _compiled(self) -> CompiledPoly:
        return CompiledPoly(self.phi)

    def values(self, coords: Sequence[np.ndarray]) -> np.ndarray:
        """Evaluate phi at points given as a sequence of n coordinate arrays."""
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*coords).shape
        pts = np.zeros((2 * self.dim,) + shape)
        for j, c in enumerate(coords):
            pts[j] = c
        return self._compiled(pts)

    def gradient_values(self, coords: Sequence[np.ndarray]) -> np.ndarray:
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast(*coords).shape
        pts = np.zeros((2 * self.dim,) + shape)
        for j, c in enumerate(coords):
            pts[j] = c
        return np.stack([CompiledPoly(g)(pts) for g in self.gradient])

    def is_constant(self) -> bool:
        return all(g.is_zero() for g in self.gradient)

    def describe(self) -> str:
        """Weight-spec text that :func:`parse_weight` reads back."""
        if self.base is not None:
            h, eps = self.params
            return f"{self.base.describe()} convexify h={h} eps={eps}"
        if self.kind == LINEAR:
            return "linear rho=(" + ",".join(str(r) for r in self.params) + ")"
        if self.kind == PARABOLOID:
            sign, c = self.params
            return f"parab sign={'+' if sign > 0 else '-'} c={c}"
        text = " + ".join(_term_text(self.dim, k, c) for k, c in self.phi.sorted_terms()) or "0"
        return f'poly "{text}"'


def _term_text(dim: int, key, c: Fraction) -> str:
    names = [f"x{j + 1}" for j in range(dim)]
    factors = [f"{nm}^{e}" for nm, e in zip(names, key[:dim]) if e]
    return "*".join([f"({c})"] + factors)


def linear(rho: Sequence) -> Weight:
    """phi(x) = rho . x with a non-zero rational direction."""
    rho = tuple(_as_fraction(r) for r in rho)
    n = len(rho)
    if n < 1 or not any(rho):
        raise ValueError("linear weight needs a non-zero direction")
    phi = PolySymbol.zero(n)
    for j, r in enumerate(rho):
        phi = phi + PolySymbol.x(n, j) * r
    return Weight(n, LINEAR, phi, rho)


def paraboloid(dim: int, sign: int, c) -> Weight:
    """phi(x) = sign*x_n + |x'|^2 - sign*c^2, the bent weight used across hypersurfaces."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    c = _as_fraction(c)
    phi = PolySymbol.x(dim, dim - 1) * sign - sign * c * c
    for j in range(dim - 1):
        phi = phi + PolySymbol.x(dim, j) ** 2
    return Weight(dim, PARABOLOID, phi, (sign, c))


def general(phi: PolySymbol) -> Weight:
    return Weight(phi.dim, POLY, phi)


def bent(phi0: PolySymbol, bend=1, shift=0) -> Weight:
    """phi0 + bend*|x'|^2 - shift, the tangential bending of a hypersurface weight.

    ``bend`` defaults to 1; only non-negativity of the resulting Hessian is
    needed, which callers should check with :func:`hessian`.
    """
    n = phi0.dim
    phi = phi0 - _as_fraction(shift)
    b = _as_fraction(bend)
    for j in range(n - 1):
        phi = phi + PolySymbol.x(n, j) ** 2 * b
    return Weight(n, POLY, phi, ("bent", b, _as_fraction(shift)))


def gradient(w: Weight) -> tuple[PolySymbol, ...]:
    return w.gradient


def hessian(w: Weight) -> tuple[tuple[PolySymbol, ...], ...]:
    return w.hessian


def convexify(w: Weight, h, eps) -> Weight:
    """Replace phi by phi + (h / 2 eps) phi^2.

    Requires exact rationals with ``0 < h < eps < 1``.
    """
    h, eps = _as_fraction(h), _as_fraction(eps)
    if not (0 < h < eps < 1):
        raise ValueError(f"convexify needs 0 < h < eps < 1, got h={h}, eps={eps}")
    psi = compose_weight(w.phi, h / (2 * eps))
    return Weight(w.dim, POLY, psi, (h, eps), base=w)


def convexification_factor(w: Weight) -> PolySymbol:
    """f'(phi) = 1 + (h/eps) phi for a convexified weight."""
    if w.base is None:
        raise ValueError("weight is not convexified")
    h, eps = w.params
    return PolySymbol.constant(w.dim, 1) + w.base.phi * (h / eps)


@dataclass(frozen=True)
class SupResult:
    value: float
    argmax: tuple[float, ...]
    resolution: float


def sup_on_box(w: Weight, box: Sequence[tuple[float, float]], samples: int = 64,
               refine: int = 1) -> SupResult:
    """Supremum of phi over a closed box by dense sampling plus local refinement.

    ``resolution`` is the final sample spacing (max over axes).  Samples always
    include the box corners.
    """
    if len(box) != w.dim:
        raise ValueError(f"box has {len(box)} axes, weight has dim {w.dim}")
    lo = np.array([float(a) for a, _ in box])
    hi = np.array([float(b) for _, b in box])
    if np.any(hi < lo):
        raise ValueError("empty box")
    # keep the dense pass under ~2e6 evaluations in higher dimension
    per_axis = max(5, min(samples, int(round(2e6 ** (1.0 / w.dim)))))
    best_x, best_v = None, -np.inf
    a, b = lo.copy(), hi.copy()
    spacing = np.zeros(w.dim)
    for _ in range(refine + 1):
        axes = [np.linspace(a[j], b[j], per_axis) if b[j] > a[j] else np.array([a[j]])
                for j in range(w.dim)]
        spacing = np.array([(b[j] - a[j]) / (per_axis - 1) for j in range(w.dim)])
        mesh = np.meshgrid(*axes, indexing="ij")
        vals = w.values(mesh)
        k = int(np.argmax(vals))
        if vals.flat[k] >= best_v:
            best_v = float(vals.flat[k])
            best_x = np.array([m.flat[k] for m in mesh])
        a = np.maximum(lo, best_x - spacing)
        b = np.minimum(hi, best_x + spacing)
    polished = _polish_max(w, best_x, lo, hi)
    if polished is not None and polished[1] > best_v:
        best_x, best_v = polished
    for corner in itertools.product(*box):
        v = float(w.values([np.array(float(c)) for c in corner]))
        if v > best_v:
            best_v, best_x = v, np.array(corner, dtype=float)
    return SupResult(best_v, tuple(float(t) for t in best_x), float(spacing.max()))


def _polish_max(w: Weight, x0: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Bounded quasi-Newton ascent from the best sample; None if it fails."""

    def f(x):
        return -float(w.values([np.array(t) for t in x]))

    def jac(x):
        return -np.asarray(w.gradient_values([np.array(t) for t in x]), dtype=float)

    res = minimize(f, x0, jac=jac, method="L-BFGS-B", bounds=list(zip(lo, hi)))
    if not np.all(np.isfinite(res.x)):
        return None
    return np.clip(res.x, lo, hi), -float(res.fun)


def _rational(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"expected a rational number, got {text!r}") from None


def _options(tokens: list[str], allowed: set[str]) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or key not in allowed:
            raise ValueError(f"unexpected weight option {tok!r}")
        out[key] = val
    return out


def parse_weight(text: str, dim: int | None = None) -> Weight:
    """Read ``linear rho=(..)``, ``parab sign=+|- c=..`` or ``poly "<text>"``.

    Any of them may be followed by ``convexify h=.. eps=..``.  ``dim`` is
    required for ``parab`` and ``poly`` and checked against ``linear``.
    """
    try:
        tokens = shlex.split(text)
    except ValueError as exc:
        raise ValueError(f"cannot read weight spec {text!r}: {exc}") from None
    if not tokens:
        raise ValueError("empty weight spec")
    conv = None
    if "convexify" in tokens:
        k = tokens.index("convexify")
        conv = _options(tokens[k + 1:], {"h", "eps"})
        tokens = tokens[:k]
        if set(conv) != {"h", "eps"}:
            raise ValueError("convexify needs both h= and eps=")
    kind, rest = tokens[0], tokens[1:]
    if kind == LINEAR:
        opts = _options(rest, {"rho"})
        m = re.fullmatch(r"\(?([^()]*)\)?", opts.get("rho", ""))
        if not m or not m.group(1).strip():
            raise ValueError("linear weight needs rho=(r1,...,rn)")
        rho = [_rational(t.strip()) for t in m.group(1).split(",") if t.strip()]
        if dim is not None and len(rho) != dim:
            raise ValueError(f"rho has {len(rho)} components, expected {dim}")
        w = linear(rho)
    elif kind == PARABOLOID:
        opts = _options(rest, {"sign", "c"})
        if dim is None:
            raise ValueError("paraboloid weight needs the dimension")
        sign = {"+": 1, "-": -1, "+1": 1, "-1": -1}.get(opts.get("sign", ""))
        if sign is None or "c" not in opts:
            raise ValueError("paraboloid weight needs sign=+|- and c=")
        w = paraboloid(dim, sign, _rational(opts["c"]))
    elif kind == POLY:
        if dim is None:
            raise ValueError("polynomial weight needs the dimension")
        if len(rest) != 1:
            raise ValueError('polynomial weight is written poly "<text>"')
        w = general(parse(rest[0], dim))
    else:
        raise ValueError(f"unknown weight kind {kind!r}")
    if conv is not None:
        w = convexify(w, _rational(conv["h"]), _rational(conv["eps"]))
    return w


__all__ = [
    "Weight", "linear", "paraboloid", "general", "bent", "gradient", "hessian",
    "convexify", "convexification_factor", "sup_on_box", "SupResult", "parse_weight",
    "LINEAR", "PARABOLOID", "POLY",
]
