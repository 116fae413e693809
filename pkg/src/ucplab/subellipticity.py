"""Conjugated symbols, Poisson brackets and the sub-ellipticity tests built on them.

For a weight phi with gradient g the conjugated fourth-order symbol
sum_j (xi_j + i g_j)^4 splits as a + i b with

    a = sum_j xi_j^4 - 6 g_j^2 xi_j^2 + g_j^4,
    b = sum_j 4 g_j xi_j^3 - 4 g_j^3 xi_j.

Everything symbolic here is exact; only the variety sampling works in floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .polysym import CompiledPoly, PolySymbol, add, differentiate, is_zero, mul
from .weights import Weight, convexify


def conjugated_symbol(w: Weight) -> tuple[PolySymbol, PolySymbol]:
    """Real and imaginary parts of sum_j (xi_j + i d_j phi)^4."""
    n = w.dim
    if w.is_constant():
        raise ValueError("phase function must have a non-vanishing gradient")
    a = PolySymbol.zero(n)
    b = PolySymbol.zero(n)
    for j, g in enumerate(w.gradient):
        s = PolySymbol.xi(n, j)
        s2 = s * s
        g2 = g * g
        a = a + s2 * s2 - 6 * g2 * s2 + g2 * g2
        b = b + 4 * g * s2 * s - 4 * g2 * g * s
    return a, b


def poisson_bracket(a: PolySymbol, b: PolySymbol) -> PolySymbol:
    """{a, b} = sum_j  d_xi_j a * d_x_j b - d_x_j a * d_xi_j b."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    out = PolySymbol.zero(a.dim)
    for j in range(a.dim):
        left = mul(differentiate(a, "xi", j), differentiate(b, "x", j))
        right = mul(differentiate(a, "x", j), differentiate(b, "xi", j))
        out = add(out, left - right)
    return out


def quadratic_closed_form(n: int) -> PolySymbol:
    """32 * sum_{j<n} (xi_j^2 + 4 x_j^2)^3."""
    out = PolySymbol.zero(n)
    for j in range(n - 1):
        out = out + (PolySymbol.xi(n, j) ** 2 + 4 * PolySymbol.x(n, j) ** 2) ** 3
    return 32 * out


def factorization_surrogate() -> PolySymbol:
    """(xi1^2 + xi2^2)^2 - 2 xi1^2 xi2^2 - (xi1^4 + xi2^4).

    Expanding (s + r t)(s - r t) with s = xi1^2 + xi2^2, t = xi1 xi2 and r^2 = 2
    gives s^2 - 2 t^2, so this vanishing is the radical-free form of
    xi1^4 + xi2^4 = (xi1^2 + xi2^2 - sqrt2 xi1 xi2)(xi1^2 + xi2^2 + sqrt2 xi1 xi2).
    """
    x1, x2 = PolySymbol.xi(2, 0), PolySymbol.xi(2, 1)
    s = x1 ** 2 + x2 ** 2
    return s * s - 2 * x1 ** 2 * x2 ** 2 - (x1 ** 4 + x2 ** 4)


@dataclass(frozen=True)
class Certificate:
    name: str
    holds: bool | None  # None: not applicable in this dimension
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "holds": self.holds, "detail": self.detail}


def certify_identities(n: int, rho: Sequence | None = None) -> list[Certificate]:
    """Exact certificates for the three closed-form identities in dimension n.

    (i) linear-weight bracket vanishes, (ii) both paraboloid branches give
    32 sum (xi_j^2 + 4x_j^2)^3, (iii) the 2-D factorization (skipped for n != 2).
    """
    from .weights import linear, paraboloid

    if n < 2:
        raise ValueError("identities are stated for n >= 2")
    if rho is None:
        rho = [Fraction(k + 1, 3) * (-1) ** k for k in range(n)]
    a, b = conjugated_symbol(linear(rho))
    certs = [Certificate("linear_bracket_zero", is_zero(poisson_bracket(a, b)),
                         f"rho={tuple(str(r) for r in rho)}")]
    target = quadratic_closed_form(n)
    ok = True
    for sign in (1, -1):
        a, b = conjugated_symbol(paraboloid(n, sign, Fraction(1, 2)))
        ok = ok and is_zero(poisson_bracket(a, b) - target)
    certs.append(Certificate("quadratic_bracket_closed_form", ok, "both sign branches"))
    if n == 2:
        certs.append(Certificate("factorization_2d", is_zero(factorization_surrogate()),
                                 "sqrt2-free surrogate"))
    else:
        certs.append(Certificate("factorization_2d", None, "2-D only"))
    return certs


def paraboloid_expansion_check(n: int, sign: int = 1, c=Fraction(1, 2)) -> dict:
    """Compare the paraboloid symbols against a commonly quoted expanded form.

    That form has ``+6 xi_n^2`` in the real part and drops the factor 4 from
    the imaginary part.  Both differ from the definition used here, while the
    bracket closed form agrees with it; the differences are returned as text.
    """
    from .weights import paraboloid

    a, b = conjugated_symbol(paraboloid(n, sign, c))
    xin = PolySymbol.xi(n, n - 1)
    alt_a = xin ** 4 + 1 + 6 * xin ** 2
    alt_b = sign * xin ** 3 + sign * xin
    for j in range(n - 1):
        xj, sj = PolySymbol.x(n, j), PolySymbol.xi(n, j)
        alt_a = alt_a + sj ** 4 + 16 * xj ** 4 - 24 * xj ** 2 * sj ** 2
        alt_b = alt_b + 2 * xj * sj ** 3 - 8 * xj ** 3 * sj
    return {
        "a_matches_alt": is_zero(a - alt_a),
        "a_minus_alt": (a - alt_a).dumps(),
        "b_over_4_matches_alt": is_zero(b * Fraction(1, 4) - alt_b),
        "b_over_4_minus_alt": (b * Fraction(1, 4) - alt_b).dumps(),
        "bracket_matches_closed_form": is_zero(poisson_bracket(a, b) - quadratic_closed_form(n)),
    }


# -- characteristic variety sampling ----------------------------------------


@dataclass
class VarietySample:
    points: list[tuple[np.ndarray, np.ndarray]]
    residuals: list[tuple[float, float]]
    tol: float
    seed: int
    box: list[tuple[float, float]]
    attempts: int = 0
    complete: bool = True

    def __len__(self) -> int:
        return len(self.points)

    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points]).reshape(len(self.points), -1)

    def xis(self) -> np.ndarray:
        return np.array([p[1] for p in self.points]).reshape(len(self.points), -1)


class SamplingError(RuntimeError):
    def __init__(self, message: str, partial: VarietySample):
        super().__init__(message)
        self.partial = partial


def admitted(a_val: float, b_val: float, xi: np.ndarray, tol: float) -> bool:
    return max(abs(a_val), abs(b_val)) <= tol * (1.0 + float(np.sum(xi ** 2)) ** 2)


class _SymbolPair:
    """Float evaluators for (a, b) and their xi-gradients."""

    def __init__(self, a: PolySymbol, b: PolySymbol):
        self.n = a.dim
        self.fa, self.fb = CompiledPoly(a), CompiledPoly(b)
        self.da = [CompiledPoly(differentiate(a, "xi", j)) for j in range(self.n)]
        self.db = [CompiledPoly(differentiate(b, "xi", j)) for j in range(self.n)]

    def values(self, x, xi):
        p = np.concatenate([x, xi])
        return self.fa(p), self.fb(p)

    def jacobian(self, x, xi):
        p = np.concatenate([x, xi])
        return np.array([[float(d(p)) for d in self.da], [float(d(p)) for d in self.db]])


def _polish(pair: _SymbolPair, x: np.ndarray, xi: np.ndarray, tol: float, iters: int = 60):
    """Gauss-Newton on (a, b) = 0 in xi with x frozen (minimum-norm steps)."""
    for _ in range(iters):
        av, bv = pair.values(x, xi)
        av, bv = float(av), float(bv)
        if admitted(av, bv, xi, 1e-3 * tol):
            break
        J = pair.jacobian(x, xi)
        step, *_ = np.linalg.lstsq(J, -np.array([av, bv]), rcond=None)
        xi = xi + step
        if not np.all(np.isfinite(xi)):
            return None
    return xi


def _ray_roots(pair: _SymbolPair, x: np.ndarray, direction: np.ndarray, radius: float,
               nscan: int = 257) -> list[float]:
    ts = np.linspace(-radius, radius, nscan)
    xis = direction[:, None] * ts[None, :]
    pts = np.concatenate([np.repeat(x[:, None], nscan, axis=1), xis])
    bv = pair.fb(pts)
    roots = []
    for i in range(nscan - 1):
        if bv[i] == 0.0:
            roots.append(float(ts[i]))
        elif bv[i] * bv[i + 1] < 0:
            f = lambda t: float(pair.fb(np.concatenate([x, direction * t])))  # noqa: E731
            roots.append(brentq(f, ts[i], ts[i + 1], xtol=1e-14))
    return [t for t in roots if abs(t) > 1e-12 * radius]


def sample_variety(a: PolySymbol, b: PolySymbol, box: Sequence[tuple[float, float]],
                   count: int, tol: float = 1e-9, seed: int = 0,
                   radius: float | None = None, max_attempts: int | None = None,
                   strict: bool = True) -> VarietySample:
    """Draw points of {a = 0, b = 0} over an x-box.

    For each draw: x uniform in ``box``, a random xi-direction, roots of b along
    that ray by sign-change bracketing, then a joint Gauss-Newton polish of
    (a, b).  A point is admitted when max(|a|, |b|) <= tol (1 + |xi|^4).  The
    ray radius defaults to 4 (1 + a(x, 0)^{1/4}), which covers the variety of
    the fourth-order symbols here since |xi| is comparable to |grad phi| on it.
    Raises :class:`SamplingError` (carrying the partial sample) when the attempt
    budget runs out and ``strict`` is set.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive; the variety has measure zero")
    n = a.dim
    if len(box) != n:
        raise ValueError(f"box has {len(box)} axes, symbols have dim {n}")
    rng = np.random.default_rng(seed)
    pair = _SymbolPair(a, b)
    lo = np.array([float(u) for u, _ in box])
    hi = np.array([float(v) for _, v in box])
    budget = max_attempts if max_attempts is not None else 50 * count
    sample = VarietySample([], [], tol, seed, [(float(u), float(v)) for u, v in box])
    attempts = 0
    while len(sample) < count and attempts < budget:
        attempts += 1
        x = lo + (hi - lo) * rng.random(n)
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        r = radius
        if r is None:
            a0 = abs(float(pair.fa(np.concatenate([x, np.zeros(n)]))))
            r = 4.0 * (1.0 + a0 ** 0.25)
        roots = _ray_roots(pair, x, d, r)
        if not roots:
            continue
        t = roots[int(rng.integers(len(roots)))]
        xi = _polish(pair, x, d * t, tol)
        if xi is None:
            continue
        av, bv = pair.values(x, xi)
        if admitted(float(av), float(bv), xi, tol):
            sample.points.append((x, xi))
            sample.residuals.append((abs(float(av)), abs(float(bv))))
    sample.attempts = attempts
    sample.complete = len(sample) >= count
    if not sample.complete and strict:
        raise SamplingError(f"only {len(sample)} of {count} variety points after {attempts} attempts",
                            sample)
    return sample


# -- bracket reports ----------------------------------------------------------


LIMITING = "limiting"
SUBELLIPTIC = "subelliptic"
INDEFINITE = "indefinite"


def bracket_scale(xi: np.ndarray, grad: np.ndarray) -> float:
    """Natural size of a degree-6 bracket value: (1 + |xi|^2 + |grad phi|^2)^3."""
    return (1.0 + float(np.sum(xi ** 2)) + float(np.sum(grad ** 2))) ** 3


@dataclass
class BracketReport:
    weight: str
    classification: str
    min_bracket: float
    max_abs_bracket: float
    sign_condition_holds: bool
    margin: float
    certificates: list[Certificate] = field(default_factory=list)
    count: int = 0
    tol: float = 0.0
    seed: int = 0

    def as_dict(self) -> dict:
        return {
            "weight": self.weight,
            "classification": self.classification,
            "min_bracket": self.min_bracket,
            "max_abs_bracket": self.max_abs_bracket,
            "sign_condition_holds": self.sign_condition_holds,
            "positivity_margin": self.margin,
            "certificates": [c.as_dict() for c in self.certificates],
            "count": self.count,
            "tol": self.tol,
            "seed": self.seed,
        }


def _weight_certificates(w: Weight, bracket: PolySymbol) -> list[Certificate]:
    certs = [Certificate("bracket_identically_zero", is_zero(bracket))]
    if w.kind == "parab":
        certs.append(Certificate("quadratic_bracket_closed_form",
                                 is_zero(bracket - quadratic_closed_form(w.dim))))
    return certs


def check_subellipticity(w: Weight, box: Sequence[tuple[float, float]], count: int = 200,
                         tol: float = 1e-9, seed: int = 0) -> BracketReport:
    """Classify a weight as limiting, sub-elliptic or indefinite on sampled variety points.

    A bracket that is the exact zero polynomial short-circuits to ``limiting``
    without sampling.  Otherwise the bracket is evaluated on a variety sample;
    values within ``tol`` of zero (relative to :func:`bracket_scale`) everywhere
    mean limiting, a strictly positive minimum means sub-elliptic.
    ``sign_condition_holds`` records min >= -tol regardless of the class.
    """
    a, b = conjugated_symbol(w)
    br = poisson_bracket(a, b)
    certs = _weight_certificates(w, br)
    if is_zero(br):
        return BracketReport(w.describe(), LIMITING, 0.0, 0.0, True, 0.0, certs, 0, tol, seed)
    sample = sample_variety(a, b, box, count, tol, seed)
    fbr = CompiledPoly(br)
    vals, scaled = [], []
    for x, xi in sample.points:
        v = float(fbr(np.concatenate([x, xi])))
        grad = w.gradient_values([np.array(t) for t in x])
        vals.append(v)
        scaled.append(v / bracket_scale(xi, grad))
    scaled = np.array(scaled)
    vmin = float(np.min(vals))
    if np.all(np.abs(scaled) <= tol):
        cls = LIMITING
    elif vmin > 0:
        cls = SUBELLIPTIC
    else:
        cls = INDEFINITE
    return BracketReport(w.describe(), cls, vmin, float(np.max(np.abs(vals))),
                         bool(np.min(scaled) >= -tol), float(np.min(scaled)), certs,
                         len(sample), tol, seed)


@dataclass
class ConvexifiedBoundReport:
    weight: str
    h: Fraction
    eps: Fraction
    count: int
    max_residual: float
    min_margin: float
    min_margin_per_index: float
    residual_ok: bool
    bound_ok: bool
    rows: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.residual_ok and self.bound_ok

    def as_dict(self) -> dict:
        return {
            "weight": self.weight, "h": str(self.h), "eps": str(self.eps), "count": self.count,
            "max_residual": self.max_residual, "min_margin": self.min_margin,
            "min_margin_per_index": self.min_margin_per_index,
            "residual_ok": self.residual_ok, "bound_ok": self.bound_ok, "passed": self.passed,
        }


def check_convexified_bound(w: Weight, h, eps, box: Sequence[tuple[float, float]],
                            count: int = 200, tol: float = 1e-6, seed: int = 0,
                            variety_tol: float = 1e-9) -> ConvexifiedBoundReport:
    """Check the decomposition and lower bound of the convexified bracket on its variety.

    With f(s) = s + (h/2eps) s^2, psi = f(phi), f' = 1 + (h/eps) phi and the
    relation eta = f' xi, sample {a~(x, eta) = b~(x, eta) = 0} and compare

        {a~, b~}(x, eta)  vs  d = (h/eps) f'^6 [64 S^2 + 4 T^2] + f'^7 {a, b}(x, xi)

    with S = sum_j xi_j g_j^3, T = sum_j (xi_j^4 - g_j^4) (contract, then
    square).  Also checks {a~, b~} >= (16/9) f'^6 (h/eps) (sum_j g_j^4)^2.
    Both tests are scaled by :func:`bracket_scale` and pass within ``tol``.
    The square-then-sum reading of S^2 and T^2 is evaluated alongside and
    reported as ``min_margin_per_index``; it does not enter ``passed``.
    """
    pre = check_subellipticity(w, box, count=min(count, 50), tol=variety_tol, seed=seed)
    if not pre.sign_condition_holds:
        raise ValueError(f"weight does not satisfy the bracket sign condition ({pre.classification})")
    psi = convexify(w, h, eps)
    hh, ee = psi.params
    ratio = float(hh / ee)
    at, bt = conjugated_symbol(psi)
    brt = CompiledPoly(poisson_bracket(at, bt))
    a, b = conjugated_symbol(w)
    br = CompiledPoly(poisson_bracket(a, b))
    sample = sample_variety(at, bt, box, count, variety_tol, seed)
    rows = []
    max_res, min_margin, min_margin_idx = 0.0, np.inf, np.inf
    for x, eta in sample.points:
        xs = [np.array(t) for t in x]
        phi = float(w.values(xs))
        fp = 1.0 + ratio * phi
        xi = eta / fp
        g = w.gradient_values(xs)
        gpsi = psi.gradient_values(xs)
        scale = bracket_scale(eta, gpsi)
        lhs = float(brt(np.concatenate([x, eta])))
        base = float(br(np.concatenate([x, xi])))
        S = float(np.sum(xi * g ** 3))
        T = float(np.sum(xi ** 4 - g ** 4))
        d = ratio * fp ** 6 * (64 * S ** 2 + 4 * T ** 2) + fp ** 7 * base
        S2_idx = float(np.sum((xi * g ** 3) ** 2))
        T2_idx = float(np.sum((xi ** 4 - g ** 4) ** 2))
        d_idx = ratio * fp ** 6 * (64 * S2_idx + 4 * T2_idx) + fp ** 7 * base
        g4 = float(np.sum(g ** 4))
        bound = (16.0 / 9.0) * fp ** 6 * ratio * g4 ** 2
        res = abs(lhs - d) / scale
        margin = (lhs - bound) / scale
        margin_idx = (d_idx - bound) / scale
        max_res = max(max_res, res)
        min_margin = min(min_margin, margin)
        min_margin_idx = min(min_margin_idx, margin_idx)
        rows.append({"x": x.tolist(), "eta": eta.tolist(), "bracket": lhs, "decomposition": d,
                     "bound": bound, "residual": res, "margin": margin})
    return ConvexifiedBoundReport(w.describe(), hh, ee, len(sample), max_res, float(min_margin),
                                  float(min_margin_idx), max_res <= tol, min_margin >= -tol, rows)


__all__ = [
    "conjugated_symbol", "poisson_bracket", "quadratic_closed_form", "factorization_surrogate",
    "Certificate", "certify_identities", "paraboloid_expansion_check", "VarietySample",
    "SamplingError", "sample_variety", "admitted", "BracketReport", "check_subellipticity",
    "ConvexifiedBoundReport", "check_convexified_bound", "bracket_scale",
    "LIMITING", "SUBELLIPTIC", "INDEFINITE",
]
