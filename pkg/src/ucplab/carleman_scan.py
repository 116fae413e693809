"""h-scaling of discrete Carleman constants.

For each h the conjugated operator e^{phi/h} h^4 P e^{-phi/h} is assembled and
its smallest singular value recorded; a log-log fit of sigma_min against h
gives the exponent that separates the fourth-sum operator from the
bilaplacian.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import fdgrid
from .fdgrid import BILAPLACIAN, FOURTH_SUM, Grid, SigmaResult
from .polysym import is_zero
from .subellipticity import conjugated_symbol, poisson_bracket
from .weights import Weight, convexify

NORM_MODES = ("l2", "h1scl")
SUPPORTS = ("interior", "image")
EPS_RULE = "sqrt(h)"


@dataclass(frozen=True)
class FitResult:
    alpha: float
    log_c: float
    r2: float

    @property
    def c(self) -> float:
        return math.exp(self.log_c)


@dataclass(frozen=True)
class ScanSample:
    h: float
    sigma_min: float
    converged: bool
    iterations: int = 0
    eps: str | None = None


@dataclass
class ScanResult:
    kind: str
    weight: str
    grid: str
    samples: list[ScanSample]
    fit: FitResult | None
    norm_mode: str = "l2"
    support: str = "interior"
    eps_rule: str | None = None
    notes: list[str] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        return [(s.h, s.sigma_min, s.converged) for s in self.samples]

    def as_dict(self) -> dict:
        return {
            "kind": self.kind, "weight": self.weight, "grid": self.grid,
            "norm_mode": self.norm_mode, "support": self.support, "eps_rule": self.eps_rule,
            "samples": [asdict(s) for s in self.samples],
            "fit": None if self.fit is None else asdict(self.fit),
            "notes": list(self.notes),
        }


def grid_spec(grid: Grid) -> str:
    return " x ".join(f"{a!r}:{b!r}:{m}" for (a, b), m in zip(grid.box, grid.nodes))


def is_limiting(w: Weight) -> bool:
    """True when the bracket of the conjugated symbols is the zero polynomial."""
    a, b = conjugated_symbol(w)
    return is_zero(poisson_bracket(a, b))


def eps_for(h: Fraction) -> Fraction:
    return Fraction(math.sqrt(h)).limit_denominator(10 ** 9)


def _validate_h_list(h_list: Sequence[float], grid: Grid, min_span: float) -> list[float]:
    hs = [float(h) for h in h_list]
    if len(hs) < 4:
        raise ValueError(f"need at least 4 h values to fit an exponent, got {len(hs)}")
    if len(set(hs)) != len(hs):
        raise ValueError("h values must be distinct")
    if any(not 0 < h < 1 for h in hs):
        raise ValueError("h values must lie in (0, 1)")
    if max(hs) / min(hs) < min_span * (1 - 1e-9):
        raise ValueError(f"h values span a factor {max(hs) / min(hs):.3g}, need >= {min_span}")
    floor = 4 * max(grid.spacing)
    low = [h for h in hs if h < floor * (1 - 1e-12)]
    if low:
        raise ValueError(f"h below the resolvable window 4*max(spacing)={floor:g}: {low}")
    return sorted(hs, reverse=True)


def _operator(grid: Grid, kind: str, h: float, A=None, q=0.0):
    if kind == FOURTH_SUM:
        return fdgrid.assemble(grid, A, q, h)
    if kind == BILAPLACIAN:
        return fdgrid.assemble_bilaplacian(grid, h)
    raise ValueError(f"unknown operator kind {kind!r}")


def conjugated_sigma(grid: Grid, weight: Weight, kind: str, h: float, norm_mode: str = "l2",
                     support: str = "interior", tol: float = 1e-10, max_iter: int = 300,
                     seed: int = 0, limiting: bool | None = None, dense: bool = False):
    """sigma_min of one conjugated operator; returns (SigmaResult, eps or None, operator)."""
    if norm_mode not in NORM_MODES:
        raise ValueError(f"norm mode must be one of {NORM_MODES}")
    if support not in SUPPORTS:
        raise ValueError(f"support must be one of {SUPPORTS}")
    hq = Fraction(repr(float(h)))
    if limiting is None:
        limiting = weight.base is None and is_limiting(weight)
    eps = None
    w = weight
    if limiting:
        eps = eps_for(hq)
        w = convexify(weight, hq, eps)
    op = fdgrid.conjugate(_operator(grid, kind, h), w, h)
    mat = op.matrix if support == "interior" else op.image
    rows = grid.interior if support == "interior" else np.arange(grid.size)
    row_w, gram = None, None
    if support == "image" or norm_mode == "h1scl":
        row_w = grid.quadrature_weights()[rows]
        gram = fdgrid.gram_matrix(grid, float(h), norm_mode)
    if dense:
        val = fdgrid.sigma_min_dense(mat, row_w, gram)
        res = SigmaResult(val, True, 0, "dense-svd")
    else:
        res = fdgrid.sigma_min(mat, tol=tol, max_iter=max_iter, row_weights=row_w, gram=gram, seed=seed)
    return res, eps, op


def scan(grid: Grid, weight: Weight, kind: str, h_list: Sequence[float], norm_mode: str = "l2",
         support: str = "interior", tol: float = 1e-10, max_iter: int = 300, seed: int = 0,
         min_span: float = 4.0) -> ScanResult:
    """sigma_min of the conjugated operator across ``h_list`` and the fitted exponent.

    Limiting weights (zero bracket) are convexified at every h with
    eps = sqrt(h), rounded to a rational.  h must stay at or above
    4 * max(spacing).  Non-converged samples are kept and flagged but not fitted.
    """
    if weight.dim != grid.dim:
        raise ValueError("weight and grid dimensions differ")
    hs = _validate_h_list(h_list, grid, min_span)
    limiting = weight.base is None and is_limiting(weight)
    samples = []
    for h in hs:
        res, eps, _ = conjugated_sigma(grid, weight, kind, h, norm_mode, support, tol, max_iter,
                                       seed, limiting)
        samples.append(ScanSample(h, res.value, res.converged, res.iterations,
                                  None if eps is None else str(eps)))
    result = ScanResult(kind, weight.describe(), grid_spec(grid), samples, None, norm_mode, support,
                        EPS_RULE if limiting else None)
    try:
        result.fit = fit_exponent(result)
    except ValueError as exc:
        result.notes.append(f"no fit: {exc}")
    if not all(s.converged for s in samples):
        result.notes.append("some samples did not converge and were excluded from the fit")
    return result


def fit_exponent(r: ScanResult | Sequence[tuple[float, float]]) -> FitResult:
    """Least squares log sigma = alpha log h + log C over converged samples."""
    if isinstance(r, ScanResult):
        pts = [(s.h, s.sigma_min) for s in r.samples if s.converged]
    else:
        pts = [(float(p[0]), float(p[1])) for p in r]
    if len(pts) < 4:
        raise ValueError(f"need >= 4 converged samples, got {len(pts)}")
    h = np.array([p[0] for p in pts])
    s = np.array([p[1] for p in pts])
    if np.any(h <= 0) or np.any(s <= 0):
        raise ValueError("h and sigma must be positive for a log-log fit")
    lx, ly = np.log(h), np.log(s)
    if np.ptp(lx) == 0:
        raise ValueError("degenerate fit: all h equal")
    alpha, log_c = np.polyfit(lx, ly, 1)
    resid = ly - (alpha * lx + log_c)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if sst == 0 else 1.0 - float(np.sum(resid ** 2)) / sst
    return FitResult(float(alpha), float(log_c), float(min(1.0, max(0.0, r2))))


@dataclass
class CompareReport:
    first: ScanResult
    second: ScanResult
    alpha_gap: float | None
    h_star: float | None
    margin: float = 0.3

    @property
    def alpha_ok(self) -> bool:
        return self.alpha_gap is not None and self.alpha_gap > self.margin

    @property
    def passed(self) -> bool:
        return self.alpha_ok and self.h_star is not None

    def as_dict(self) -> dict:
        return {
            "first": self.first.as_dict(), "second": self.second.as_dict(),
            "alpha_gap": self.alpha_gap, "h_star": self.h_star, "margin": self.margin,
            "alpha_ok": self.alpha_ok, "passed": self.passed,
        }


def crossover(first: ScanResult, second: ScanResult) -> float | None:
    """Largest h with sigma_first >= sigma_second at it and at every smaller h."""
    pairs = sorted(((a.h, a.sigma_min, b.sigma_min) for a, b in zip(first.samples, second.samples)))
    h_star = None
    for h, sa, sb in pairs:
        if sa >= sb:
            h_star = h
        else:
            break
    return h_star


def compare(grid: Grid, weight: Weight, h_list: Sequence[float],
            kinds: tuple[str, str] = (FOURTH_SUM, BILAPLACIAN), margin: float = 0.3, **kw) -> CompareReport:
    """Paired scans; passes when alpha_second - alpha_first > margin and an ordering window exists."""
    first = scan(grid, weight, kinds[0], h_list, **kw)
    second = scan(grid, weight, kinds[1], h_list, **kw)
    gap = None
    if first.fit is not None and second.fit is not None:
        gap = second.fit.alpha - first.fit.alpha
    return CompareReport(first, second, gap, crossover(first, second), margin)


__all__ = [
    "FitResult", "ScanSample", "ScanResult", "CompareReport", "scan", "fit_exponent", "compare",
    "conjugated_sigma", "crossover", "is_limiting", "eps_for", "grid_spec", "NORM_MODES", "SUPPORTS",
]
