"""Quasi-reversibility for the Cauchy problem of L = sum_j D_j^4 + sum_j A_j D_j + q.

The unknown lives on every grid node.  The equation is imposed on rows whose
5-point stencil fits in the grid and where phi > 0; Cauchy data g^0..g^3 on
the accessible faces are imposed by penalty through one-sided normal
differences.  Also here: the Caccioppoli ratio on ball annuli and the
discrete weak-UCP gap.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from . import fdgrid
from .expr import Field, parse_field
from .fdgrid import Grid, GridFunction
from .weights import Weight, sup_on_box

# one-sided k-th derivative into the domain, second order, in units of spacing^-k
INWARD_STENCILS = {
    1: (np.array([-3.0, 4.0, -1.0]) / 2.0),
    2: np.array([2.0, -5.0, 4.0, -1.0]),
    3: (np.array([-5.0, 18.0, -24.0, 14.0, -3.0]) / 2.0),
}


def predicted_theta(delta: float, sup_phi: float) -> float:
    """Hölder exponent delta / (2 Phi - delta)."""
    if not 0 < delta < sup_phi:
        raise ValueError(f"need 0 < delta < Phi, got delta={delta}, Phi={sup_phi}")
    return delta / (2 * sup_phi - delta)


@dataclass(frozen=True)
class Face:
    axis: int
    side: int  # 0: low end of the axis, 1: high end

    def __post_init__(self):
        if self.side not in (0, 1):
            raise ValueError("face side must be 0 (low) or 1 (high)")


def face_nodes(grid: Grid, face: Face) -> np.ndarray:
    idx = np.indices(grid.nodes)
    target = 0 if face.side == 0 else grid.nodes[face.axis] - 1
    return np.flatnonzero((idx[face.axis] == target).ravel())


def face_weights(grid: Grid, face: Face) -> np.ndarray:
    """Trapezoid weights of the face as an (n-1)-dimensional box, in node order."""
    w = np.ones(1)
    for k in range(grid.dim):
        if k == face.axis:
            continue
        wk = np.full(grid.nodes[k], grid.spacing[k])
        wk[0] = wk[-1] = grid.spacing[k] / 2
        w = np.multiply.outer(w, wk)
    return w.ravel()


def normal_difference(grid: Grid, face: Face, k: int) -> sp.csr_matrix:
    """Rows: face nodes; the k-th outward normal difference (-1)^k d_in^k."""
    nodes = face_nodes(grid, face)
    if k == 0:
        return sp.csr_matrix((np.ones(len(nodes)), (np.arange(len(nodes)), nodes)),
                             shape=(len(nodes), grid.size))
    coeffs = INWARD_STENCILS[k] * grid.spacing[face.axis] ** (-k) * (-1) ** k
    stride = int(np.prod(grid.nodes[face.axis + 1:]))
    step = stride if face.side == 0 else -stride
    rows, cols, vals = [], [], []
    for r, node in enumerate(nodes):
        for s, c in enumerate(coeffs):
            rows.append(r)
            cols.append(node + s * step)
            vals.append(c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(nodes), grid.size))


@dataclass
class CauchyProblem:
    """Cauchy data g^0..g^3 on faces ``gamma`` and source f, with weight phi and cut level delta."""

    grid: Grid
    gamma: tuple[Face, ...]
    g: tuple[np.ndarray, ...]  # per face, array of shape (4, face nodes)
    f: np.ndarray
    weight: Weight
    delta: float
    A: tuple | None = None
    q: object = 0.0
    u_true: np.ndarray | None = None
    operator: fdgrid.DiscreteOperator = field(init=False, repr=False)

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=complex).ravel()
        if self.f.size != self.grid.size:
            raise ValueError("f must be sampled on every grid node")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if len(self.g) != len(self.gamma):
            raise ValueError("one data block per face is required")
        self.g = tuple(np.asarray(gk, dtype=complex) for gk in self.g)
        for face, gk in zip(self.gamma, self.g):
            if gk.shape != (4, len(face_nodes(self.grid, face))):
                raise ValueError(f"data on face {face} must have shape (4, face nodes)")
        self.operator = fdgrid.assemble(self.grid, self.A, self.q, 1.0)
        if not np.any(self.omega0) or not np.any(self.omega_delta):
            raise ValueError("{phi > 0} and {phi > delta} must both contain grid nodes")
        self._check_boundary()

    @property
    def phi(self) -> np.ndarray:
        return np.asarray(self.weight.values(self.grid.coords), dtype=float)

    @property
    def omega0(self) -> np.ndarray:
        return self.phi > 0

    @property
    def omega_delta(self) -> np.ndarray:
        return self.phi > self.delta

    @property
    def equation_rows(self) -> np.ndarray:
        return np.flatnonzero((self.grid.depth() >= 2) & self.omega0)

    def _check_boundary(self):
        # nodes of {phi > 0} that touch the box boundary must sit on an accessible face
        on_gamma = np.zeros(self.grid.size, dtype=bool)
        for face in self.gamma:
            on_gamma[face_nodes(self.grid, face)] = True
        boundary = (self.grid.depth() == 0) & self.omega0
        if np.any(boundary & ~on_gamma):
            raise ValueError("part of {phi > 0} reaches the boundary outside the accessible faces")

    def sup_phi(self) -> float:
        """sup of phi over the bounding box of the {phi > 0} nodes."""
        pts = np.array(self.grid.coords)[:, self.omega0]
        box = [(float(lo), float(hi)) for lo, hi in zip(pts.min(axis=1), pts.max(axis=1))]
        return sup_on_box(self.weight, box).value

    def theta(self) -> float:
        return predicted_theta(self.delta, self.sup_phi())


def _normalize_u(grid: Grid, u_true) -> np.ndarray:
    if isinstance(u_true, str):
        u_true = parse_field(u_true, grid.dim)
    if callable(u_true):
        return np.asarray(np.broadcast_to(u_true(*grid.coords), (grid.size,)), dtype=complex)
    if isinstance(u_true, GridFunction):
        return u_true.values
    return np.asarray(u_true, dtype=complex).ravel()


def _analytic_data(grid: Grid, u: Field, A, q, gamma: Sequence[Face]):
    coords = grid.coords
    f = np.zeros(grid.size, dtype=complex)
    for j in range(grid.dim):
        f = f + u.diff(j, 4)(*coords)
    if A is not None:
        for j, aj in enumerate(A):
            f = f + fdgrid._field(grid, aj, f"A[{j}]") * (-1j) * u.diff(j, 1)(*coords)
    f = f + fdgrid._field(grid, q, "q") * u(*coords)
    g = []
    for face in gamma:
        nodes = face_nodes(grid, face)
        pts = [c[nodes] for c in coords]
        sign = -1 if face.side == 0 else 1
        rows = [u(*pts)] + [sign ** k * u.diff(face.axis, k)(*pts) for k in (1, 2, 3)]
        g.append(np.stack([np.asarray(r, dtype=complex) for r in rows]))
    return f, tuple(g)


def manufacture(grid: Grid, u_true, A, q, gamma: Sequence[Face], weight: Weight, delta: float,
                data: str = "discrete") -> CauchyProblem:
    """Cauchy problem with known solution u_true.

    ``data="discrete"``: f = L_h u_true and g^k are the one-sided normal
    differences of u_true, so the noiseless problem is solved exactly by the
    samples of u_true.  ``data="analytic"``: f = L u_true and g^k = d_nu^k u_true
    evaluated in closed form (u_true must be a :class:`Field` or expression
    text), so the noiseless error measures the discretization.
    """
    if data not in ("discrete", "analytic"):
        raise ValueError("data must be 'discrete' or 'analytic'")
    if isinstance(u_true, str):
        u_true = parse_field(u_true, grid.dim)
    u = _normalize_u(grid, u_true)
    if data == "analytic":
        if not isinstance(u_true, Field):
            raise ValueError("analytic data needs a closed-form field")
        f, g = _analytic_data(grid, u_true, A, q, gamma)
    else:
        f = fdgrid.assemble(grid, A, q, 1.0).apply(u)
        g = tuple(np.stack([normal_difference(grid, face, k) @ u for k in range(4)]) for face in gamma)
    return CauchyProblem(grid, tuple(gamma), g, f, weight, float(delta), A, q, u)


def h1_gram(grid: Grid, mask: np.ndarray | None = None) -> sp.csr_matrix:
    """Gram matrix of the discrete H^1 norm (trapezoid L^2 plus forward differences) on a node mask."""
    keep = np.ones(grid.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    G = sp.diags(grid.quadrature_weights() * keep)
    for j in range(grid.dim):
        D = fdgrid.forward_differences(grid, j)
        # an edge counts when both of its end nodes are in the mask
        both = ((abs(D) > 0).astype(float) @ keep.astype(float)) > 1.5
        G = G + D.T @ sp.diags(fdgrid.edge_weights(grid, j) * both) @ D
    return sp.csr_matrix(G)


def h1_norm(grid: Grid, v: np.ndarray, mask: np.ndarray | None = None) -> float:
    v = np.asarray(v, dtype=complex)
    return float(np.sqrt(max(0.0, np.real(np.vdot(v, h1_gram(grid, mask) @ v)))))


def l2_norm(grid: Grid, v: np.ndarray, mask: np.ndarray | None = None) -> float:
    w = grid.quadrature_weights()
    if mask is not None:
        w = w * mask
    return float(np.sqrt(np.sum(w * np.abs(v) ** 2)))


@dataclass
class SolveResult:
    u: GridFunction
    converged: bool
    iterations: int
    residual: float


def _blocks(p: CauchyProblem, gamma: float, f: np.ndarray, g: Sequence[np.ndarray]):
    """Weighted least-squares blocks: J = [W_r^1/2 L; sqrt(gamma) W_G^1/2 B_k], target b."""
    grid = p.grid
    rows = p.equation_rows
    wr = np.sqrt(grid.quadrature_weights()[rows])
    J = [sp.diags(wr) @ p.operator._full[rows, :]]
    b = [wr * f[rows]]
    for face, gk in zip(p.gamma, g):
        wf = np.sqrt(gamma * face_weights(grid, face))
        for k in range(4):
            J.append(sp.diags(wf) @ normal_difference(grid, face, k))
            b.append(wf * gk[k])
    return sp.vstack(J, format="csc").astype(complex), np.concatenate(b).astype(complex)


def solve(p: CauchyProblem, lam: float, gamma: float = 1e6, f=None, g=None,
          rtol: float = 1e-8, maxiter: int = 200) -> SolveResult:
    """Minimize |Lu - f|^2_{phi>0} + gamma sum_k |d_nu^k u - g^k|^2_Gamma + lam |u|^2_{H^1}.

    The normal equations (J^H J + lam G) u = J^H b are Hermitian positive
    definite for lam > 0 and are solved by preconditioned conjugate gradients.
    The preconditioner solves the equivalent augmented system
    [[I, J], [J^H, -lam G]], whose conditioning is that of J rather than J^H J;
    forming and factoring J^H J directly loses most digits on fine grids.
    """
    if not lam > 0:
        raise ValueError("regularization weight lam must be positive")
    if not gamma > 0:
        raise ValueError("penalty weight gamma must be positive")
    f = p.f if f is None else np.asarray(f, dtype=complex)
    g = p.g if g is None else g
    J, b = _blocks(p, gamma, f, g)
    G = h1_gram(p.grid)
    JH = J.conj().T.tocsc()
    rhs = JH @ b
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return SolveResult(GridFunction(p.grid, np.zeros(p.grid.size)), True, 0, 0.0)
    r, c = J.shape
    K = sp.bmat([[sp.identity(r), J], [JH, -lam * G]], format="csc")
    lu = spla.splu(K)

    def normal_matvec(x):
        return JH @ (J @ x) + lam * (G @ x)

    def precondition(y):
        # augmented solve with right side [0; -y] returns x with (J^H J + lam G) x = y
        rhs_aug = np.zeros(r + c, dtype=complex)
        rhs_aug[r:] = -y
        return lu.solve(rhs_aug)[r:]

    b_aug = np.concatenate([b, np.zeros(c, dtype=complex)])
    x0 = lu.solve(b_aug)[r:]
    N = spla.LinearOperator((c, c), matvec=normal_matvec, dtype=complex)
    M = spla.LinearOperator((c, c), matvec=precondition, dtype=complex)
    count = [0]

    def tick(_):
        count[0] += 1

    u, info = spla.cg(N, rhs, x0=x0, rtol=rtol, maxiter=maxiter, M=M, callback=tick)
    res = float(np.linalg.norm(normal_matvec(u) - rhs)) / bnorm
    return SolveResult(GridFunction(p.grid, u), info == 0 and res <= rtol, count[0], res)


def normal_residual(p: CauchyProblem, u, lam: float, gamma: float = 1e6, f=None, g=None) -> float:
    """Relative residual of the normal equations at u, independent of the solver."""
    f = p.f if f is None else np.asarray(f, dtype=complex)
    g = p.g if g is None else g
    J, b = _blocks(p, gamma, f, g)
    v = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=complex)
    rhs = J.conj().T @ b
    lhs = J.conj().T @ (J @ v) + lam * (h1_gram(p.grid) @ v)
    return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny))


# -- stability experiment ---------------------------------------------------------


@dataclass(frozen=True)
class Trial:
    noise: float
    index: int
    F: float
    M: float
    error: float
    converged: bool


@dataclass
class StabilityFit:
    trials: list[Trial]
    theta_hat: float | None
    log_c: float | None
    r2: float | None
    theta_band: tuple[float, float] | None
    theta_predicted: float
    sup_phi: float
    delta: float
    excluded: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "trials": [asdict(t) for t in self.trials], "theta_hat": self.theta_hat,
            "log_c": self.log_c, "r2": self.r2,
            "theta_band": None if self.theta_band is None else list(self.theta_band),
            "theta_predicted": self.theta_predicted, "sup_phi": self.sup_phi,
            "delta": self.delta, "excluded": list(self.excluded),
        }


def _rms(v: np.ndarray) -> float:
    r = float(np.sqrt(np.mean(np.abs(v) ** 2))) if v.size else 0.0
    return r if r > 0 else 1.0


def perturb(p: CauchyProblem, level: float, rng: np.random.Generator):
    """Relative Gaussian noise on f (equation rows) and on every g^k."""
    rows = p.equation_rows
    df = np.zeros(p.grid.size, dtype=complex)
    df[rows] = level * _rms(p.f[rows]) * rng.standard_normal(len(rows))
    gscale = _rms(np.concatenate([gk.ravel() for gk in p.g]))
    dg = tuple(level * gscale * rng.standard_normal(gk.shape) for gk in p.g)
    return df, dg


def data_size(p: CauchyProblem, df: np.ndarray, dg: Sequence[np.ndarray]) -> float:
    """F: L^2 norm of the source perturbation on {phi > 0} plus discrete L^2(Gamma) norms of the data."""
    F = l2_norm(p.grid, df, p.omega0)
    for face, gk in zip(p.gamma, dg):
        wf = face_weights(p.grid, face)
        F += sum(float(np.sqrt(np.sum(wf * np.abs(gk[k]) ** 2))) for k in range(4))
    return F


def stability_fit(p: CauchyProblem, noise_levels: Sequence[float], seed: int = 0, trials: int = 5,
                  lam: float = 1e-10, gamma: float = 1e6) -> StabilityFit:
    """Noise sweep: per level and trial, (F, M, error) and a fit of log error against log F.

    The trial seed is derived from ``seed``, the level index and the trial index.
    Trials with F = 0 or a non-converged solve are excluded from the regression.
    """
    if p.u_true is None:
        raise ValueError("stability_fit needs a manufactured problem with known u_true")
    levels = [float(s) for s in noise_levels]
    positive = [s for s in levels if s > 0]
    if len(positive) < 4:
        raise ValueError("need at least 4 positive noise levels")
    if max(positive) / min(positive) < 100 * (1 - 1e-9):
        raise ValueError("noise levels must span a factor of at least 100")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    out, excluded = [], []
    for li, level in enumerate(levels):
        for t in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed, li, t]))
            df, dg = perturb(p, level, rng)
            sol = solve(p, lam, gamma, p.f + df, tuple(g + d for g, d in zip(p.g, dg)))
            e = sol.u.values - p.u_true
            trial = Trial(level, t, data_size(p, df, dg), h1_norm(p.grid, e, p.omega0),
                          h1_norm(p.grid, e, p.omega_delta), sol.converged)
            if trial.F <= 0 or not trial.converged or trial.error <= 0:
                excluded.append(len(out))
            out.append(trial)
    use = [t for i, t in enumerate(out) if i not in excluded]
    theta_hat = log_c = r2 = band = None
    if len(use) >= 2 and len({t.F for t in use}) > 1:
        lr = stats.linregress(np.log([t.F for t in use]), np.log([t.error for t in use]))
        theta_hat, log_c, r2 = float(lr.slope), float(lr.intercept), float(lr.rvalue ** 2)
        half = 1.96 * float(lr.stderr)
        band = (theta_hat - half, theta_hat + half)
    sup_phi = p.sup_phi()
    return StabilityFit(out, theta_hat, log_c, r2, band, predicted_theta(p.delta, sup_phi),
                        sup_phi, p.delta, excluded)


# -- Caccioppoli ratio --------------------------------------------------------


@dataclass(frozen=True)
class CaccioppoliReport:
    lhs: float
    rhs: float
    ratio: float
    residual: float
    inner_nodes: int
    outer_nodes: int

    def as_dict(self) -> dict:
        return asdict(self)


ROUNDING_FLOOR = 64 * np.finfo(float).eps


def _difference(grid: Grid, j: int, stencil, power: int, v: np.ndarray) -> np.ndarray:
    """Central difference along axis j; values inside its rounding floor become exact zeros.

    Float node coordinates are not exactly equispaced, so differences of
    polynomials of too low degree come out at ~1e-12 rather than 0.
    """
    D = fdgrid._axis_operator(grid, j, stencil, grid.spacing[j] ** (-power))
    d = D @ v
    floor = ROUNDING_FLOOR * (abs(D) @ np.abs(v))
    d[np.abs(d) <= floor] = 0
    return d


def caccioppoli_ratio(u, r: float, rho: float, grid: Grid, A=None, q=0.0,
                      tol: float = 1e-8) -> CaccioppoliReport:
    """LHS (r - rho)^2 / RHS on ball annuli around the origin.

    LHS sums |d_j^2 u|^2 + |d_j^3 u|^2 over rho < |x| < r, RHS sums
    |u|^2 + |d_j u|^2 over rho/2 < |x| < min(2r, 1), both with node weights.
    Nodes whose stencil would leave the grid are dropped.  u must satisfy
    |L u| <= tol |L| |u| on the unit ball nodes where L is defined.
    """
    if not 0 < rho < r < 1:
        raise ValueError("need 0 < rho < r < 1")
    v = _normalize_u(grid, u)
    radius = np.sqrt(sum(c ** 2 for c in grid.coords))
    deep = grid.depth() >= 2
    ball = (radius < 1) & deep
    op = fdgrid.assemble(grid, A, q, 1.0)
    Lu = op.apply(v)
    scale = np.abs(op._full) @ np.abs(v)
    residual = float(np.max(np.abs(Lu[ball]) / np.maximum(scale[ball], np.finfo(float).tiny)))
    if np.any(np.abs(Lu[ball]) > tol * np.maximum(scale[ball], np.finfo(float).tiny)):
        raise ValueError(f"u does not solve Lu = 0 on the ball (relative residual {residual:.3g})")
    w = np.prod(grid.spacing)
    inner = (radius > rho) & (radius < r) & deep
    outer = (radius > rho / 2) & (radius < min(2 * r, 1.0)) & (grid.depth() >= 1)
    if not np.any(inner) or not np.any(outer):
        raise ValueError("annulus contains no grid nodes")
    lhs_density = np.zeros(grid.size)
    rhs_density = np.abs(v) ** 2
    for j in range(grid.dim):
        d2 = _difference(grid, j, (1, -2, 1), 2, v)
        d3 = _difference(grid, j, (-1, 2, 0, -2, 1), 3, v) / 2
        d1 = _difference(grid, j, (-1, 0, 1), 1, v) / 2
        lhs_density = lhs_density + np.abs(d2) ** 2 + np.abs(d3) ** 2
        rhs_density = rhs_density + np.abs(d1) ** 2
    lhs = float(w * np.sum(lhs_density[inner]))
    rhs = float(w * np.sum(rhs_density[outer]))
    return CaccioppoliReport(lhs, rhs, lhs * (r - rho) ** 2 / rhs if rhs > 0 else float("inf"),
                             residual, int(inner.sum()), int(outer.sum()))


# -- weak UCP gap ------------------------------------------------------------------


def ucp_gap(grid: Grid, omega, A=None, q=0.0, dense: bool = False) -> float:
    """sigma_min of L on grid functions that vanish on omega, in the discrete L^2 norm.

    Rows are the nodes where the 5-point stencil fits; columns are all nodes
    outside omega.  More columns than rows means a non-trivial kernel, gap 0.
    """
    mask = np.zeros(grid.size, dtype=bool)
    omega = np.asarray(omega)
    if omega.dtype == bool:
        if omega.size != grid.size:
            raise ValueError("omega mask must have one entry per node")
        mask = omega.ravel().copy()
    else:
        mask[omega.astype(int)] = True
    deep = grid.depth() >= 2
    if not mask.any():
        raise ValueError("omega must be non-empty")
    if np.any(mask & ~deep):
        raise ValueError("omega must lie strictly inside the interior")
    if np.all(mask[deep]):
        raise ValueError("omega covers every interior node; nothing left to probe")
    op = fdgrid.assemble(grid, A, q, 1.0)
    rows = np.flatnonzero(deep)
    cols = np.flatnonzero(~mask)
    if len(cols) > len(rows):
        return 0.0
    w = grid.quadrature_weights()
    mat = op._full[rows, :][:, cols]
    gram = sp.diags(w[cols])
    if dense:
        return fdgrid.sigma_min_dense(mat, w[rows], gram)
    res = fdgrid.sigma_min(mat, row_weights=w[rows], gram=gram)
    if not res.converged:
        raise RuntimeError("sigma_min did not converge for the gap computation")
    return res.value


def box_mask(grid: Grid, box: Sequence[tuple[float, float]]) -> np.ndarray:
    """Nodes inside a closed coordinate box (small tolerance for float nodes)."""
    if len(box) != grid.dim:
        raise ValueError("mask box dimension differs from the grid")
    m = np.ones(grid.size, dtype=bool)
    for c, (lo, hi), dx in zip(grid.coords, box, grid.spacing):
        eps = 1e-9 * dx
        m &= (c >= lo - eps) & (c <= hi + eps)
    return m


__all__ = [
    "Face", "CauchyProblem", "manufacture", "solve", "SolveResult", "stability_fit", "StabilityFit",
    "Trial", "predicted_theta", "caccioppoli_ratio", "CaccioppoliReport", "ucp_gap", "box_mask",
    "normal_difference", "face_nodes", "face_weights", "h1_gram", "h1_norm", "l2_norm",
    "perturb", "data_size", "normal_residual", "INWARD_STENCILS",
]
