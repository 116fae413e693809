"""Finite differences for h^4 (sum_j D_j^4 + sum_j A_j D_j + q) and the bilaplacian.

Grid functions are flattened in C order over the node multi-index.  Unknowns of a
:class:`DiscreteOperator` are the interior nodes (two layers away from every
face) with zero extension elsewhere; ``matrix`` keeps the interior rows and
``image`` keeps every grid row, which is the full image of a compactly
supported grid function.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .weights import Weight

MIN_NODES = 7

FOURTH_SUM = "fourth_sum"
BILAPLACIAN = "bilaplacian"


@dataclass(frozen=True)
class Grid:
    box: tuple[tuple[float, float], ...]
    nodes: tuple[int, ...]

    def __post_init__(self):
        if len(self.box) != len(self.nodes) or not self.nodes:
            raise ValueError("box and nodes must have the same positive length")
        for (a, b), m in zip(self.box, self.nodes):
            if m < MIN_NODES:
                raise ValueError(f"need at least {MIN_NODES} nodes per axis, got {m}")
            if not b > a:
                raise ValueError(f"empty interval [{a}, {b}]")

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / (m - 1) for (a, b), m in zip(self.box, self.nodes))

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    def axis(self, j: int) -> np.ndarray:
        a, b = self.box[j]
        return np.linspace(a, b, self.nodes[j])

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Flattened node coordinates, one array per axis."""
        mesh = np.meshgrid(*[self.axis(j) for j in range(self.dim)], indexing="ij")
        return tuple(m.ravel() for m in mesh)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(j) for j in range(self.dim)], indexing="ij")

    def depth(self) -> np.ndarray:
        """Per node, the index distance to the nearest face."""
        idx = np.indices(self.nodes)
        d = np.min([np.minimum(idx[j], self.nodes[j] - 1 - idx[j]) for j in range(self.dim)], axis=0)
        return d.ravel()

    @cached_property
    def interior(self) -> np.ndarray:
        """Flat indices of nodes at least two layers from every face (ascending)."""
        return np.flatnonzero(self.depth() >= 2)

    def quadrature_weights(self) -> np.ndarray:
        """Tensor trapezoid weights on all nodes."""
        w = np.ones(1)
        for j in range(self.dim):
            wj = np.full(self.nodes[j], self.spacing[j])
            wj[0] = wj[-1] = self.spacing[j] / 2
            w = np.multiply.outer(w, wj)
        return w.ravel()


def build_grid(box: Sequence[tuple[float, float]], nodes: int | Sequence[int]) -> Grid:
    box = tuple((float(a), float(b)) for a, b in box)
    if isinstance(nodes, (int, np.integer)):
        nodes = (int(nodes),) * len(box)
    return Grid(box, tuple(int(m) for m in nodes))


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex).ravel()
        if self.values.size != self.grid.size:
            raise ValueError(f"grid function has {self.values.size} values, grid has {self.grid.size} nodes")

    @classmethod
    def from_callable(cls, grid: Grid, f) -> "GridFunction":
        return cls(grid, np.broadcast_to(f(*grid.coords), (grid.size,)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x{j + 1}" for j in range(self.grid.dim)] + ["re", "im"])
            for k in range(self.grid.size):
                wr.writerow([repr(float(c[k])) for c in self.grid.coords]
                            + [repr(float(self.values[k].real)), repr(float(self.values[k].imag))])


def _axis_operator(grid: Grid, j: int, stencil: Sequence[float], scale: float) -> sp.csr_matrix:
    """Kron-embedded 1-D stencil acting along axis ``j``, truncated at the faces."""
    m = grid.nodes[j]
    half = len(stencil) // 2
    offsets = list(range(-half, half + 1))
    d1 = sp.diags([np.full(m - abs(o), c * scale) for o, c in zip(offsets, stencil)], offsets,
                  shape=(m, m), format="csr")
    mats = [sp.identity(grid.nodes[k], format="csr") if k != j else d1 for k in range(grid.dim)]
    out = mats[0]
    for mk in mats[1:]:
        out = sp.kron(out, mk, format="csr")
    return out


def fourth_difference(grid: Grid, j: int) -> sp.csr_matrix:
    dx = grid.spacing[j]
    return _axis_operator(grid, j, (1, -4, 6, -4, 1), dx ** -4)


def first_difference(grid: Grid, j: int) -> sp.csr_matrix:
    """(1/i) times the central first difference along axis j."""
    dx = grid.spacing[j]
    return _axis_operator(grid, j, (-1, 0, 1), 1 / (2 * dx)) * (-1j)


def laplacian(grid: Grid) -> sp.csr_matrix:
    out = sp.csr_matrix((grid.size, grid.size))
    for j in range(grid.dim):
        out = out + _axis_operator(grid, j, (1, -2, 1), grid.spacing[j] ** -2)
    return out.tocsr()


def _field(grid: Grid, value, name: str) -> np.ndarray:
    if isinstance(value, GridFunction):
        if value.grid != grid:
            raise ValueError(f"{name} lives on a different grid")
        return value.values
    arr = np.asarray(value, dtype=complex)
    if arr.ndim == 0:
        return np.full(grid.size, complex(arr))
    arr = arr.ravel()
    if arr.size != grid.size:
        raise ValueError(f"{name} has {arr.size} samples, grid has {grid.size} nodes")
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Sparse discretization over the interior unknowns of a grid.

    ``matrix`` is square (interior rows); ``image`` has a row for every node.
    """

    grid: Grid
    matrix: sp.csr_matrix
    image: sp.csr_matrix
    h: float
    kind: str
    A: tuple[np.ndarray, ...] | None = None
    q: np.ndarray | None = None
    weight: Weight | None = field(default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, u) -> np.ndarray:
        """Apply the full-grid operator to a grid function on all nodes."""
        vals = u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=complex)
        return self._full @ vals

    @property
    def _full(self) -> sp.csr_matrix:
        return self.__dict__["_full_matrix"]

    def export(self, path, which: str = "matrix") -> None:
        """Coordinate text: one ``row col re im`` line per stored entry."""
        m = (self.matrix if which == "matrix" else self.image).tocoo()
        order = np.lexsort((m.col, m.row))
        with open(path, "w") as fh:
            fh.write(f"# {m.shape[0]} {m.shape[1]} {m.nnz}\n")
            for k in order:
                v = complex(m.data[k])
                fh.write(f"{m.row[k]} {m.col[k]} {v.real!r} {v.imag!r}\n")


def _make(grid: Grid, full: sp.csr_matrix, h: float, kind: str, A=None, q=None) -> DiscreteOperator:
    inner = grid.interior
    full = full.tocsr()
    full.sort_indices()
    image = full[:, inner].tocsr()
    mat = image[inner, :].tocsr()
    op = DiscreteOperator(grid, mat, image, float(h), kind, A, q)
    object.__setattr__(op, "_full_matrix", full)
    return op


def _check_h(h) -> float:
    h = float(h)
    if not 0 < h <= 1:
        raise ValueError(f"h must lie in (0, 1], got {h}")
    return h


def assemble(grid: Grid, A=None, q=0.0, h=1.0) -> DiscreteOperator:
    """h^4 [sum_j d_j^4 + sum_j A_j (1/i) d_j + q] with central stencils.

    ``A`` is a sequence of n fields (scalars, arrays on the nodes or
    :class:`GridFunction`); ``None`` means A = 0.
    """
    h = _check_h(h)
    n = grid.dim
    full = sp.csr_matrix((grid.size, grid.size), dtype=complex)
    for j in range(n):
        full = full + fourth_difference(grid, j)
    a_fields = None
    if A is not None:
        if len(A) != n:
            raise ValueError(f"A needs {n} components, got {len(A)}")
        a_fields = tuple(_field(grid, a, f"A[{j}]") for j, a in enumerate(A))
        for j, aj in enumerate(a_fields):
            if np.any(aj):
                full = full + sp.diags(aj) @ first_difference(grid, j)
    qf = _field(grid, q, "q")
    if np.any(qf):
        full = full + sp.diags(qf)
    return _make(grid, (h ** 4) * full, h, FOURTH_SUM, a_fields, qf)


def assemble_bilaplacian(grid: Grid, h=1.0) -> DiscreteOperator:
    """(-h^2 Lap)^2, squaring the (2n+1)-point Laplacian.

    The square interior matrix is the square of the interior Laplacian block,
    the image is Lap_full times the interior columns of Lap_full.
    """
    h = _check_h(h)
    lap = laplacian(grid).astype(complex)
    inner = grid.interior
    full = (h ** 4) * (lap @ lap)
    op = _make(grid, full, h, BILAPLACIAN)
    li = lap[inner, :][:, inner]
    mat = ((h ** 4) * (li @ li)).tocsr()
    image = ((h ** 4) * (lap @ lap[:, inner])).tocsr()
    object.__setattr__(op, "matrix", mat)
    object.__setattr__(op, "image", image)
    return op


def _conj_entries(m: sp.spmatrix, phi_rows: np.ndarray, phi_cols: np.ndarray, h: float) -> sp.csr_matrix:
    c = m.tocoo()
    data = c.data * np.exp((phi_rows[c.row] - phi_cols[c.col]) / h)
    return sp.csr_matrix((data, (c.row, c.col)), shape=c.shape)


def conjugate(op: DiscreteOperator, w: Weight, h) -> DiscreteOperator:
    """Entries P_ij e^{(phi_i - phi_j)/h}, i.e. e^{phi/h} P e^{-phi/h}."""
    h = float(h)
    if not np.isclose(h, op.h, rtol=1e-12, atol=0):
        raise ValueError(f"operator was assembled with h={op.h}, conjugation asked for h={h}")
    if w.dim != op.grid.dim:
        raise ValueError("weight and grid dimensions differ")
    phi = np.asarray(w.values(op.grid.coords), dtype=float)
    if not np.all(np.isfinite(phi)):
        raise ValueError("weight evaluation produced non-finite values")
    inner = op.grid.interior
    mat = _conj_entries(op.matrix, phi[inner], phi[inner], h)
    image = _conj_entries(op.image, phi, phi[inner], h)
    full = _conj_entries(op._full, phi, phi, h)
    out = replace(op, matrix=mat, image=image, weight=w)
    object.__setattr__(out, "_full_matrix", full)
    return out


# -- norms -------------------------------------------------------------------


def forward_differences(grid: Grid, j: int) -> sp.csr_matrix:
    """Forward difference along axis j, mapping nodes to the m_j - 1 edges."""
    m = grid.nodes[j]
    dx = grid.spacing[j]
    d1 = sp.diags([np.full(m - 1, -1 / dx), np.full(m - 1, 1 / dx)], [0, 1], shape=(m - 1, m))
    mats = [sp.identity(grid.nodes[k]) if k != j else d1 for k in range(grid.dim)]
    out = mats[0]
    for mk in mats[1:]:
        out = sp.kron(out, mk)
    return out.tocsr()


def edge_weights(grid: Grid, j: int) -> np.ndarray:
    w = np.ones(1)
    for k in range(grid.dim):
        if k == j:
            wk = np.full(grid.nodes[k] - 1, grid.spacing[k])
        else:
            wk = np.full(grid.nodes[k], grid.spacing[k])
            wk[0] = wk[-1] = grid.spacing[k] / 2
        w = np.multiply.outer(w, wk)
    return w.ravel()


def norms(u: GridFunction, h: float) -> tuple[float, float]:
    """Trapezoid L^2 norm and semiclassical H^1 norm sqrt(l2^2 + h^2 |grad_+ u|^2)."""
    g = u.grid
    v = u.values
    l2sq = float(np.sum(g.quadrature_weights() * np.abs(v) ** 2))
    grad = 0.0
    for j in range(g.dim):
        d = forward_differences(g, j) @ v
        grad += float(np.sum(edge_weights(g, j) * np.abs(d) ** 2))
    return float(np.sqrt(l2sq)), float(np.sqrt(l2sq + h * h * grad))


def gram_matrix(grid: Grid, h: float, mode: str = "l2", columns: np.ndarray | None = None) -> sp.csr_matrix:
    """Gram matrix of the L^2 or H^1_scl norm restricted to the given node columns."""
    cols = grid.interior if columns is None else columns
    w = grid.quadrature_weights()
    G = sp.diags(w)
    if mode == "h1scl":
        for j in range(grid.dim):
            D = forward_differences(grid, j)
            G = G + (h * h) * (D.T @ sp.diags(edge_weights(grid, j)) @ D)
    elif mode != "l2":
        raise ValueError(f"unknown norm mode {mode!r}")
    G = sp.csr_matrix(G)
    return G[cols, :][:, cols].tocsr()


# -- smallest singular value ------------------------------------------------------


@dataclass(frozen=True)
class SigmaResult:
    value: float
    converged: bool
    iterations: int
    method: str

    def __float__(self) -> float:
        return self.value


def _as_matrix(op) -> sp.spmatrix:
    return op.matrix if isinstance(op, DiscreteOperator) else sp.csr_matrix(op)


def sigma_min_dense(op, row_weights=None, gram=None) -> float:
    """Oracle: min ||W^{1/2} A x|| / ||x||_G by a dense SVD."""
    A = _as_matrix(op).toarray().astype(complex)
    if row_weights is not None:
        A = np.sqrt(np.asarray(row_weights, float))[:, None] * A
    if gram is not None:
        G = gram.toarray() if sp.issparse(gram) else np.asarray(gram)
        L = np.linalg.cholesky(G)
        A = sla.solve_triangular(L, A.conj().T, lower=True).conj().T
    return float(sla.svdvals(A)[-1])


def sigma_min(op, tol: float = 1e-10, max_iter: int = 300, row_weights=None, gram=None,
              block: int = 4, seed: int = 0) -> SigmaResult:
    """Smallest (generalized) singular value by block inverse iteration.

    Solves with A^H W A through the sparse augmented system
    [[W^{-1}, A], [A^H, 0]], so rectangular A (more rows than columns) is
    allowed; a Rayleigh-Ritz step on the block gives the estimate.  ``gram``
    replaces the Euclidean norm on the unknowns by x^H G x.  Converged means the
    relative change of the Ritz value fell below ``tol`` twice in a row.
    """
    A = _as_matrix(op).tocsc().astype(complex)
    r, c = A.shape
    if r < c:
        raise ValueError(f"need at least as many rows as columns, got {A.shape}")
    wv = np.ones(r) if row_weights is None else np.asarray(row_weights, float)
    if wv.shape != (r,) or np.any(wv <= 0):
        raise ValueError("row weights must be positive, one per row")
    G = sp.identity(c, format="csc") if gram is None else sp.csc_matrix(gram)
    if r == c and row_weights is None:
        lu = spla.splu(A)

        def solve(b):
            z = lu.solve(b, trans="H")
            return lu.solve(z)
    else:
        K = sp.bmat([[sp.diags(1.0 / wv), A], [A.conj().T, None]], format="csc")
        lu = spla.splu(K)

        def solve(b):
            rhs = np.zeros((r + c, b.shape[1]), dtype=complex)
            rhs[r:] = b
            return -lu.solve(rhs)[r:]

    k = max(1, min(block, c))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((c, k)) + 1j * rng.standard_normal((c, k))
    sw = np.sqrt(wv)
    prev, hits, lam, it = np.inf, 0, np.inf, 0
    for it in range(1, max_iter + 1):
        Y = solve(G @ X)
        Y, _ = np.linalg.qr(Y)
        AY = sw[:, None] * (A @ Y)
        M = AY.conj().T @ AY
        Gm = Y.conj().T @ (G @ Y)
        vals, vecs = sla.eigh((M + M.conj().T) / 2, (Gm + Gm.conj().T) / 2)
        lam = max(float(vals[0]), 0.0)
        X = Y @ vecs
        if abs(lam - prev) <= tol * max(lam, np.finfo(float).tiny):
            hits += 1
            if hits >= 2:
                return SigmaResult(float(np.sqrt(lam)), True, it, "inverse-subspace")
        else:
            hits = 0
        prev = lam
    return SigmaResult(float(np.sqrt(lam)), False, it, "inverse-subspace")


__all__ = [
    "Grid", "GridFunction", "DiscreteOperator", "build_grid", "assemble", "assemble_bilaplacian",
    "conjugate", "norms", "gram_matrix", "sigma_min", "sigma_min_dense", "SigmaResult",
    "fourth_difference", "first_difference", "laplacian", "forward_differences", "edge_weights",
    "FOURTH_SUM", "BILAPLACIAN", "MIN_NODES",
]
