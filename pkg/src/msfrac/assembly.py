"""Fine-grid operators for the fractured single- and multi-continuum problems.

Area terms use bilinear Q1 elements on the structured fine quads with one
coefficient value per cell; fracture terms use linear 1-D elements on fine
edges. The multi-continuum system is block-diagonal in mass/stiffness with a
symmetric negative-semidefinite transfer coupling built from the consistent
(or optionally lumped) mass matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import GammaNotNormalized, NodeNotFound
from .grid import FineGrid, FractureMesh, MeshHierarchy, Neighborhood, empty_fracture_mesh


def q1_stiffness_ref(hx: float, hy: float) -> np.ndarray:
    """Element stiffness for unit coefficient, node order [SW, SE, NE, NW]."""
    kx = np.array([[2, -2, -1, 1],
                   [-2, 2, 1, -1],
                   [-1, 1, 2, -2],
                   [1, -1, -2, 2]], dtype=float) * (hy / hx / 6.0)
    ky = np.array([[2, 1, -1, -2],
                   [1, 2, -2, -1],
                   [-1, -2, 2, 1],
                   [-2, -1, 1, 2]], dtype=float) * (hx / hy / 6.0)
    return kx + ky


def q1_mass_ref(hx: float, hy: float) -> np.ndarray:
    """Element mass for unit coefficient."""
    return np.array([[4, 2, 1, 2],
                     [2, 4, 2, 1],
                     [1, 2, 4, 2],
                     [2, 1, 2, 4]], dtype=float) * (hx * hy / 36.0)


def _edge_lengths(fine: FineGrid, edges: np.ndarray) -> np.ndarray:
    d = fine.vertices[edges[:, 1]] - fine.vertices[edges[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def assemble_area(fine: FineGrid, weight: np.ndarray, form: str,
                  cell_ids: np.ndarray | None = None,
                  node_map: np.ndarray | None = None,
                  n_local: int | None = None) -> sp.csr_matrix:
    """Assemble a Q1 area form with per-cell weights.

    ``form`` is "stiffness" or "mass". If ``cell_ids``/``node_map`` are given,
    only those cells are assembled and node ids are mapped through
    ``node_map`` (global node -> local row), yielding an (n_local, n_local)
    matrix assembled purely from the selected cells.
    """
    ref = q1_stiffness_ref(fine.hx, fine.hy) if form == "stiffness" else q1_mass_ref(fine.hx, fine.hy)
    cells = fine.cells if cell_ids is None else fine.cells[cell_ids]
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        w = np.full(cells.shape[0], float(w))
    elif cell_ids is not None and w.size == fine.n_cells:
        w = w[cell_ids]
    if node_map is not None:
        cells = node_map[cells]
        n = n_local
    else:
        n = fine.n_nodes
    vals = w[:, None, None] * ref[None, :, :]
    rows = np.repeat(cells, 4, axis=1)
    cols = np.tile(cells, (1, 4))
    return _scatter(rows, cols, vals, (n, n))


def assemble_edges(fine: FineGrid, edges: np.ndarray, weight: np.ndarray, form: str,
                   node_map: np.ndarray | None = None,
                   n_local: int | None = None) -> sp.csr_matrix:
    """Assemble a 1-D linear-element form along fine edges with per-edge weights."""
    n = fine.n_nodes if node_map is None else n_local
    if edges.shape[0] == 0:
        return sp.csr_matrix((n, n))
    L = _edge_lengths(fine, edges)
    w = np.asarray(weight, dtype=float)
    if w.ndim == 0:
        w = np.full(edges.shape[0], float(w))
    if form == "stiffness":
        coef = w / L
        ref = np.array([[1.0, -1.0], [-1.0, 1.0]])
    else:
        coef = w * L / 6.0
        ref = np.array([[2.0, 1.0], [1.0, 2.0]])
    e = edges if node_map is None else node_map[edges]
    vals = coef[:, None, None] * ref[None, :, :]
    rows = np.repeat(e, 2, axis=1)
    cols = np.tile(e, (1, 2))
    return _scatter(rows, cols, vals, (n, n))


def load_vector(fine: FineGrid, source: np.ndarray) -> np.ndarray:
    """Load vector for a piecewise-constant source (one value per cell)."""
    b = np.zeros(fine.n_nodes)
    q = np.asarray(source, dtype=float)
    if q.ndim == 0:
        q = np.full(fine.n_cells, float(q))
    np.add.at(b, fine.cells.ravel(),
              np.repeat(q * fine.hx * fine.hy / 4.0, 4))
    return b


# ---------------------------------------------------------------------------
# continuum systems


@dataclass
class ContinuumSystem:
    """Coefficients of an N-continuum fine-grid model.

    Per continuum: matrix porosity and permeability as per-cell fields.
    Resolved-fracture couplings default to ``gamma[s]`` times the fracture's
    own coefficients; explicit per-edge overrides may be supplied. Transfer
    coefficients are per-cell fields keyed by the unordered continuum pair.
    """

    n: int
    kappa: np.ndarray  # (n, n_cells)
    porosity: np.ndarray  # (n, n_cells)
    gamma: np.ndarray  # (n,) fracture weights, sums to 1
    transfer: dict = None  # {(i, j): field over cells}, i < j
    source: np.ndarray | None = None  # (n, n_cells)
    frac_kappa: np.ndarray | None = None  # (n, n_edges) override
    frac_porosity: np.ndarray | None = None

    def __post_init__(self):
        self.kappa = np.atleast_2d(np.asarray(self.kappa, dtype=float))
        self.porosity = np.atleast_2d(np.asarray(self.porosity, dtype=float))
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.transfer is None:
            self.transfer = {}
        if abs(self.gamma.sum() - 1.0) > 1e-12:
            raise GammaNotNormalized(f"sum(gamma) = {self.gamma.sum()!r}")
        if np.any(self.kappa <= 0) or np.any(self.porosity <= 0):
            raise ValueError("porosities and permeabilities must be positive")
        for key, q in self.transfer.items():
            if np.any(np.asarray(q) < 0):
                raise ValueError(f"transfer field {key} must be nonnegative")

    def edge_kappa(self, fm: FractureMesh, s: int) -> np.ndarray:
        if self.frac_kappa is not None:
            return self.frac_kappa[s]
        return self.gamma[s] * fm.edge_kappa()

    def edge_porosity(self, fm: FractureMesh, s: int) -> np.ndarray:
        if self.frac_porosity is not None:
            return self.frac_porosity[s]
        return self.gamma[s] * fm.edge_porosity()


def single_system(fine: FineGrid, kappa, porosity, source=None) -> ContinuumSystem:
    """Wrap scalar-problem coefficients as a one-continuum system."""
    k = np.asarray(kappa, dtype=float)
    if k.ndim == 0:
        k = np.full(fine.n_cells, float(k))
    c = np.asarray(porosity, dtype=float)
    if c.ndim == 0:
        c = np.full(fine.n_cells, float(c))
    src = None
    if source is not None:
        s = np.asarray(source, dtype=float)
        src = (np.full(fine.n_cells, float(s)) if s.ndim == 0 else s)[None, :]
    return ContinuumSystem(n=1, kappa=k[None, :], porosity=c[None, :],
                           gamma=np.array([1.0]), source=src)


@dataclass
class FineOperators:
    """Assembled operators of the (block) fine-grid system.

    ``M`` is the porosity-weighted storage mass, ``A`` the stiffness, ``Bq``
    the transfer coupling (q-form; zero matrix when absent), ``Sw`` the
    permeability-weighted mass used for weighted norms and projections. All
    are (n*ndof) square with continuum-major block ordering.
    """

    n: int
    ndof: int
    M: sp.csr_matrix
    A: sp.csr_matrix
    Bq: sp.csr_matrix
    b: np.ndarray
    Sw: sp.csr_matrix
    dirichlet: list  # [(block dof, value)]

    @property
    def size(self) -> int:
        return self.n * self.ndof

    def a_q(self) -> sp.csr_matrix:
        return (self.A - self.Bq).tocsr()

    def block(self, mat: sp.spmatrix, s: int) -> sp.csr_matrix:
        lo, hi = s * self.ndof, (s + 1) * self.ndof
        return mat.tocsr()[lo:hi, lo:hi]

    def free_fixed(self):
        fixed = np.array([d for d, _ in self.dirichlet], dtype=int)
        vals = np.array([v for _, v in self.dirichlet], dtype=float)
        mask = np.ones(self.size, dtype=bool)
        mask[fixed] = False
        return np.nonzero(mask)[0], fixed, vals


def _continuum_matrices(fine: FineGrid, fm: FractureMesh, sys: ContinuumSystem, s: int):
    A = assemble_area(fine, sys.kappa[s], "stiffness") \
        + assemble_edges(fine, fm.edges, sys.edge_kappa(fm, s), "stiffness")
    M = assemble_area(fine, sys.porosity[s], "mass") \
        + assemble_edges(fine, fm.edges, sys.edge_porosity(fm, s), "mass")
    Sw = assemble_area(fine, sys.kappa[s], "mass") \
        + assemble_edges(fine, fm.edges, sys.edge_kappa(fm, s), "mass")
    return A.tocsr(), M.tocsr(), Sw.tocsr()


def assemble_transfer(fine: FineGrid, sys: ContinuumSystem, lumped: bool = False) -> sp.csr_matrix:
    """Transfer coupling Bq with q(u, u) <= 0 and Bq (1, ..., 1) = 0.

    For each pair (i, j) with field Q the blocks carry -W on the diagonal and
    +W off-diagonal, W being the Q-weighted mass matrix (lumped on request).
    """
    nd = fine.n_nodes
    B = sp.lil_matrix((sys.n * nd, sys.n * nd))
    blocks = {}
    for (i, j), q in sys.transfer.items():
        W = assemble_area(fine, q, "mass")
        if lumped:
            W = sp.diags(np.asarray(W.sum(axis=1)).ravel())
        blocks[(i, j)] = W
    if not blocks:
        return sp.csr_matrix((sys.n * nd, sys.n * nd))
    parts = []
    grid = [[None] * sys.n for _ in range(sys.n)]
    for i in range(sys.n):
        grid[i][i] = sp.csr_matrix((nd, nd))
    for (i, j), W in blocks.items():
        grid[i][j] = W
        grid[j][i] = W.T
        grid[i][i] = grid[i][i] - W
        grid[j][j] = grid[j][j] - W
    return sp.bmat(grid, format="csr")


def assemble_multi(hier: MeshHierarchy, fm: FractureMesh, sys: ContinuumSystem,
                   lumped_transfer: bool = False) -> FineOperators:
    """Assemble the N-continuum block system on the fine grid."""
    fine = hier.fine
    As, Ms, Sws, bs = [], [], [], []
    for s in range(sys.n):
        A, M, Sw = _continuum_matrices(fine, fm, sys, s)
        As.append(A)
        Ms.append(M)
        Sws.append(Sw)
        bs.append(load_vector(fine, sys.source[s]) if sys.source is not None
                  else np.zeros(fine.n_nodes))
    Bq = assemble_transfer(fine, sys, lumped=lumped_transfer)
    return FineOperators(n=sys.n, ndof=fine.n_nodes,
                         M=sp.block_diag(Ms, format="csr"),
                         A=sp.block_diag(As, format="csr"),
                         Bq=Bq, b=np.concatenate(bs),
                         Sw=sp.block_diag(Sws, format="csr"), dirichlet=[])


def assemble_single(hier: MeshHierarchy, kappa, porosity,
                    fm: FractureMesh | None = None, source=None) -> FineOperators:
    """Single-continuum fractured problem (N = 1 block system)."""
    if fm is None:
        fm = empty_fracture_mesh()
    sys = single_system(hier.fine, kappa, porosity, source)
    return assemble_multi(hier, fm, sys)


def apply_bc(ops: FineOperators, fine: FineGrid, points: list, value: float = 0.0,
             continua: list | None = None) -> FineOperators:
    """Eliminate point Dirichlet conditions symmetrically with load correction.

    ``points`` may hold (x, y) tuples or fine node ids. Conditions apply to
    every continuum unless ``continua`` restricts them. Zero Neumann remains
    the natural condition elsewhere.
    """
    dofs = []
    for p in points:
        node = p if np.isscalar(p) else fine.node_at(float(p[0]), float(p[1]))
        if not (0 <= node < ops.ndof):
            raise NodeNotFound(f"node {node} outside the fine grid")
        for s in (range(ops.n) if continua is None else continua):
            dofs.append(s * ops.ndof + int(node))
    if not dofs:
        return ops

    K = ops.a_q().tolil()
    M = ops.M.tolil()
    A = ops.A.tolil()
    Bq = ops.Bq.tolil()
    b = ops.b.copy()
    for d in dofs:
        b -= value * np.asarray(K[:, d].todense()).ravel()
    for d in dofs:
        for mat in (M, A, Bq):
            mat[d, :] = 0.0
            mat[:, d] = 0.0
        A[d, d] = 1.0
        b[d] = value
    dirichlet = ops.dirichlet + [(d, value) for d in dofs]
    return replace(ops, M=M.tocsr(), A=A.tocsr(), Bq=Bq.tocsr(), b=b,
                   dirichlet=dirichlet)


# ---------------------------------------------------------------------------
# local (per-neighborhood) operators


def local_edge_set(omega: Neighborhood, fm: FractureMesh):
    """Fracture edges inside the patch, with their edge-table indices."""
    from .grid import restrict_edges

    idx = restrict_edges(omega, fm)
    return fm.edges[idx], idx


def node_map_for(omega: Neighborhood, n_nodes: int) -> np.ndarray:
    nm = np.full(n_nodes, -1, dtype=int)
    nm[omega.nodes] = np.arange(omega.n_nodes)
    return nm


def local_stiffness(fine: FineGrid, omega: Neighborhood, fm: FractureMesh,
                    kappa_cells: np.ndarray, edge_kappa: np.ndarray) -> sp.csr_matrix:
    """Locally assembled a-form on the patch (area + fracture terms)."""
    nm = node_map_for(omega, fine.n_nodes)
    edges, idx = local_edge_set(omega, fm)
    A = assemble_area(fine, kappa_cells, "stiffness", cell_ids=omega.fine_cells,
                      node_map=nm, n_local=omega.n_nodes)
    ek = np.asarray(edge_kappa, dtype=float)
    if ek.size == fm.n_edges:
        ek = ek[idx]
    return (A + assemble_edges(fine, edges, ek, "stiffness",
                               node_map=nm, n_local=omega.n_nodes)).tocsr()


def local_weighted_mass(fine: FineGrid, omega: Neighborhood, fm: FractureMesh,
                        cell_weight: np.ndarray, edge_weight: np.ndarray) -> sp.csr_matrix:
    """Locally assembled weighted mass on the patch (area + fracture terms)."""
    nm = node_map_for(omega, fine.n_nodes)
    edges, idx = local_edge_set(omega, fm)
    S = assemble_area(fine, cell_weight, "mass", cell_ids=omega.fine_cells,
                      node_map=nm, n_local=omega.n_nodes)
    ew = np.asarray(edge_weight, dtype=float)
    if ew.size == fm.n_edges:
        ew = ew[idx]
    return (S + assemble_edges(fine, edges, ew, "mass",
                               node_map=nm, n_local=omega.n_nodes)).tocsr()


def local_transfer(fine: FineGrid, omega: Neighborhood, sys: ContinuumSystem) -> sp.csr_matrix:
    """Transfer coupling assembled over the patch cells only."""
    nm = node_map_for(omega, fine.n_nodes)
    nloc = omega.n_nodes
    grid = [[sp.csr_matrix((nloc, nloc)) for _ in range(sys.n)] for _ in range(sys.n)]
    for (i, j), q in sys.transfer.items():
        W = assemble_area(fine, q, "mass", cell_ids=omega.fine_cells,
                          node_map=nm, n_local=nloc)
        grid[i][j] = grid[i][j] + W
        grid[j][i] = grid[j][i] + W.T
        grid[i][i] = grid[i][i] - W
        grid[j][j] = grid[j][j] - W
    return sp.bmat(grid, format="csr")


def local_block_stiffness(fine: FineGrid, omega: Neighborhood, fm: FractureMesh,
                          sys: ContinuumSystem, coupled: bool) -> sp.csr_matrix:
    """Block a-form on the patch; subtracts the transfer form when coupled."""
    blocks = [local_stiffness(fine, omega, fm, sys.kappa[s], sys.edge_kappa(fm, s))
              for s in range(sys.n)]
    A = sp.block_diag(blocks, format="csr")
    if coupled:
        A = (A - local_transfer(fine, omega, sys)).tocsr()
    return A
