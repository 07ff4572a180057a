"""Simplified basis functions: one local solve per fracture network.

For each neighborhood and each fracture network meeting its boundary, a local
flow solve carries value one at that network's boundary-intersection points
and zero at every other boundary fine node. Together with the plain hat
function as the background mode, and after multiplication by the hat, these
span a small space that captures the network/matrix interaction without any
eigenproblem.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from .assembly import ContinuumSystem, local_block_stiffness, local_stiffness
from .grid import FractureMesh, MeshHierarchy, Neighborhood, network_boundary_points
from .snapshots import _extend, _interior_solve
from .spectral import OfflineSpace, chi_node_values, pou_matrix


def _network_boundary_data(omega: Neighborhood, networks: list) -> np.ndarray:
    """(n_boundary, n_funcs) 0/1 boundary data, one column per touching network."""
    cols = []
    bpos = {int(g): k for k, g in enumerate(omega.nodes[omega.boundary])}
    for net in networks:
        if net.boundary_nodes.size == 0:
            continue
        g = np.zeros(omega.boundary.size)
        for node in net.boundary_nodes:
            g[bpos[int(node)]] = 1.0
        cols.append(g)
    return np.column_stack(cols) if cols else np.zeros((omega.boundary.size, 0))


def simplified_basis(omega: Neighborhood, fm: FractureMesh, A_loc: sp.csr_matrix,
                     chi_loc: np.ndarray) -> list:
    """Hat-multiplied network functions plus the background hat itself.

    Returns a list of local fine-grid functions (arrays over ``omega.nodes``):
    one per boundary-touching network, then the background. Interior-only
    networks contribute nothing (warned).
    """
    networks = network_boundary_points(omega, fm)
    n_interior_only = sum(1 for n in networks if n.boundary_nodes.size == 0)
    if n_interior_only:
        warnings.warn(f"omega {omega.node}: {n_interior_only} interior-only "
                      "network(s) contribute no simplified basis function")
    G = _network_boundary_data(omega, networks)
    funcs = []
    if G.shape[1]:
        X = _interior_solve(A_loc, omega.interior, omega.boundary, G)
        phi = _extend(omega.interior, omega.boundary, omega.n_nodes, X, G)
        funcs.extend(chi_loc * phi[k] for k in range(phi.shape[0]))
    funcs.append(chi_loc.copy())  # background mode: the hat itself
    return funcs


def simplified_basis_cellwise(omega: Neighborhood, hier: MeshHierarchy,
                              fm: FractureMesh, kappa_cells, edge_kappa,
                              chi_loc: np.ndarray) -> list:
    """Per-coarse-cell variant: network solves are confined to each cell.

    Every (cell, network-touching-its-boundary) pair yields one function,
    stitched into the neighborhood (zero outside the cell) and multiplied by
    the hat. The background hat is appended once.
    """
    from .grid import _patch_nodes

    fine = hier.fine
    s = hier.refine
    funcs = []
    for cc in omega.coarse_cells:
        cx, cy = cc % hier.coarse.nx, cc // hier.coarse.nx
        sub = _cell_patch(hier, cx, cy)
        A_loc = local_stiffness(fine, sub, fm, kappa_cells, edge_kappa)
        networks = network_boundary_points(sub, fm)
        G = _network_boundary_data(sub, networks)
        if G.shape[1] == 0:
            continue
        X = _interior_solve(A_loc, sub.interior, sub.boundary, G)
        phi = _extend(sub.interior, sub.boundary, sub.n_nodes, X, G)
        take = omega.local_index(sub.nodes)
        for k in range(phi.shape[0]):
            f = np.zeros(omega.n_nodes)
            f[take] = phi[k]
            funcs.append(chi_loc * f)
    funcs.append(chi_loc.copy())
    return funcs


def _cell_patch(hier: MeshHierarchy, cx: int, cy: int) -> Neighborhood:
    """A single coarse cell viewed as a patch with its own interior/boundary."""
    from .grid import _patch_cells, _patch_nodes

    s = hier.refine
    fine = hier.fine
    nodes, interior, boundary = _patch_nodes(fine, cx * s, (cx + 1) * s,
                                             cy * s, (cy + 1) * s)
    cells = _patch_cells(fine, cx * s, (cx + 1) * s - 1, cy * s, (cy + 1) * s - 1)
    return Neighborhood(node=-1, coarse_cells=np.array([cy * hier.coarse.nx + cx]),
                        fine_cells=cells, nodes=nodes, interior=interior,
                        boundary=boundary,
                        box=(cx * s, (cx + 1) * s, cy * s, (cy + 1) * s))


def build_simplified_R(hier: MeshHierarchy, fm: FractureMesh, sys: ContinuumSystem,
                       cellwise: bool = False) -> OfflineSpace:
    """Global simplified-basis operator, block-diagonal over continua."""
    n_fine = hier.fine.n_nodes
    chi = pou_matrix(hier)
    rows, cols, vals, rows_meta = [], [], [], []
    counts = np.zeros((sys.n, hier.n_coarse_nodes), dtype=int)
    r = 0
    for s in range(sys.n):
        for hood in hier.neighborhoods:
            chi_loc = chi_node_values(hier, hood.node, hood.nodes)
            if cellwise:
                funcs = simplified_basis_cellwise(hier.neighborhoods[hood.node], hier,
                                                  fm, sys.kappa[s],
                                                  sys.edge_kappa(fm, s), chi_loc)
            else:
                A_loc = local_stiffness(hier.fine, hood, fm, sys.kappa[s],
                                        sys.edge_kappa(fm, s))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    funcs = simplified_basis(hood, fm, A_loc, chi_loc)
            counts[s, hood.node] = len(funcs)
            for k, f in enumerate(funcs):
                nz = f != 0.0
                rows.append(np.full(int(nz.sum()), r))
                cols.append(s * n_fine + hood.nodes[nz])
                vals.append(f[nz])
                rows_meta.append((s, hood.node, k))
                r += 1
    R = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(r, sys.n * n_fine)).tocsr()
    return OfflineSpace(R=R, counts=counts, rows=rows_meta, eigs=[], spaces=[],
                        chi=chi, n_continua=sys.n)
