"""Local spectral problems, basis selection and the global coarse operator R.

The offline eigenproblem is solved densely in snapshot coordinates (local
dimension is at most a few hundred), with two mass weightings: the
permeability-weighted snapshot mass and the partition-of-unity gradient form
used by the convergence analysis. Dominant modes are multiplied by bilinear
coarse hats to obtain conforming basis functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .assembly import (ContinuumSystem, local_block_stiffness, local_stiffness,
                       local_weighted_mass, local_transfer)
from .errors import SelectionEmpty, SingularGram
from .grid import FractureMesh, MeshHierarchy, Neighborhood
from .snapshots import SnapshotSpace

GAP_RATIO_DEFAULT = 1e3


# ---------------------------------------------------------------------------
# partition of unity (bilinear coarse hats)


def _hat_1d(t: np.ndarray, center: float, H: float) -> np.ndarray:
    return np.clip(1.0 - np.abs(t - center) / H, 0.0, None)


def _hat_grad_1d(t: np.ndarray, center: float, H: float) -> np.ndarray:
    inside = np.abs(t - center) < H
    return np.where(inside, -np.sign(t - center) / H, 0.0)


def chi_node_values(hier: MeshHierarchy, i: int, nodes: np.ndarray | None = None) -> np.ndarray:
    """Hat function of coarse node i evaluated at fine nodes."""
    X, Y = hier.coarse.vertices[i]
    Hx = hier.domain.lx / hier.coarse.nx
    Hy = hier.domain.ly / hier.coarse.ny
    pts = hier.fine.vertices if nodes is None else hier.fine.vertices[nodes]
    return _hat_1d(pts[:, 0], X, Hx) * _hat_1d(pts[:, 1], Y, Hy)


def chi_cell_grad_sq(hier: MeshHierarchy, i: int, cell_ids: np.ndarray) -> np.ndarray:
    """|grad chi_i|^2 at cell centers (midpoint quadrature weight)."""
    X, Y = hier.coarse.vertices[i]
    Hx = hier.domain.lx / hier.coarse.nx
    Hy = hier.domain.ly / hier.coarse.ny
    c = hier.fine.vertices[hier.fine.cells[cell_ids][:, 0]]
    xc = c[:, 0] + hier.fine.hx / 2.0
    yc = c[:, 1] + hier.fine.hy / 2.0
    gx = _hat_grad_1d(xc, X, Hx) * _hat_1d(yc, Y, Hy)
    gy = _hat_1d(xc, X, Hx) * _hat_grad_1d(yc, Y, Hy)
    return gx * gx + gy * gy


def chi_edge_grad_sq(hier: MeshHierarchy, i: int, edges: np.ndarray) -> np.ndarray:
    """Tangential |grad_f chi_i|^2 at fracture-edge midpoints."""
    if edges.shape[0] == 0:
        return np.zeros(0)
    X, Y = hier.coarse.vertices[i]
    Hx = hier.domain.lx / hier.coarse.nx
    Hy = hier.domain.ly / hier.coarse.ny
    p = hier.fine.vertices[edges[:, 0]]
    q = hier.fine.vertices[edges[:, 1]]
    mid = 0.5 * (p + q)
    horizontal = np.isclose(p[:, 1], q[:, 1])
    gx = _hat_grad_1d(mid[:, 0], X, Hx) * _hat_1d(mid[:, 1], Y, Hy)
    gy = _hat_1d(mid[:, 0], X, Hx) * _hat_grad_1d(mid[:, 1], Y, Hy)
    g = np.where(horizontal, gx, gy)
    return g * g


def pou_matrix(hier: MeshHierarchy) -> sp.csr_matrix:
    """Sparse (n_coarse_nodes x n_fine_nodes) matrix of hat values."""
    rows, cols, vals = [], [], []
    for i, hood in enumerate(hier.neighborhoods):
        v = chi_node_values(hier, i, hood.nodes)
        keep = v != 0.0
        rows.append(np.full(int(keep.sum()), i))
        cols.append(hood.nodes[keep])
        vals.append(v[keep])
    return sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(hier.n_coarse_nodes, hier.fine.n_nodes)).tocsr()


# ---------------------------------------------------------------------------
# offline eigenproblem


@dataclass
class EigenPairs:
    """Eigenpairs of one neighborhood, ascending, S-orthonormal vectors.

    ``vectors`` columns live in snapshot coordinates: column k combines the
    snapshot vectors into the k-th offline mode.
    """

    omega: int
    values: np.ndarray
    vectors: np.ndarray
    kind: str
    continuum: int | None = None


def _dense_gen_eigh(A: np.ndarray, S: np.ndarray, drop_tol: float = 1e-12):
    """Generalized symmetric eigensolve with rank-revealing fallback."""
    A = 0.5 * (A + A.T)
    S = 0.5 * (S + S.T)
    try:
        w, v = la.eigh(A, S)
        return w, v
    except la.LinAlgError:
        pass
    s_vals, U = la.eigh(S)
    keep = s_vals > drop_tol * max(s_vals.max(), 0.0)
    if not np.any(keep):
        raise SingularGram("snapshot Gram matrix has no positive directions")
    T = U[:, keep] / np.sqrt(s_vals[keep])
    try:
        w, z = la.eigh(0.5 * (T.T @ A @ T + (T.T @ A @ T).T))
    except la.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    return w, T @ z


def _local_weight_fields(hier, fm, sys, omega, s, weighting):
    from .assembly import local_edge_set

    if weighting == "kappa_mass":
        return sys.kappa[s], sys.edge_kappa(fm, s)
    if weighting == "pou_gradient":
        wc = sys.kappa[s][omega.fine_cells] * chi_cell_grad_sq(hier, omega.node, omega.fine_cells)
        edges, idx = local_edge_set(omega, fm)
        we = sys.edge_kappa(fm, s)[idx] * chi_edge_grad_sq(hier, omega.node, edges)
        return wc, we
    raise ValueError(f"unknown weighting {weighting!r}")


def local_mass(hier: MeshHierarchy, fm: FractureMesh, sys: ContinuumSystem,
               omega: Neighborhood, weighting: str, continua) -> sp.csr_matrix:
    """Weighted snapshot mass on the patch, one block per listed continuum."""
    blocks = []
    for s in continua:
        wc, we = _local_weight_fields(hier, fm, sys, omega, s, weighting)
        blocks.append(local_weighted_mass(hier.fine, omega, fm, wc, we))
    return blocks[0] if len(blocks) == 1 else sp.block_diag(blocks, format="csr")


def offline_eig(snap: SnapshotSpace, hier: MeshHierarchy, fm: FractureMesh,
                sys: ContinuumSystem, weighting: str = "kappa_mass",
                bilinear: str = "a") -> EigenPairs:
    """Solve the local spectral problem of one snapshot space.

    ``weighting`` selects the mass form (permeability-weighted snapshot mass,
    or the hat-gradient form used by the analysis); ``bilinear`` selects the
    energy form ("a", or "a_Q" which requires coupled snapshots).
    """
    omega = hier.neighborhoods[snap.omega]
    if snap.kind == "coupled":
        A_loc = local_block_stiffness(hier.fine, omega, fm, sys,
                                      coupled=(bilinear == "a_Q"))
        S_loc = local_mass(hier, fm, sys, omega, weighting, range(sys.n))
    else:
        if bilinear == "a_Q":
            raise ValueError("bilinear='a_Q' requires coupled snapshots")
        s = snap.continuum or 0
        A_loc = local_stiffness(hier.fine, omega, fm, sys.kappa[s],
                                sys.edge_kappa(fm, s))
        wc, we = _local_weight_fields(hier, fm, sys, omega, s, weighting)
        S_loc = local_weighted_mass(hier.fine, omega, fm, wc, we)

    V = snap.flat_vectors()
    A_off = V @ (A_loc @ V.T)
    S_off = V @ (S_loc @ V.T)
    w, z = _dense_gen_eigh(A_off, S_off)
    return EigenPairs(omega=snap.omega, values=w, vectors=z, kind=snap.kind,
                      continuum=snap.continuum)


def count_networks(values: np.ndarray, gap_ratio: float = GAP_RATIO_DEFAULT) -> int:
    """Number of modes before the highest-index multiplicative spectral gap.

    Scans ratios lambda_{k+1} / max(lambda_k, eps) ascending and returns the
    largest k whose ratio exceeds ``gap_ratio`` (0 when no gap qualifies).
    """
    lam = np.asarray(values, dtype=float)
    if lam.size < 2:
        return 0
    eps = 1e-300
    found = 0
    for k in range(lam.size - 1):
        ratio = lam[k + 1] / max(lam[k], eps)
        if ratio > gap_ratio:
            found = k + 1
    return found


# ---------------------------------------------------------------------------
# global basis operator


@dataclass
class OfflineSpace:
    """Global coarse space: POU-multiplied offline modes of every group.

    A "group" is one continuum for un-coupled bases (R block-diagonal over
    continua) or the single coupled family (each coarse dof is an N-block
    fine function). Rows of R are ordered (group, omega, mode).
    """

    R: sp.csr_matrix  # (n_c, n_continua * n_fine)
    counts: np.ndarray  # (n_groups, n_omegas) kept modes
    rows: list  # (group, omega, k) per coarse dof
    eigs: list  # groups -> per-omega EigenPairs
    spaces: list  # groups -> per-omega SnapshotSpace
    chi: sp.csr_matrix
    n_continua: int

    @property
    def n_c(self) -> int:
        return self.R.shape[0]


def select_counts(eigs_group: list, selection, warn: bool = True) -> np.ndarray:
    """Kept-mode count per neighborhood under a selection rule.

    ``selection`` is ("fixed", M), ("per_omega", counts) or
    ("lambda", threshold_or_None, offset); the default lambda threshold is
    1e-3 times the median eigenvalue of the neighborhood.
    """
    mode = selection[0]
    out = np.zeros(len(eigs_group), dtype=int)
    for j, e in enumerate(eigs_group):
        L = e.values.size
        if mode == "fixed":
            out[j] = min(int(selection[1]), L)
        elif mode == "per_omega":
            out[j] = min(int(selection[1][j]), L)
        elif mode == "lambda":
            thr = selection[1]
            if thr is None:
                thr = 1e-3 * float(np.median(e.values))
            m = int(np.sum(e.values < thr)) + int(selection[2])
            out[j] = min(max(m, 0), L)
        else:
            raise ValueError(f"unknown selection {selection!r}")
        if out[j] == 0 and warn:
            warnings.warn(f"omega {e.omega}: selection kept 0 basis functions",
                          SelectionEmpty)
    return out


def build_R(hier: MeshHierarchy, groups: list, selection, n_continua: int) -> OfflineSpace:
    """Assemble the coarse basis operator from per-group eigenpairs.

    ``groups`` is a list of (spaces, eigs) pairs, each covering every
    neighborhood in order. Scalar groups are placed in their continuum block;
    a coupled group fills all blocks of its column range.
    """
    n_fine = hier.fine.n_nodes
    chi = pou_matrix(hier)
    counts = np.zeros((len(groups), hier.n_coarse_nodes), dtype=int)
    rows_meta = []
    rows, cols, vals = [], [], []
    r = 0
    for g, (spaces, eigs) in enumerate(groups):
        counts[g] = select_counts(eigs, selection)
        for j, (space, eig) in enumerate(zip(spaces, eigs)):
            hood = hier.neighborhoods[space.omega]
            chi_loc = chi_node_values(hier, space.omega, hood.nodes)
            keep = counts[g, j]
            if keep == 0:
                continue
            V = space.vectors  # (L, nloc) or (L, N, nloc)
            modes = np.tensordot(eig.vectors[:, :keep], V, axes=(0, 0))
            for k in range(keep):
                if space.kind == "coupled":
                    for s in range(space.n_blocks):
                        f = chi_loc * modes[k, s]
                        nz = f != 0.0
                        rows.append(np.full(int(nz.sum()), r))
                        cols.append(s * n_fine + hood.nodes[nz])
                        vals.append(f[nz])
                else:
                    blk = space.continuum or 0
                    f = chi_loc * modes[k]
                    nz = f != 0.0
                    rows.append(np.full(int(nz.sum()), r))
                    cols.append(blk * n_fine + hood.nodes[nz])
                    vals.append(f[nz])
                rows_meta.append((g, space.omega, k))
                r += 1
    if rows:
        R = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(r, n_continua * n_fine)).tocsr()
    else:
        R = sp.csr_matrix((0, n_continua * n_fine))
    return OfflineSpace(R=R, counts=counts, rows=rows_meta,
                        eigs=[e for _, e in groups], spaces=[s for s, _ in groups],
                        chi=chi, n_continua=n_continua)


def spectrum_rows(groups: list) -> list:
    """(omega, k, lambda) triples for the spectrum dump, fixed ordering."""
    out = []
    for spaces, eigs in groups:
        for e in eigs:
            for k, lam in enumerate(e.values):
                out.append((e.omega, k, float(lam)))
    return out
