"""Numerical consistency checks for the coarse-space convergence bounds.

Given a fine reference trajectory, this module builds the local extension of
its boundary traces (the snapshot projection), truncates it in the local
eigenbasis, and evaluates both sides of the spectral error bounds together
with the constants they involve: the smallest discarded eigenvalue, the
neighborhood overlap count, the storage/weight ratio, and the transfer-form
domination constant. Reported ratios are diagnostics, never asserted against
a particular theory constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .assembly import ContinuumSystem, FineOperators, local_weighted_mass
from .grid import FractureMesh, MeshHierarchy
from .snapshots import SnapshotSpace, coupled_snapshots, uncoupled_snapshots
from .spectral import (EigenPairs, chi_cell_grad_sq, chi_edge_grad_sq,
                       chi_node_values, local_mass, offline_eig)


@dataclass
class BoundReport:
    """One row of the bound evaluation for a truncation level L."""

    mode: str  # coupled | uncoupled
    L: int
    Lambda: float  # smallest discarded eigenvalue across neighborhoods
    D: float  # max number of neighborhoods overlapping one coarse cell
    E: float  # max storage/weight ratio
    lhs: float
    rhs: float
    C_emp: float
    transfer_D: float = np.nan  # smallest D with -q(v,v) <= D a(v,v), sampled
    assumption_violated: bool = False
    cea_C: float = np.nan  # best-approximation constant of the coarse solve
    init_ratio: float = np.nan  # initial-data bound ratio
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# workspace: per-neighborhood bases and trace coordinates


class _OmegaBasis:
    """Snapshot space, eigenpairs and trace-to-mode transforms of one patch."""

    def __init__(self, hier, fm, sys, omega_id, mode, weighting):
        hood = hier.neighborhoods[omega_id]
        self.hood = hood
        self.mode = mode
        if mode == "coupled":
            self.spaces = [coupled_snapshots(hood, hier, fm, sys)]
            bilinear = "a_Q"
        else:
            self.spaces = [uncoupled_snapshots(hood, hier, fm, sys, i)
                           for i in range(sys.n)]
            bilinear = "a"
        self.eigs = [offline_eig(s, hier, fm, sys, weighting=weighting,
                                 bilinear=bilinear) for s in self.spaces]
        self.S_locs = [local_mass(hier, fm, sys, hood, weighting,
                                  range(sys.n) if s.kind == "coupled"
                                  else [s.continuum or 0])
                       for s in self.spaces]
        self.Phi = []  # fine-local modes, (n_flat, L) per group
        self.to_modes = []  # Psi^T S_off, maps snapshot coords -> mode coords
        for s, e, S_loc in zip(self.spaces, self.eigs, self.S_locs):
            V = s.flat_vectors()
            S_off = V @ (S_loc @ V.T)
            self.Phi.append(V.T @ e.vectors)
            self.to_modes.append(e.vectors.T @ S_off)
        self.chi = chi_node_values(hier, omega_id, hood.nodes)

    def mode_coords_series(self, states_blocks: list, group: int) -> np.ndarray:
        """Eigen-mode coefficients b(t) of the local extension, (L_modes, nt).

        Snapshot spaces are parametrized by boundary deltas, so snapshot
        coordinates are the boundary trace values themselves.
        """
        space = self.spaces[group]
        bnodes = self.hood.nodes[space.boundary]
        if self.mode == "uncoupled":
            C = states_blocks[group][:, bnodes].T  # (L_snap, nt)
        else:
            # coupled snapshots are parametrized by per-continuum boundary
            # deltas (continuum-major), so coordinates are the block traces
            C = np.concatenate([states_blocks[s][:, bnodes]
                                for s in range(space.n_blocks)], axis=1).T
        return self.to_modes[group] @ C


def _omega_basis(hier, fm, sys, omega_id, mode, weighting):
    return _OmegaBasis(hier, fm, sys, omega_id, mode, weighting)


def _stitch(hier, bases, coeffs_per_omega, n_continua, nt, L=None):
    """POU-stitched global trajectory from per-omega mode coefficients.

    ``coeffs_per_omega[j][g]`` is the (L_modes, nt) coefficient series of
    group g on neighborhood j; ``L`` truncates the expansion (None keeps all).
    """
    n_fine = hier.fine.n_nodes
    out = np.zeros((nt, n_continua * n_fine))
    for b, coeffs in zip(bases, coeffs_per_omega):
        hood = b.hood
        for g, (space, B) in enumerate(zip(b.spaces, coeffs)):
            k = B.shape[0] if L is None else min(L, B.shape[0])
            loc = b.Phi[g][:, :k] @ B[:k]  # (n_flat, nt)
            w = b.chi[:, None] * loc.reshape(space.n_blocks, hood.nodes.size, nt)
            if b.mode == "coupled":
                for s in range(space.n_blocks):
                    out[:, s * n_fine + hood.nodes] += w[s].T
            else:
                s = space.continuum or 0
                out[:, s * n_fine + hood.nodes] += w[0].T
    return out


def _blocks(states: np.ndarray, n: int, ndof: int) -> list:
    return [states[:, s * ndof:(s + 1) * ndof] for s in range(n)]


def snapshot_projection(states: np.ndarray, hier: MeshHierarchy, fm: FractureMesh,
                        sys: ContinuumSystem, mode: str = "uncoupled",
                        weighting: str = "pou_gradient",
                        bases: list | None = None) -> np.ndarray:
    """POU-stitched local extension of the trajectory's boundary traces.

    The extension is represented inside each neighborhood's snapshot span (for
    scalar spaces it is the exact harmonic extension of the traces).
    """
    bases = bases or [_omega_basis(hier, fm, sys, j, mode, weighting)
                      for j in range(hier.n_coarse_nodes)]
    blocks = _blocks(states, sys.n, hier.fine.n_nodes)
    nt = states.shape[0]
    coeffs = [[b.mode_coords_series(blocks, g) for g in range(len(b.spaces))]
              for b in bases]
    return _stitch(hier, bases, coeffs, sys.n, nt, L=None)


def eigen_projection(states: np.ndarray, hier: MeshHierarchy, fm: FractureMesh,
                     sys: ContinuumSystem, L: int, mode: str = "uncoupled",
                     weighting: str = "pou_gradient",
                     bases: list | None = None) -> np.ndarray:
    """Truncation of the snapshot projection to the first L local modes."""
    bases = bases or [_omega_basis(hier, fm, sys, j, mode, weighting)
                      for j in range(hier.n_coarse_nodes)]
    blocks = _blocks(states, sys.n, hier.fine.n_nodes)
    nt = states.shape[0]
    coeffs = [[b.mode_coords_series(blocks, g) for g in range(len(b.spaces))]
              for b in bases]
    return _stitch(hier, bases, coeffs, sys.n, nt, L=L)


# ---------------------------------------------------------------------------
# constants


def overlap_constant(hier: MeshHierarchy) -> int:
    counts = np.zeros(hier.coarse.nx * hier.coarse.ny, dtype=int)
    for hood in hier.neighborhoods:
        counts[hood.coarse_cells] += 1
    return int(counts.max())


def weight_constant(hier: MeshHierarchy, fm: FractureMesh, sys: ContinuumSystem) -> float:
    """max over cells/edges and continua of c chi^2 / (kappa |grad chi|^2)."""
    from .assembly import local_edge_set

    fine = hier.fine
    best = 0.0
    for hood in hier.neighborhoods:
        cells = hood.fine_cells
        g2 = chi_cell_grad_sq(hier, hood.node, cells)
        centers = fine.vertices[fine.cells[cells][:, 0]] \
            + 0.5 * np.array([fine.hx, fine.hy])
        chi2 = (chi_node_values_at(hier, hood.node, centers)) ** 2
        ok = g2 > 0
        for s in range(sys.n):
            r = chi2[ok] * sys.porosity[s][cells][ok] / (sys.kappa[s][cells][ok] * g2[ok])
            if r.size:
                best = max(best, float(r.max()))
        edges, idx = local_edge_set(hood, fm)
        if edges.shape[0]:
            ge = chi_edge_grad_sq(hier, hood.node, edges)
            mids = 0.5 * (fine.vertices[edges[:, 0]] + fine.vertices[edges[:, 1]])
            chie = chi_node_values_at(hier, hood.node, mids) ** 2
            ok = ge > 0
            for s in range(sys.n):
                ck = sys.edge_porosity(fm, s)[idx][ok]
                kk = sys.edge_kappa(fm, s)[idx][ok]
                pos = kk > 0
                if np.any(pos):
                    r = chie[ok][pos] * ck[pos] / (kk[pos] * ge[ok][pos])
                    best = max(best, float(r.max()))
    return best


def chi_node_values_at(hier, i, pts):
    from .spectral import _hat_1d

    X, Y = hier.coarse.vertices[i]
    Hx = hier.domain.lx / hier.coarse.nx
    Hy = hier.domain.ly / hier.coarse.ny
    return _hat_1d(pts[:, 0], X, Hx) * _hat_1d(pts[:, 1], Y, Hy)


def transfer_domination(ops: FineOperators, n_samples: int = 200, seed: int = 0,
                        cutoff: float = 1e6):
    """Sampled smallest D with -q(v, v) <= D a(v, v) over random vectors."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        v = rng.standard_normal(ops.size)
        a = float(v @ (ops.A @ v))
        q = float(v @ (ops.Bq @ v))
        if a > 0:
            best = max(best, -q / a)
    return best, bool(best > cutoff)


def caccioppoli_ratio(hier: MeshHierarchy, fm: FractureMesh, sys: ContinuumSystem,
                      omega_id: int, n_samples: int = 20, seed: int = 0,
                      continuum: int = 0) -> float:
    """max ratio of cut-off energy to weighted mass over local harmonic fields."""
    from .assembly import local_edge_set, local_stiffness

    hood = hier.neighborhoods[omega_id]
    space = uncoupled_snapshots(hood, hier, fm, sys, continuum)
    # chi^2-weighted energy
    centers_w = sys.kappa[continuum][hood.fine_cells] * _chi_sq_cells(hier, hood)
    edges, idx = local_edge_set(hood, fm)
    mids_w = sys.edge_kappa(fm, continuum)[idx] * _chi_sq_edges(hier, hood, edges)
    A_chi = _local_weighted_stiffness(hier, hood, fm, centers_w, mids_w)
    # |grad chi|^2-weighted mass
    wc = sys.kappa[continuum][hood.fine_cells] * chi_cell_grad_sq(hier, hood.node, hood.fine_cells)
    we = sys.edge_kappa(fm, continuum)[idx] * chi_edge_grad_sq(hier, hood.node, edges)
    S = local_weighted_mass(hier.fine, hood, fm, wc, we)

    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_samples):
        c = rng.standard_normal(space.count)
        w = space.vectors.T @ c
        num = float(w @ (A_chi @ w))
        den = float(w @ (S @ w))
        if den > 0:
            best = max(best, num / den)
    return best


def _chi_sq_cells(hier, hood):
    fine = hier.fine
    centers = fine.vertices[fine.cells[hood.fine_cells][:, 0]] \
        + 0.5 * np.array([fine.hx, fine.hy])
    return chi_node_values_at(hier, hood.node, centers) ** 2


def _chi_sq_edges(hier, hood, edges):
    if edges.shape[0] == 0:
        return np.zeros(0)
    fine = hier.fine
    mids = 0.5 * (fine.vertices[edges[:, 0]] + fine.vertices[edges[:, 1]])
    return chi_node_values_at(hier, hood.node, mids) ** 2


def _local_weighted_stiffness(hier, hood, fm, cell_w, edge_w):
    from .assembly import assemble_area, assemble_edges, local_edge_set, node_map_for

    nm = node_map_for(hood, hier.fine.n_nodes)
    edges, _ = local_edge_set(hood, fm)
    A = assemble_area(hier.fine, cell_w, "stiffness", cell_ids=hood.fine_cells,
                      node_map=nm, n_local=hood.n_nodes)
    return (A + assemble_edges(hier.fine, edges, edge_w, "stiffness",
                               node_map=nm, n_local=hood.n_nodes)).tocsr()


# ---------------------------------------------------------------------------
# bound evaluation


def _quad(mat, v):
    return float(v @ (mat @ v))


def _time_integrals(traj, times, M, K):
    """(int ||d_t u||_c^2, int ||u||_K^2, ||u(0)||_c^2) with backward d_t."""
    nt = traj.shape[0] - 1
    tau = times[1] - times[0]
    ddt = 0.0
    for n in range(1, nt + 1):
        d = (traj[n] - traj[n - 1]) / tau
        ddt += tau * _quad(M, d)
    vals = np.array([_quad(K, traj[n]) for n in range(nt + 1)])
    mid = np.trapezoid(vals, dx=tau) if hasattr(np, "trapezoid") else np.trapz(vals, dx=tau)
    return ddt, mid, _quad(M, traj[0])


def check_bounds(hier: MeshHierarchy, fm: FractureMesh, sys: ContinuumSystem,
                 ops: FineOperators, states: np.ndarray, times: np.ndarray,
                 mode: str, schedule: list, weighting: str = "pou_gradient",
                 coarse_errors: dict | None = None, seed: int = 0) -> list:
    """Evaluate the truncation bound for every L in the schedule.

    ``coarse_errors`` optionally maps L to the coarse trajectory at that L,
    enabling the best-approximation (Cea-type) constant. Returns one
    BoundReport per schedule entry.
    """
    bases = [_omega_basis(hier, fm, sys, j, mode, weighting)
             for j in range(hier.n_coarse_nodes)]
    blocks = _blocks(states, sys.n, hier.fine.n_nodes)
    nt = states.shape[0]
    coeffs = [[b.mode_coords_series(blocks, g) for g in range(len(b.spaces))]
              for b in bases]
    u_snap = _stitch(hier, bases, coeffs, sys.n, nt, L=None)

    M = ops.M
    K_energy = ops.a_q() if mode == "coupled" else ops.A
    Dc = overlap_constant(hier)
    E = weight_constant(hier, fm, sys)
    tD, violated = transfer_domination(ops, seed=seed)
    rhs_ddt, rhs_mid, rhs_init = _time_integrals(states, times, M, K_energy)

    reports = []
    for L in schedule:
        w = _stitch(hier, bases, coeffs, sys.n, nt, L=L)
        diff = w - u_snap
        lhs_ddt, lhs_mid, lhs_init = _time_integrals(diff, times, M, K_energy)
        lhs = lhs_ddt + lhs_mid + lhs_init
        lam_next = []
        for b in bases:
            for e in b.eigs:
                if L < e.values.size:
                    lam_next.append(e.values[L])
        Lambda = float(min(lam_next)) if lam_next else np.inf
        rhs = (rhs_ddt + rhs_mid + rhs_init) / Lambda if np.isfinite(Lambda) else 0.0
        C_emp = lhs / rhs if rhs > 0 else 0.0
        init_ratio = np.nan
        if np.isfinite(Lambda) and E > 0 and rhs_init > 0:
            init_ratio = lhs_init * Lambda / (E * rhs_init)
        rep = BoundReport(mode=mode, L=int(L), Lambda=Lambda, D=float(Dc), E=E,
                          lhs=lhs, rhs=rhs, C_emp=C_emp, transfer_D=tD,
                          assumption_violated=violated, init_ratio=init_ratio,
                          extras={"lhs_ddt": lhs_ddt, "lhs_mid": lhs_mid,
                                  "lhs_init": lhs_init})
        if coarse_errors and L in coarse_errors:
            rep.cea_C = _cea_constant(ops, states, coarse_errors[L], times,
                                      w, mode, tD)
        reports.append(rep)
    return reports


def _cea_constant(ops, u, u_ms, times, w, mode, transfer_D):
    """Coarse-solve error against the best-approximation functional at w."""
    M = ops.M
    Aq = ops.a_q()
    A = ops.A
    tau = times[1] - times[0]
    err = u_ms - u
    vals = np.array([_quad(Aq, err[n]) for n in range(err.shape[0])])
    total = _quad(M, err[-1]) + (np.trapezoid(vals, dx=tau)
                                 if hasattr(np, "trapezoid") else np.trapz(vals, dx=tau))
    dwu = w - u
    K = Aq if mode == "coupled" else A
    ddt, mid, init = _time_integrals(dwu, times, M, K)
    denom = ddt + init + (mid if mode == "coupled" else (transfer_D + 1.0) * mid)
    return total / denom if denom > 0 else np.nan


def reports_to_rows(reports: list) -> list:
    """CSV rows (mode, L, Lambda, D, E, LHS, RHS, C_emp)."""
    return [(r.mode, r.L, r.Lambda, r.D, r.E, r.lhs, r.rhs, r.C_emp)
            for r in reports]
