"""Shale gas transport: dual-continuum matrix (inorganic + kerogen) with a
resolved fracture network.

Gas concentration c relates to pressure through p = c Z R T. The inorganic
continuum carries the resolved fractures conformingly (their 1-D storage and
mobility terms are assembled into the inorganic block along fracture edges);
kerogen exchanges with inorganic matter through a shape-factor transfer with
linear (Henry) adsorption. Mobilities are nonlinear in c and are frozen at
the previous step (semi-implicit, one linear solve per step).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (FineOperators, assemble_area, assemble_edges, local_stiffness,
                       single_system)
from .errors import NegativeConcentration, SolverFailure
from .grid import FractureMesh, MeshHierarchy
from .simplified import build_simplified_R
from .solver import SimulationResult, TimeGrid
from .spectral import OfflineSpace

DAY = 86400.0  # s


@dataclass
class ShaleParams:
    """Physical parameters; SI units, pressures in Pa, temperatures in K."""

    phi_i: float = 0.025  # inorganic porosity
    phi_k: float = 0.025  # kerogen porosity
    phi_f: float = 0.01  # fracture porosity
    kappa_i: float = 1e-19  # m^2
    kappa_k: float = 0.0  # m^2, kerogen may be impermeable
    kappa_nf: float = 1e-14  # m^2, natural fractures (aperture folded)
    kappa_hf: float = 1e-13  # m^2, hydraulic fractures (aperture folded)
    D_i: float = 1e-8  # m^2/s
    D_k: float = 1e-8
    D_s: float = 1e-8
    k_H: float = 0.1  # Henry coefficient, F(c_k) = k_H c_k
    sigma: float = 10.0  # 1/m^2 shape factor
    mu: float = 1e-5  # Pa s
    Z: float = 1.0
    R_gas: float = 8.31
    T_K: float = 323.0
    p_init: float = 2e7  # Pa
    p_well: float = 5e6  # Pa

    def __post_init__(self):
        positive = [self.phi_i, self.phi_k, self.phi_f, self.kappa_i,
                    self.kappa_nf, self.kappa_hf, self.D_i, self.D_k, self.D_s,
                    self.sigma, self.mu, self.Z, self.R_gas, self.T_K,
                    self.p_init, self.p_well]
        if any(v <= 0 for v in positive) or self.kappa_k < 0 or self.k_H < 0:
            raise ValueError(
                "shale parameters must be positive (kappa_k and k_H may be 0)")
        if not self.c_init > self.c_well:
            raise ValueError("initial concentration must exceed well concentration")

    @property
    def zrt(self) -> float:
        return self.Z * self.R_gas * self.T_K

    @property
    def c_init(self) -> float:
        return self.p_init / self.zrt

    @property
    def c_well(self) -> float:
        return self.p_well / self.zrt

    @property
    def tau_ki(self) -> float:
        # phi_k D_k + (1 - phi_k) D_s F', Henry isotherm: F' = k_H
        return self.phi_k * self.D_k + (1.0 - self.phi_k) * self.D_s * self.k_H

    @property
    def kerogen_storage(self) -> float:
        return self.phi_k + (1.0 - self.phi_k) * self.k_H


def _cell_average(fine, nodal: np.ndarray) -> np.ndarray:
    return nodal[fine.cells].mean(axis=1)


def _edge_average(nodal: np.ndarray, edges: np.ndarray) -> np.ndarray:
    if edges.shape[0] == 0:
        return np.zeros(0)
    return 0.5 * (nodal[edges[:, 0]] + nodal[edges[:, 1]])


def fracture_edge_kappa(fm: FractureMesh, params: ShaleParams) -> np.ndarray:
    """Per-edge absolute permeability by tag ("hydraulic" vs natural)."""
    tags = fm.edge_tag()
    return np.array([params.kappa_hf if t == "hydraulic" else params.kappa_nf
                     for t in tags])


def shale_assemble(c: np.ndarray, c_k: np.ndarray, params: ShaleParams,
                   hier: MeshHierarchy, fm: FractureMesh) -> FineOperators:
    """Frozen-coefficient operators for one semi-implicit step.

    Block 0 is the inorganic continuum carrying the fracture terms (the
    fracture concentration is the trace of c on fracture edges); block 1 is
    kerogen. The kerogen exchange sits in Bq with field sigma * tau_ki.
    """
    if np.min(c) < 0 or np.min(c_k) < 0:
        raise NegativeConcentration(
            f"min c = {np.min(c):.3e}, min c_k = {np.min(c_k):.3e}")
    fine = hier.fine
    mob_i = params.phi_i * params.D_i \
        + _cell_average(fine, c) * params.zrt * params.kappa_i / params.mu
    mob_k = params.tau_ki \
        + _cell_average(fine, c_k) * params.zrt * params.kappa_k / params.mu
    mob_f = _edge_average(c, fm.edges) * params.zrt \
        * fracture_edge_kappa(fm, params) / params.mu

    A0 = assemble_area(fine, mob_i, "stiffness") \
        + assemble_edges(fine, fm.edges, mob_f, "stiffness")
    A1 = assemble_area(fine, mob_k, "stiffness")
    M0 = assemble_area(fine, params.phi_i, "mass") \
        + assemble_edges(fine, fm.edges, params.phi_f, "mass")
    M1 = assemble_area(fine, params.kerogen_storage, "mass")

    W = assemble_area(fine, params.sigma * params.tau_ki, "mass")
    Bq = sp.bmat([[-W, W], [W, -W]], format="csr")

    Sw0 = assemble_area(fine, mob_i, "mass") \
        + assemble_edges(fine, fm.edges, mob_f, "mass")
    Sw1 = assemble_area(fine, np.maximum(mob_k, 1e-300), "mass")
    return FineOperators(n=2, ndof=fine.n_nodes,
                         M=sp.block_diag([M0, M1], format="csr"),
                         A=sp.block_diag([A0, A1], format="csr"),
                         Bq=Bq, b=np.zeros(2 * fine.n_nodes),
                         Sw=sp.block_diag([Sw0, Sw1], format="csr"), dirichlet=[])


def _step_free(ops: FineOperators, free, fixed, vals, tau, u):
    K = (ops.M / tau + ops.a_q()).tocsr()
    rhs = ops.M @ u / tau
    Kff = K[np.ix_(free, free)].tocsc()
    r = rhs[free] - K[np.ix_(free, fixed)] @ vals
    try:
        x = splu(Kff).solve(r)
    except RuntimeError as exc:
        raise SolverFailure(str(exc)) from exc
    out = np.empty_like(u)
    out[free] = x
    out[fixed] = vals
    return out


def _well_dofs(hier, well_points):
    dofs = []
    for p in well_points:
        node = p if np.isscalar(p) else hier.fine.node_at(float(p[0]), float(p[1]))
        dofs.append(int(node))  # block 0 only: wells drain the fracture/inorganic field
    return np.asarray(sorted(set(dofs)), dtype=int)


def shale_fine_run(params: ShaleParams, hier: MeshHierarchy, fm: FractureMesh,
                   tg: TimeGrid, well_points: list) -> SimulationResult:
    """Semi-implicit fine-grid integration with Dirichlet wells."""
    t0 = time.perf_counter()
    nd = hier.fine.n_nodes
    wells = _well_dofs(hier, well_points)
    fixed = wells  # block-0 dofs
    vals = np.full(fixed.size, params.c_well)
    mask = np.ones(2 * nd, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]

    u = np.full(2 * nd, params.c_init)
    u[fixed] = vals
    states = np.empty((tg.n_steps + 1, 2 * nd))
    states[0] = u
    for n in range(tg.n_steps):
        ops = shale_assemble(u[:nd], u[nd:], params, hier, fm)
        u = _step_free(ops, free, fixed, vals, tg.tau, u)
        states[n + 1] = u
    return SimulationResult(times=tg.times(), states=states,
                            wall_time=time.perf_counter() - t0,
                            meta={"wells": wells.tolist()})


def shale_coarse_run(params: ShaleParams, hier: MeshHierarchy, fm: FractureMesh,
                     tg: TimeGrid, well_points: list,
                     off: OfflineSpace) -> SimulationResult:
    """Semi-implicit coarse integration in a given basis (downscaled states)."""
    t0 = time.perf_counter()
    nd = hier.fine.n_nodes
    wells = _well_dofs(hier, well_points)
    vals = np.full(wells.size, params.c_well)
    mask = np.ones(2 * nd, dtype=bool)
    mask[wells] = False
    free = np.nonzero(mask)[0]
    Rf = off.R.tocsc()[:, free].tocsr()

    u = np.full(2 * nd, params.c_init)
    u[wells] = vals
    states = np.empty((tg.n_steps + 1, 2 * nd))
    states[0] = u
    for n in range(tg.n_steps):
        # frozen mobilities clamp tiny Galerkin undershoots; the state itself
        # is never clamped
        ops = shale_assemble(np.maximum(u[:nd], 0.0), np.maximum(u[nd:], 0.0),
                             params, hier, fm)
        K = (ops.M / tg.tau + ops.a_q()).tocsr()
        rhs = ops.M @ u / tg.tau
        r = rhs[free] - K[np.ix_(free, wells)] @ vals
        Kc = (Rf @ K[np.ix_(free, free)] @ Rf.T).tocsc()
        try:
            uc = splu(Kc).solve(Rf @ r)
        except RuntimeError as exc:
            raise SolverFailure(str(exc)) from exc
        u = np.empty(2 * nd)
        u[free] = Rf.T @ uc
        u[wells] = vals
        states[n + 1] = u
    return SimulationResult(times=tg.times(), states=states,
                            wall_time=time.perf_counter() - t0,
                            meta={"wells": wells.tolist(), "n_c": Rf.shape[0]})


def shale_system(params: ShaleParams, hier: MeshHierarchy, fm: FractureMesh):
    """ContinuumSystem snapshot of the initial-state linearization.

    Used to build simplified or spectral bases; fracture couplings are routed
    entirely to the inorganic continuum (gamma = (1, 0) up to a tiny kerogen
    share to keep the weights normalized).
    """
    fine = hier.fine
    c0 = np.full(fine.n_nodes, params.c_init)
    mob_i = params.phi_i * params.D_i + params.c_init * params.zrt * params.kappa_i / params.mu
    mob_k = params.tau_ki + params.c_init * params.zrt * params.kappa_k / params.mu
    from .assembly import ContinuumSystem

    eps = 1e-12
    kf = params.c_init * params.zrt * fracture_edge_kappa(fm, params) / params.mu
    frac_kappa = np.vstack([kf, np.full_like(kf, eps * kf.max() if kf.size else eps)])
    frac_por = np.vstack([np.full(fm.n_edges, params.phi_f),
                          np.full(fm.n_edges, eps)])
    return ContinuumSystem(
        n=2,
        kappa=np.vstack([np.full(fine.n_cells, mob_i), np.full(fine.n_cells, mob_k)]),
        porosity=np.vstack([np.full(fine.n_cells, params.phi_i),
                            np.full(fine.n_cells, params.kerogen_storage)]),
        gamma=np.array([1.0 - eps, eps]),
        transfer={(0, 1): np.full(fine.n_cells, params.sigma * params.tau_ki)},
        frac_kappa=frac_kappa, frac_porosity=frac_por)


def shale_run(params: ShaleParams, hier: MeshHierarchy, fm: FractureMesh,
              tg: TimeGrid, well_points: list, basis: str = "simplified"):
    """Fine and coarse simulations of the drainage scenario.

    Returns (fine_result, coarse_result, offline_space). ``basis`` is
    "simplified" (per-continuum network/background functions) for now.
    """
    if basis != "simplified":
        raise ValueError("shale runs support the simplified basis")
    sys2 = shale_system(params, hier, fm)
    off = build_simplified_R(hier, fm, sys2)
    fine_res = shale_fine_run(params, hier, fm, tg, well_points)
    coarse_res = shale_coarse_run(params, hier, fm, tg, well_points, off)
    return fine_res, coarse_res, off
