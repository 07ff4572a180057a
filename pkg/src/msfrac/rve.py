"""Transfer-coefficient calibration from representative volume elements.

A relaxation simulation holds unit pressure on the fracture nodes of a small
fractured patch and tracks the matrix uptake; the transfer coefficient is the
uptake rate divided by the remaining pressure deficit, read off once the
series settles onto its asymptote.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .assembly import assemble_area
from .errors import SolverFailure
from .grid import FractureMesh, MeshHierarchy
from .solver import TimeGrid

ASYMPTOTE_REL_TOL = 1e-3
ASYMPTOTE_RUN = 5


@dataclass
class RveResult:
    Q: float
    times: np.ndarray
    Q_series: np.ndarray
    converged: bool
    flag: str = ""  # "", "no_asymptote", "division_near_one"
    meta: dict = field(default_factory=dict)


def rve_transfer(hier: MeshHierarchy, fm: FractureMesh, porosity, kappa,
                 tg: TimeGrid) -> RveResult:
    """Calibrate Q from a fracture-relaxation run on the given patch.

    Unit value is imposed at all fracture nodes, zero Neumann elsewhere, zero
    initial state in the matrix. The uptake rate is the discrete time
    difference of the matrix storage mass (conservative; equals the fracture
    boundary flux by mass balance), and the matrix average is area-weighted
    over non-fracture nodes.
    """
    if fm.n_edges == 0:
        raise ValueError("RVE needs at least one fracture network")
    fine = hier.fine
    A = assemble_area(fine, kappa, "stiffness") \
        + _edge_stiffness(fine, fm)
    M = assemble_area(fine, porosity, "mass")

    frac_nodes = fm.nodes()
    matrix_mask = np.ones(fine.n_nodes, dtype=bool)
    matrix_mask[frac_nodes] = False
    free = np.nonzero(matrix_mask)[0]

    # c-weighted uptake mass and plain area weights over matrix nodes
    c_lump = np.asarray(M.sum(axis=1)).ravel()
    area_lump = np.asarray(assemble_area(fine, 1.0, "mass").sum(axis=1)).ravel()
    c_w = c_lump[free]
    a_w = area_lump[free]

    tau = tg.tau
    Aff = A[np.ix_(free, free)]
    Mff = M[np.ix_(free, free)]
    rhs_bc = -A[np.ix_(free, frac_nodes)] @ np.ones(frac_nodes.size)
    try:
        lu = splu((Mff / tau + Aff).tocsc())
    except RuntimeError as exc:
        raise SolverFailure(str(exc)) from exc

    xi = np.zeros(free.size)
    mass_prev = float(c_w @ xi)
    times, Qs = [], []
    run = 0
    flag = ""
    converged = False
    for n in range(1, tg.n_steps + 1):
        xi = lu.solve(Mff @ xi / tau + rhs_bc)
        t = n * tau
        mass = float(c_w @ xi)
        F = (mass - mass_prev) / tau
        mass_prev = mass
        avg = float(a_w @ xi) / float(a_w.sum())
        if avg >= 1.0 - 1e-10:
            flag = "division_near_one"
            warnings.warn("RVE reached equilibrium before the asymptote; "
                          "returning the last stable Q")
            break
        Q = F / (1.0 - avg)
        times.append(t)
        Qs.append(Q)
        if len(Qs) >= 2 and Q != 0.0:
            if abs(Q - Qs[-2]) / abs(Q) < ASYMPTOTE_REL_TOL:
                run += 1
            else:
                run = 0
        if run >= ASYMPTOTE_RUN:
            converged = True
            break
    if not converged and flag == "":
        flag = "no_asymptote"
        warnings.warn("RVE transfer did not reach its asymptote before t_max; "
                      "returning the last value")
    times = np.asarray(times)
    Qs = np.asarray(Qs)
    return RveResult(Q=float(Qs[-1]), times=times, Q_series=Qs,
                     converged=converged, flag=flag,
                     meta={"uptake": "matrix-mass rate (discrete difference)"})


def _edge_stiffness(fine, fm: FractureMesh):
    from .assembly import assemble_edges

    return assemble_edges(fine, fm.edges, fm.edge_kappa(), "stiffness")


def spatial_Q_field(Q1: float, Q2: float, y_lo: float, y_hi: float,
                    hier: MeshHierarchy) -> np.ndarray:
    """Per-cell transfer field: Q1 below y_lo, Q2 above y_hi, linear between."""
    if not y_lo < y_hi:
        raise ValueError("y_lo must be below y_hi")
    fine = hier.fine
    yc = fine.vertices[fine.cells[:, 0], 1] + fine.hy / 2.0
    t = np.clip((yc - y_lo) / (y_hi - y_lo), 0.0, 1.0)
    return Q1 + (Q2 - Q1) * t
