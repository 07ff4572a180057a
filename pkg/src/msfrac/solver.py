"""Implicit-Euler time integration on the fine grid and in the coarse space.

The coarse solve projects the (Dirichlet-reduced) fine system with the basis
operator R, steps the same scheme, and downscales through R^T for error
evaluation in permeability-weighted norms.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import FineOperators
from .errors import SolverFailure, ZeroReference
from .spectral import OfflineSpace


@dataclass(frozen=True)
class TimeGrid:
    """Uniform implicit-Euler grid on [0, t_max]."""

    t_max: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")

    @property
    def tau(self) -> float:
        return self.t_max / self.n_steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps + 1)


@dataclass
class SimulationResult:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, n_dof) fine-grid representation
    coarse_states: np.ndarray | None = None  # (n_steps + 1, n_c) when coarse
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _factorize(K: sp.spmatrix):
    try:
        return splu(K.tocsc())
    except RuntimeError as exc:
        raise SolverFailure(str(exc)) from exc


def solve_fine(ops: FineOperators, tg: TimeGrid, u0: np.ndarray) -> SimulationResult:
    """March (M/tau + A - Bq) u^{n+1} = (M/tau) u^n + b with one factorization."""
    t0 = time.perf_counter()
    tau = tg.tau
    K = (ops.M / tau + ops.a_q()).tocsc()
    lu = _factorize(K)
    states = np.empty((tg.n_steps + 1, ops.size))
    states[0] = u0
    u = np.asarray(u0, dtype=float).copy()
    Mtau = (ops.M / tau).tocsr()
    for n in range(tg.n_steps):
        u = lu.solve(Mtau @ u + ops.b)
        states[n + 1] = u
    return SimulationResult(times=tg.times(), states=states,
                            wall_time=time.perf_counter() - t0)


def _coarse_reduction(ops: FineOperators, off: OfflineSpace):
    """Free-dof restriction of R; basis rows fully supported on fixed dofs drop."""
    free, fixed, vals = ops.free_fixed()
    Rf = off.R.tocsc()[:, free].tocsr()
    keep = np.diff(Rf.indptr) > 0
    if not keep.all():
        Rf = Rf[np.nonzero(keep)[0]]
    return free, fixed, vals, Rf


def solve_coarse(ops: FineOperators, off: OfflineSpace, tg: TimeGrid,
                 u0: np.ndarray) -> SimulationResult:
    """Galerkin coarse integration; returns the downscaled trajectory.

    Dirichlet dofs are eliminated on the fine level (values re-inserted after
    downscaling), the initial coarse state is the Sw-projection of u0, and the
    coarse residual of every step is available through ``meta['residual']``.
    """
    t0 = time.perf_counter()
    tau = tg.tau
    free, fixed, vals, Rf = _coarse_reduction(ops, off)
    Kf = ops.a_q()[np.ix_(free, free)]
    Mf = ops.M[np.ix_(free, free)]
    bf = ops.b[free]
    Kc = (Rf @ Kf @ Rf.T).tocsc()
    Mc = (Rf @ Mf @ Rf.T).tocsr()
    bc = Rf @ bf

    # initial coarse state: Sw-projection of u0 onto the basis span
    Swf = ops.Sw[np.ix_(free, free)]
    Sc = (Rf @ Swf @ Rf.T).tocsc()
    u0 = np.asarray(u0, dtype=float)
    uc = _factorize(Sc).solve(Rf @ (Swf @ u0[free]))

    lu = _factorize((Mc / tau + Kc).tocsc())
    n_dof = ops.size
    states = np.empty((tg.n_steps + 1, n_dof))
    coarse = np.empty((tg.n_steps + 1, Rf.shape[0]))
    residual = np.zeros(tg.n_steps)

    def downscale(c):
        u = np.zeros(n_dof)
        u[free] = Rf.T @ c
        u[fixed] = vals
        return u

    states[0] = u0  # configured initial condition, not its projection
    coarse[0] = uc
    for n in range(tg.n_steps):
        rhs = Mc @ uc / tau + bc
        uc_new = lu.solve(rhs)
        residual[n] = np.abs((Mc / tau + Kc) @ uc_new - rhs).max() if Kc.shape[0] else 0.0
        uc = uc_new
        coarse[n + 1] = uc
        states[n + 1] = downscale(uc)
    return SimulationResult(times=tg.times(), states=states, coarse_states=coarse,
                            wall_time=time.perf_counter() - t0,
                            meta={"residual": residual, "n_c": Rf.shape[0]})


@dataclass(frozen=True)
class ErrorNorms:
    """Relative errors: weighted L2 and H1 per continuum, combined a_Q norm."""

    l2: np.ndarray  # (n_continua,)
    h1: np.ndarray
    hq: float | None  # None for single-continuum problems


def _quad(mat: sp.spmatrix, v: np.ndarray) -> float:
    return float(v @ (mat @ v))


def error_norms(u_ms: np.ndarray, u_h: np.ndarray, ops: FineOperators) -> ErrorNorms:
    """Permeability-weighted relative norms of u_ms - u_h against u_h."""
    e = np.asarray(u_ms, dtype=float) - np.asarray(u_h, dtype=float)
    l2 = np.zeros(ops.n)
    h1 = np.zeros(ops.n)
    for s in range(ops.n):
        sl = slice(s * ops.ndof, (s + 1) * ops.ndof)
        Sw = ops.block(ops.Sw, s)
        A = ops.block(ops.A, s)
        den_l2 = _quad(Sw, u_h[sl])
        den_h1 = _quad(A, u_h[sl])
        if den_l2 <= 0.0 or not np.isfinite(den_l2):
            raise ZeroReference("weighted L2 norm of the reference vanishes")
        l2[s] = np.sqrt(max(_quad(Sw, e[sl]), 0.0) / den_l2)
        # H1 reference may vanish for constant states; report 0 error then
        if den_h1 <= 0.0:
            h1[s] = 0.0 if _quad(A, e[sl]) <= 1e-28 else np.inf
        else:
            h1[s] = np.sqrt(max(_quad(A, e[sl]), 0.0) / den_h1)
    hq = None
    if ops.n >= 2:
        Aq = ops.a_q()
        den = _quad(Aq, u_h)
        if den <= 0.0:
            raise ZeroReference("a_Q norm of the reference vanishes")
        hq = float(np.sqrt(max(_quad(Aq, e), 0.0) / den))
    return ErrorNorms(l2=l2, h1=h1, hq=hq)


def mass_history(ops: FineOperators, result: SimulationResult) -> np.ndarray:
    """Total storage mass 1^T M u per time slice (conservation probe)."""
    ones = np.ones(ops.size)
    w = ops.M.T @ ones
    return result.states @ w
