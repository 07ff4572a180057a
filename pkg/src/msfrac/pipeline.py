"""Scenario orchestration: build, solve, select bases, and collect errors.

This is the layer the CLI drives. Neighborhood work (snapshots and local
eigenproblems) runs as a parallel map with a configurable worker cap; results
are reduced in fixed neighborhood order so runs are reproducible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import (ContinuumSystem, FineOperators, apply_bc, assemble_multi,
                       local_stiffness, single_system)
from .config import RunConfig
from .grid import Domain, FractureMesh, MeshHierarchy, build_hierarchy, embed_fractures
from .rve import rve_transfer, spatial_Q_field
from .simplified import build_simplified_R
from .snapshots import (coupled_snapshots, harmonic_snapshots, randomized_snapshots,
                        uncoupled_snapshots)
from .solver import TimeGrid, error_norms, solve_coarse, solve_fine
from .spectral import build_R, offline_eig, spectrum_rows

ERRORS_HEADER = "basis_mode,M,dof,l2_c1,h1_c1,l2_c2,h1_c2,hq"


@dataclass
class Scenario:
    """Everything a run needs: mesh, fractures, system, operators, times."""

    hier: MeshHierarchy
    fm: FractureMesh
    sys: ContinuumSystem
    ops: FineOperators  # with boundary conditions applied
    tg: TimeGrid
    u0: np.ndarray
    meta: dict = field(default_factory=dict)


def parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def build_scenario(cfg: RunConfig) -> Scenario:
    g = cfg.grid
    hier = build_hierarchy(Domain(g["lx"], g["ly"]), g["nx"], g["ny"], g["refine"])
    polylines = [pts for pts, _ in cfg.fractures]
    props = [pr for _, pr in cfg.fractures]
    fm = embed_fractures(hier.fine, polylines, props)
    tg = TimeGrid(cfg.time["t_max"], cfg.time["n_steps"])

    if cfg.scenario == "single":
        sys = single_system(hier.fine, cfg.material["kappa"], cfg.material["porosity"])
    elif cfg.scenario in ("dual", "dual_rve"):
        sys = _dual_system(cfg, hier)
    else:
        raise ValueError(f"scenario {cfg.scenario!r} is not built by build_scenario")

    ops = assemble_multi(hier, fm, sys)
    if cfg.bc_points:
        ops = apply_bc(ops, hier.fine, cfg.bc_points, cfg.bc_value)
    u0 = np.full(ops.size, cfg.ic_value)
    for d, v in ops.dirichlet:
        u0[d] = v
    return Scenario(hier=hier, fm=fm, sys=sys, ops=ops, tg=tg, u0=u0)


def _dual_system(cfg: RunConfig, hier: MeshHierarchy) -> ContinuumSystem:
    d = cfg.dual
    fine = hier.fine
    n = len(d["continua"])
    kappa = np.vstack([np.full(fine.n_cells, c["kappa"]) for c in d["continua"]])
    por = np.vstack([np.full(fine.n_cells, c["porosity"]) for c in d["continua"]])
    tr = d["transfer"]
    meta = {}
    if cfg.scenario == "dual_rve":
        q_lo, q_hi, rve_meta = calibrate_transfer(cfg)
        field_ = spatial_Q_field(q_lo, q_hi, tr["y_lo"], tr["y_hi"], hier) \
            if tr["mode"] == "linear_y" else np.full(fine.n_cells, q_lo)
        meta["rve"] = rve_meta
    elif tr["mode"] == "constant":
        field_ = np.full(fine.n_cells, tr["Q"])
    else:
        field_ = spatial_Q_field(tr["Q1"], tr["Q2"], tr["y_lo"], tr["y_hi"], hier)
    transfer = {(i, j): field_ for i in range(n) for j in range(i + 1, n)}
    return ContinuumSystem(n=n, kappa=kappa, porosity=por,
                           gamma=np.asarray(d["gamma"], dtype=float),
                           transfer=transfer)


def calibrate_transfer(cfg: RunConfig):
    """Run the configured RVE relaxations and return (Q_lo, Q_hi, metadata)."""
    r = cfg.dual["rve"]
    results = {}
    for key in ("lo", "hi"):
        blk = r[key]
        hier = build_hierarchy(Domain(float(blk["lx"]), float(blk["ly"])),
                               int(blk["nx"]), int(blk["ny"]), int(blk["refine"]))
        polys = [[(float(x), float(y)) for x, y in f["points"]] for f in blk["fractures"]]
        props = [{"kappa": float(f["kappa"]), "porosity": float(f["porosity"])}
                 for f in blk["fractures"]]
        fm = embed_fractures(hier.fine, polys, props)
        tg = TimeGrid(float(blk["t_max"]), int(blk["n_steps"]))
        results[key] = rve_transfer(hier, fm, float(blk["porosity"]),
                                    float(blk["kappa"]), tg)
    meta = {k: {"Q": res.Q, "converged": res.converged, "flag": res.flag}
            for k, res in results.items()}
    return results["lo"].Q, results["hi"].Q, meta


# ---------------------------------------------------------------------------
# basis construction


def snapshot_groups(scn: Scenario, mode: str, kind: str = "harmonic",
                    randomized_n: int = 8, seed: int = 0, threads: int = 1,
                    weighting: str = "kappa_mass"):
    """Per-group (spaces, eigs) lists covering every neighborhood.

    Groups are one per continuum for un-coupled modes and a single coupled
    family for the coupled mode.
    """
    hier, fm, sys = scn.hier, scn.fm, scn.sys
    n_h = hier.n_coarse_nodes

    def scalar_space(args):
        j, cont = args
        hood = hier.neighborhoods[j]
        if kind == "randomized":
            def builder(patch):
                return local_stiffness(hier.fine, patch, fm, sys.kappa[cont],
                                       sys.edge_kappa(fm, cont))
            sp_ = randomized_snapshots(hier, hood, builder, randomized_n,
                                       seed + 7919 * j + cont)
            sp_.continuum = cont
            return sp_
        return uncoupled_snapshots(hood, hier, fm, sys, cont)

    groups = []
    if mode == "gmsfem_coupled":
        spaces = parallel_map(lambda j: coupled_snapshots(hier.neighborhoods[j],
                                                          hier, fm, sys),
                              range(n_h), threads)
        eigs = parallel_map(lambda s: offline_eig(s, hier, fm, sys,
                                                  weighting=weighting, bilinear="a_Q"),
                            spaces, threads)
        groups.append((spaces, eigs))
    else:
        for cont in range(sys.n):
            spaces = parallel_map(scalar_space, [(j, cont) for j in range(n_h)],
                                  threads)
            eigs = parallel_map(lambda s: offline_eig(s, hier, fm, sys,
                                                      weighting=weighting),
                                spaces, threads)
            groups.append((spaces, eigs))
    return groups


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.12g}"


def run_basis_schedule(scn: Scenario, cfg: RunConfig):
    """Fine solve plus one coarse solve per schedule entry; error rows out.

    Returns (rows, spectra_rows, fine_result, per_M_results). For the coupled
    mode a schedule entry M keeps N*M eigenfunctions per node so that coarse
    dimensions match the un-coupled runs at equal M.
    """
    mode = cfg.basis["mode"]
    fine_res = solve_fine(scn.ops, scn.tg, scn.u0)
    rows, per_m = [], {}
    spectra = []

    if mode == "simplified":
        off = build_simplified_R(scn.hier, scn.fm, scn.sys)
        res = solve_coarse(scn.ops, off, scn.tg, scn.u0)
        e = error_norms(res.final, fine_res.final, scn.ops)
        rows.append(_error_row("simplified", "all", off.R.shape[0], e, scn.sys.n))
        per_m["all"] = (off, res, e)
        return rows, spectra, fine_res, per_m

    snap_mode = "gmsfem_coupled" if mode == "gmsfem_coupled" else "gmsfem_uncoupled"
    groups = snapshot_groups(scn, snap_mode, kind=cfg.snapshots["kind"],
                             randomized_n=cfg.snapshots["randomized_n"],
                             seed=cfg.seed, threads=cfg.threads,
                             weighting=cfg.basis["weighting"])
    spectra = spectrum_rows(groups)

    for M in cfg.basis["schedule"]:
        if mode == "lambda_select":
            selection = ("lambda", cfg.basis["lambda_threshold"], int(M))
        elif mode == "gmsfem_coupled":
            selection = ("fixed", int(M) * scn.sys.n)
        else:
            selection = ("fixed", int(M))
        off = build_R(scn.hier, groups, selection, scn.sys.n)
        res = solve_coarse(scn.ops, off, scn.tg, scn.u0)
        e = error_norms(res.final, fine_res.final, scn.ops)
        rows.append(_error_row(mode, M, off.R.shape[0], e, scn.sys.n))
        per_m[M] = (off, res, e)
    return rows, spectra, fine_res, per_m


def _error_row(mode: str, M, dof: int, e, n_continua: int) -> str:
    l2_c2 = _fmt(e.l2[1]) if n_continua >= 2 else ""
    h1_c2 = _fmt(e.h1[1]) if n_continua >= 2 else ""
    hq = _fmt(e.hq) if e.hq is not None else ""
    return ",".join([mode, str(M), str(dof), _fmt(e.l2[0]), _fmt(e.h1[0]),
                     l2_c2, h1_c2, hq])
