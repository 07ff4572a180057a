"""Per-neighborhood snapshot spaces: harmonic, randomized, un-coupled, coupled.

Each snapshot solves the local flow problem on a coarse neighborhood with
prescribed boundary data (a discrete delta per boundary fine node, or random
traces on an oversampled patch). One sparse factorization is shared by all
right-hand sides of a neighborhood.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import ContinuumSystem, local_block_stiffness, local_stiffness
from .errors import RankDeficient, SingularLocalSystem
from .grid import FractureMesh, MeshHierarchy, Neighborhood, oversampled_neighborhood


@dataclass
class SnapshotSpace:
    """Snapshot vectors of one neighborhood, in local node numbering.

    ``vectors`` has shape (L, n_local) for scalar kinds and (L, N, n_local)
    for coupled snapshots.
    """

    omega: int
    kind: str  # harmonic | randomized | uncoupled | coupled
    vectors: np.ndarray
    nodes: np.ndarray  # global fine-node ids of the patch
    interior: np.ndarray
    boundary: np.ndarray
    continuum: int | None = None
    seed: int | None = None

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.vectors.shape[1] if self.vectors.ndim == 3 else 1

    def flat_vectors(self) -> np.ndarray:
        """(L, n_blocks * n_local) view with continuum-major block ordering."""
        if self.vectors.ndim == 2:
            return self.vectors
        return self.vectors.reshape(self.count, -1)


def _interior_solve(A_loc: sp.csr_matrix, interior: np.ndarray, boundary: np.ndarray,
                    G: np.ndarray) -> np.ndarray:
    """Solve A_II X = -A_IB G column-wise; returns interior values (nI, L)."""
    if interior.size == 0:
        return np.zeros((0, G.shape[1]))
    A_II = A_loc[np.ix_(interior, interior)].tocsc()
    A_IB = A_loc[np.ix_(interior, boundary)]
    try:
        lu = splu(A_II)
    except RuntimeError as exc:
        raise SingularLocalSystem(str(exc)) from exc
    return lu.solve(-A_IB @ G)


def _extend(interior: np.ndarray, boundary: np.ndarray, n: int,
            X_int: np.ndarray, G: np.ndarray) -> np.ndarray:
    out = np.zeros((G.shape[1], n))
    out[:, interior] = X_int.T
    out[:, boundary] = G.T
    return out


def harmonic_snapshots(omega: Neighborhood, A_loc: sp.csr_matrix) -> SnapshotSpace:
    """One a-harmonic extension per boundary fine node (delta boundary data)."""
    nb = omega.boundary.size
    G = np.eye(nb)
    X = _interior_solve(A_loc, omega.interior, omega.boundary, G)
    vecs = _extend(omega.interior, omega.boundary, omega.n_nodes, X, G)
    return SnapshotSpace(omega=omega.node, kind="harmonic", vectors=vecs,
                         nodes=omega.nodes, interior=omega.interior,
                         boundary=omega.boundary)


def uncoupled_snapshots(omega: Neighborhood, hier: MeshHierarchy, fm: FractureMesh,
                        sys: ContinuumSystem, continuum: int) -> SnapshotSpace:
    """Harmonic snapshots with continuum-specific coefficients, no transfer."""
    A = local_stiffness(hier.fine, omega, fm, sys.kappa[continuum],
                        sys.edge_kappa(fm, continuum))
    space = harmonic_snapshots(omega, A)
    space.kind = "uncoupled"
    space.continuum = continuum
    return space


def coupled_snapshots(omega: Neighborhood, hier: MeshHierarchy, fm: FractureMesh,
                      sys: ContinuumSystem) -> SnapshotSpace:
    """N-block snapshots of the coupled operator.

    One snapshot per (boundary fine node, continuum) pair: the delta sits on a
    single continuum with zero trace on the others, so the snapshot traces
    span every possible block boundary value (count = N * #boundary nodes).
    Snapshot ordering is continuum-major.
    """
    Aq = local_block_stiffness(hier.fine, omega, fm, sys, coupled=True)
    n, nloc = sys.n, omega.n_nodes
    interior = np.concatenate([s * nloc + omega.interior for s in range(n)])
    boundary = np.concatenate([s * nloc + omega.boundary for s in range(n)])
    nb = omega.boundary.size
    G = np.eye(n * nb)
    X = _interior_solve(Aq, interior, boundary, G)
    flat = _extend(interior, boundary, n * nloc, X, G)
    return SnapshotSpace(omega=omega.node, kind="coupled",
                         vectors=flat.reshape(n * nb, n, nloc),
                         nodes=omega.nodes, interior=omega.interior,
                         boundary=omega.boundary)


def randomized_snapshots(hier: MeshHierarchy, omega: Neighborhood,
                         A_loc_builder, n: int, seed: int,
                         rings: int = 1, _retry: bool = True) -> SnapshotSpace:
    """n + 4 random-trace solves on the oversampled patch, restricted to omega.

    ``A_loc_builder(patch)`` must return the local stiffness of an arbitrary
    patch. Boundary values are i.i.d. uniform(-1, 1) per boundary fine node of
    the oversampled patch. Raises RankDeficient if the restriction has
    numerical rank below ``n`` (one retry with a reseeded generator).
    """
    plus = oversampled_neighborhood(hier, omega.node, rings=rings)
    A_plus = A_loc_builder(plus)
    rng = np.random.default_rng(seed)
    count = n + 4
    G = rng.uniform(-1.0, 1.0, size=(plus.boundary.size, count))
    X = _interior_solve(A_plus, plus.interior, plus.boundary, G)
    full = _extend(plus.interior, plus.boundary, plus.n_nodes, X, G)
    take = plus.local_index(omega.nodes)
    vecs = full[:, take]
    sv = np.linalg.svd(vecs, compute_uv=False)
    rank = int(np.sum(sv > sv[0] * max(vecs.shape) * np.finfo(float).eps))
    if rank < n:
        if _retry:
            return randomized_snapshots(hier, omega, A_loc_builder, n, seed + 1,
                                        rings=rings, _retry=False)
        raise RankDeficient(f"omega {omega.node}: rank {rank} < n = {n}")
    return SnapshotSpace(omega=omega.node, kind="randomized", vectors=vecs,
                         nodes=omega.nodes, interior=omega.interior,
                         boundary=omega.boundary, seed=seed)


# ---------------------------------------------------------------------------
# optional binary cache


def snapshot_cache_key(mesh_desc: str, coeff_arrays: list, kind: str,
                       seed: int | None) -> str:
    h = hashlib.sha256()
    h.update(mesh_desc.encode())
    for a in coeff_arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    h.update(kind.encode())
    h.update(str(seed).encode())
    return h.hexdigest()


def save_snapshots(cache_dir, key: str, spaces: list) -> Path:
    path = Path(cache_dir) / f"snap_{key}.npz"
    payload = {}
    for i, s in enumerate(spaces):
        payload[f"v{i}"] = s.vectors
        payload[f"meta{i}"] = np.array([s.omega, -1 if s.continuum is None else s.continuum,
                                        -1 if s.seed is None else s.seed])
        payload[f"kind{i}"] = np.array(s.kind)
    payload["count"] = np.array(len(spaces))
    np.savez_compressed(path, **payload)
    return path


def load_snapshots(cache_dir, key: str, hier: MeshHierarchy) -> list | None:
    path = Path(cache_dir) / f"snap_{key}.npz"
    if not path.exists():
        return None
    with np.load(path, allow_pickle=False) as z:
        spaces = []
        for i in range(int(z["count"])):
            om, cont, seed = (int(v) for v in z[f"meta{i}"])
            hood = hier.neighborhoods[om]
            spaces.append(SnapshotSpace(
                omega=om, kind=str(z[f"kind{i}"]), vectors=z[f"v{i}"],
                nodes=hood.nodes, interior=hood.interior, boundary=hood.boundary,
                continuum=None if cont < 0 else cont,
                seed=None if seed < 0 else seed))
    return spaces
