"""Multiscale finite element solvers for flow in fractured porous media."""

__version__ = "0.1.0"

from .assembly import (ContinuumSystem, FineOperators, apply_bc, assemble_multi,
                       assemble_single, single_system)
from .grid import (Domain, FractureMesh, MeshHierarchy, Neighborhood,
                   build_hierarchy, embed_fractures, network_boundary_points,
                   oversampled_neighborhood)
from .rve import RveResult, rve_transfer, spatial_Q_field
from .shale import ShaleParams, shale_assemble, shale_run
from .simplified import build_simplified_R, simplified_basis, simplified_basis_cellwise
from .snapshots import (SnapshotSpace, coupled_snapshots, harmonic_snapshots,
                        randomized_snapshots, uncoupled_snapshots)
from .solver import (ErrorNorms, SimulationResult, TimeGrid, error_norms,
                     solve_coarse, solve_fine)
from .spectral import (EigenPairs, OfflineSpace, build_R, count_networks,
                       offline_eig, pou_matrix)
from .verify import BoundReport, check_bounds, eigen_projection, snapshot_projection
