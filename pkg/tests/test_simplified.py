import warnings

import numpy as np
import pytest

from msfrac.assembly import local_stiffness, single_system
from msfrac.grid import (Domain, build_hierarchy, embed_fractures,
                         empty_fracture_mesh, network_boundary_points)
from msfrac.simplified import (build_simplified_R, simplified_basis,
                               simplified_basis_cellwise)
from msfrac.spectral import chi_node_values


def _basis_for(hier, fm, hood, kappa=1.0):
    sys1 = single_system(hier.fine, kappa, 0.1)
    A = local_stiffness(hier.fine, hood, fm, sys1.kappa[0], sys1.edge_kappa(fm, 0))
    chi = chi_node_values(hier, hood.node, hood.nodes)
    return simplified_basis(hood, fm, A, chi), chi


def test_fracture_free_patch_only_hat(unit_2x2_s2):
    hier = unit_2x2_s2
    hood = hier.neighborhoods[4]
    funcs, chi = _basis_for(hier, empty_fracture_mesh(), hood)
    assert len(funcs) == 1
    assert np.array_equal(funcs[0], chi)


def test_three_networks_three_plus_background(comb_case):
    hier, fm, _ = comb_case
    hood = hier.neighborhoods[4]
    funcs, chi = _basis_for(hier, fm, hood, kappa=1e-2)
    assert len(funcs) == 4  # 3 networks + background
    assert np.array_equal(funcs[-1], chi)


def test_values_stay_in_unit_interval(comb_case):
    hier, fm, _ = comb_case
    hood = hier.neighborhoods[4]
    funcs, _ = _basis_for(hier, fm, hood, kappa=1e-2)
    for f in funcs:
        assert f.min() >= -1e-10 and f.max() <= 1.0 + 1e-10


def test_interior_network_contributes_nothing_warned(unit_2x2_s2):
    hier = unit_2x2_s2
    hood = hier.neighborhoods[4]
    fm = embed_fractures(hier.fine, [[(0.25, 0.5), (0.75, 0.5)]],
                         [{"kappa": 1e3, "porosity": 0.1}])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        funcs, chi = _basis_for(hier, fm, hood)
    assert len(funcs) == 1  # only the background
    assert any("interior-only" in str(w.message) for w in rec)


def test_network_function_is_one_on_its_network(comb_case):
    hier, fm, _ = comb_case
    hood = hier.neighborhoods[4]
    sys1 = single_system(hier.fine, 1e-2, 0.1)
    A = local_stiffness(hier.fine, hood, fm, sys1.kappa[0], sys1.edge_kappa(fm, 0))
    chi = np.ones(hood.n_nodes)  # skip the hat to probe the raw solve
    funcs = simplified_basis(hood, fm, A, chi)
    nets = [n for n in network_boundary_points(hood, fm) if n.boundary_nodes.size]
    for k, net in enumerate(nets):
        loc = hood.local_index(net.nodes)
        assert funcs[k][loc].min() > 0.99  # high contrast pins the whole network
        for other in range(len(nets)):
            if other != k:
                loc2 = hood.local_index(nets[other].nodes)
                assert np.abs(funcs[k][loc2]).max() < 0.15


def test_global_dimension_count(comb_case):
    hier, fm, sys1 = comb_case
    off = build_simplified_R(hier, fm, sys1)
    expect = hier.n_coarse_nodes
    for hood in hier.neighborhoods:
        expect += sum(1 for n in network_boundary_points(hood, fm)
                      if n.boundary_nodes.size)
    assert off.R.shape[0] == expect


def test_cellwise_single_cell_patch_matches_neighborhood():
    hier = build_hierarchy(Domain(1.0, 1.0), 1, 1, 4)
    hood = hier.neighborhoods[0]  # corner node: one coarse cell
    fm = embed_fractures(hier.fine, [[(0.0, 0.5), (1.0, 0.5)]],
                         [{"kappa": 1e3, "porosity": 0.1}])
    sys1 = single_system(hier.fine, 1.0, 0.1)
    A = local_stiffness(hier.fine, hood, fm, sys1.kappa[0], sys1.edge_kappa(fm, 0))
    chi = chi_node_values(hier, hood.node, hood.nodes)
    direct = simplified_basis(hood, fm, A, chi)
    cellwise = simplified_basis_cellwise(hood, hier, fm, sys1.kappa[0],
                                         sys1.edge_kappa(fm, 0), chi)
    assert len(direct) == len(cellwise)
    for a, b in zip(direct, cellwise):
        assert np.abs(a - b).max() < 1e-10


def test_cellwise_l_shaped_network_spanning_two_cells():
    # neighborhood of the bottom-middle node of a 2x1 coarse grid: 2 cells
    hier = build_hierarchy(Domain(2.0, 1.0), 2, 1, 4)
    hood = hier.neighborhoods[1]  # node (1,0): both coarse cells, boundary node
    fm = embed_fractures(
        hier.fine,
        [[(0.5, 0.5), (1.5, 0.5), (1.5, 1.0)]],  # spans both cells
        [{"kappa": 1e3, "porosity": 0.1}])
    sys1 = single_system(hier.fine, 1.0, 0.1)
    A = local_stiffness(hier.fine, hood, fm, sys1.kappa[0], sys1.edge_kappa(fm, 0))
    chi = chi_node_values(hier, hood.node, hood.nodes)
    hoodwise = simplified_basis(hood, fm, A, chi)
    cellwise = simplified_basis_cellwise(hood, hier, fm, sys1.kappa[0],
                                         sys1.edge_kappa(fm, 0), chi)
    # one neighborhood function vs one per (cell, touching network)
    assert len(hoodwise) == 1 + 1
    assert len(cellwise) == 2 + 1


def test_cellwise_fracture_free_cell_contributes_nothing(unit_2x2_s2):
    hier = unit_2x2_s2
    hood = hier.neighborhoods[4]
    # fracture only in the lower-left coarse cell, touching the patch edge
    fm = embed_fractures(hier.fine, [[(0.0, 0.25), (0.5, 0.25)]],
                         [{"kappa": 1e3, "porosity": 0.1}])
    sys1 = single_system(hier.fine, 1.0, 0.1)
    chi = chi_node_values(hier, hood.node, hood.nodes)
    funcs = simplified_basis_cellwise(hood, hier, fm, sys1.kappa[0],
                                      sys1.edge_kappa(fm, 0), chi)
    assert len(funcs) == 1 + 1  # one cell contributes, three are fracture-free
