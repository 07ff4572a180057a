import numpy as np
import pytest

from msfrac.errors import NonAdjacentSegment, PolylineOffGrid
from msfrac.grid import (Domain, build_hierarchy, embed_fractures,
                         network_boundary_points, oversampled_neighborhood)


def test_coarse_vertex_count_matches_reference_grid():
    hier = build_hierarchy(Domain(60.0, 60.0), 10, 10, 3)
    assert hier.n_coarse_nodes == 121
    assert hier.coarse.cells.shape == (100, 4)
    assert len(hier.neighborhoods) == 121


def test_degenerate_refinement_is_identity():
    hier = build_hierarchy(Domain(2.0, 2.0), 1, 1, 1)
    assert np.allclose(hier.fine.vertices, hier.coarse.vertices)
    assert np.array_equal(hier.fine.cells, hier.coarse.cells)
    assert len(hier.neighborhoods) == 4
    for hood in hier.neighborhoods:
        assert hood.coarse_cells.size == 1


def test_center_neighborhood_counts(unit_2x2_s2):
    hood = unit_2x2_s2.neighborhoods[4]  # node (1,1) of the 3x3 coarse nodes
    assert hood.coarse_cells.size == 4
    assert hood.n_nodes == 25
    assert hood.boundary.size == 16
    assert hood.interior.size == 9
    combined = np.sort(np.concatenate([hood.interior, hood.boundary]))
    assert np.array_equal(combined, np.arange(25))


def test_cell_valence_sum():
    hier = build_hierarchy(Domain(3.0, 2.0), 3, 2, 2)
    total = sum(h.coarse_cells.size for h in hier.neighborhoods)
    assert total == 4 * hier.coarse.nx * hier.coarse.ny


def test_invalid_counts_rejected():
    with pytest.raises(ValueError):
        build_hierarchy(Domain(1.0, 1.0), 0, 2, 1)


def test_oversampled_neighborhood_grows_and_clips(unit_2x2_s2):
    hood = unit_2x2_s2.neighborhoods[4]
    plus = oversampled_neighborhood(unit_2x2_s2, 4, rings=1)
    assert plus.coarse_cells.size == 4  # already the whole 2x2 grid
    corner = oversampled_neighborhood(unit_2x2_s2, 0, rings=1)
    assert corner.coarse_cells.size == 4  # one cell padded to 2x2


# --- fractures ---------------------------------------------------------------


def test_aligned_polyline_becomes_edge_chain(unit_2x2_s2):
    fine = unit_2x2_s2.fine  # h = 0.25
    fm = embed_fractures(fine, [[(0.0, 0.5), (1.0, 0.5)]],
                         [{"kappa": 1.0, "porosity": 1.0}])
    assert fm.n_networks == 1
    assert fm.n_edges == 4  # 5 nodes -> 4 edges


def test_polylines_sharing_a_node_merge(unit_2x2_s2):
    fine = unit_2x2_s2.fine
    fm = embed_fractures(
        fine,
        [[(0.0, 0.5), (0.5, 0.5)], [(0.5, 0.5), (0.5, 1.0)]],
        [{"kappa": 1.0, "porosity": 1.0}] * 2)
    assert fm.n_networks == 1


def test_disjoint_polylines_stay_separate(unit_2x2_s2):
    fine = unit_2x2_s2.fine
    fm = embed_fractures(
        fine,
        [[(0.0, 0.25), (1.0, 0.25)], [(0.0, 0.5), (1.0, 0.5)],
         [(0.0, 0.75), (1.0, 0.75)]],
        [{"kappa": 1.0, "porosity": 1.0}] * 3)
    assert fm.n_networks == 3


def test_duplicate_edges_kept_once(unit_2x2_s2):
    fine = unit_2x2_s2.fine
    fm = embed_fractures(
        fine,
        [[(0.0, 0.5), (1.0, 0.5)], [(0.25, 0.5), (0.75, 0.5)]],
        [{"kappa": 1.0, "porosity": 1.0}] * 2)
    assert fm.n_edges == 4
    keys = fm.edges[:, 0] * fine.n_nodes + fm.edges[:, 1]
    assert np.unique(keys).size == fm.n_edges
    # first polyline owns the shared edges
    assert np.all(fm.edge_fracture == 0)


def test_off_grid_vertex_rejected(unit_2x2_s2):
    with pytest.raises(PolylineOffGrid):
        embed_fractures(unit_2x2_s2.fine, [[(0.1, 0.5), (1.0, 0.5)]],
                        [{"kappa": 1.0, "porosity": 1.0}])


def test_slanted_segment_rejected(unit_2x2_s2):
    with pytest.raises(NonAdjacentSegment):
        embed_fractures(unit_2x2_s2.fine, [[(0.0, 0.0), (1.0, 1.0)]],
                        [{"kappa": 1.0, "porosity": 1.0}])


def test_staircase_polyline_accepted(unit_2x2_s2):
    fm = embed_fractures(
        unit_2x2_s2.fine,
        [[(0.0, 0.0), (0.5, 0.0), (0.5, 0.5), (1.0, 0.5)]],
        [{"kappa": 1.0, "porosity": 1.0}])
    assert fm.n_networks == 1
    assert fm.n_edges == 6


# --- per-neighborhood network restriction ------------------------------------


def test_interior_network_has_no_boundary_points(unit_2x2_s2):
    hood = unit_2x2_s2.neighborhoods[4]  # patch == whole unit square
    fm = embed_fractures(unit_2x2_s2.fine, [[(0.25, 0.5), (0.75, 0.5)]],
                         [{"kappa": 1.0, "porosity": 1.0}])
    nets = network_boundary_points(hood, fm)
    assert len(nets) == 1
    assert nets[0].boundary_nodes.size == 0


def test_crossing_chord_hits_boundary_twice(unit_2x2_s2):
    hood = unit_2x2_s2.neighborhoods[4]
    fm = embed_fractures(unit_2x2_s2.fine, [[(0.0, 0.5), (1.0, 0.5)]],
                         [{"kappa": 1.0, "porosity": 1.0}])
    nets = network_boundary_points(hood, fm)
    assert len(nets) == 1
    assert nets[0].boundary_nodes.size == 2


def test_y_network_touches_boundary_three_times():
    hier = build_hierarchy(Domain(1.0, 1.0), 2, 2, 4)
    hood = hier.neighborhoods[4]
    # Y: horizontal bar plus a vertical stem, three boundary hits
    fm = embed_fractures(
        hier.fine,
        [[(0.0, 0.5), (1.0, 0.5)], [(0.5, 0.5), (0.5, 1.0)]],
        [{"kappa": 1.0, "porosity": 1.0}] * 2)
    nets = network_boundary_points(hood, fm)
    assert len(nets) == 1
    assert nets[0].boundary_nodes.size == 3


def test_restriction_components_cover_global_network():
    # an L-network clipped by a smaller patch splits but the union covers it
    hier = build_hierarchy(Domain(1.0, 1.0), 4, 4, 2)
    fm = embed_fractures(
        hier.fine,
        [[(0.125, 0.125), (0.875, 0.125), (0.875, 0.875)]],
        [{"kappa": 1.0, "porosity": 1.0}])
    seen = set()
    for hood in hier.neighborhoods:
        for net in network_boundary_points(hood, fm):
            for e in net.edges:
                seen.add((int(e[0]), int(e[1])))
    global_edges = {(int(a), int(b)) for a, b in fm.edges}
    assert seen == global_edges
