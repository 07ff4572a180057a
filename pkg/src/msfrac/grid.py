"""Structured coarse/fine mesh hierarchy and embedded fracture networks.

The coarse grid partitions a rectangle into ``nx x ny`` axis-aligned cells;
the fine grid refines every coarse cell into ``s x s`` cells. Fractures are
one-dimensional objects carried as chains of fine-grid edges, so slanted
fractures must be supplied as staircase polylines through fine nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import NodeNotFound, NonAdjacentSegment, PolylineOffGrid

# snap tolerance for polyline vertices, relative to the fine mesh size
SNAP_REL_TOL = 1e-9


@dataclass(frozen=True)
class Domain:
    """Rectangular domain [0, lx] x [0, ly] in meters."""

    lx: float
    ly: float

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain extents must be positive")


@dataclass(frozen=True)
class CoarseGrid:
    nx: int
    ny: int
    vertices: np.ndarray  # ((nx+1)*(ny+1), 2)
    cells: np.ndarray  # (nx*ny, 4) node quadruples, [SW, SE, NE, NW]


@dataclass(frozen=True)
class FineGrid:
    nx: int  # fine cell count in x
    ny: int
    hx: float
    hy: float
    vertices: np.ndarray
    cells: np.ndarray  # (nx*ny, 4), [SW, SE, NE, NW]
    parent: np.ndarray  # fine cell -> coarse cell

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def node_id(self, ix, iy):
        return iy * (self.nx + 1) + ix

    def node_at(self, x: float, y: float) -> int:
        """Index of the fine node at (x, y), snapped within SNAP_REL_TOL*h."""
        h = min(self.hx, self.hy)
        ix = round(x / self.hx)
        iy = round(y / self.hy)
        if not (0 <= ix <= self.nx and 0 <= iy <= self.ny):
            raise NodeNotFound(f"point ({x}, {y}) outside the grid")
        if abs(x - ix * self.hx) > SNAP_REL_TOL * h or abs(y - iy * self.hy) > SNAP_REL_TOL * h:
            raise NodeNotFound(f"point ({x}, {y}) is not a fine-grid node")
        return self.node_id(ix, iy)


@dataclass(frozen=True)
class Neighborhood:
    """Union of coarse cells sharing one coarse node, with its fine-node split.

    ``nodes`` lists all fine nodes of the patch (sorted global ids);
    ``interior`` and ``boundary`` are disjoint local index arrays into
    ``nodes`` covering it completely.
    """

    node: int  # coarse node id
    coarse_cells: np.ndarray
    fine_cells: np.ndarray
    nodes: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    box: tuple  # (ix0, ix1, iy0, iy1) inclusive fine-node index bounds

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def local_index(self, global_nodes) -> np.ndarray:
        """Map global fine-node ids into local positions in ``nodes``."""
        pos = np.searchsorted(self.nodes, global_nodes)
        if np.any(pos >= self.nodes.size) or np.any(self.nodes[pos] != global_nodes):
            raise KeyError("node not in neighborhood")
        return pos


@dataclass(frozen=True)
class MeshHierarchy:
    domain: Domain
    coarse: CoarseGrid
    fine: FineGrid
    refine: int
    neighborhoods: list

    @property
    def n_coarse_nodes(self) -> int:
        return (self.coarse.nx + 1) * (self.coarse.ny + 1)

    def coarse_node_xy(self, i: int):
        return self.coarse.vertices[i]


def _grid_arrays(nx: int, ny: int, hx: float, hy: float):
    xs = np.arange(nx + 1) * hx
    ys = np.arange(ny + 1) * hy
    X, Y = np.meshgrid(xs, ys)  # row-major in y
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cx, cy = np.meshgrid(np.arange(nx), np.arange(ny))
    cx = cx.ravel()
    cy = cy.ravel()
    sw = cy * (nx + 1) + cx
    cells = np.column_stack([sw, sw + 1, sw + nx + 2, sw + nx + 1])
    return vertices, cells


def _patch_nodes(fine: FineGrid, ix0, ix1, iy0, iy1):
    """Sorted node ids of the inclusive index box, plus interior/boundary split."""
    w = fine.nx + 1
    ix = np.arange(ix0, ix1 + 1)
    iy = np.arange(iy0, iy1 + 1)
    IX, IY = np.meshgrid(ix, iy)
    nodes = (IY * w + IX).ravel()
    nodes.sort()
    on_edge = (IX == ix0) | (IX == ix1) | (IY == iy0) | (IY == iy1)
    bnd = np.sort((IY * w + IX)[on_edge].ravel())
    boundary = np.searchsorted(nodes, bnd)
    mask = np.zeros(nodes.size, dtype=bool)
    mask[boundary] = True
    interior = np.nonzero(~mask)[0]
    return nodes, interior, boundary


def _patch_cells(fine: FineGrid, cx0, cx1, cy0, cy1):
    """Fine cell ids of the inclusive fine-cell index box."""
    cx = np.arange(cx0, cx1 + 1)
    cy = np.arange(cy0, cy1 + 1)
    CX, CY = np.meshgrid(cx, cy)
    return np.sort((CY * fine.nx + CX).ravel())


def _build_neighborhood(coarse: CoarseGrid, fine: FineGrid, s: int, node: int,
                        rings: int = 0) -> Neighborhood:
    nxc, nyc = coarse.nx, coarse.ny
    cxn = node % (nxc + 1)
    cyn = node // (nxc + 1)
    ca0 = max(cxn - 1 - rings, 0)
    ca1 = min(cxn + rings, nxc - 1)
    cb0 = max(cyn - 1 - rings, 0)
    cb1 = min(cyn + rings, nyc - 1)
    CX, CY = np.meshgrid(np.arange(ca0, ca1 + 1), np.arange(cb0, cb1 + 1))
    coarse_cells = np.sort((CY * nxc + CX).ravel())
    fine_cells = _patch_cells(fine, ca0 * s, (ca1 + 1) * s - 1, cb0 * s, (cb1 + 1) * s - 1)
    ix0, ix1 = ca0 * s, (ca1 + 1) * s
    iy0, iy1 = cb0 * s, (cb1 + 1) * s
    nodes, interior, boundary = _patch_nodes(fine, ix0, ix1, iy0, iy1)
    return Neighborhood(node=node, coarse_cells=coarse_cells, fine_cells=fine_cells,
                        nodes=nodes, interior=interior, boundary=boundary,
                        box=(ix0, ix1, iy0, iy1))


def build_hierarchy(domain: Domain, nx: int, ny: int, s: int) -> MeshHierarchy:
    """Build the coarse grid, its s-fold refinement and all node neighborhoods."""
    if min(nx, ny, s) < 1:
        raise ValueError("nx, ny and s must all be >= 1")
    Hx, Hy = domain.lx / nx, domain.ly / ny
    cverts, ccells = _grid_arrays(nx, ny, Hx, Hy)
    coarse = CoarseGrid(nx=nx, ny=ny, vertices=cverts, cells=ccells)

    fx, fy = nx * s, ny * s
    hx, hy = domain.lx / fx, domain.ly / fy
    fverts, fcells = _grid_arrays(fx, fy, hx, hy)
    cx = (np.arange(fx * fy) % fx) // s
    cy = (np.arange(fx * fy) // fx) // s
    fine = FineGrid(nx=fx, ny=fy, hx=hx, hy=hy, vertices=fverts, cells=fcells,
                    parent=cy * nx + cx)

    hoods = [_build_neighborhood(coarse, fine, s, i) for i in range((nx + 1) * (ny + 1))]
    return MeshHierarchy(domain=domain, coarse=coarse, fine=fine, refine=s,
                         neighborhoods=hoods)


def oversampled_neighborhood(hier: MeshHierarchy, node: int, rings: int = 1) -> Neighborhood:
    """Neighborhood padded by ``rings`` coarse cells, clipped at the domain."""
    return _build_neighborhood(hier.coarse, hier.fine, hier.refine, node, rings=rings)


# ---------------------------------------------------------------------------
# fractures


@dataclass(frozen=True)
class Fracture:
    """One input polyline with its effective 1-D coefficients.

    ``kappa`` and ``porosity`` are stored with the aperture already folded in
    (the assembled 1-D integrals use them directly).
    """

    edges: np.ndarray  # (ne, 2) fine-node pairs, lo < hi
    kappa: float
    porosity: float
    aperture: float = 1.0
    tag: str = ""


@dataclass(frozen=True)
class FractureMesh:
    """All fracture edges plus their grouping into connected networks."""

    fractures: list
    edges: np.ndarray  # (nE, 2) unique edges, lo < hi
    edge_fracture: np.ndarray  # (nE,) owning fracture (first polyline wins)
    edge_network: np.ndarray  # (nE,) connected-component label
    n_networks: int

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def edge_kappa(self) -> np.ndarray:
        return np.array([self.fractures[f].kappa for f in self.edge_fracture])

    def edge_porosity(self) -> np.ndarray:
        return np.array([self.fractures[f].porosity for f in self.edge_fracture])

    def edge_tag(self) -> list:
        return [self.fractures[f].tag for f in self.edge_fracture]

    def nodes(self) -> np.ndarray:
        return np.unique(self.edges)


def empty_fracture_mesh() -> FractureMesh:
    return FractureMesh(fractures=[], edges=np.zeros((0, 2), dtype=int),
                        edge_fracture=np.zeros(0, dtype=int),
                        edge_network=np.zeros(0, dtype=int), n_networks=0)


def _segment_edges(fine: FineGrid, p: int, q: int) -> np.ndarray:
    """Fine edges along the straight axis-aligned segment from node p to node q."""
    w = fine.nx + 1
    px, py = p % w, p // w
    qx, qy = q % w, q // w
    if px == qx and py == qy:
        return np.zeros((0, 2), dtype=int)
    if py == qy:  # horizontal run
        a, b = sorted((px, qx))
        ids = py * w + np.arange(a, b + 1)
    elif px == qx:  # vertical run
        a, b = sorted((py, qy))
        ids = np.arange(a, b + 1) * w + px
    else:
        raise NonAdjacentSegment(
            "segment is not axis-aligned along fine-grid lines; "
            "supply slanted fractures as staircase polylines")
    return np.column_stack([ids[:-1], ids[1:]])


def embed_fractures(fine: FineGrid, polylines: list, props: list) -> FractureMesh:
    """Turn point polylines into fine-edge chains and group them into networks.

    Every polyline vertex must coincide with a fine-grid node (snap tolerance
    SNAP_REL_TOL * h). Duplicate edges are kept once, first polyline winning.
    Networks are the edge-connected components of the union of all chains.
    """
    if len(polylines) != len(props):
        raise ValueError("one property set per polyline required")
    fractures = []
    for k, (pts, pr) in enumerate(zip(polylines, props)):
        try:
            node_ids = [fine.node_at(float(x), float(y)) for x, y in pts]
        except NodeNotFound as exc:
            raise PolylineOffGrid(f"polyline {k}: {exc}") from exc
        if len(node_ids) < 2:
            raise NonAdjacentSegment(f"polyline {k}: needs at least two vertices")
        chunks = []
        for p, q in zip(node_ids[:-1], node_ids[1:]):
            try:
                chunks.append(_segment_edges(fine, p, q))
            except NonAdjacentSegment as exc:
                raise NonAdjacentSegment(f"polyline {k}: {exc}") from exc
        edges = np.vstack(chunks) if chunks else np.zeros((0, 2), dtype=int)
        edges = np.sort(edges, axis=1)
        fractures.append(Fracture(edges=edges, kappa=float(pr["kappa"]),
                                  porosity=float(pr["porosity"]),
                                  aperture=float(pr.get("aperture", 1.0)),
                                  tag=str(pr.get("tag", ""))))

    # unique edge table; first occurrence keeps its owning fracture
    all_edges = np.vstack([f.edges for f in fractures]) if fractures else np.zeros((0, 2), dtype=int)
    owners = np.concatenate([np.full(f.edges.shape[0], i) for i, f in enumerate(fractures)]) \
        if fractures else np.zeros(0, dtype=int)
    if all_edges.shape[0]:
        _, first = np.unique(all_edges[:, 0] * (fine.n_nodes + 1) + all_edges[:, 1],
                             return_index=True)
        first.sort()
        edges = all_edges[first]
        owners = owners[first]
    else:
        edges, owners = all_edges, owners

    labels, n_nets = _edge_components(edges, fine.n_nodes)
    return FractureMesh(fractures=fractures, edges=edges, edge_fracture=owners,
                        edge_network=labels, n_networks=n_nets)


def _edge_components(edges: np.ndarray, n_nodes: int):
    """Connected-component label per edge, relabeled by smallest member node."""
    if edges.shape[0] == 0:
        return np.zeros(0, dtype=int), 0
    g = coo_matrix((np.ones(edges.shape[0]), (edges[:, 0], edges[:, 1])),
                   shape=(n_nodes, n_nodes))
    n, node_label = connected_components(g + g.T, directed=False)
    edge_label = node_label[edges[:, 0]]
    # stable relabeling: order components by their minimum node id
    used = np.unique(edge_label)
    min_node = np.full(used.max() + 1, np.iinfo(np.int64).max)
    np.minimum.at(min_node, edge_label, edges[:, 0])
    order = used[np.argsort(min_node[used])]
    remap = np.zeros(used.max() + 1, dtype=int)
    remap[order] = np.arange(order.size)
    return remap[edge_label], order.size


@dataclass(frozen=True)
class LocalNetwork:
    """One connected component of the fracture mesh restricted to a patch."""

    edges: np.ndarray  # (k, 2) global node pairs
    nodes: np.ndarray  # sorted global node ids
    boundary_nodes: np.ndarray  # subset of nodes lying on the patch boundary
    global_network: int


def restrict_edges(omega: Neighborhood, fm: FractureMesh) -> np.ndarray:
    """Indices of fracture edges with both endpoints inside the patch."""
    if fm.n_edges == 0:
        return np.zeros(0, dtype=int)
    pos = np.searchsorted(omega.nodes, fm.edges)
    pos = np.clip(pos, 0, omega.nodes.size - 1)
    inside = np.all(omega.nodes[pos] == fm.edges, axis=1)
    return np.nonzero(inside)[0]


def network_boundary_points(omega: Neighborhood, fm: FractureMesh) -> list:
    """Connected fracture components within the patch and their boundary hits.

    Components are recomputed on the restriction (a global network may split),
    ordered by smallest member node. Components that do not meet the patch
    boundary are returned with an empty ``boundary_nodes`` array.
    """
    idx = restrict_edges(omega, fm)
    if idx.size == 0:
        return []
    sub = fm.edges[idx]
    # local component analysis on the patch node set
    loc = omega.local_index(sub.ravel()).reshape(-1, 2)
    g = coo_matrix((np.ones(loc.shape[0]), (loc[:, 0], loc[:, 1])),
                   shape=(omega.n_nodes, omega.n_nodes))
    _, node_label = connected_components(g + g.T, directed=False)
    edge_label = node_label[loc[:, 0]]
    bmask = np.zeros(omega.n_nodes, dtype=bool)
    bmask[omega.boundary] = True

    result = []
    for lab in np.unique(edge_label):
        e = sub[edge_label == lab]
        comp_nodes = np.unique(e)
        comp_loc = omega.local_index(comp_nodes)
        bnodes = comp_nodes[bmask[comp_loc]]
        gnet = int(fm.edge_network[idx[edge_label == lab][0]])
        result.append(LocalNetwork(edges=e, nodes=comp_nodes,
                                   boundary_nodes=bnodes, global_network=gnet))
    result.sort(key=lambda c: int(c.nodes[0]))
    return result
