"""Triangular finite-element mesh built from a clipped power diagram."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import geometry as geo
from .errors import MeshTaggingError
from .power import WELD_RTOL, PowerDiagram


@dataclass
class FeMesh:
    """Welded vertices, triangles and the triangle-to-cell map.

    ``tags`` maps a boundary name (``"fixed"``, ``"actuated"``) to vertex
    indices; ``points`` maps a named target point to its vertex and
    ``snap`` records how far that vertex is from the requested location.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tri_cell: np.ndarray
    n_cells: int
    tags: dict = field(default_factory=dict)
    points: dict = field(default_factory=dict)
    snap: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def weld(points, tol):
    """Merge points closer than ``tol``; returns ``(representative index per point)``.

    The representative of a cluster is its lowest index, so the result does
    not depend on tree traversal order.
    """
    n = len(points)
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n)
    g = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(g, directed=False)
    first = np.full(comp.max() + 1, n)
    np.minimum.at(first, comp, np.arange(n))
    return first[comp]


def extract_fe_mesh(diagram: PowerDiagram, fixed=(), actuated=(), points=None,
                    require=("fixed", "actuated"), tag_tol: float | None = None) -> FeMesh:
    """Triangulate every cell and weld shared vertices into one mesh.

    ``fixed`` and ``actuated`` are lists of boundary segments ``[[x0, y0],
    [x1, y1]]``; vertices within ``tag_tol`` of a segment receive the tag.
    ``points`` maps names to locations that are snapped to the nearest
    vertex.  A tag listed in ``require`` without any vertex raises
    :class:`MeshTaggingError`.
    """
    L = diagram.length_scale
    tol = WELD_RTOL * L
    if tag_tol is None:
        tag_tol = 1e-8 * L
    polys = [(i, k, pv) for i in range(diagram.n) for k, (pv, _) in enumerate(diagram.pieces[i])]
    allpts = np.vstack([pv for _, _, pv in polys])
    rep = weld(allpts, tol)

    verts = list(allpts)
    tris, tri_cell = [], []
    offset = 0
    for i, k, pv in polys:
        m = len(pv)
        ids = rep[offset:offset + m]
        offset += m
        keep = [q for q in range(m) if ids[q] != ids[(q + 1) % m]]
        ids = ids[keep]
        if len(ids) < 3:
            continue
        poly = allpts[ids]
        if k == 0:
            local = geo.triangulate_cell(poly, diagram.sites[i])
        else:
            # detached piece of a cell: no site vertex
            local = geo.triangulate_cell(poly, None)
        site_id = len(verts)
        if np.any(local == len(ids)):
            verts.append(diagram.sites[i])
        lookup = np.r_[ids, site_id]
        tris.append(lookup[local])
        tri_cell.append(np.full(len(local), i))

    verts = np.array(verts)
    tris = np.vstack(tris)
    tri_cell = np.concatenate(tri_cell)
    used, inverse = np.unique(tris.ravel(), return_inverse=True)
    tris = inverse.reshape(-1, 3)
    verts = verts[used]

    mesh = FeMesh(verts, tris, tri_cell, diagram.n)
    for name, segs in (("fixed", fixed), ("actuated", actuated)):
        mask = np.zeros(len(verts), bool)
        for a, b in segs:
            mask |= geo.segment_distance(verts, a, b) <= tag_tol
        mesh.tags[name] = np.nonzero(mask)[0]
        if name in require and not mask.any():
            raise MeshTaggingError(f"no mesh vertex on the {name} boundary; increase the cell count")
    if points:
        tree = cKDTree(verts)
        for name, p in points.items():
            dist, idx = tree.query(np.asarray(p, dtype=float))
            mesh.points[name] = int(idx)
            mesh.snap[name] = float(dist)
    return mesh
