"""Planar polygon primitives used by the power-diagram layer.

Polygons are ``(m, 2)`` float arrays.  Counter-clockwise order is canonical;
loaders normalise orientation with :func:`ccw`.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from .errors import GeometryError

__all__ = [
    "polygon_area",
    "polygon_centroid",
    "second_moment",
    "ccw",
    "is_convex",
    "is_simple",
    "points_in_polygon",
    "segment_distance",
    "clip_polygon",
    "clip_halfplane",
    "split_pieces",
    "triangulate_cell",
    "bbox_size",
]


def _poly(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"polygon must be an (m, 2) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("polygon has non-finite coordinates")
    return arr


def bbox_size(p) -> float:
    """Largest bounding-box edge of a point set."""
    p = np.asarray(p, dtype=float)
    return float(np.max(p.max(axis=0) - p.min(axis=0)))


def _signed_area(p: np.ndarray) -> float:
    q = p - p[0]
    x, y = q[:, 0], q[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_area(p) -> float:
    """Shoelace area: positive for counter-clockwise, negative for clockwise order."""
    p = _poly(p)
    if len(p) < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {len(p)}")
    return _signed_area(p)


def polygon_centroid(p) -> np.ndarray:
    p = _poly(p)
    if len(p) < 3:
        raise GeometryError(f"polygon needs at least 3 vertices, got {len(p)}")
    o = p[0]
    q = p - o
    x, y = q[:, 0], q[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    a = 0.5 * cr.sum()
    scale = bbox_size(p)
    if abs(a) <= 1e-14 * scale * scale:
        raise GeometryError("centroid of a zero-area polygon is undefined")
    cx = np.sum((x + xn) * cr) / (6.0 * a)
    cy = np.sum((y + yn) * cr) / (6.0 * a)
    return np.array([cx, cy]) + o


def second_moment(p, c) -> float:
    """Integral of ``|x - c|^2`` over the polygon (signed like the area)."""
    q = _poly(p) - np.asarray(c, dtype=float)
    x, y = q[:, 0], q[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    ixx = np.sum(cr * (x * x + x * xn + xn * xn)) / 12.0
    iyy = np.sum(cr * (y * y + y * yn + yn * yn)) / 12.0
    return float(ixx + iyy)


def ccw(p) -> np.ndarray:
    """Return the polygon with counter-clockwise orientation."""
    p = _poly(p)
    return p[::-1].copy() if polygon_area(p) < 0 else p.copy()


def _cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def is_convex(p, tol: float = 1e-12) -> bool:
    """True for a convex CCW polygon; collinear vertices are allowed."""
    p = _poly(p)
    turns = _cross(np.roll(p, 1, axis=0), p, np.roll(p, -1, axis=0))
    scale = bbox_size(p) ** 2
    return bool(np.all(turns >= -tol * scale))


def _on_segment(p, a, b):
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return np.all((p >= lo) & (p <= hi), axis=-1)


def _segments_intersect(p1, p2, q1, q2):
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    proper = (d1 * d2 < 0) & (d3 * d4 < 0)
    touch = ((d1 == 0) & _on_segment(p1, q1, q2)) | ((d2 == 0) & _on_segment(p2, q1, q2)) \
        | ((d3 == 0) & _on_segment(q1, p1, p2)) | ((d4 == 0) & _on_segment(q2, p1, p2))
    return proper | touch


def is_simple(p) -> bool:
    """No repeated vertices and no intersections between non-adjacent edges."""
    p = _poly(p)
    m = len(p)
    if m < 3:
        return False
    a, b = p, np.roll(p, -1, axis=0)
    if np.any(np.linalg.norm(b - a, axis=1) == 0):
        return False
    i, j = np.triu_indices(m, k=2)
    keep = ~((i == 0) & (j == m - 1))
    i, j = i[keep], j[keep]
    if len(i) == 0:
        return abs(polygon_area(p)) > 0
    hit = _segments_intersect(a[i], b[i], a[j], b[j])
    return not bool(np.any(hit)) and abs(polygon_area(p)) > 0


def points_in_polygon(points, poly) -> np.ndarray:
    """Even-odd containment test for many points at once."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = _poly(poly)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    straddle = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    crossings = straddle & (x < xint)
    return np.count_nonzero(crossings, axis=1) % 2 == 1


def segment_distance(points, a, b) -> np.ndarray:
    """Euclidean distance from each point to the segment ``a-b``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    L2 = float(d @ d)
    if L2 == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ d / L2, 0.0, 1.0)
    return np.linalg.norm(pts - (a + t[:, None] * d), axis=1)


def points_in_closed_polygon(points, poly, tol: float = 0.0) -> np.ndarray:
    """Containment test that also accepts points within ``tol`` of the boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = _poly(poly)
    inside = points_in_polygon(pts, poly)
    if inside.all():
        return inside
    near = np.zeros(len(pts), dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        near |= segment_distance(pts, a, b) <= tol
    return inside | near


# -- clipping ---------------------------------------------------------------

def clip_halfplane(verts, labels, normal, offset, new_label):
    """One Sutherland-Hodgman pass keeping ``{x : normal . x <= offset}``.

    ``labels[i]`` tags the edge leaving vertex ``i``; edges created along the
    clip line get ``new_label``.  Returns ``(verts, labels)``, empty when
    nothing survives.
    """
    m = len(verts)
    if m == 0:
        return verts, labels
    d = verts @ np.asarray(normal, dtype=float) - offset
    inside = d <= 0.0
    if inside.all():
        return verts, labels
    if not inside.any():
        return np.empty((0, 2)), np.empty(0, dtype=int)
    out_v, out_l = [], []
    for i in range(m):
        j = i + 1 if i + 1 < m else 0
        s_in, e_in = inside[i], inside[j]
        if s_in:
            out_v.append(verts[i])
            out_l.append(labels[i])
        if s_in != e_in:
            t = d[i] / (d[i] - d[j])
            out_v.append(verts[i] + t * (verts[j] - verts[i]))
            out_l.append(new_label if s_in else labels[i])
    if len(out_v) < 3:
        return np.empty((0, 2)), np.empty(0, dtype=int)
    return np.array(out_v), np.array(out_l, dtype=int)


def clip_polygon(subject, clip):
    """Intersect ``subject`` with a convex polygon or a sequence of half-planes.

    ``clip`` is either an ``(m, 2)`` convex CCW polygon or an iterable of
    ``(normal, offset)`` pairs, each keeping ``normal . x <= offset``.  A
    non-convex subject may produce zero-width bridges between disjoint
    pieces; :func:`split_pieces` separates them.  Returns an empty ``(0, 2)``
    array when the intersection is empty.
    """
    verts = ccw(subject)
    labels = np.full(len(verts), -1, dtype=int)
    try:
        c = np.asarray(clip, dtype=float)
    except (ValueError, TypeError):
        c = None
    if c is not None and c.ndim == 2 and c.shape[1] == 2:
        c = ccw(c)
        if not is_convex(c):
            raise GeometryError("clip polygon must be convex; pass half-planes instead")
        planes = []
        for a, b in zip(c, np.roll(c, -1, axis=0)):
            e = b - a
            n = np.array([e[1], -e[0]])
            planes.append((n, float(n @ a)))
    else:
        planes = list(clip)
    for k, (n, off) in enumerate(planes):
        verts, labels = clip_halfplane(verts, labels, n, off, k)
        if len(verts) == 0:
            break
    return verts


def _cancel_overlaps(edges, tol=0.0):
    """Remove oppositely-directed overlapping parts of collinear edges.

    ``edges`` is a list of ``(p, q)`` coordinate pairs lying on one line;
    end points closer than ``tol`` along the line are treated as one.
    """
    p0 = np.array(edges[0][0])
    direction = np.array(edges[0][1]) - p0
    direction /= np.linalg.norm(direction)
    raw = []
    for p, q in edges:
        raw.append((float((np.array(p) - p0) @ direction), p))
        raw.append((float((np.array(q) - p0) @ direction), q))
    # cluster parameters so nearly coincident end points share one vertex
    rep = {}
    ts, points = [], {}
    for t, p in sorted(raw, key=lambda r: r[0]):
        if ts and t - ts[-1] <= tol:
            rep[(t, p)] = ts[-1]
        else:
            ts.append(t)
            points[t] = p
            rep[(t, p)] = t
    spans = []
    for p, q in edges:
        tp = rep[(float((np.array(p) - p0) @ direction), p)]
        tq = rep[(float((np.array(q) - p0) @ direction), q)]
        spans.append((tp, tq))
    out = []
    for a, b in zip(ts[:-1], ts[1:]):
        mid = 0.5 * (a + b)
        net = 0
        for tp, tq in spans:
            if tp < mid < tq:
                net += 1
            elif tq < mid < tp:
                net -= 1
        if net > 0:
            out.append((points[a], points[b]))
        elif net < 0:
            out.append((points[b], points[a]))
    return out


def _merge_close(verts, labels, tol):
    """Snap coincident vertices to one representative, then drop repeats.

    A vertex within ``tol`` of its predecessor is removed and the edge
    leaving the kept vertex takes the later label.
    """
    reps = []
    snapped = []
    for p in verts:
        for r in reps:
            if abs(p[0] - r[0]) <= tol and abs(p[1] - r[1]) <= tol:
                p = r
                break
        else:
            reps.append(p)
        snapped.append(p)
    v, lab = [], []
    for p, l in zip(snapped, labels):
        if v and abs(p[0] - v[-1][0]) <= tol and abs(p[1] - v[-1][1]) <= tol:
            lab[-1] = l
            continue
        v.append(p)
        lab.append(l)
    while len(v) > 1 and abs(v[0][0] - v[-1][0]) <= tol and abs(v[0][1] - v[-1][1]) <= tol:
        v.pop()
        lab.pop()
    return v, lab


def split_pieces(verts, labels, tol: float | None = None):
    """Split a clipped polygon with zero-width bridges into simple pieces.

    Edges along the same clip line (same non-negative label) that overlap in
    opposite directions cancel; the remaining directed edges are re-traced
    into closed loops.  Vertices closer than ``tol`` (default ``1e-10``
    times the polygon size) are merged first.  Returns a list of
    ``(verts, labels)`` pairs.
    """
    if len(verts) < 3:
        return []
    if tol is None:
        tol = 1e-10 * bbox_size(verts)
    mv, ml = _merge_close([tuple(p) for p in np.asarray(verts, dtype=float).tolist()],
                          [int(l) for l in labels], tol)
    m = len(mv)
    if m < 3:
        return []
    by_label = defaultdict(list)
    edges = []
    for i in range(m):
        p = mv[i]
        q = mv[(i + 1) % m]
        if ml[i] >= 0:
            by_label[ml[i]].append((p, q))
        else:
            edges.append((p, q, ml[i]))
    changed = m != len(verts)
    for lab, segs in by_label.items():
        kept = _cancel_overlaps(segs, tol) if len(segs) > 1 else segs
        if sorted(kept) != sorted(segs):
            changed = True
        edges.extend((p, q, lab) for p, q in kept)
    if not changed:
        return [(np.asarray(verts, dtype=float), np.asarray(labels, dtype=int))]

    outgoing = defaultdict(list)
    for e in edges:
        outgoing[e[0]].append(e)
    used = set()
    loops = []
    for e in edges:
        if id(e) in used:
            continue
        loop_v, loop_l = [], []
        cur = e
        ok = True
        while id(cur) not in used:
            used.add(id(cur))
            loop_v.append(cur[0])
            loop_l.append(cur[2])
            nxt = [c for c in outgoing.get(cur[1], []) if id(c) not in used]
            if not nxt:
                ok = cur[1] == loop_v[0]
                break
            if len(nxt) > 1:
                # pinch point: take the sharpest left turn
                d_in = np.subtract(cur[1], cur[0])
                def turn(c):
                    d_out = np.subtract(c[1], c[0])
                    return np.arctan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], d_in @ d_out)
                nxt.sort(key=turn, reverse=True)
            cur = nxt[0]
        if ok and len(loop_v) >= 3:
            v = np.array(loop_v, dtype=float)
            if _signed_area(v) > 0:
                loops.append((v, np.array(loop_l, dtype=int)))
    if not loops:
        return [(np.asarray(verts, dtype=float), np.asarray(labels, dtype=int))]
    return loops


# -- triangulation ------------------------------------------------------------

def _dedupe(poly, tol):
    keep = []
    m = len(poly)
    for i in range(m):
        if np.linalg.norm(poly[i] - poly[(i + 1) % m]) > tol:
            keep.append(i)
    return poly[keep]


def _point_in_triangle(p, a, b, c, eps):
    return _cross(a, b, p) >= -eps and _cross(b, c, p) >= -eps and _cross(c, a, p) >= -eps


def _ear_clip(poly, eps):
    """Ear-clipping triangulation of a simple CCW polygon (indices)."""
    idx = list(range(len(poly)))
    tris = []
    guard = 0
    while len(idx) > 3 and guard < 10 * len(poly) ** 2:
        guard += 1
        found = False
        m = len(idx)
        for k in range(m):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if _cross(a, b, c) <= eps:
                continue
            blocked = False
            for j in idx:
                if j not in (i0, i1, i2) and _point_in_triangle(poly[j], a, b, c, eps):
                    blocked = True
                    break
            if blocked:
                continue
            tris.append((i0, i1, i2))
            idx.pop(k)
            found = True
            break
        if not found:
            # only degenerate (collinear) vertices left
            for k in range(len(idx)):
                i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
                if abs(_cross(poly[i0], poly[i1], poly[i2])) <= eps:
                    idx.pop(k)
                    found = True
                    break
            if not found:
                raise GeometryError("ear clipping failed; polygon is not simple")
    if len(idx) == 3 and _cross(poly[idx[0]], poly[idx[1]], poly[idx[2]]) > eps:
        tris.append(tuple(idx))
    return tris


def _incircle(a, b, c, d):
    m = np.array([
        [a[0] - d[0], a[1] - d[1], (a[0] - d[0]) ** 2 + (a[1] - d[1]) ** 2],
        [b[0] - d[0], b[1] - d[1], (b[0] - d[0]) ** 2 + (b[1] - d[1]) ** 2],
        [c[0] - d[0], c[1] - d[1], (c[0] - d[0]) ** 2 + (c[1] - d[1]) ** 2],
    ])
    return np.linalg.det(m)


def _lawson_flips(pts, tris, constrained, eps):
    """Flip non-constrained edges until the triangulation is (constrained) Delaunay."""
    tris = [list(t) for t in tris]
    for _ in range(50 * len(tris) + 10):
        edge_map = defaultdict(list)
        for ti, t in enumerate(tris):
            for k in range(3):
                e = tuple(sorted((t[k], t[(k + 1) % 3])))
                edge_map[e].append(ti)
        flipped = False
        for e, owners in edge_map.items():
            if len(owners) != 2 or e in constrained:
                continue
            t1, t2 = tris[owners[0]], tris[owners[1]]
            c = next(v for v in t1 if v not in e)
            d = next(v for v in t2 if v not in e)
            # orient t1 as (a, b, c) counter-clockwise
            k = t1.index(c)
            a, b = t1[(k + 1) % 3], t1[(k + 2) % 3]
            if _incircle(pts[a], pts[b], pts[c], pts[d]) <= eps:
                continue
            # the quad a-d-b-c must be strictly convex for the flip
            if _cross(pts[c], pts[d], pts[b]) <= eps or _cross(pts[d], pts[c], pts[a]) <= eps:
                continue
            tris[owners[0]] = [c, a, d]
            tris[owners[1]] = [d, b, c]
            flipped = True
            break
        if not flipped:
            break
    return [tuple(t) for t in tris]


def triangulate_cell(cell, site, tol: float | None = None) -> np.ndarray:
    """Triangulate a cell using only its boundary vertices and its site.

    Returns an ``(t, 3)`` index array into ``np.vstack([cell, site])``, so
    index ``len(cell)`` refers to the site.  A convex cell with an interior
    site becomes a fan through the site.  Otherwise the polygon is
    triangulated by ear clipping, the site is inserted when it lies strictly
    inside, and non-boundary edges are flipped to the constrained Delaunay
    configuration.  No Steiner points are added.  ``site=None``
    triangulates the boundary vertices alone.
    """
    poly = _poly(cell)
    m = len(poly)
    if m < 3:
        raise GeometryError("cannot triangulate a polygon with fewer than 3 vertices")
    scale = bbox_size(poly)
    if site is None:
        # placeholder outside the polygon, never referenced by the output
        site = poly.max(axis=0) + scale
    site = np.asarray(site, dtype=float)
    if tol is None:
        tol = 1e-12 * scale
    eps = tol * scale
    pts = np.vstack([poly, site])
    s = m

    turns = _cross(np.roll(poly, 1, axis=0), poly, np.roll(poly, -1, axis=0))
    convex = bool(np.all(turns >= -eps))
    side = _cross(poly, np.roll(poly, -1, axis=0), np.broadcast_to(site, poly.shape))
    if convex and np.all(side > eps):
        return np.array([(i, (i + 1) % m, s) for i in range(m)], dtype=int)

    tris = _ear_clip(poly, eps)
    constrained = {tuple(sorted((i, (i + 1) % m))) for i in range(m)}
    inside = bool(points_in_polygon(site[None, :], poly)[0])
    on_edge = np.min(segment_distance(site[None, :], poly[0], poly[1]))
    for i in range(m):
        on_edge = min(on_edge, float(segment_distance(site[None, :], poly[i], poly[(i + 1) % m])[0]))
    if inside and on_edge > tol:
        tris = _insert_point(pts, tris, s, eps)
    tris = _lawson_flips(pts, tris, constrained, eps)
    return np.array(tris, dtype=int).reshape(-1, 3)


def _insert_point(pts, tris, s, eps):
    p = pts[s]
    for ti, (a, b, c) in enumerate(tris):
        ab, bc, ca = _cross(pts[a], pts[b], p), _cross(pts[b], pts[c], p), _cross(pts[c], pts[a], p)
        if min(ab, bc, ca) < -eps:
            continue
        out = tris[:ti] + tris[ti + 1:]
        on = [x <= eps for x in (ab, bc, ca)]
        if not any(on):
            return out + [(a, b, s), (b, c, s), (c, a, s)]
        # on an interior edge: split this triangle and its neighbour
        edge = [(a, b), (b, c), (c, a)][on.index(True)]
        opp = ({a, b, c} - set(edge)).pop()
        res = out + [(edge[0], s, opp), (s, edge[1], opp)]
        for tj, t in enumerate(out):
            if edge[0] in t and edge[1] in t:
                other = (set(t) - set(edge)).pop()
                res.remove(t)
                res += [(edge[1], s, other), (s, edge[0], other)]
                break
        return res
    return tris
