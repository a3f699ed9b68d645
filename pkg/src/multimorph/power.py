"""Power diagrams clipped to a polygonal domain, volume constraints and
centroidal relaxation.

A power cell collects the domain points whose power distance
``|x - x_i|^2 - w_i`` to site ``i`` is smallest.  Cells are built by
Sutherland-Hodgman clipping of the domain polygon against the half-planes
of the site's neighbours in the regular (weighted Delaunay) triangulation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import ConvexHull, QhullError, cKDTree

from . import geometry as geo
from .errors import GeometryError, InvalidInputError, NonConvergenceError

log = logging.getLogger(__name__)

WELD_RTOL = 1e-9


@dataclass(frozen=True)
class PowerDiagram:
    """Immutable snapshot of a clipped power diagram.

    ``edge_labels[i][k]`` names what the edge leaving vertex ``k`` of cell
    ``i`` lies on: a neighbour index ``j >= 0`` or ``-1`` for the domain
    boundary.  ``pairs``/``shared``/``dist`` list each neighbouring pair
    ``(i, j)``, ``i < j``, with the length of the common boundary segment and
    the distance between the two sites.  ``moments[i]`` is the integral of
    ``|x - x_i|^2`` over cell ``i``.  ``pieces[i]`` lists every
    ``(verts, labels)`` piece of cell ``i``, main piece first.
    """

    domain: np.ndarray
    sites: np.ndarray
    weights: np.ndarray
    cells: list
    edge_labels: list
    areas: np.ndarray
    centroids: np.ndarray
    pairs: np.ndarray
    shared: np.ndarray
    dist: np.ndarray
    moments: np.ndarray
    pieces: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def empty(self) -> np.ndarray:
        return self.areas <= 0.0

    @property
    def domain_area(self) -> float:
        return geo.polygon_area(self.domain)

    @property
    def length_scale(self) -> float:
        return geo.bbox_size(self.domain)

    def neighbors(self, tol: float | None = None) -> list[set]:
        """Adjacency sets over edges longer than ``tol`` (weld tolerance by default)."""
        if tol is None:
            tol = WELD_RTOL * self.length_scale
        nb = [set() for _ in range(self.n)]
        for (i, j), s in zip(self.pairs, self.shared):
            if s > tol:
                nb[i].add(int(j))
                nb[j].add(int(i))
        return nb

    def cell_of(self, points) -> np.ndarray:
        """Index of the minimum power-distance site for each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = ((pts[:, None, :] - self.sites[None, :, :]) ** 2).sum(-1) - self.weights[None, :]
        return np.argmin(d, axis=1)

    def energy(self, target_volumes) -> float:
        """Volume-constraint energy: sum of cell second moments minus ``w . (V - V_t)``."""
        return float(self.moments.sum() - self.weights @ (self.areas - np.asarray(target_volumes)))

    def energy_gradient_sites(self) -> np.ndarray:
        """Gradient of the energy with respect to the sites, ``2 V_i (x_i - c_i)``."""
        return 2.0 * self.areas[:, None] * (self.sites - self.centroids)


def _candidate_pairs(sites, weights, center):
    """Pairs adjacent in the regular triangulation, plus the set of visible sites.

    Extra pairs are harmless (their half-planes are redundant), so vertical and
    near-vertical facets of the lifted hull are included.
    """
    n = len(sites)
    if n <= 4:
        return [(i, j) for i in range(n) for j in range(i + 1, n)], np.ones(n, bool)
    q = sites - center
    s = max(np.abs(q).max(), 1e-300)
    q = q / s
    lifted = np.column_stack([q, (q ** 2).sum(1) - weights / s ** 2])
    try:
        hull = ConvexHull(lifted)
    except QhullError:
        return [(i, j) for i in range(n) for j in range(i + 1, n)], np.ones(n, bool)
    eq = hull.equations
    lower = eq[:, 2] < 1e-10
    pairs = set()
    visible = np.zeros(n, bool)
    for simplex in hull.simplices[lower]:
        a, b, c = sorted(int(v) for v in simplex)
        pairs.update({(a, b), (a, c), (b, c)})
        visible[[a, b, c]] = True
    return sorted(pairs), visible


def build_power_diagram(sites, weights, domain) -> PowerDiagram:
    """Clip the power diagram of ``(sites, weights)`` to ``domain``.

    A cell cut into several pieces by a non-convex domain keeps all of them
    in ``pieces[i]`` (areas, centroids and moments cover every piece, so
    the cell areas always sum to the domain area).  The piece containing the
    site, or else the largest, comes first and is also ``cells[i]``.
    """
    domain = geo.ccw(domain)
    X = np.array(sites, dtype=float).reshape(-1, 2)
    n = len(X)
    if n < 1:
        raise InvalidInputError("at least one site is required")
    W = np.zeros(n) if weights is None else np.array(weights, dtype=float).reshape(n)
    L = geo.bbox_size(domain)
    if n > 1:
        close = cKDTree(X).query_pairs(WELD_RTOL * L)
        if close:
            raise InvalidInputError(f"duplicate sites within weld tolerance: {sorted(close)[:5]}")
    convex = geo.is_convex(domain)
    center = 0.5 * (domain.min(0) + domain.max(0))
    pairs, visible = _candidate_pairs(X, W, center)

    planes = [[] for _ in range(n)]
    Xc = X - center
    for i, j in pairs:
        ax, ay = (2.0 * (Xc[j] - Xc[i])).tolist()
        b = float(Xc[j] @ Xc[j] - Xc[i] @ Xc[i] - W[j] + W[i])
        planes[i].append((j, ax, ay, b))
        planes[j].append((i, -ax, -ay, -b))

    # nearest planes first so the polygon shrinks early
    for i in range(n):
        xi, yi = Xc[i]
        planes[i].sort(key=lambda p: (p[3] - p[1] * xi - p[2] * yi) / math.hypot(p[1], p[2]))

    dom_c = [tuple(p) for p in (domain - center).tolist()]
    dom_lab = [-1] * len(dom_c)
    cells, labels, all_pieces = [], [], []
    areas = np.zeros(n)
    cents = X.copy()
    moments = np.zeros(n)
    for i in range(n):
        v, lab = dom_c, dom_lab
        if visible[i]:
            for j, ax, ay, b in planes[i]:
                v, lab = _clip(v, lab, ax, ay, b, j)
                if not v:
                    break
        else:
            v = []
        pieces = []
        if len(v) >= 3:
            raw = [(v, lab)]
            if not convex and _has_bridge(lab):
                raw = [([tuple(p) for p in pv.tolist()], pl.tolist())
                       for pv, pl in geo.split_pieces(np.array(v), np.array(lab, dtype=int))]
            for pv, pl in raw:
                a_k, c_k, m_k = _moments(pv, Xc[i, 0], Xc[i, 1])
                if a_k > 0.0:
                    pieces.append((np.array(pv), np.array(pl, dtype=int), a_k, c_k, m_k))
        if not pieces:
            cells.append(np.empty((0, 2)))
            labels.append(np.empty(0, dtype=int))
            all_pieces.append([])
            continue
        a_i = sum(p[2] for p in pieces)
        areas[i] = a_i
        cents[i] = (sum(p[2] * p[3][0] for p in pieces) / a_i + center[0],
                    sum(p[2] * p[3][1] for p in pieces) / a_i + center[1])
        moments[i] = sum(p[4] for p in pieces)
        main = 0
        if len(pieces) > 1:
            hit = [k for k, p in enumerate(pieces) if geo.points_in_polygon(Xc[i:i + 1], p[0])[0]]
            main = hit[0] if hit else int(np.argmax([p[2] for p in pieces]))
            pieces.insert(0, pieces.pop(main))
        cells.append(pieces[0][0] + center)
        labels.append(pieces[0][1])
        all_pieces.append([(p[0] + center, p[1]) for p in pieces])

    shared = {}
    for i in range(n):
        for c, lab_i in all_pieces[i]:
            pts = c.tolist()
            m = len(pts)
            for k in range(m):
                lab = int(lab_i[k])
                if lab >= 0 and areas[lab] > 0:
                    (px, py), (qx, qy) = pts[k], pts[(k + 1) % m]
                    key = (min(i, lab), max(i, lab))
                    shared.setdefault(key, [0.0, 0.0])
                    shared[key][0 if i < lab else 1] += math.hypot(qx - px, qy - py)
    keys = sorted(shared)
    pair_arr = np.array(keys, dtype=int).reshape(-1, 2)
    shared_len = np.array([0.5 * (shared[k][0] + shared[k][1]) for k in keys])
    dist = np.linalg.norm(X[pair_arr[:, 0]] - X[pair_arr[:, 1]], axis=1) if len(keys) else np.zeros(0)
    return PowerDiagram(domain, X, W, cells, labels, areas, cents, pair_arr, shared_len, dist, moments,
                        all_pieces)


def _clip(v, lab, ax, ay, b, new):
    """Sutherland-Hodgman pass on a list of vertex tuples, keeping ``a.x <= b``."""
    d = [ax * x + ay * y - b for x, y in v]
    if max(d) <= 0.0:
        return v, lab
    if min(d) > 0.0:
        return [], []
    m = len(v)
    ov, ol = [], []
    for k in range(m):
        k1 = k + 1 if k + 1 < m else 0
        dk, dk1 = d[k], d[k1]
        s_in = dk <= 0.0
        if s_in:
            ov.append(v[k])
            ol.append(lab[k])
        if s_in != (dk1 <= 0.0):
            t = dk / (dk - dk1)
            (x0, y0), (x1, y1) = v[k], v[k1]
            ov.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
            ol.append(new if s_in else lab[k])
    if len(ov) < 3:
        return [], []
    return ov, ol


def _has_bridge(lab) -> bool:
    """True when some neighbour label occurs in two separate runs of edges."""
    seen = set()
    m = len(lab)
    for k in range(m):
        j = lab[k]
        if j >= 0 and lab[k - 1] != j:
            if j in seen:
                return True
            seen.add(j)
    return False


def _moments(v, cx0, cy0):
    """Area, centroid and second moment about ``(cx0, cy0)`` of a CCW polygon."""
    a = sx = sy = m2 = 0.0
    m = len(v)
    x1, y1 = v[-1][0] - cx0, v[-1][1] - cy0
    for k in range(m):
        x0, y0 = x1, y1
        x1, y1 = v[k][0] - cx0, v[k][1] - cy0
        cr = x0 * y1 - x1 * y0
        a += cr
        sx += (x0 + x1) * cr
        sy += (y0 + y1) * cr
        m2 += cr * (x0 * x0 + x0 * x1 + x1 * x1 + y0 * y0 + y0 * y1 + y1 * y1)
    a *= 0.5
    if a <= 0.0:
        return 0.0, (cx0, cy0), 0.0
    return a, (sx / (6.0 * a) + cx0, sy / (6.0 * a) + cy0), m2 / 12.0


def weight_hessian(diagram: PowerDiagram) -> sp.csr_matrix:
    """``dV_i/dw_j``: ``-|e*_ij| / (2 |e_ij|)`` off-diagonal, rows summing to zero."""
    n = diagram.n
    if len(diagram.pairs) == 0:
        return sp.csr_matrix((n, n))
    i, j = diagram.pairs[:, 0], diagram.pairs[:, 1]
    c = diagram.shared / (2.0 * diagram.dist)
    off = sp.coo_matrix((np.r_[-c, -c], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    return (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


def _dense_hessian(diagram: PowerDiagram) -> np.ndarray:
    n = diagram.n
    H = np.zeros((n, n))
    if len(diagram.pairs):
        i, j = diagram.pairs[:, 0], diagram.pairs[:, 1]
        c = diagram.shared / (2.0 * diagram.dist)
        H[i, j] = -c
        H[j, i] = -c
        H[np.arange(n), np.arange(n)] = -H.sum(axis=1)
    return H


def relative_to_physical_volumes(phi, total: float) -> np.ndarray:
    """Map positive relative volumes to physical volumes summing to ``total``."""
    phi = np.asarray(phi, dtype=float)
    if np.any(~np.isfinite(phi)) or np.any(phi <= 0):
        raise InvalidInputError("relative volumes must be positive")
    return phi / phi.sum() * total


def clamp_volumes(volumes, v_min: float, v_max: float, total: float | None = None) -> np.ndarray:
    """Clamp to ``[v_min, v_max]`` and hand the excess to unclamped cells proportionally."""
    v = np.asarray(volumes, dtype=float).copy()
    total = float(v.sum()) if total is None else float(total)
    n = len(v)
    if v_min * n > total * (1 + 1e-12) or v_max * n < total * (1 - 1e-12):
        raise InvalidInputError("volume bounds are incompatible with the total volume")
    fixed = np.zeros(n, bool)
    for _ in range(2 * n + 2):
        lo, hi = (v < v_min) & ~fixed, (v > v_max) & ~fixed
        if not (lo.any() or hi.any()):
            break
        v[lo] = v_min
        v[hi] = v_max
        fixed |= lo | hi
        free = ~fixed
        if not free.any():
            break
        rest = total - v[fixed].sum()
        v[free] *= rest / v[free].sum()
    return v


def _max_residual(d: PowerDiagram, vt) -> float:
    return float(np.max(np.abs(d.areas - vt)))


def solve_volume_constraints(diagram: PowerDiagram, target_volumes, tol: float | None = None,
                             max_iter: int = 100) -> PowerDiagram:
    """Newton iterations on the weights until every cell has its target area.

    The energy is concave in the weights, so the Newton direction is an
    ascent direction; each step is halved until all cells are non-empty,
    the smallest cell keeps at least half of its reference size and the
    energy increases (Armijo).  Weight 0 is pinned to zero.
    """
    vt = np.asarray(target_volumes, dtype=float)
    n = diagram.n
    A = diagram.domain_area
    if vt.shape != (n,) or np.any(vt <= 0):
        raise InvalidInputError("target volumes must be positive, one per cell")
    if abs(vt.sum() - A) > 1e-9 * A:
        raise InvalidInputError(f"target volumes sum to {vt.sum()}, domain area is {A}")
    if tol is None:
        tol = 1e-6 * A / n
    d = diagram
    if n == 1:
        return d
    if d.weights[0] != 0.0:
        d = build_power_diagram(d.sites, d.weights - d.weights[0], d.domain)
    if np.any(d.empty):
        d = build_power_diagram(d.sites, np.zeros(n), d.domain)
    res = _max_residual(d, vt)
    floor = 0.5 * min(vt.min(), d.areas.min())
    e = d.energy(vt)
    for it in range(max_iter):
        if res <= tol:
            return d
        g = d.areas - vt
        H = _dense_hessian(d)[1:, 1:]
        try:
            step = np.r_[0.0, np.linalg.solve(H, -g[1:])]
        except np.linalg.LinAlgError:
            step = np.full(n, np.nan)
        if not np.all(np.isfinite(step)):
            step = np.r_[0.0, np.linalg.lstsq(H, -g[1:], rcond=None)[0]]
        # ascent slope of the energy along the step is -g . step
        slope = -float(g @ step)
        t = 1.0
        accepted = False
        for _ in range(40):
            trial = build_power_diagram(d.sites, d.weights + t * step, d.domain)
            if trial.areas.min() >= floor:
                e_new = trial.energy(vt)
                if e_new >= e + 1e-4 * t * slope - 1e-15 * abs(e):
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            break
        d, e = trial, e_new
        res = _max_residual(d, vt)
    if res <= tol:
        return d
    raise NonConvergenceError("volume-constraint Newton iteration did not converge", res)


def epsilon_vcpd(domain, n: int) -> float:
    """Stopping threshold on the site-gradient norm of the centroidal solve."""
    L = geo.bbox_size(domain)
    v_mean = geo.polygon_area(geo.ccw(domain)) / n
    return 1e-4 * L * v_mean * np.sqrt(8 * n)


def random_sites(domain, n: int, rng) -> np.ndarray:
    """Rejection-sample ``n`` distinct points inside the domain."""
    domain = geo.ccw(domain)
    lo, hi = domain.min(0), domain.max(0)
    out = []
    while len(out) < n:
        cand = rng.uniform(lo, hi, size=(max(2 * n, 16), 2))
        cand = cand[geo.points_in_polygon(cand, domain)]
        out.extend(cand[: n - len(out)])
    return np.array(out)


def _keep_inside(points, domain, L):
    """Pull points that left the domain back onto a point just inside it."""
    inside = geo.points_in_polygon(points, domain)
    if inside.all():
        return points
    pts = points.copy()
    edges = list(zip(domain, np.roll(domain, -1, axis=0)))
    c = geo.polygon_centroid(domain)
    for k in np.nonzero(~inside)[0]:
        best, bq = np.inf, None
        for a, b in edges:
            d = b - a
            t = np.clip((pts[k] - a) @ d / (d @ d), 0, 1)
            q = a + t * d
            dist = np.linalg.norm(pts[k] - q)
            if dist < best:
                best, bq = dist, q
        q = bq + 1e-6 * L * (c - bq) / max(np.linalg.norm(c - bq), 1e-300)
        if not geo.points_in_polygon(q[None], domain)[0]:
            q = bq + 1e-3 * (c - bq)
        pts[k] = q
    return pts


@dataclass
class VCPDResult:
    diagram: PowerDiagram
    converged: bool
    iterations: int
    grad_norm: float
    threshold: float
    history: list = field(default_factory=list)


def solve_centroidal_vcpd(domain, target_volumes, sites=None, seed=None, weights=None,
                          tol: float | None = None, max_iter: int = 500, method: str = "lloyd",
                          step: float = 0.5, anderson: int = 0, anderson_start: float | None = None,
                          volume_tol: float | None = None) -> VCPDResult:
    """Centroidal volume-constrained power diagram.

    Alternates a Newton weight solve with a Lloyd step (sites to centroids)
    until ``||grad_X E|| < tol``, ``tol`` defaulting to
    :func:`epsilon_vcpd`.  ``method="gradient"`` takes damped steps
    ``x_i - step * (x_i - c_i)`` instead.  ``anderson > 0`` extrapolates the
    Lloyd map with that many previous iterates once the gradient norm is
    below ``anderson_start`` (default: the standard threshold), falling back
    to a plain step whenever the extrapolated sites are unusable.  Hitting ``max_iter``
    returns the best iterate with ``converged=False``.

    Sites are kept inside the domain.  On a non-convex domain a cell's
    centroid can fall outside; that site is held at the clamped centroid and
    the reported norm is the projected gradient ``2 V_i (x_i - clamp(c_i))``.
    """
    domain = geo.ccw(domain)
    vt = np.asarray(target_volumes, dtype=float)
    n = len(vt)
    L = geo.bbox_size(domain)
    if tol is None:
        tol = epsilon_vcpd(domain, n)
    if anderson_start is None:
        anderson_start = epsilon_vcpd(domain, n)
    if sites is None:
        sites = random_sites(domain, n, np.random.default_rng(seed))
    X = np.array(sites, dtype=float)
    W = np.zeros(n) if weights is None else np.array(weights, dtype=float)
    if method not in ("lloyd", "gradient"):
        raise InvalidInputError(f"unknown relaxation method {method!r}")

    best = None
    hist_x, hist_f = [], []
    history = []
    d = solve_volume_constraints(build_power_diagram(X, W, domain), vt, tol=volume_tol)
    for it in range(max_iter + 1):
        # sites must stay in the domain, so a centroid outside it is replaced by
        # its clamp; the gradient is then the projected one and still vanishes
        # at the constrained fixed point
        c_in = _keep_inside(d.centroids, domain, L)
        gnorm = float(np.linalg.norm(2.0 * d.areas[:, None] * (d.sites - c_in)))
        history.append(gnorm)
        if best is None or gnorm < best[1]:
            best = (d, gnorm, it)
        if gnorm < tol:
            return VCPDResult(d, True, it, gnorm, tol, history)
        if it == max_iter:
            break
        X, W = d.sites, d.weights
        target = c_in if method == "lloyd" else _keep_inside(X - step * (X - d.centroids), domain, L)
        r = (target - X).ravel()
        cand = None
        if len(history) > 1 and gnorm > 2.0 * history[-2]:
            hist_x, hist_f = [], []
        # extrapolation is only trusted close to the fixed point
        if anderson > 0 and gnorm < anderson_start:
            hist_x.append(target.ravel().copy())
            hist_f.append(r.copy())
            hist_x, hist_f = hist_x[-(anderson + 1):], hist_f[-(anderson + 1):]
            if len(hist_f) > 1:
                dF = np.diff(np.array(hist_f), axis=0).T
                dG = np.diff(np.array(hist_x), axis=0).T
                gamma = np.linalg.lstsq(dF, r, rcond=None)[0]
                cand = (target.ravel() - dG @ gamma).reshape(-1, 2)
                if (not geo.points_in_polygon(cand, domain).all()
                        or cKDTree(cand).query_pairs(1e-6 * L)
                        or np.linalg.norm(cand - target) > 100 * np.linalg.norm(r)):
                    cand = None
        if cand is not None:
            try:
                d = solve_volume_constraints(build_power_diagram(cand, W, domain), vt, tol=volume_tol)
                continue
            except NonConvergenceError:
                hist_x, hist_f = [], []
        d = solve_volume_constraints(build_power_diagram(target, W, domain), vt, tol=volume_tol)
    d, gnorm, it = best
    log.info("centroidal solve stopped at grad %.3e > %.3e", gnorm, tol)
    return VCPDResult(d, False, max_iter, gnorm, tol, history)
