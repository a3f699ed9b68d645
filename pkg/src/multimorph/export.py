"""SVG and CSV writers for diagrams, designs and state solutions.

Floats in CSV and JSON output use 9 significant digits.  In the SVGs the
cell fill encodes density (void white, solid blue) and heated cells carry an
orange hatch.
"""
from __future__ import annotations

import csv
import io
from xml.sax.saxutils import quoteattr

import numpy as np

SOLID = np.array([31, 87, 180])
VOID = np.array([255, 255, 255])
HATCH = "#e8730c"


def fmt(x) -> str:
    return f"{float(x):.9g}"


def _fill(rho, rho_min=1e-3):
    t = float(np.clip((rho - rho_min) / (1 - rho_min), 0, 1))
    r, g, b = np.round(VOID + t * (SOLID - VOID)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


class _Canvas:
    """Maps model coordinates (y up) to SVG coordinates (y down)."""

    def __init__(self, points, width=600.0, margin=10.0):
        pts = np.asarray(points, dtype=float)
        self.lo = pts.min(axis=0)
        span = np.maximum(pts.max(axis=0) - self.lo, 1e-12)
        self.s = (width - 2 * margin) / span.max()
        self.margin = margin
        self.w = span[0] * self.s + 2 * margin
        self.h = span[1] * self.s + 2 * margin
        self.top = pts.max(axis=0)[1]
        self.parts = []

    def xy(self, p):
        p = np.asarray(p, dtype=float)
        return (p[..., 0] - self.lo[0]) * self.s + self.margin, (self.top - p[..., 1]) * self.s + self.margin

    def poly(self, verts, **attrs):
        x, y = self.xy(verts)
        pts = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(x, y))
        extra = " ".join(f"{k.replace('_', '-')}={quoteattr(str(v))}" for k, v in attrs.items())
        self.parts.append(f'<polygon points="{pts}" {extra}/>')

    def dot(self, p, r=2.0, fill="black"):
        x, y = self.xy(p)
        self.parts.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{r}" fill="{fill}"/>')

    def line(self, a, b, stroke="red", width=2.0):
        (x0, y0), (x1, y1) = self.xy(np.asarray(a)), self.xy(np.asarray(b))
        self.parts.append(f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y1:.3f}" '
                          f'stroke="{stroke}" stroke-width="{width}"/>')

    def text(self, p, s):
        x, y = self.xy(p)
        self.parts.append(f'<text x="{x:.3f}" y="{y:.3f}" font-size="10">{s}</text>')

    def render(self, title="") -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w:.1f}" height="{self.h:.1f}" '
                f'viewBox="0 0 {self.w:.3f} {self.h:.3f}">')
        defs = ('<defs><pattern id="heat" patternUnits="userSpaceOnUse" width="6" height="6" '
                'patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" '
                f'stroke="{HATCH}" stroke-width="2"/></pattern></defs>')
        t = f"<title>{title}</title>" if title else ""
        return "\n".join([head, t, defs, *self.parts, "</svg>"]) + "\n"


def diagram_svg(diagram, rho=None, eta=None, title="", show_sites=True) -> str:
    """Cells of a power diagram, optionally coloured by density and hatched where heated."""
    cv = _Canvas(diagram.domain)
    cv.poly(diagram.domain, fill="none", stroke="black", stroke_width=1.5)
    for i in range(diagram.n):
        for verts, _ in diagram.pieces[i]:
            fill = "#f4f4f4" if rho is None else _fill(rho[i])
            cv.poly(verts, fill=fill, stroke="#555555", stroke_width=0.6)
            if eta is not None and eta[i] > 0.5:
                cv.poly(verts, fill="url(#heat)", stroke="none")
    if show_sites:
        for s in diagram.sites:
            cv.dot(s, 1.5)
    return cv.render(title)


def deformed_svg(mesh, u, rho, eta=None, scale=1.0, title="", boundaries=None) -> str:
    """Triangles drawn at ``x + scale * u``, filled by their cell's density."""
    pos = mesh.vertices + scale * np.asarray(u).reshape(-1, 2)
    cv = _Canvas(np.vstack([mesh.vertices, pos]))
    for tri, c in zip(mesh.triangles, mesh.tri_cell):
        cv.poly(mesh.vertices[tri], fill="none", stroke="#cccccc", stroke_width=0.3)
    for tri, c in zip(mesh.triangles, mesh.tri_cell):
        cv.poly(pos[tri], fill=_fill(rho[c]), stroke=_fill(rho[c]), stroke_width=0.3)
        if eta is not None and eta[c] > 0.5:
            cv.poly(pos[tri], fill="url(#heat)", stroke="none")
    for name, v in mesh.points.items():
        cv.dot(pos[v], 3.0, fill="red")
        cv.text(pos[v], name)
    if boundaries:
        for a, b in boundaries:
            cv.line(a, b, stroke="black", width=3.0)
    return cv.render(title)


TARGET_COLUMNS = ["point", "x", "y", "u_T_x", "u_T_y", "u_sim_x", "u_sim_y", "u_T_mag", "u_sim_mag"]


def target_rows(mesh, targets, u):
    """Rows of target-point displacements; ``targets`` is a list of ``(name, u_T)``."""
    u = np.asarray(u).reshape(-1, 2)
    rows = []
    for name, uT in targets:
        v = mesh.points[name]
        x, y = mesh.vertices[v]
        us = u[v]
        rows.append([name, fmt(x), fmt(y), fmt(uT[0]), fmt(uT[1]), fmt(us[0]), fmt(us[1]),
                     fmt(np.linalg.norm(uT)), fmt(np.linalg.norm(us))])
    return rows


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def convergence_csv(log, k: int) -> str:
    header = (["iteration", "phase", "F"] + [f"J_{j + 1}" for j in range(k)]
              + [f"C_{j + 1}" for j in range(k)] + ["R", "grad_inf"])
    rows = []
    for r in log:
        rows.append([str(r["iteration"]), str(r["phase"]), fmt(r["F"])] + [fmt(x) for x in r["J"]]
                    + [fmt(x) for x in r["C"]] + [fmt(r["R"]), fmt(r["grad_inf"])])
    return csv_text(header, rows)
