"""Problem documents: schema validation, the dithered-material table and the
bundled example problems.

A problem document is JSON with the keys ``domain``, ``fixed``,
``actuation``, ``states``, ``material``, ``mesh`` and ``optimizer``.
Lengths are in mm and moduli in MPa.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import geometry as geo
from .errors import (BoundaryOffDomainError, DomainGeometryError, EmptyStatesError,
                     InvalidInputError, ProblemValidationError, SchemaError)
from .fem import MaterialParams

# Agilus30 fraction (%) -> (E at 23 C, E at 70 C) in MPa
DITHER_TABLE = {
    0: (2100.0, 8.0),
    50: (120.0, 2.9),
    100: (0.8, 0.2),
}
MATERIAL_NAMES = {"VW": 0, "AG50": 50, "AG": 100}

BOUNDARY_RTOL = 1e-6


def builtin_material(name: str, nu: float = 0.35, p: float = 3.0, plane_strain: bool = False) -> MaterialParams:
    """Cold/heated moduli of a named printable material."""
    if name not in MATERIAL_NAMES:
        raise KeyError(f"unknown material {name!r}; known: {', '.join(sorted(MATERIAL_NAMES))}")
    e_cold, e_hot = DITHER_TABLE[MATERIAL_NAMES[name]]
    return MaterialParams(E_max=e_cold, E_min=e_hot, nu=nu, p=p, plane_strain=plane_strain)


_point = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_segment = {"type": "array", "items": _point, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "fixed", "actuation", "states"],
    "properties": {
        "name": {"type": "string"},
        "domain": {"type": "array", "items": _point, "minItems": 3},
        "fixed": {"type": "array", "items": _segment, "minItems": 1},
        "actuation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["segment", "u_p"],
            "properties": {"segment": _segment, "u_p": _point},
        },
        "states": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["targets"],
                "properties": {
                    "targets": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["point", "u_T"],
                            "properties": {"point": _point, "u_T": _point},
                        },
                    }
                },
            },
        },
        "material": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["E_max", "E_min"],
                    "properties": {
                        "E_max": {"type": "number", "exclusiveMinimum": 0},
                        "E_min": {"type": "number", "exclusiveMinimum": 0},
                        "nu": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                    },
                },
            ]
        },
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "V_min": {"type": "number", "exclusiveMinimum": 0},
                "V_max": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number", "minimum": 0},
                "p": {"type": "number", "minimum": 1},
                "seed": {"type": "integer"},
                "max_iter_phase1": {"type": "integer", "minimum": 0},
                "max_iter_phase2": {"type": "integer", "minimum": 0},
                "beta_rmax": {"type": "number", "minimum": 0},
            },
        },
    },
}


@dataclass
class Target:
    name: str
    point: np.ndarray
    u_T: np.ndarray


@dataclass
class OptimizerConfig:
    alpha: float = 1.0
    p: float = 3.0
    seed: int = 0
    max_iter_phase1: int = 300
    max_iter_phase2: int = 300
    beta_rmax: float = 1.0


@dataclass(eq=False)
class ProblemSpec:
    """Validated problem: CCW domain, boundary segments, targets and settings."""

    domain: np.ndarray
    fixed: list
    actuation: np.ndarray
    u_p: np.ndarray
    states: list
    material: MaterialParams
    material_name: str | None
    n: int
    V_min: float
    V_max: float
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    name: str = ""
    _doc_vmin: float | None = None
    _doc_vmax: float | None = None

    @property
    def k(self) -> int:
        return len(self.states)

    @property
    def area(self) -> float:
        return geo.polygon_area(self.domain)

    @property
    def length_scale(self) -> float:
        return geo.bbox_size(self.domain)

    @property
    def u_in(self) -> float:
        return float(np.linalg.norm(self.u_p))

    def target_points(self) -> dict:
        pts = {}
        for state in self.states:
            for t in state:
                pts.setdefault(t.name, t.point)
        return pts

    def mesh_domain(self) -> np.ndarray:
        """Domain polygon with boundary-segment endpoints and boundary targets inserted."""
        extra = [p for seg in self.fixed for p in seg] + list(self.actuation)
        extra += list(self.target_points().values())
        return insert_boundary_points(self.domain, extra, BOUNDARY_RTOL * self.length_scale)

    def with_overrides(self, **kw) -> "ProblemSpec":
        new = copy.deepcopy(self)
        for key, val in kw.items():
            if val is None:
                continue
            if hasattr(new.optimizer, key):
                setattr(new.optimizer, key, val)
            elif key == "plane_strain":
                m = new.material
                new.material = MaterialParams(m.E_max, m.E_min, m.nu, m.rho_min, m.p, bool(val), m.thickness)
            else:
                setattr(new, key, val)
        return new

    def to_dict(self) -> dict:
        mesh = {"n": self.n}
        if self._doc_vmin is not None:
            mesh["V_min"] = self._doc_vmin
        if self._doc_vmax is not None:
            mesh["V_max"] = self._doc_vmax
        if self.material_name is not None:
            material = self.material_name
        else:
            material = {"E_max": self.material.E_max, "E_min": self.material.E_min, "nu": self.material.nu}
        doc = {
            "domain": self.domain.tolist(),
            "fixed": [np.asarray(s).tolist() for s in self.fixed],
            "actuation": {"segment": self.actuation.tolist(), "u_p": self.u_p.tolist()},
            "states": [{"targets": [{"point": t.point.tolist(), "u_T": t.u_T.tolist()} for t in st]}
                       for st in self.states],
            "material": material,
            "mesh": mesh,
            "optimizer": dict(vars(self.optimizer)),
        }
        if self.name:
            doc["name"] = self.name
        return doc

    def __eq__(self, other):
        return isinstance(other, ProblemSpec) and self.to_dict() == other.to_dict()


def insert_boundary_points(poly, points, tol) -> np.ndarray:
    """Insert points lying on polygon edges as extra (collinear) vertices."""
    poly = np.asarray(poly, dtype=float)
    out = []
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        out.append(a)
        d = b - a
        L2 = d @ d
        on = []
        for p in points:
            p = np.asarray(p, dtype=float)
            t = (p - a) @ d / L2
            if 0 < t < 1 and geo.segment_distance(p[None], a, b)[0] <= tol:
                if np.linalg.norm(p - a) > tol and np.linalg.norm(p - b) > tol:
                    on.append((t, tuple(a + t * d)))
        for t, q in sorted(set(on)):
            if not out or np.linalg.norm(np.subtract(q, out[-1])) > tol:
                out.append(np.array(q))
    return np.array(out)


def _boundary_distance(points, poly):
    pts = np.atleast_2d(points)
    best = np.full(len(pts), np.inf)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        best = np.minimum(best, geo.segment_distance(pts, a, b))
    return best


def _snap_to_boundary(p, poly):
    best, q = np.inf, p
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        d = b - a
        t = np.clip((p - a) @ d / (d @ d), 0, 1)
        c = a + t * d
        dist = np.linalg.norm(p - c)
        if dist < best:
            best, q = dist, c
    # already on the boundary up to rounding: keep the input so reloading is exact
    if best <= 1e-12 * (1.0 + float(np.abs(p).max())):
        return p
    return q


def _check_segment(seg, poly, tol, path):
    seg = np.array(seg, dtype=float)
    samples = seg[0] + np.linspace(0, 1, 11)[:, None] * (seg[1] - seg[0])
    dist = _boundary_distance(samples, poly)
    if np.any(dist > tol):
        raise BoundaryOffDomainError(f"segment is {dist.max():.3g} mm away from the domain boundary", path)
    if np.linalg.norm(seg[1] - seg[0]) <= tol:
        raise BoundaryOffDomainError("segment has zero length", path)
    return np.array([_snap_to_boundary(seg[0], poly), _snap_to_boundary(seg[1], poly)])


def _overlap(s1, s2, tol):
    d = s1[1] - s1[0]
    L = np.linalg.norm(d)
    u = d / L
    nrm = np.array([-u[1], u[0]])
    if abs((s2[0] - s1[0]) @ nrm) > tol or abs((s2[1] - s1[0]) @ nrm) > tol:
        return 0.0
    t = sorted([(s2[0] - s1[0]) @ u, (s2[1] - s1[0]) @ u])
    return max(0.0, min(L, t[1]) - max(0.0, t[0]))


def load_problem(source) -> ProblemSpec:
    """Validate a problem document given as a dict, JSON text or a file path."""
    if isinstance(source, dict):
        doc = copy.deepcopy(source)
    else:
        text = source
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            text = Path(source).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc

    if isinstance(doc, dict) and isinstance(doc.get("states"), list) and not doc["states"]:
        raise EmptyStatesError("at least one target state is required", ("states",))
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SchemaError(e.message, list(e.absolute_path))

    raw = np.array(doc["domain"], dtype=float)
    if not geo.is_simple(raw):
        raise DomainGeometryError("domain polygon is not simple (self-intersecting or repeated vertices)", ("domain",))
    domain = geo.ccw(raw)
    L = geo.bbox_size(domain)
    tol = BOUNDARY_RTOL * L

    fixed = [_check_segment(s, domain, tol, ("fixed", i)) for i, s in enumerate(doc["fixed"])]
    act = _check_segment(doc["actuation"]["segment"], domain, tol, ("actuation", "segment"))
    for i, s in enumerate(fixed):
        if _overlap(s, act, tol) > tol:
            raise ProblemValidationError("fixed and actuated boundaries overlap", ("fixed", i))
    u_p = np.array(doc["actuation"]["u_p"], dtype=float)
    if not np.any(u_p):
        raise ProblemValidationError("actuation displacement must be non-zero", ("actuation", "u_p"))

    names = {}
    states = []
    for j, st in enumerate(doc["states"]):
        targets = []
        for t, tgt in enumerate(st["targets"]):
            p = np.array(tgt["point"], dtype=float)
            path = ("states", j, "targets", t, "point")
            bd = _boundary_distance(p, domain)[0]
            inside = geo.points_in_polygon(p[None], domain)[0]
            if not inside and bd > tol:
                raise BoundaryOffDomainError(f"target point is {bd:.3g} mm outside the domain", path)
            if bd <= tol:
                p = _snap_to_boundary(p, domain)
            key = tuple(np.round(p / tol).astype(np.int64))
            if key not in names:
                names[key] = chr(ord("a") + len(names)) if len(names) < 26 else f"p{len(names)}"
            targets.append(Target(names[key], p, np.array(tgt["u_T"], dtype=float)))
        states.append(targets)

    mat = doc.get("material", "AG50")
    opt = OptimizerConfig(**doc.get("optimizer", {}))
    if isinstance(mat, str):
        try:
            material = builtin_material(mat, p=opt.p)
        except KeyError as exc:
            raise SchemaError(str(exc), ("material",)) from exc
        mat_name = mat
    else:
        try:
            material = MaterialParams(mat["E_max"], mat["E_min"], mat.get("nu", 0.35), p=opt.p)
        except InvalidInputError as exc:
            raise SchemaError(str(exc), ("material",)) from exc
        mat_name = None

    mesh = doc.get("mesh", {})
    n = int(mesh.get("n", 40))
    if n < len(states):
        raise ProblemValidationError(f"cell count {n} is smaller than the number of states", ("mesh", "n"))
    area = geo.polygon_area(domain)
    vmin = float(mesh.get("V_min", 0.25 * area / n))
    vmax = float(mesh.get("V_max", 4.0 * area / n))
    if not (vmin * n <= area * (1 + 1e-12) <= vmax * n * (1 + 1e-12)) or vmin >= vmax:
        raise ProblemValidationError("V_min/V_max cannot partition the domain", ("mesh",))

    return ProblemSpec(domain, fixed, act, u_p, states, material, mat_name, n, vmin, vmax, opt,
                       doc.get("name", ""), mesh.get("V_min"), mesh.get("V_max"))


def dump_problem(spec: ProblemSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2)


EXAMPLE_NAMES = ("gingerbread", "airfoil", "armadillo", "dinosaur")


def example_document(name: str) -> dict:
    if name not in EXAMPLE_NAMES:
        raise KeyError(f"unknown example {name!r}; known: {', '.join(EXAMPLE_NAMES)}")
    text = resources.files("multimorph").joinpath("data").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def load_example(name: str) -> ProblemSpec:
    return load_problem(example_document(name))


def bundled_examples() -> list[ProblemSpec]:
    """Schematic versions of the gingerbread, airfoil, armadillo and dinosaur setups."""
    return [load_example(n) for n in EXAMPLE_NAMES]
