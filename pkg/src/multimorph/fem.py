"""Linear-elastic constant-strain triangles with temperature-dependent stiffness.

Units are mm, N and MPa throughout; the out-of-plane thickness is 1 mm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, SolverError
from .mesh import FeMesh


@dataclass(frozen=True)
class MaterialParams:
    """``E_max`` is the cold (room temperature) modulus, ``E_min`` the heated one."""

    E_max: float
    E_min: float
    nu: float = 0.35
    rho_min: float = 1e-3
    p: float = 3.0
    plane_strain: bool = False
    thickness: float = 1.0

    def __post_init__(self):
        if not (self.E_max > self.E_min > 0):
            raise InvalidInputError(f"need E_max > E_min > 0, got {self.E_max}, {self.E_min}")
        if not (0 < self.nu < 0.5):
            raise InvalidInputError(f"Poisson ratio {self.nu} outside (0, 0.5)")
        if not (0 < self.rho_min < 1):
            raise InvalidInputError("rho_min must lie in (0, 1)")

    def constitutive(self) -> np.ndarray:
        nu = self.nu
        if self.plane_strain:
            c = 1.0 / ((1 + nu) * (1 - 2 * nu))
            return c * np.array([[1 - nu, nu, 0], [nu, 1 - nu, 0], [0, 0, 0.5 - nu]])
        c = 1.0 / (1 - nu * nu)
        return c * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, 0.5 * (1 - nu)]])


def _check_bounds(rho, eta, m):
    rho = np.asarray(rho, dtype=float)
    eta = np.asarray(eta, dtype=float)
    tiny = 1e-12
    if np.any(rho < m.rho_min - tiny) or np.any(rho > 1 + tiny):
        raise InvalidInputError(f"density outside [{m.rho_min}, 1]")
    if np.any(eta < -tiny) or np.any(eta > 1 + tiny):
        raise InvalidInputError("thermal state outside [0, 1]")
    return rho, eta


def interpolate_modulus(rho, eta, m: MaterialParams):
    """``rho^p [(1 - eta^p) E_max + eta^p E_min]``: eta = 0 is cold and stiff."""
    rho, eta = _check_bounds(rho, eta, m)
    ep = eta ** m.p
    return rho ** m.p * ((1 - ep) * m.E_max + ep * m.E_min)


def modulus_derivatives(rho, eta, m: MaterialParams):
    """Partial derivatives of :func:`interpolate_modulus` in rho and eta."""
    rho, eta = _check_bounds(rho, eta, m)
    p = m.p
    ep = eta ** p
    mix = (1 - ep) * m.E_max + ep * m.E_min
    d_rho = p * rho ** (p - 1) * mix
    d_eta = rho ** p * p * eta ** (p - 1) * (m.E_min - m.E_max)
    return d_rho, d_eta


class ElasticModel:
    """Per-mesh cache of unit-modulus element matrices and the sparsity pattern."""

    def __init__(self, mesh: FeMesh, material: MaterialParams):
        self.mesh = mesh
        self.material = material
        p = mesh.vertices[mesh.triangles]
        x, y = p[..., 0], p[..., 1]
        area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        bad = np.nonzero(area2 <= 0)[0]
        if len(bad):
            raise SolverError(f"inverted or degenerate triangle {int(bad[0])} (cell {int(mesh.tri_cell[bad[0]])})")
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / area2[:, None]
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / area2[:, None]
        B = np.zeros((len(p), 3, 6))
        B[:, 0, 0::2] = b
        B[:, 1, 1::2] = c
        B[:, 2, 0::2] = c
        B[:, 2, 1::2] = b
        self.B = B
        self.area = 0.5 * area2
        D = material.constitutive()
        self.Ke0 = material.thickness * self.area[:, None, None] * np.einsum("tki,kl,tlj->tij", B, D, B)
        dofs = np.empty((len(p), 6), dtype=int)
        dofs[:, 0::2] = 2 * mesh.triangles
        dofs[:, 1::2] = 2 * mesh.triangles + 1
        self.dofs = dofs
        self.rows = np.repeat(dofs, 6, axis=1).ravel()
        self.cols = np.tile(dofs, (1, 6)).ravel()
        self.n_dof = 2 * mesh.n_vertices

    def assemble(self, E_cell) -> sp.csr_matrix:
        E_tri = np.asarray(E_cell, dtype=float)[self.mesh.tri_cell]
        data = (E_tri[:, None, None] * self.Ke0).ravel()
        return sp.csr_matrix((data, (self.rows, self.cols)), shape=(self.n_dof, self.n_dof))

    def cell_bilinear(self, a, b) -> np.ndarray:
        """Per cell, ``sum_e a_e^T Ke0_e b_e`` over that cell's triangles."""
        a = np.asarray(a).ravel()[self.dofs]
        b = np.asarray(b).ravel()[self.dofs]
        per_tri = np.einsum("ti,tij,tj->t", a, self.Ke0, b)
        return np.bincount(self.mesh.tri_cell, per_tri, minlength=self.mesh.n_cells)

    def stresses(self, u, E_cell) -> np.ndarray:
        """Constant stress (sxx, syy, sxy) in each triangle."""
        ue = np.asarray(u).ravel()[self.dofs]
        strain = np.einsum("tkj,tj->tk", self.B, ue)
        E_tri = np.asarray(E_cell, dtype=float)[self.mesh.tri_cell]
        return E_tri[:, None] * strain @ self.material.constitutive().T


def assemble_stiffness(mesh: FeMesh, E_cell, material: MaterialParams) -> sp.csr_matrix:
    """Global stiffness matrix; every triangle takes its cell's modulus."""
    return ElasticModel(mesh, material).assemble(E_cell)


@dataclass
class StateSolution:
    """Displacements ``u`` (vertices x 2) and reactions on the prescribed dofs."""

    u: np.ndarray
    reactions: np.ndarray
    prescribed: np.ndarray
    residual: float
    eta: np.ndarray | None = None
    lu: object = field(default=None, repr=False)
    free: np.ndarray | None = field(default=None, repr=False)

    def adjoint(self, rhs) -> np.ndarray:
        """Solve ``K_ff^T lam = rhs_f`` with the cached factorisation (zero on prescribed dofs)."""
        rhs = np.asarray(rhs, dtype=float).ravel()
        lam = np.zeros_like(rhs)
        lam[self.free] = self.lu.solve(rhs[self.free], trans="T")
        return lam


def solve_dirichlet(K, prescribed, values, f=None) -> StateSolution:
    """Partitioned solve with displacements ``values`` imposed on ``prescribed`` dofs."""
    K = sp.csr_matrix(K)
    n = K.shape[0]
    prescribed = np.asarray(prescribed, dtype=int)
    values = np.asarray(values, dtype=float)
    f = np.zeros(n) if f is None else np.asarray(f, dtype=float).ravel()
    free = np.setdiff1d(np.arange(n), prescribed)
    u = np.zeros(n)
    u[prescribed] = values
    Kff = K[free][:, free].tocsc()
    rhs = f[free] - K[free][:, prescribed] @ values
    try:
        lu = spla.splu(Kff)
        uf = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"singular constrained stiffness matrix: {exc}") from exc
    if not np.all(np.isfinite(uf)):
        raise SolverError("constrained stiffness solve produced non-finite values; check for disconnected regions")
    # one step of iterative refinement for badly scaled (void-heavy) designs
    r = rhs - Kff @ uf
    uf = uf + lu.solve(r)
    r = rhs - Kff @ uf
    scale = max(np.linalg.norm(rhs), np.linalg.norm(Kff @ uf), 1e-300)
    u[free] = uf
    reactions = K[prescribed] @ u - f[prescribed]
    return StateSolution(u.reshape(-1, 2), reactions, prescribed, float(np.linalg.norm(r) / scale), lu=lu, free=free)


def node_dofs(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=int)
    return np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()


def solve_state(K, mesh: FeMesh, u_p=None, loads=None, eta=None) -> StateSolution:
    """Solve one load case on a tagged mesh.

    Actuation case (``u_p`` given): fixed vertices held at zero, actuated
    vertices displaced by ``u_p``, no other loads.  Connectivity case
    (``loads`` given as ``{vertex: force}``): fixed and actuated vertices
    held at zero, point forces at the listed vertices.
    """
    fixed = mesh.tags.get("fixed", np.zeros(0, int))
    act = np.setdiff1d(mesh.tags.get("actuated", np.zeros(0, int)), fixed)
    n = 2 * mesh.n_vertices
    f = np.zeros(n)
    if loads:
        for v, force in loads.items():
            f[2 * v:2 * v + 2] += force
    vals_fixed = np.zeros(2 * len(fixed))
    if u_p is None:
        vals_act = np.zeros(2 * len(act))
    else:
        vals_act = np.tile(np.asarray(u_p, dtype=float), len(act))
    prescribed = np.r_[node_dofs(fixed), node_dofs(act)]
    sol = solve_dirichlet(K, prescribed, np.r_[vals_fixed, vals_act], f)
    sol.eta = None if eta is None else np.asarray(eta)
    return sol


def pose_error(u, nodes, u_target) -> float:
    """Euclidean norm of ``u_T - u`` over the target vertices' dofs."""
    nodes = np.asarray(nodes, dtype=int)
    if nodes.size == 0:
        raise InvalidInputError("pose error needs at least one target")
    diff = np.asarray(u_target, dtype=float).reshape(-1, 2) - np.asarray(u).reshape(-1, 2)[nodes]
    return float(np.linalg.norm(diff))


def build_connectivity_loads(u_target) -> np.ndarray:
    """Unit forces opposing each target displacement."""
    uT = np.atleast_2d(np.asarray(u_target, dtype=float))
    mag = np.linalg.norm(uT, axis=1)
    if np.any(mag == 0):
        raise InvalidInputError("connectivity load undefined for a zero target displacement")
    return -uT / mag[:, None]


def compliance(u_c, f_c) -> float:
    """Work of the connectivity loads, ``f_c . u_c``."""
    return float(np.dot(np.asarray(f_c).ravel(), np.asarray(u_c).ravel()))
