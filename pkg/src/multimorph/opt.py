"""Multi-state objective, its gradients and the two-phase optimizer.

Design variables per cell ``i``: density ``rho_i`` (shared by all states),
thermal state ``eta[j, i]`` for each state ``j`` and relative volume
``phi_i``.  The objective is

    F = sum_j J_j + alpha * sum_j C_j + R_max * sum_j sum_i (R(rho_i) + R(eta_ji))

with ``J_j`` the pose error of state ``j`` under the actuation and ``C_j``
the compliance under unit loads opposing that state's targets.  Phase 1
optimizes all variables with ``R_max = 0`` and rebuilds the power diagram
from ``phi`` at every evaluation; phase 2 freezes the diagram and switches
the regularization on.
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import fem
from . import geometry as geo
from . import power
from .errors import InvalidInputError, MorphError, NonConvergenceError
from .mesh import FeMesh, extract_fe_mesh
from .problems import ProblemSpec

log = logging.getLogger(__name__)

THRESHOLD_GRID = np.round(np.arange(0.05, 0.951, 0.05), 2)
PHI_BOUNDS = (0.25, 4.0)
INTERMEDIATE_GAP = 0.1
# every phase-1 evaluation re-solves 2n layouts; a line search that needs more
# probes than this is chasing finite-difference noise near the volume clamps
PHASE1_MAXLS = 10
# phase-1 variables are rescaled by this factor for the quasi-Newton solver;
# at 1.0 the first (unit-length) step throws whole bands of cells to the floor
PHASE1_SCALE = 0.1


# -- regularization and projection -------------------------------------------

def regularization(xi, xi_min: float, xi_max: float, r_max: float):
    """Quadratic bump: zero at both bounds, ``r_max`` at the midpoint."""
    if not xi_max > xi_min:
        raise InvalidInputError(f"need xi_max > xi_min, got [{xi_min}, {xi_max}]")
    # factored form of the vertex form; vanishes exactly at both bounds
    xi = np.asarray(xi, dtype=float)
    return 4.0 * r_max * (xi - xi_min) * (xi_max - xi) / (xi_max - xi_min) ** 2


def regularization_derivative(xi, xi_min: float, xi_max: float, r_max: float):
    if not xi_max > xi_min:
        raise InvalidInputError(f"need xi_max > xi_min, got [{xi_min}, {xi_max}]")
    half = 0.5 * (xi_max - xi_min)
    mid = 0.5 * (xi_max + xi_min)
    return -2.0 * r_max / half ** 2 * (np.asarray(xi, dtype=float) - mid)


def project(xi, xi_t: float, xi_min: float = 0.0, xi_max: float = 1.0):
    """Binary projection; values at or below the threshold go to ``xi_min``."""
    xi = np.asarray(xi, dtype=float)
    return np.where(xi <= xi_t, xi_min, xi_max)


def intermediate_fraction(rho, rho_min: float = 1e-3, gap: float = INTERMEDIATE_GAP) -> float:
    """Share of densities further than ``gap`` from both bounds."""
    rho = np.asarray(rho, dtype=float)
    mid = (rho > rho_min + gap) & (rho < 1.0 - gap)
    return float(mid.mean())


# -- data types ---------------------------------------------------------------

@dataclass
class DesignVariables:
    rho: np.ndarray
    eta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.rho = np.array(self.rho, dtype=float)
        self.eta = np.atleast_2d(np.array(self.eta, dtype=float))
        self.phi = np.array(self.phi, dtype=float)

    @property
    def n(self) -> int:
        return len(self.rho)

    @property
    def k(self) -> int:
        return self.eta.shape[0]

    @classmethod
    def initial(cls, n: int, k: int) -> "DesignVariables":
        return cls(np.full(n, 0.5), np.full((k, n), 0.5), np.ones(n))

    def validate(self, n: int, k: int, rho_min: float) -> None:
        if self.rho.shape != (n,) or self.eta.shape != (k, n) or self.phi.shape != (n,):
            raise InvalidInputError(
                f"design shapes rho {self.rho.shape}, eta {self.eta.shape}, phi {self.phi.shape} "
                f"do not match n={n}, k={k}")
        tiny = 1e-12
        if np.any(self.rho < rho_min - tiny) or np.any(self.rho > 1 + tiny):
            raise InvalidInputError(f"density outside [{rho_min}, 1]")
        if np.any(self.eta < -tiny) or np.any(self.eta > 1 + tiny):
            raise InvalidInputError("thermal state outside [0, 1]")
        if np.any(self.phi <= 0):
            raise InvalidInputError("relative volumes must be positive")

    def copy(self) -> "DesignVariables":
        return DesignVariables(self.rho.copy(), self.eta.copy(), self.phi.copy())


@dataclass
class ObjectiveBreakdown:
    J: np.ndarray
    C: np.ndarray
    R: float
    F: float
    alpha: float
    R_max: float = 0.0

    def total(self) -> float:
        return float(self.J.sum() + self.alpha * self.C.sum() + self.R)


@dataclass
class Layout:
    """Power diagram plus the FE mesh and element cache built on it."""

    phi: np.ndarray
    diagram: power.PowerDiagram
    mesh: FeMesh
    model: fem.ElasticModel
    vcpd: power.VCPDResult
    targets: list          # per state: (vertex indices, u_T array (m, 2))


@dataclass
class ConnectivityReport:
    connected: bool
    n_components: int
    fixed: bool
    actuated: bool
    targets: dict

    def as_dict(self) -> dict:
        return {"connected": self.connected, "n_components": self.n_components,
                "fixed": self.fixed, "actuated": self.actuated, "targets": dict(self.targets)}


@dataclass
class OptimizationResult:
    design: DesignVariables
    thresholds: tuple
    states: list
    layout: Layout
    log: list
    connectivity: ConnectivityReport
    converged: bool
    phase1_converged: bool
    phase2_converged: bool
    R_max: float
    phase1_design: DesignVariables
    phase2_design: DesignVariables
    breakdown: ObjectiveBreakdown
    initial_breakdown: ObjectiveBreakdown
    J_sim: list = field(default_factory=list)


# -- model --------------------------------------------------------------------

class MorphModel:
    """Builds layouts from relative volumes and evaluates the objective.

    ``fd_step`` is the relative central-difference step for the volume
    gradient (times ``mean(phi)``); ``fd_tol`` scales the centroidal
    tolerance used for every phase-1 layout so the probes resolve the
    difference.  Anderson extrapolation of depth ``anderson`` takes over once
    the centroidal gradient is below ``anderson_from`` times the standard
    threshold.
    """

    def __init__(self, problem: ProblemSpec, seed: int | None = None, sites=None,
                 fd_step: float = 1e-5, fd_tol: float = 1e-6, anderson: int = 10, anderson_from: float = 1.0,
                 vcpd_max_iter: int = 2000, cache_size: int = 64):
        self.problem = problem
        self.seed = problem.optimizer.seed if seed is None else seed
        self.material = problem.material
        self.domain = problem.mesh_domain()
        self.area = problem.area
        self.n = problem.n
        self.k = problem.k
        self.fd_step = fd_step
        self.anderson = anderson
        self.anderson_start = anderson_from * power.epsilon_vcpd(self.domain, self.n)
        self.vcpd_max_iter = vcpd_max_iter
        self.vcpd_tol = fd_tol * power.epsilon_vcpd(self.domain, self.n)
        # areas far below the default Newton tolerance keep F smooth in phi
        self.volume_tol = 1e-12 * self.area / self.n
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        if sites is None:
            sites = power.random_sites(self.domain, self.n, np.random.default_rng(self.seed))
        self.initial_sites = np.array(sites, dtype=float)
        self.anchor = (self.initial_sites, np.zeros(self.n))
        self.n_vcpd = 0

    # layouts

    def target_volumes(self, phi) -> np.ndarray:
        v = power.relative_to_physical_volumes(phi, self.area)
        p = self.problem
        return power.clamp_volumes(v, p.V_min, p.V_max, self.area)

    def layout(self, phi, warm=None) -> Layout:
        """Centroidal diagram for ``phi`` (cached), warm-started from ``warm`` or the anchor."""
        phi = np.asarray(phi, dtype=float)
        key = phi.tobytes()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        sites, weights = self.anchor if warm is None else warm
        vt = self.target_volumes(phi)
        res = power.solve_centroidal_vcpd(self.domain, vt, sites=sites, weights=weights, tol=self.vcpd_tol,
                                          max_iter=self.vcpd_max_iter, anderson=self.anderson,
                                          anderson_start=self.anderson_start, volume_tol=self.volume_tol)
        self.n_vcpd += 1
        if not res.converged:
            raise NonConvergenceError("centroidal power diagram did not reach its tolerance", res.grad_norm)
        lay = self.layout_from_diagram(res.diagram, phi, res)
        self._cache[key] = lay
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return lay

    def layout_from_diagram(self, diagram, phi=None, vcpd=None) -> Layout:
        p = self.problem
        mesh = extract_fe_mesh(diagram, p.fixed, [p.actuation], p.target_points())
        model = fem.ElasticModel(mesh, self.material)
        targets = []
        for state in p.states:
            nodes = np.array([mesh.points[t.name] for t in state], dtype=int)
            targets.append((nodes, np.array([t.u_T for t in state])))
        phi = np.ones(diagram.n) if phi is None else phi
        return Layout(np.asarray(phi, dtype=float), diagram, mesh, model, vcpd, targets)

    # objective

    def _moduli(self, design):
        m = self.material
        rho = np.clip(design.rho, m.rho_min, 1.0)
        eta = np.clip(design.eta, 0.0, 1.0)
        return rho, eta

    def solve_states(self, design: DesignVariables, layout: Layout, connectivity: bool = True):
        """Actuation and connectivity solves for every state."""
        rho, eta = self._moduli(design)
        p = self.problem
        out = []
        for j in range(self.k):
            E = fem.interpolate_modulus(rho, eta[j], self.material)
            K = layout.model.assemble(E)
            sol = fem.solve_state(K, layout.mesh, u_p=p.u_p, eta=eta[j])
            sol_c, f_c = None, None
            if connectivity:
                nodes, uT = layout.targets[j]
                live = np.linalg.norm(uT, axis=1) > 0
                if live.any():
                    f = fem.build_connectivity_loads(uT[live])
                    loads = {}
                    for v, fv in zip(nodes[live], f):
                        loads[int(v)] = loads.get(int(v), 0.0) + fv
                    sol_c = fem.solve_state(K, layout.mesh, loads=loads, eta=eta[j])
                    f_c = np.zeros(2 * layout.mesh.n_vertices)
                    for v, fv in loads.items():
                        f_c[2 * v:2 * v + 2] += fv
            out.append((E, sol, sol_c, f_c))
        return out

    def evaluate(self, design: DesignVariables, layout: Layout, alpha: float, r_max: float = 0.0,
                 gradient: bool = False):
        """Objective breakdown on a given layout, plus the (rho, eta) gradient if asked."""
        rho, eta = self._moduli(design)
        m = self.material
        states = self.solve_states(design, layout)
        J = np.zeros(self.k)
        C = np.zeros(self.k)
        g_rho = np.zeros(self.n)
        g_eta = np.zeros((self.k, self.n))
        for j, (E, sol, sol_c, f_c) in enumerate(states):
            nodes, uT = layout.targets[j]
            J[j] = fem.pose_error(sol.u, nodes, uT)
            if sol_c is not None:
                C[j] = fem.compliance(sol_c.u, f_c)
            if gradient:
                d_rho, d_eta = fem.modulus_derivatives(rho, eta[j], m)
                rhs = np.zeros((layout.mesh.n_vertices, 2))
                np.add.at(rhs, nodes, sol.u[nodes] - uT)
                lam = sol.adjoint(rhs / max(J[j], 1e-12))
                dJ_dE = -layout.model.cell_bilinear(lam, sol.u)
                dE = dJ_dE
                if sol_c is not None:
                    dE = dE - alpha * layout.model.cell_bilinear(sol_c.u, sol_c.u)
                g_rho += dE * d_rho
                g_eta[j] = dE * d_eta
        R = 0.0
        if r_max:
            R = float(self.k * regularization(rho, m.rho_min, 1.0, r_max).sum()
                      + regularization(eta, 0.0, 1.0, r_max).sum())
            if gradient:
                g_rho += self.k * regularization_derivative(rho, m.rho_min, 1.0, r_max)
                g_eta += regularization_derivative(eta, 0.0, 1.0, r_max)
        F = float(J.sum() + alpha * C.sum() + R)
        bd = ObjectiveBreakdown(J, C, R, F, alpha, r_max)
        if gradient:
            return bd, g_rho, g_eta, states
        return bd, states

    def phi_gradient(self, design: DesignVariables, alpha: float, r_max: float = 0.0,
                     step: float | None = None, cells=None) -> np.ndarray:
        """Central differences of F in ``phi`` with a full centroidal re-solve per probe.

        The base layout at ``design.phi`` is the warm start of the ``+h``
        probe; the ``-h`` probe starts from its mirror image about the base.
        A probe that fails falls back to a one-sided difference.
        """
        base = self.layout(design.phi)
        f0 = self.evaluate(design, base, alpha, r_max)[0].F
        h = (self.fd_step if step is None else step) * float(np.mean(design.phi))
        X0, W0 = base.diagram.sites, base.diagram.weights
        g = np.zeros(self.n)
        cells = range(self.n) if cells is None else cells
        for i in cells:
            vals = {}
            warm = (X0, W0)
            for s in (1, -1):
                phi = design.phi.copy()
                phi[i] += s * h
                if phi[i] <= 0:
                    continue
                trial = DesignVariables(design.rho, design.eta, phi)
                try:
                    lay = self._probe_layout(phi, warm)
                    vals[s] = self.evaluate(trial, lay, alpha, r_max)[0].F
                except MorphError as exc:
                    log.debug("volume probe %d/%+d failed: %s", i, s, exc)
                    continue
                if s == 1:
                    Xp, Wp = lay.diagram.sites, lay.diagram.weights
                    Xm = 2 * X0 - Xp
                    warm = (Xm, 2 * W0 - Wp) if _inside_all(Xm, self.domain) else (X0, W0)
            if 1 in vals and -1 in vals:
                g[i] = (vals[1] - vals[-1]) / (2 * h)
            elif 1 in vals:
                g[i] = (vals[1] - f0) / h
            elif -1 in vals:
                g[i] = (f0 - vals[-1]) / h
        return g

    def _probe_layout(self, phi, warm) -> Layout:
        vt = self.target_volumes(phi)
        res = power.solve_centroidal_vcpd(self.domain, vt, sites=warm[0], weights=warm[1], tol=self.vcpd_tol,
                                          max_iter=self.vcpd_max_iter, anderson=self.anderson,
                                          anderson_start=self.anderson_start, volume_tol=self.volume_tol)
        self.n_vcpd += 1
        if not res.converged:
            raise NonConvergenceError("probe diagram did not converge", res.grad_norm)
        return self.layout_from_diagram(res.diagram, phi, res)


def _inside_all(X, domain) -> bool:
    return bool(geo.points_in_polygon(X, domain).all())


# -- module-level operations -------------------------------------------------

def evaluate_objective(design: DesignVariables, problem: ProblemSpec, model: MorphModel | None = None,
                       layout: Layout | None = None, alpha: float | None = None,
                       r_max: float = 0.0) -> ObjectiveBreakdown:
    """Objective breakdown.  Without ``layout`` the diagram is rebuilt from ``phi``
    (phase-1 mode); with one it is reused as is (phase-2 mode)."""
    if model is None:
        model = MorphModel(problem)
    design.validate(problem.n, problem.k, problem.material.rho_min)
    if layout is None:
        layout = model.layout(design.phi)
    alpha = problem.optimizer.alpha if alpha is None else alpha
    return model.evaluate(design, layout, alpha, r_max)[0]


def gradients(design: DesignVariables, problem: ProblemSpec, phase: int = 1, model: MorphModel | None = None,
              layout: Layout | None = None, alpha: float | None = None, r_max: float = 0.0):
    """``(dF/drho, dF/deta, dF/dphi)``; the ``phi`` part is zero in phase 2."""
    if model is None:
        model = MorphModel(problem)
    alpha = problem.optimizer.alpha if alpha is None else alpha
    if layout is None:
        layout = model.layout(design.phi)
    _, g_rho, g_eta, _ = model.evaluate(design, layout, alpha, r_max, gradient=True)
    if phase == 1:
        g_phi = model.phi_gradient(design, alpha, r_max)
    else:
        g_phi = np.zeros(problem.n)
    return g_rho, g_eta, g_phi


def choose_threshold(design: DesignVariables, model: MorphModel, layout: Layout, passes: int = 2):
    """Per-family projection thresholds minimizing the summed pose error.

    Coordinate sweep over the grid 0.05..0.95, first for the density, then
    for each state's thermal pattern; ties keep the smallest threshold.
    """
    m = model.material
    k = design.k
    t = [0.5] * (1 + k)

    def projected(ts):
        rho = project(design.rho, ts[0], m.rho_min, 1.0)
        eta = np.array([project(design.eta[j], ts[1 + j]) for j in range(k)])
        return DesignVariables(rho, eta, design.phi)

    memo = {}

    def score(ts):
        key = tuple(ts)
        if key not in memo:
            d = projected(ts)
            try:
                memo[key] = float(model.evaluate(d, layout, 0.0)[0].J.sum())
            except MorphError:
                memo[key] = np.inf
        return memo[key]

    for _ in range(passes):
        for f in range(1 + k):
            best_t, best_s = None, np.inf
            for cand in THRESHOLD_GRID:
                ts = list(t)
                ts[f] = float(cand)
                s = score(ts)
                if s < best_s:
                    best_t, best_s = float(cand), s
            t[f] = best_t
    return t[0], tuple(t[1:]), projected(t), score(t)


def check_connectivity(design: DesignVariables, layout: Layout, rho_solid: float = 1.0) -> ConnectivityReport:
    """Flood fill over solid cells through shared edges.

    Boundary regions are represented by the cells owning their mesh
    vertices; the design is connected when one solid component reaches the
    fixed boundary, the actuated boundary and every target point.
    """
    mesh = layout.mesh
    n = layout.diagram.n
    solid = np.asarray(design.rho) >= rho_solid
    nb = layout.diagram.neighbors()
    comp = np.full(n, -1)
    ncomp = 0
    for s in range(n):
        if not solid[s] or comp[s] >= 0:
            continue
        stack = [s]
        comp[s] = ncomp
        while stack:
            c = stack.pop()
            for o in nb[c]:
                if solid[o] and comp[o] < 0:
                    comp[o] = ncomp
                    stack.append(o)
        ncomp += 1

    vert_cells = [set() for _ in range(mesh.n_vertices)]
    for tri, c in zip(mesh.triangles, mesh.tri_cell):
        for v in tri:
            vert_cells[v].add(int(c))

    def comps_of(vertices):
        out = set()
        for v in vertices:
            out.update(int(comp[c]) for c in vert_cells[v] if comp[c] >= 0)
        return out

    groups = {"fixed": comps_of(mesh.tags.get("fixed", [])),
              "actuated": comps_of(mesh.tags.get("actuated", []))}
    tgroups = {name: comps_of([v]) for name, v in mesh.points.items()}
    common = set(range(ncomp))
    for g in list(groups.values()) + list(tgroups.values()):
        common &= g
    ok = bool(common)
    if ok:
        fixed, act = True, True
        tg = {name: True for name in tgroups}
    else:
        # report which regions share a component with the fixed boundary
        fixed = bool(groups["fixed"])
        act = bool(groups["actuated"] & groups["fixed"])
        tg = {name: bool(g & groups["fixed"]) for name, g in tgroups.items()}
    return ConnectivityReport(ok, ncomp, fixed, act, tg)


# -- optimizer ----------------------------------------------------------------

LOG_FIELDS = ("iteration", "phase", "F", "J", "C", "R", "grad_inf")


def _projected_grad_inf(x, g, lo, hi) -> float:
    pg = np.where((x <= lo) & (g > 0), 0.0, g)
    pg = np.where((x >= hi) & (pg < 0), 0.0, pg)
    return float(np.max(np.abs(pg))) if len(pg) else 0.0


def optimize(problem: ProblemSpec, seed: int | None = None, max_iter_phase1: int | None = None,
             max_iter_phase2: int | None = None, alpha: float | None = None, sites=None,
             model: MorphModel | None = None, gtol: float = 1e-6, progress=None,
             phase1_scale: float = PHASE1_SCALE) -> OptimizationResult:
    """Two-phase optimization followed by threshold selection and projection."""
    cfg = problem.optimizer
    seed = cfg.seed if seed is None else seed
    it1 = cfg.max_iter_phase1 if max_iter_phase1 is None else max_iter_phase1
    it2 = cfg.max_iter_phase2 if max_iter_phase2 is None else max_iter_phase2
    alpha = cfg.alpha if alpha is None else alpha
    if model is None:
        model = MorphModel(problem, seed=seed, sites=sites)
    m = problem.material
    n, k = problem.n, problem.k
    design = DesignVariables.initial(n, k)
    history = []

    # centroidal start at phi = 1
    model.anchor = (model.initial_sites, np.zeros(n))
    lay0 = model.layout(design.phi)
    model.anchor = (lay0.diagram.sites, lay0.diagram.weights)
    init_bd = model.evaluate(design, lay0, alpha)[0]

    def record(phase, bd, gnorm):
        row = {"iteration": len(history), "phase": phase, "F": bd.F, "J": bd.J.copy(), "C": bd.C.copy(),
               "R": bd.R, "grad_inf": gnorm}
        history.append(row)
        if progress:
            progress(row)

    # phase 1
    lo1 = np.r_[np.full(n, m.rho_min), np.zeros(k * n), np.full(n, PHI_BOUNDS[0])]
    hi1 = np.r_[np.ones(n), np.ones(k * n), np.full(n, PHI_BOUNDS[1])]

    def unpack1(x):
        return DesignVariables(x[:n], x[n:n + k * n].reshape(k, n), x[n + k * n:])

    evals = {}
    fail_value = [None]

    def fun1(x):
        key = x.tobytes()
        if key in evals:
            return evals[key][0], evals[key][1]
        d = unpack1(x)
        try:
            lay = model.layout(d.phi)
            bd, g_rho, g_eta, _ = model.evaluate(d, lay, alpha, 0.0, gradient=True)
            g_phi = model.phi_gradient(d, alpha, 0.0)
        except MorphError as exc:
            log.info("phase-1 evaluation failed (%s); rejecting the step", exc)
            big = 1e3 * (1.0 + abs(fail_value[0] or 1.0))
            return big, np.zeros_like(x)
        g = np.r_[g_rho, g_eta.ravel(), g_phi]
        evals.clear()
        evals[key] = (bd.F, g, bd, lay)
        if fail_value[0] is None:
            fail_value[0] = bd.F
        return bd.F, g

    x0 = np.r_[design.rho, design.eta.ravel(), design.phi]
    x_last = [x0]
    fun1(x0)
    _, g0, bd0, _ = evals[x0.tobytes()]
    record(1, bd0, _projected_grad_inf(x0, g0, lo1, hi1))

    def cb1(xk, *args):
        x_last[0] = xk.copy()
        entry = evals.get(xk.tobytes())
        if entry is None:
            fun1(xk)
            entry = evals[xk.tobytes()]
        _, g, bd, lay = entry
        model.anchor = (lay.diagram.sites, lay.diagram.weights)
        record(1, bd, _projected_grad_inf(xk, g, lo1, hi1))

    phase1_ok = True
    if it1 > 0:
        # L-BFGS-B works on x / sc, so its unit-length first step moves x by sc
        sc = phase1_scale

        def fun1s(y):
            f, g = fun1(y * sc)
            return f, g * sc

        res1 = minimize(fun1s, x0 / sc, jac=True, method="L-BFGS-B", bounds=list(zip(lo1 / sc, hi1 / sc)),
                        callback=lambda yk, *a: cb1(yk * sc),
                        options={"maxiter": it1, "gtol": gtol * sc, "ftol": 1e-12, "maxcor": 10,
                                 "maxls": PHASE1_MAXLS})
        x1 = res1.x * sc
        phase1_ok = bool(res1.success and res1.nit < it1)
    else:
        x1 = x0
    d1 = unpack1(x1)
    lay1 = model.layout(d1.phi)
    bd1 = model.evaluate(d1, lay1, alpha)[0]

    # phase 2 on the frozen diagram
    r_max = cfg.beta_rmax * (bd1.J.sum() + alpha * bd1.C.sum()) / (n * k)
    phi_fixed = d1.phi.copy()
    lo2, hi2 = lo1[: n + k * n], hi1[: n + k * n]

    def unpack2(x):
        return DesignVariables(x[:n], x[n:].reshape(k, n), phi_fixed)

    evals2 = {}

    def fun2(x):
        key = x.tobytes()
        if key not in evals2:
            bd, g_rho, g_eta, _ = model.evaluate(unpack2(x), lay1, alpha, r_max, gradient=True)
            evals2.clear()
            evals2[key] = (bd.F, np.r_[g_rho, g_eta.ravel()], bd)
        return evals2[key][0], evals2[key][1]

    x20 = x1[: n + k * n].copy()
    fun2(x20)
    _, g20, bd20 = evals2[x20.tobytes()]
    record(2, bd20, _projected_grad_inf(x20, g20, lo2, hi2))

    def cb2(xk, *args):
        if xk.tobytes() not in evals2:
            fun2(xk)
        _, g, bd = evals2[xk.tobytes()]
        record(2, bd, _projected_grad_inf(xk, g, lo2, hi2))

    phase2_ok = True
    if it2 > 0:
        res2 = minimize(fun2, x20, jac=True, method="L-BFGS-B", bounds=list(zip(lo2, hi2)), callback=cb2,
                        options={"maxiter": it2, "gtol": gtol, "ftol": 1e-12, "maxcor": 10})
        x2 = res2.x
        phase2_ok = bool(res2.success and res2.nit < it2)
    else:
        x2 = x20
    d2 = unpack2(x2)

    # projection
    t_rho, t_eta, final, _ = choose_threshold(d2, model, lay1)
    bd_final, states = model.evaluate(final, lay1, alpha)
    conn = check_connectivity(final, lay1)
    J_sim = []
    for j, (_, sol, _, _) in enumerate(states):
        nodes, _ = lay1.targets[j]
        J_sim.append(sol.u[nodes].copy())
    return OptimizationResult(
        design=final, thresholds=(t_rho, t_eta), states=[s[1] for s in states], layout=lay1, log=history,
        connectivity=conn, converged=phase1_ok and phase2_ok, phase1_converged=phase1_ok,
        phase2_converged=phase2_ok, R_max=float(r_max), phase1_design=d1, phase2_design=d2,
        breakdown=bd_final, initial_breakdown=init_bd, J_sim=J_sim)
