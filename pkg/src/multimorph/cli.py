"""Command-line entry point: ``multimorph optimize|simulate|gradcheck|tessellate``.

Exit codes: 0 success, 1 error, 2 finished without converging.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import export, fem, opt, power
from . import geometry as geo
from .errors import MorphError, ProblemValidationError
from .mesh import extract_fe_mesh
from .problems import ProblemSpec, load_problem

log = logging.getLogger("multimorph")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


# -- helpers ------------------------------------------------------------------

def _prepare_out(out: Path) -> Path:
    """Staging directory next to ``out``; raises OSError when ``out`` is not writable."""
    out = Path(out)
    parent = out.parent if not out.exists() else out
    if out.exists() and not out.is_dir():
        raise OSError(f"{out} exists and is not a directory")
    anchor = parent
    while not anchor.exists():
        anchor = anchor.parent
    if not os.access(anchor, os.W_OK | os.X_OK):
        raise OSError(f"output location {out} is not writable")
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=".multimorph-", dir=out.parent))


def _commit(stage: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for item in sorted(stage.rglob("*")):
        rel = item.relative_to(stage)
        dest = out / rel
        if item.is_dir():
            dest.mkdir(parents=True, exist_ok=True)
        else:
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(item, dest)
    shutil.rmtree(stage, ignore_errors=True)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _state_targets(problem: ProblemSpec, j: int):
    return [(t.name, t.u_T) for t in problem.states[j]]


def design_document(problem: ProblemSpec, result: opt.OptimizationResult, seed: int) -> dict:
    d = result.design
    diag = result.layout.diagram
    return {
        "problem": problem.to_dict(),
        "seed": int(seed),
        "rho": d.rho.tolist(),
        "eta": d.eta.tolist(),
        "phi": d.phi.tolist(),
        "sites": diag.sites.tolist(),
        "weights": diag.weights.tolist(),
        "thresholds": {"rho": result.thresholds[0], "eta": list(result.thresholds[1])},
        "R_max": result.R_max,
        "converged": {"phase1": result.phase1_converged, "phase2": result.phase2_converged},
        "objective": {"F": result.breakdown.F, "J": result.breakdown.J.tolist(),
                      "C": result.breakdown.C.tolist()},
        "connectivity": result.connectivity.as_dict(),
        "continuous": {
            "phase1": {"rho": result.phase1_design.rho.tolist(), "eta": result.phase1_design.eta.tolist()},
            "phase2": {"rho": result.phase2_design.rho.tolist(), "eta": result.phase2_design.eta.tolist()},
        },
        "snap_distance": {k: float(v) for k, v in result.layout.mesh.snap.items()},
        "connectivity_bc": "fixed and actuated boundaries held at zero",
    }


def load_design(path):
    """Problem, diagram and design variables stored in a ``design.json``."""
    doc = json.loads(Path(path).read_text())
    for key in ("problem", "rho", "eta", "sites", "weights"):
        if key not in doc:
            raise ProblemValidationError("missing field", (key,))
    problem = load_problem(doc["problem"])
    diagram = power.build_power_diagram(np.array(doc["sites"]), np.array(doc["weights"]), problem.mesh_domain())
    rho = np.array(doc["rho"], dtype=float)
    eta = np.atleast_2d(np.array(doc["eta"], dtype=float))
    if rho.shape != (diagram.n,):
        raise ProblemValidationError(f"expected {diagram.n} densities, got {rho.size}", ("rho",))
    return doc, problem, diagram, rho, eta


# -- commands -----------------------------------------------------------------

def cmd_optimize(args) -> int:
    problem = load_problem(Path(args.problem))
    if args.plane_strain:
        problem = problem.with_overrides(plane_strain=True)
    out = Path(args.out)
    stage = _prepare_out(out)
    try:
        seed = problem.optimizer.seed if args.seed is None else args.seed

        def progress(row):
            log.info("iter %d phase %d F %.6g grad %.3e", row["iteration"], row["phase"], row["F"], row["grad_inf"])

        result = opt.optimize(problem, seed=seed, max_iter_phase1=args.phase1_max,
                              max_iter_phase2=args.phase2_max, alpha=args.alpha, progress=progress)
        lay = result.layout
        doc = design_document(problem, result, seed)
        _write(stage / "design.json", json.dumps(doc, indent=1) + "\n")
        _write(stage / "convergence.csv", export.convergence_csv(result.log, problem.k))
        _write(stage / "diagrams" / "initial.svg",
               export.diagram_svg(lay.diagram, result.design.rho, title="optimized layout"))
        for j, sol in enumerate(result.states):
            rows = export.target_rows(lay.mesh, _state_targets(problem, j), sol.u)
            _write(stage / "states" / f"state{j + 1}.csv", export.csv_text(export.TARGET_COLUMNS, rows))
            _write(stage / "diagrams" / f"state{j + 1}.svg",
                   export.deformed_svg(lay.mesh, sol.u, result.design.rho, result.design.eta[j],
                                       scale=args.display_scale, title=f"state {j + 1}",
                                       boundaries=list(problem.fixed) + [problem.actuation]))
        _commit(stage, out)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    c = result.connectivity
    print(f"F = {result.breakdown.F:.6g}; J = {np.round(result.breakdown.J, 4).tolist()}; "
          f"connected = {c.connected} ({c.n_components} solid components)")
    for j, u in enumerate(result.J_sim):
        for t, us in zip(problem.states[j], u):
            print(f"state {j + 1} point {t.name}: u_T = {t.u_T.tolist()} u_sim = {np.round(us, 4).tolist()}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    doc, problem, diagram, rho, eta_all = load_design(args.design)
    if args.plane_strain:
        problem = problem.with_overrides(plane_strain=True)
    if args.eta is not None:
        eta = np.array([float(x) for x in args.eta.replace(",", " ").split()])
        if eta.shape != (diagram.n,):
            raise ProblemValidationError(f"eta needs {diagram.n} values, got {eta.size}", ("eta",))
        label = "custom"
        j = args.state - 1 if args.state else 0
    else:
        j = (args.state or 1) - 1
        if not 0 <= j < eta_all.shape[0]:
            raise ProblemValidationError(f"state index {j + 1} outside 1..{eta_all.shape[0]}", ("state",))
        eta = eta_all[j]
        label = f"state{j + 1}"
    if not 0 <= j < problem.k:
        raise ProblemValidationError(f"state index {j + 1} outside 1..{problem.k}", ("state",))
    u_p = problem.u_p if args.u_p is None else np.array(args.u_p, dtype=float)
    mesh = extract_fe_mesh(diagram, problem.fixed, [problem.actuation], problem.target_points())
    m = problem.material
    E = fem.interpolate_modulus(np.clip(rho, m.rho_min, 1), np.clip(eta, 0, 1), m)
    K = fem.assemble_stiffness(mesh, E, m)
    sol = fem.solve_state(K, mesh, u_p=u_p, eta=eta)
    out = Path(args.out)
    rows = export.target_rows(mesh, _state_targets(problem, j), sol.u)
    stage = _prepare_out(out)
    try:
        _write(stage / f"{label}.csv", export.csv_text(export.TARGET_COLUMNS, rows))
        _write(stage / f"{label}.svg", export.deformed_svg(mesh, sol.u, rho, eta, scale=args.display_scale,
                                                           title=label))
        _commit(stage, out)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    for r in rows:
        print(",".join(r))
    return EXIT_OK


def random_small_problem(n: int, seed: int) -> ProblemSpec:
    """Two-state rectangle with a tip target asked to move down, then up."""
    rng = np.random.default_rng(seed)
    h = float(rng.uniform(15, 25))
    doc = {
        "domain": [[0, 0], [40, 0], [40, h], [0, h]],
        "fixed": [[[0, 0.6 * h], [0, h]]],
        "actuation": {"segment": [[0, 0], [0, 0.4 * h]], "u_p": [float(rng.uniform(1, 4)), 0.0]},
        "states": [
            {"targets": [{"point": [40, 0.5 * h], "u_T": [0.0, -float(rng.uniform(2, 6))]}]},
            {"targets": [{"point": [40, 0.5 * h], "u_T": [0.0, float(rng.uniform(2, 6))]}]},
        ],
        "material": "AG50",
        "mesh": {"n": n},
        "optimizer": {"seed": seed},
    }
    return load_problem(doc)


def gradient_check(problem: ProblemSpec, seed: int = 1, corrupt: bool = False, r_max: float = 0.3,
                   h_rel: float = 1e-6, h_phi: float = 2e-2):
    """Adjoint against central differences for rho and eta; Richardson ratio of the phi differences.

    Relative error of a family is ``max|g_adj - g_fd| / max|g_fd|``.  The
    phi ratio compares central differences at ``h``, ``h/2`` and ``h/4``
    (``h = h_phi * mean(phi)``); it approaches 4 for a smooth objective.
    """
    rng = np.random.default_rng(seed)
    n, k = problem.n, problem.k
    m = problem.material
    model = opt.MorphModel(problem, seed=seed)
    d = opt.DesignVariables(rng.uniform(0.2, 1.0, n), rng.uniform(0.0, 1.0, (k, n)), rng.uniform(0.8, 1.2, n))
    d.rho = np.clip(d.rho, m.rho_min + 2 * h_rel, 1 - 2 * h_rel)
    d.eta = np.clip(d.eta, 2 * h_rel, 1 - 2 * h_rel)
    alpha = problem.optimizer.alpha
    lay = model.layout(d.phi)
    _, g_rho, g_eta, _ = model.evaluate(d, lay, alpha, r_max, gradient=True)
    if corrupt:
        g_rho = g_rho * 1.01
        g_eta = g_eta.copy()
        g_eta[0, 0] += 0.1 * max(np.abs(g_eta).max(), 1.0)

    def F(dd):
        return model.evaluate(dd, lay, alpha, r_max)[0].F

    fd_rho = np.zeros(n)
    fd_eta = np.zeros((k, n))
    for i in range(n):
        a, b = d.copy(), d.copy()
        a.rho[i] += h_rel
        b.rho[i] -= h_rel
        fd_rho[i] = (F(a) - F(b)) / (2 * h_rel)
        for j in range(k):
            a, b = d.copy(), d.copy()
            a.eta[j, i] += h_rel
            b.eta[j, i] -= h_rel
            fd_eta[j, i] = (F(a) - F(b)) / (2 * h_rel)

    def rel(g, f):
        diff = np.abs(g - f)
        return float(diff.max() / max(np.abs(f).max(), 1e-300)), np.unravel_index(int(np.argmax(diff)), diff.shape)

    e_rho, i_rho = rel(g_rho, fd_rho)
    e_eta, i_eta = rel(g_eta, fd_eta)
    D = [model.phi_gradient(d, alpha, r_max, step=h_phi / 2 ** q) for q in range(3)]
    den = np.linalg.norm(D[1] - D[2])
    ratio = float(np.linalg.norm(D[0] - D[1]) / den) if den > 0 else float("inf")
    worst_phi = int(np.argmax(np.abs(D[0] - D[1])))
    return {
        "rho": {"max_rel_error": e_rho, "worst_index": [int(x) for x in i_rho]},
        "eta": {"max_rel_error": e_eta, "worst_index": [int(x) for x in i_eta]},
        "phi": {"richardson_ratio": ratio, "worst_index": [worst_phi], "gradient": D[2].tolist()},
    }


def gradcheck_passed(report, tol=1e-5, band=(3.5, 4.5)) -> bool:
    return (report["rho"]["max_rel_error"] < tol and report["eta"]["max_rel_error"] < tol
            and band[0] <= report["phi"]["richardson_ratio"] <= band[1])


def cmd_gradcheck(args) -> int:
    if args.n_small > 12:
        raise ProblemValidationError("gradient check is limited to 12 cells", ("n-small",))
    seed = 1 if args.seed is None else args.seed
    if args.problem:
        problem = load_problem(Path(args.problem))
        problem = problem.with_overrides(n=args.n_small, _doc_vmin=None, _doc_vmax=None,
                                         V_min=0.25 * problem.area / args.n_small,
                                         V_max=4.0 * problem.area / args.n_small)
        if problem.k > args.n_small:
            raise ProblemValidationError("more states than cells", ("n-small",))
    else:
        problem = random_small_problem(args.n_small, seed)
    if args.alpha is not None:
        problem = problem.with_overrides(alpha=args.alpha)
    rep = gradient_check(problem, seed=seed, corrupt=args.corrupt)
    ok = gradcheck_passed(rep)
    print(f"rho: max relative error {rep['rho']['max_rel_error']:.3e} at cell {rep['rho']['worst_index'][0]}")
    print(f"eta: max relative error {rep['eta']['max_rel_error']:.3e} at state/cell "
          f"{rep['eta']['worst_index'][0] + 1}/{rep['eta']['worst_index'][1]}")
    print(f"phi: Richardson ratio {rep['phi']['richardson_ratio']:.4f} (largest change at cell "
          f"{rep['phi']['worst_index'][0]})")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_ERROR


def _read_domain(path):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = doc.get("domain")
    poly = np.array(doc, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or not geo.is_simple(poly):
        raise ProblemValidationError("domain must be a simple polygon given as [[x, y], ...]", ("domain",))
    return geo.ccw(poly)


def cmd_tessellate(args) -> int:
    domain = _read_domain(args.domain)
    n = args.n
    area = geo.polygon_area(domain)
    if args.targets:
        phi = np.array(json.loads(Path(args.targets).read_text()), dtype=float)
        if phi.shape != (n,):
            raise ProblemValidationError(f"expected {n} relative volumes", ("targets",))
    else:
        phi = np.ones(n)
    vt = power.relative_to_physical_volumes(phi, area)
    seed = 0 if args.seed is None else args.seed
    res = power.solve_centroidal_vcpd(domain, vt, seed=seed, max_iter=args.max_iter)
    d = res.diagram
    err = float(np.max(np.abs(d.areas - vt)))
    tol = 1e-7 * geo.bbox_size(domain)
    inside = all(geo.points_in_closed_polygon(c, domain, tol).all() for pcs in d.pieces for c, _ in pcs if len(c))
    out = Path(args.out)
    stage = _prepare_out(out)
    try:
        _write(stage / "tessellation.svg", export.diagram_svg(d, title=f"{n} cells"))
        _commit(stage, out)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    print(f"cells: {n}")
    print(f"max |V_i - V_t,i|: {err:.3e}")
    print(f"||grad_X E||: {res.grad_norm:.3e} (threshold {res.threshold:.3e})")
    print(f"iterations: {res.iterations}; converged: {res.converged}")
    if not inside:
        print("warning: cell vertex outside the domain")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multimorph", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="random seed (overrides the problem file)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--alpha", type=float, default=None, help="weight of the connectivity term")
        sp.add_argument("--display-scale", type=float, default=1.0, help="displacement magnification in SVGs")
        sp.add_argument("--plane-strain", action="store_true", help="plane strain instead of plane stress")

    o = sub.add_parser("optimize", help="run the two-phase optimization")
    o.add_argument("problem")
    common(o)
    o.add_argument("--phase1-max", type=int, default=None, help="phase-1 iteration cap")
    o.add_argument("--phase2-max", type=int, default=None, help="phase-2 iteration cap")
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("simulate", help="forward-solve one state of a stored design")
    s.add_argument("design", help="design.json from an optimize run")
    common(s)
    s.add_argument("--state", type=int, default=None, help="1-based state index (stored heating pattern)")
    s.add_argument("--eta", default=None, help="explicit heating vector, comma or space separated")
    s.add_argument("--u-p", type=float, nargs=2, default=None, metavar=("DX", "DY"),
                   help="override the actuation displacement")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("gradcheck", help="compare adjoint and finite-difference gradients")
    g.add_argument("problem", nargs="?", default=None, help="problem file (default: random rectangle)")
    common(g)
    g.add_argument("--n-small", type=int, default=6, help="number of cells (at most 12)")
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("tessellate", help="centroidal volume-constrained power diagram of a polygon")
    t.add_argument("domain", help="JSON polygon [[x, y], ...] or a problem file")
    t.add_argument("n", type=int)
    t.add_argument("--targets", default=None, help="JSON list of relative cell volumes")
    t.add_argument("--max-iter", type=int, default=500)
    common(t)
    t.set_defaults(func=cmd_tessellate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MorphError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
