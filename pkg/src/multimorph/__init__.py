"""Multi-state shape-morphing structure design on adaptive power-diagram meshes."""

from .errors import (BoundaryOffDomainError, DomainGeometryError, EmptyStatesError, GeometryError,
                     InvalidInputError, MeshTaggingError, MorphError, NonConvergenceError,
                     ProblemValidationError, SchemaError, SolverError)
from .fem import MaterialParams, interpolate_modulus, solve_state
from .mesh import FeMesh, extract_fe_mesh
from .opt import DesignVariables, MorphModel, evaluate_objective, gradients, optimize
from .power import PowerDiagram, build_power_diagram, solve_centroidal_vcpd, solve_volume_constraints
from .problems import ProblemSpec, load_example, load_problem

__version__ = "0.1.0"

__all__ = [
    "BoundaryOffDomainError", "DesignVariables", "DomainGeometryError", "EmptyStatesError", "FeMesh",
    "GeometryError", "InvalidInputError", "MaterialParams", "MeshTaggingError", "MorphError", "MorphModel",
    "NonConvergenceError", "PowerDiagram", "ProblemSpec", "ProblemValidationError", "SchemaError",
    "SolverError", "build_power_diagram", "evaluate_objective", "extract_fe_mesh", "gradients",
    "interpolate_modulus", "load_example", "load_problem", "optimize", "solve_centroidal_vcpd",
    "solve_state", "solve_volume_constraints",
]
