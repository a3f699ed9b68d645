"""Exception types raised across the package."""


class MorphError(Exception):
    """Base class for all package errors."""


class GeometryError(MorphError, ValueError):
    """Invalid or degenerate geometry (too few vertices, zero area, ...)."""


class InvalidInputError(MorphError, ValueError):
    """An argument is outside its documented domain."""


class NonConvergenceError(MorphError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (worst residual {residual:.3e})")
        self.residual = residual


class SolverError(MorphError, RuntimeError):
    """Linear solve failed, typically a singular constrained stiffness matrix."""


class MeshTaggingError(MorphError):
    """A required boundary region received no mesh vertex."""


class ProblemValidationError(MorphError, ValueError):
    """Problem document failed validation; ``path`` locates the bad field."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path) or "<root>"
        super().__init__(f"{where}: {message}")


class SchemaError(ProblemValidationError):
    pass


class DomainGeometryError(ProblemValidationError, GeometryError):
    pass


class BoundaryOffDomainError(ProblemValidationError):
    pass


class EmptyStatesError(ProblemValidationError):
    pass
