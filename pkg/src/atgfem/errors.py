"""Exception types raised across the package."""


class AtgError(Exception):
    """Base class for package errors."""


class MeshError(AtgError):
    """Invalid mesh construction or refinement request."""


class MeshParseError(MeshError):
    """Malformed mesh text; ``line`` is the 1-based offending line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OrientationError(MeshParseError):
    """A triangle is not counter-clockwise."""


class HierarchyError(AtgError):
    """Refinement records do not match the meshes they are applied to."""


class PreconditionerError(AtgError):
    """Jacobi preconditioner cannot be formed (zero diagonal)."""


class ConfigError(AtgError):
    """Invalid run configuration."""


class SolverFailure(AtgError):
    """A level solve did not converge; ``history`` holds the completed levels."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
