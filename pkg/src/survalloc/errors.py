"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: configuration/usage problems exit 2,
artifact problems (missing, corrupt, or mismatched grid files) exit 3, and
failed verification checks exit 1.
"""


class SurvallocError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SurvallocError):
    """Invalid parameter combination or malformed run configuration."""


class RegimeError(ConfigError):
    """Requested solve outside the supported nonnegative-drift regime."""


class ConvergenceError(SurvallocError):
    """Iteration budget exhausted before reaching tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ArtifactError(SurvallocError):
    """Problem with an on-disk or upstream artifact."""


class GridFormatError(ArtifactError):
    """Unreadable grid file: bad version, shape, or checksum."""


class KindMismatchError(ArtifactError):
    """Grid of the wrong kind (V vs U) supplied to a consumer."""


class ProvenanceError(ArtifactError):
    """Artifacts whose recorded parameters disagree with each other."""


class DependencyError(ArtifactError):
    """A required lower-dimensional grid is absent or not converged."""
