"""Exception hierarchy. User-facing errors (bad files, bad configs) are
distinguished from internal contract violations so the CLI can map them
to exit codes 1 and 2 respectively."""


class CrossPoseError(Exception):
    """Base class for user-facing errors (CLI exit code 1)."""


class ConfigError(CrossPoseError):
    """Invalid or inconsistent configuration values."""


class ParseError(CrossPoseError):
    """Malformed annotation or config file; carries line context when known."""


class SchemaError(CrossPoseError):
    """Pose or annotation does not match its skeleton schema."""


class GenerationError(CrossPoseError):
    """Synthetic data spec cannot be realized (degenerate skeleton etc.)."""


class EvaluationError(CrossPoseError):
    """Metric is undefined for the given inputs (e.g. no annotated keypoints)."""


class ContractViolation(Exception):
    """Internal invariant broken (CLI exit code 2); indicates a caller bug."""
