"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Rejected input: shapes, ranges, or configuration are inconsistent."""


class NoQuadError(ValidationError):
    """A 2x2 tile block was requested at an anchor without a full neighborhood."""


class TrainingFault(RuntimeError):
    """Non-finite loss or gradient, or a broken training invariant."""


class DependencyError(RuntimeError):
    """A tile was scheduled before its conditioning neighbors were complete."""


class DatasetFault(RuntimeError):
    """A generated dataset violates its configured constraints."""
