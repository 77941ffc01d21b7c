class ParameterError(ValueError):
    """Invalid model or method parameter."""


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class ContractError(RuntimeError):
    """Mismatched shapes, specs, or stale state between components."""


class TrainingError(RuntimeError):
    """Training diverged or failed to satisfy its constraints.

    ``state`` carries whatever the trainer could salvage (last finite
    parameters, history so far) so callers can inspect or resume.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class DegenerateSampleWarning(UserWarning):
    pass
