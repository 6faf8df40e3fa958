class ConfigurationError(ValueError):
    """Invalid model, scenario, or filter parameters."""


class DomainError(ValueError):
    """An operation was applied outside its mathematical domain."""


class ContradictionError(DomainError):
    """Observed evidence is impossible under a zero-variance node."""


class SimulationError(RuntimeError):
    """The reference trajectory became non-finite."""


class UpdateError(DomainError):
    """A measurement update could not be carried out."""


class FormatError(ValueError):
    """A results or config file does not have the expected layout."""
